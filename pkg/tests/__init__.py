"""Tests for the TANS toolkit."""
