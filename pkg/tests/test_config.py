"""Tests for configuration module."""

import tempfile
from pathlib import Path

import pytest
import yaml

from tans.config import (
    CalibrationConfig,
    CostConfig,
    ExperimentSpec,
    LoggingConfig,
    ReconstructionConfig,
    SamplerConfig,
    SignalConfig,
    SpecError,
    SweepConfig,
    load_spec,
    save_spec,
)
from tans.signals import Ar1Params, BinaryHmmParams, MarkovAr1Params


@pytest.fixture
def temp_dir():
    """Create temporary directory."""
    with tempfile.TemporaryDirectory() as tmpdir:
        yield Path(tmpdir)


@pytest.fixture
def markov_spec_dict():
    """Minimal rate-distortion spec for a Markov AR(1) signal."""
    return {
        "name": "unit",
        "signal": {
            "model": "markov_ar1",
            "alpha0": 0.01,
            "alpha1": 0.99,
            "p01": 0.001,
            "p10": 0.001,
            "length": 2000,
            "seeds": [0, 1],
        },
        "cost": {"t_up": 50},
        "sweep": {"rho": [1.0], "rate": [0.5]},
        "series": [
            {"sampler": {"kind": "greedy_markov", "order": 4}},
            {"label": "uniform", "sampler": {"kind": "uniform_baseline"}, "reconstruction": {"method": "nclc"}},
        ],
    }


class TestSignalConfig:
    """Tests for SignalConfig."""

    def test_default_values(self):
        """Test default signal configuration."""
        config = SignalConfig(alpha=0.9)
        assert config.model == "ar1"
        assert config.length == 100_000
        assert config.seeds == list(range(20))

    def test_params_per_model(self):
        """Test that each model builds its parameter object."""
        assert isinstance(SignalConfig(alpha=0.5).params(), Ar1Params)
        markov = SignalConfig(model="markov_ar1", alpha0=0.1, alpha1=0.9, p01=0.1, p10=0.1)
        assert isinstance(markov.params(), MarkovAr1Params)
        binary = SignalConfig(model="binary_hmm", eps0=0.1, eps1=0.01)
        assert isinstance(binary.params(), BinaryHmmParams)

    def test_missing_parameters(self):
        """Test that a model without its parameters raises error."""
        with pytest.raises(ValueError, match="missing parameters"):
            SignalConfig(model="markov_ar1", alpha0=0.5)

    def test_out_of_range_alpha(self):
        """Test that alpha outside (0, 1) raises error."""
        with pytest.raises(ValueError, match="alpha must lie in"):
            SignalConfig(alpha=1.0)

    def test_invalid_model(self):
        """Test that an unknown model raises error."""
        with pytest.raises(ValueError, match="model must be one of"):
            SignalConfig(model="arma")


class TestSweepConfig:
    """Tests for SweepConfig."""

    def test_log_spaced_range(self):
        """Test that a rho range expands to a log-spaced grid."""
        config = SweepConfig(rho_min=0.1, rho_max=10.0, rho_num=3)
        assert config.rho == pytest.approx([0.1, 1.0, 10.0])

    def test_explicit_values_win(self):
        """Test that explicit rho values are kept."""
        config = SweepConfig(rho=[2, 3], rho_min=0.1, rho_max=10.0)
        assert config.rho == [2.0, 3.0]

    def test_invalid_rate(self):
        """Test that rates outside (0, 1] raise error."""
        with pytest.raises(ValueError, match="rate values"):
            SweepConfig(rate=[1.5])


class TestSectionValidation:
    """Tests for the remaining section dataclasses."""

    def test_cost_bounds(self):
        """Test cost parameter validation."""
        with pytest.raises(ValueError, match="sigma_max_sq"):
            CostConfig(sigma_max_sq=0.5)
        with pytest.raises(ValueError, match="t_up"):
            CostConfig(t_up=1)

    def test_estimator_order(self):
        """Test that estimator-driven samplers need two samples."""
        with pytest.raises(ValueError, match="order must be at least 2"):
            SamplerConfig(kind="greedy_markov", order=1)
        assert SamplerConfig(kind="genie_greedy", order=1).order == 1

    def test_reconstruction_label(self):
        """Test reconstruction labels used in result files."""
        assert ReconstructionConfig(order=3, acf_mode="conditional").label == "glp(m=3,conditional)"
        assert ReconstructionConfig(method="nclc").label == "nclc"

    def test_calibration_enabled(self):
        """Test that calibration needs both grid axes."""
        assert not CalibrationConfig(beta=[0.5]).enabled
        assert CalibrationConfig(beta=[0.3, 0.5], gamma=[0.1]).enabled

    def test_calibration_grid_excludes_greedy(self):
        """Test that beta or gamma of 0 is rejected with its field path."""
        base = {"signal": {"model": "markov_ar1", "alpha0": 0.5, "alpha1": 0.9, "p01": 0.1, "p10": 0.1}}
        base["series"] = [{"sampler": {"kind": "adp_markov"}}]
        with pytest.raises(SpecError, match="calibration.beta"):
            ExperimentSpec.from_dict({**base, "calibration": {"beta": [0.0, 0.5], "gamma": [0.1]}})
        with pytest.raises(SpecError, match="calibration.gamma"):
            ExperimentSpec.from_dict({**base, "calibration": {"beta": [0.5], "gamma": [0.0]}})

    def test_calibration_seeds_default(self):
        """Test that calibration seeds continue after the signal seeds."""
        spec = ExperimentSpec.from_dict(
            {
                "signal": {"model": "markov_ar1", "alpha0": 0.5, "alpha1": 0.9, "p01": 0.1, "p10": 0.1, "seeds": [0, 3]},
                "series": [{"sampler": {"kind": "adp_markov"}}],
                "calibration": {"beta": [0.5], "gamma": [0.1]},
            }
        )
        assert spec.calibration.seeds == [4, 5]

    def test_calibration_seeds_disjoint(self):
        """Test that calibration seeds may not reuse signal seeds."""
        data = {
            "signal": {"model": "markov_ar1", "alpha0": 0.5, "alpha1": 0.9, "p01": 0.1, "p10": 0.1, "seeds": [0, 1]},
            "series": [{"sampler": {"kind": "adp_markov"}}],
            "calibration": {"beta": [0.5], "gamma": [0.1], "seeds": [1, 7]},
        }
        with pytest.raises(SpecError, match="calibration.seeds"):
            ExperimentSpec.from_dict(data)

    def test_level_case_insensitive(self):
        """Test that log level is case insensitive."""
        assert LoggingConfig(level="debug").level == "DEBUG"

    def test_invalid_level(self):
        """Test that invalid log level raises error."""
        with pytest.raises(ValueError, match="level must be one of"):
            LoggingConfig(level="TRACE")


class TestExperimentSpec:
    """Tests for ExperimentSpec."""

    def test_from_dict(self, markov_spec_dict):
        """Test building a spec from a dictionary."""
        spec = ExperimentSpec.from_dict(markov_spec_dict)
        assert spec.name == "unit"
        assert spec.signal.seeds == [0, 1]
        assert spec.series[0].label == "greedy_markov+glp(m=1,model)"
        assert spec.series[1].label == "uniform"
        assert spec.jobs == 0

    def test_field_path_in_error(self, markov_spec_dict):
        """Test that validation errors carry the dotted field path."""
        markov_spec_dict["series"][0]["sampler"]["order"] = 1
        with pytest.raises(SpecError) as excinfo:
            ExperimentSpec.from_dict(markov_spec_dict)
        assert excinfo.value.path == "series[0].sampler.order"

    def test_unknown_field(self, markov_spec_dict):
        """Test that unknown fields are rejected with their section path."""
        markov_spec_dict["cost"]["rate_award"] = 1.0
        with pytest.raises(SpecError, match="^cost: "):
            ExperimentSpec.from_dict(markov_spec_dict)

    def test_sampler_model_mismatch(self, markov_spec_dict):
        """Test that a sampler for another signal model is rejected."""
        markov_spec_dict["series"][0]["sampler"]["kind"] = "greedy_ar1"
        with pytest.raises(SpecError) as excinfo:
            ExperimentSpec.from_dict(markov_spec_dict)
        assert excinfo.value.path == "series[0].sampler.kind"

    def test_hamming_needs_binary(self, markov_spec_dict):
        """Test that hamming distortion needs a binary signal."""
        markov_spec_dict["series"][0]["reconstruction"] = {"measure": "hamming"}
        with pytest.raises(SpecError) as excinfo:
            ExperimentSpec.from_dict(markov_spec_dict)
        assert excinfo.value.path == "series[0].reconstruction.measure"

    def test_roots_experiment_needs_ar1(self, markov_spec_dict):
        """Test that root sweeps need an AR(1) signal."""
        markov_spec_dict["experiment"] = "ar1_roots"
        with pytest.raises(SpecError, match="signal.model"):
            ExperimentSpec.from_dict(markov_spec_dict)

    def test_empty_experiment(self, markov_spec_dict):
        """Test that an experiment without series or curves is rejected."""
        markov_spec_dict["series"] = []
        with pytest.raises(SpecError, match="series"):
            ExperimentSpec.from_dict(markov_spec_dict)

    def test_negative_jobs(self, markov_spec_dict):
        """Test that a negative job count is rejected."""
        markov_spec_dict["jobs"] = -1
        with pytest.raises(SpecError, match="jobs"):
            ExperimentSpec.from_dict(markov_spec_dict)

    def test_to_dict_round_trip(self, markov_spec_dict):
        """Test that the manifest echo rebuilds the same spec."""
        spec = ExperimentSpec.from_dict(markov_spec_dict)
        assert ExperimentSpec.from_dict(spec.to_dict()) == spec


class TestLoadSaveSpec:
    """Tests for load_spec and save_spec functions."""

    def test_missing_file(self, temp_dir):
        """Test that a missing spec file raises error."""
        with pytest.raises(SpecError, match="not found"):
            load_spec(temp_dir / "nonexistent.yaml")

    def test_empty_file(self, temp_dir):
        """Test that an empty spec file raises error."""
        spec_path = temp_dir / "empty.yaml"
        spec_path.write_text("")
        with pytest.raises(SpecError, match="empty"):
            load_spec(spec_path)

    def test_unparsable_file(self, temp_dir):
        """Test that invalid YAML raises error."""
        spec_path = temp_dir / "broken.yaml"
        spec_path.write_text("signal: [unclosed\n")
        with pytest.raises(SpecError, match="cannot parse"):
            load_spec(spec_path)

    def test_load_spec(self, temp_dir, markov_spec_dict):
        """Test loading a spec file."""
        spec_path = temp_dir / "spec.yaml"
        with open(spec_path, "w") as f:
            yaml.dump(markov_spec_dict, f)

        spec = load_spec(spec_path)
        assert spec.signal.model == "markov_ar1"
        assert spec.cost.t_up == 50

    def test_save_and_load(self, temp_dir, markov_spec_dict):
        """Test saving and loading a spec."""
        spec = ExperimentSpec.from_dict(markov_spec_dict)
        spec_path = temp_dir / "nested" / "spec.yaml"

        save_spec(spec, spec_path)
        assert spec_path.exists()
        assert load_spec(spec_path) == spec


class TestShippedSpecs:
    """Tests for the example spec and the figure specs in the repository."""

    ROOT = Path(__file__).resolve().parent.parent

    def test_example_spec(self):
        """Test that the documented example spec is valid."""
        spec = load_spec(self.ROOT / "config" / "experiment.example.yaml")
        assert spec.signal.model == "markov_ar1"
        assert len(spec.sweep.rho) == 12
        assert [s.label for s in spec.series] == ["greedy+glp", "uniform+nclc"]

    @pytest.mark.parametrize("name", ["fig4", "fig5", "fig6", "fig7", "fig8", "fig9"])
    def test_figure_specs(self, name):
        """Test that every figure spec loads under its own name."""
        spec = load_spec(self.ROOT / "figs" / f"{name}.yaml")
        assert spec.name == name
        assert spec.output.directory == Path("results") / name

    def test_root_sweep_range(self):
        """Test the rate-award grid of the root experiment."""
        spec = load_spec(self.ROOT / "figs" / "fig4.yaml")
        assert spec.experiment == "ar1_roots"
        assert len(spec.sweep.rho) == 40
        assert spec.sweep.rho[0] == pytest.approx(0.05)
        assert spec.sweep.rho[-1] == pytest.approx(100.0)
