"""Result storage module for the TANS toolkit.

Every table is written as CSV or as a JSON list of records. Floats are
written with ``repr`` so the same run always produces byte-identical files.
"""

import csv
import io
import json
from pathlib import Path
from typing import IO, Callable, Iterable, List, Optional, Sequence, Union

import numpy as np

from tans import TansError
from tans.dp import PolicyTable
from tans.greedy import RdBounds
from tans.harness import AnalyticCurve, ExperimentResult, RateDistortionPoint, RootRow
from tans.logger import get_logger
from tans.reconstruct import Reconstruction, SampleSet
from tans.signals import SignalTrace

logger = get_logger(__name__)

FORMATS = ("csv", "json")
TRACE_COLUMNS = ["t", "value", "hidden_state"]
SAMPLE_COLUMNS = ["t", "value", "init"]
RECON_COLUMNS = ["t", "truth", "recon", "abs_err"]
RD_COLUMNS = [
    "rho",
    "rate",
    "distortion",
    "stderr_rate",
    "stderr_distortion",
    "sampler",
    "recon",
    "seeds",
    "cost",
    "stderr_cost",
]
ROOT_COLUMNS = ["rho", "t_star", "t_root"]
POLICY_COLUMNS = ["state", "J", "T"]

PathOrStream = Union[str, Path, IO[str]]


class StorageError(TansError):
    """Exception raised for storage-related errors."""

    pass


def fmt(value) -> str:
    """Canonical text form of a CSV cell; None is an empty cell."""
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def _plain(value):
    """JSON-compatible scalar."""
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.floating):
        return float(value)
    return value


def _check_format(fmt_name: str) -> None:
    if fmt_name not in FORMATS:
        raise StorageError(f"Unsupported format: {fmt_name}")


def _emit(target: PathOrStream, render: Callable[[IO[str]], None]) -> None:
    if isinstance(target, (str, Path)):
        path = Path(target)
        try:
            path.parent.mkdir(parents=True, exist_ok=True)
            with open(path, "w", encoding="utf-8", newline="") as f:
                render(f)
        except OSError as e:
            raise StorageError(f"Failed to write {path}: {e}")
        logger.info(f"Wrote {path}")
        return
    render(target)


def write_json(data, target: PathOrStream) -> None:
    text = json.dumps(data, indent=2, sort_keys=True, ensure_ascii=False) + "\n"
    _emit(target, lambda f: f.write(text))


def write_table(
    header: Sequence[str],
    rows: Iterable[Sequence],
    target: PathOrStream,
    fmt_name: str = "csv",
) -> None:
    """Write rows as CSV with a header line, or as JSON records."""
    _check_format(fmt_name)
    if fmt_name == "json":
        write_json([{k: _plain(v) for k, v in zip(header, row)} for row in rows], target)
        return

    def render(f: IO[str]) -> None:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([fmt(v) for v in row])

    _emit(target, render)


def _read_rows(path: Union[str, Path], header: Sequence[str]) -> List[dict]:
    path = Path(path)
    try:
        with open(path, "r", encoding="utf-8", newline="") as f:
            reader = csv.DictReader(f)
            if reader.fieldnames != list(header):
                raise StorageError(
                    f"{path}: expected columns {','.join(header)}, "
                    f"got {','.join(reader.fieldnames or [])}"
                )
            return list(reader)
    except OSError as e:
        raise StorageError(f"Failed to read {path}: {e}")


def write_trace(trace: SignalTrace, target: PathOrStream, fmt_name: str = "csv") -> None:
    """Write ``t,value,hidden_state``; hidden_state is empty without a chain."""
    hidden = trace.hidden_states.tolist() if trace.hidden_states.size else None
    if trace.is_binary:
        values = [int(v) for v in trace.values]
    else:
        values = trace.values.tolist()
    rows = [(t, v, hidden[t] if hidden is not None else None) for t, v in enumerate(values)]
    write_table(TRACE_COLUMNS, rows, target, fmt_name)


def read_trace_csv(path: Union[str, Path], model: Optional[str] = None, seed: int = 0) -> SignalTrace:
    """Read a trace CSV.

    Without ``model``, a trace with no hidden column is AR(1), a trace whose
    values equal the hidden states is binary, anything else Markov AR(1).
    """
    rows = _read_rows(path, TRACE_COLUMNS)
    if not rows:
        raise StorageError(f"{path}: trace is empty")
    if [int(r["t"]) for r in rows] != list(range(len(rows))):
        raise StorageError(f"{path}: t must run 0, 1, 2, ...")

    values = np.asarray([float(r["value"]) for r in rows])
    has_hidden = rows[0]["hidden_state"] != ""
    if has_hidden:
        hidden = np.asarray([int(r["hidden_state"]) for r in rows], dtype=np.int64)
    else:
        hidden = np.zeros(0, dtype=np.int64)
    if model is None:
        if not has_hidden:
            model = "ar1"
        elif np.array_equal(values, hidden.astype(float)):
            model = "binary_hmm"
        else:
            model = "markov_ar1"
    return SignalTrace(values=values, hidden_states=hidden, seed=seed, model=model)


def write_samples(samples: SampleSet, target: PathOrStream, fmt_name: str = "csv") -> None:
    """Write ``t,value,init`` with init = 1 on initialization samples."""
    rows = [
        (int(t), float(x), 1 if k < samples.init_count else 0)
        for k, (t, x) in enumerate(zip(samples.times.tolist(), samples.values.tolist()))
    ]
    write_table(SAMPLE_COLUMNS, rows, target, fmt_name)


def read_samples_csv(path: Union[str, Path], length: int) -> SampleSet:
    rows = _read_rows(path, SAMPLE_COLUMNS)
    if not rows:
        raise StorageError(f"{path}: no samples")
    return SampleSet(
        times=[int(r["t"]) for r in rows],
        values=[float(r["value"]) for r in rows],
        length=length,
        init_count=sum(int(r["init"]) for r in rows),
    )


def write_recon(
    truth: SignalTrace,
    recon: Reconstruction,
    target: PathOrStream,
    fmt_name: str = "csv",
) -> None:
    """Write ``t,truth,recon,abs_err``."""
    errors = np.abs(truth.values - recon.values)
    rows = list(zip(range(len(truth)), truth.values.tolist(), recon.values.tolist(), errors.tolist()))
    write_table(RECON_COLUMNS, rows, target, fmt_name)


def _point_row(point: RateDistortionPoint) -> list:
    return [
        point.rho,
        point.rate,
        point.distortion,
        point.stderr_rate,
        point.stderr_distortion,
        point.sampler,
        point.recon,
        point.seeds,
        point.cost,
        point.stderr_cost,
    ]


def _curve_rows(curve: AnalyticCurve) -> List[list]:
    name = f"analytic(pe={curve.pe!r})"
    return [
        [rho, rate, dist, 0.0, 0.0, name, "bound", 0, float("nan"), float("nan")]
        for rho, rate, dist in curve.points()
    ]


def rd_rows(result: ExperimentResult) -> List[list]:
    """Rate-distortion rows: simulated points first, then analytic curves."""
    rows = [_point_row(p) for p in result.points]
    for curve in result.curves:
        rows.extend(_curve_rows(curve))
    return rows


def write_rd(result: ExperimentResult, target: PathOrStream, fmt_name: str = "csv") -> None:
    write_table(RD_COLUMNS, rd_rows(result), target, fmt_name)


def write_roots(rows: Sequence[RootRow], target: PathOrStream, fmt_name: str = "csv") -> None:
    write_table(ROOT_COLUMNS, [(r.rho, r.t_star, r.t_root) for r in rows], target, fmt_name)


def write_bounds(bounds: RdBounds, target: PathOrStream, fmt_name: str = "json") -> None:
    data = bounds.to_dict()
    if fmt_name == "json":
        write_json(data, target)
    else:
        write_table(list(data), [list(data.values())], target, fmt_name)


def write_policy(policy: PolicyTable, target: PathOrStream, fmt_name: str = "json") -> None:
    """PolicyTable as JSON, or one ``state,J,T`` row per sample value as CSV."""
    if fmt_name == "json":
        write_json(policy.to_dict(), target)
        return
    rows = [
        (state, j, T)
        for state, (j, T) in enumerate(zip(policy.j_values, policy.increments))
    ]
    write_table(POLICY_COLUMNS, rows, target, fmt_name)


def read_policy_json(path: Union[str, Path]) -> PolicyTable:
    try:
        with open(path, "r", encoding="utf-8") as f:
            return PolicyTable.from_dict(json.load(f))
    except (OSError, json.JSONDecodeError, KeyError) as e:
        raise StorageError(f"Failed to read policy {path}: {e}")


def manifest_path(output: Path) -> Path:
    """Manifest written next to an output file: ``trace.csv`` -> ``trace.manifest.json``."""
    return output.with_name(f"{output.stem}.manifest.json")


def to_text(writer: Callable, *args, **kwargs) -> str:
    """Render a ``write_*`` function into a string."""
    buffer = io.StringIO()
    writer(*args, buffer, **kwargs)
    return buffer.getvalue()


class ResultStorage:
    """Result directory manager for experiment runs."""

    def __init__(self, directory: Union[str, Path]):
        """Initialize storage manager.

        Args:
            directory: Output directory, created if missing.
        """
        self.directory = Path(directory)
        self._ensure_directory()

    def _ensure_directory(self) -> None:
        try:
            self.directory.mkdir(parents=True, exist_ok=True)
        except PermissionError:
            raise StorageError(f"Permission denied creating output directory: {self.directory}")
        except OSError as e:
            raise StorageError(f"Error creating output directory: {e}")

    def path(self, filename: str) -> Path:
        return self.directory / filename

    def save_result(self, result: ExperimentResult, fmt_name: str = "csv") -> Path:
        """Write the result table of an experiment.

        Root sweeps go to ``<name>_roots.<fmt>``, everything else to
        ``<name>.<fmt>``.

        Returns:
            Path to the written file.
        """
        _check_format(fmt_name)
        if result.roots:
            target = self.path(f"{result.name}_roots.{fmt_name}")
            write_roots(result.roots, target, fmt_name)
        else:
            target = self.path(f"{result.name}.{fmt_name}")
            write_rd(result, target, fmt_name)
        return target

    def save_manifest(self, manifest: dict, name: str) -> Path:
        target = self.path(f"{name}.manifest.json")
        write_json(manifest, target)
        return target
