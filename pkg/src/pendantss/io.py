"""Serialization of datasets, run configurations and solver results.

Structured documents are JSON; tables are comma-delimited text with a header
row. Floats are written with ``repr`` so every value round-trips exactly, and
every file is written to a temporary sibling then renamed into place.
"""

from __future__ import annotations

import csv
import io as _io
import json
import math
import os
import tempfile
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from .filters import FilterSpec
from .projections import BoxSet
from .signal_model import DatasetSpec, GroundTruth, generate_dataset
from .solver import SolveResult, SolverConfig
from .spoq import SpoqParams
from .tuning import GridSpec

__all__ = [
    "ConfigError",
    "RunConfig",
    "atomic_write_text",
    "write_json",
    "read_json",
    "write_table",
    "read_table",
    "dataset_document",
    "write_dataset",
    "load_dataset",
    "result_document",
    "load_config",
    "list_presets",
]

PathLike = Union[str, os.PathLike]


class ConfigError(ValueError):
    """Malformed or inconsistent run configuration."""


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def atomic_write_text(path: PathLike, text: str) -> None:
    path = Path(path)
    if not path.parent.is_dir():
        raise FileNotFoundError(f"output directory {path.parent} does not exist")
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_json(path: PathLike, obj: Any) -> None:
    atomic_write_text(path, json.dumps(_jsonable(obj), indent=2, sort_keys=False) + "\n")


def read_json(path: PathLike) -> Any:
    with open(path) as fh:
        return json.load(fh)


def _cell(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if v is None:
        return ""
    return str(v)


def write_table(path: PathLike, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> None:
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_cell(v) for v in row])
    atomic_write_text(path, buf.getvalue())


def write_dict_table(path: PathLike, rows: Sequence[dict], header: Optional[Sequence[str]] = None) -> None:
    if header is None:
        header = []
        for r in rows:
            for k in r:
                if k not in header:
                    header.append(k)
    write_table(path, header, ([r.get(k) for k in header] for r in rows))


def _parse_cell(text: str):
    if text == "":
        return None
    if text in ("true", "false"):
        return text == "true"
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        return text


def read_table(path: PathLike) -> List[dict]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        return [{k: _parse_cell(v) for k, v in row.items()} for row in reader]


# ---------------------------------------------------------------- datasets


def dataset_document(spec: DatasetSpec, truth: GroundTruth, y, noise_seed: int) -> dict:
    return {
        "spec": spec.to_dict(),
        "noise_seed": noise_seed,
        "noise_sigma": truth.noise_sigma,
        "x_max": truth.x_max,
        "spikes": truth.spikes,
        "kernel": truth.kernel,
        "trend": truth.trend,
        "noise": truth.noise,
        "observation": np.asarray(y),
    }


def write_dataset(path: PathLike, spec: DatasetSpec, truth: GroundTruth, y, noise_seed: int) -> None:
    write_json(path, dataset_document(spec, truth, y, noise_seed))


def load_dataset(path: PathLike) -> Tuple[Optional[DatasetSpec], Optional[GroundTruth], np.ndarray]:
    """Read a dataset document. Ground-truth fields are optional, so a bare
    ``{"observation": [...]}`` document describes a real measurement."""
    doc = read_json(path)
    if "observation" not in doc:
        raise ConfigError(f"{path}: missing 'observation'")
    y = np.asarray(doc["observation"], dtype=float)
    spec = DatasetSpec.from_dict(doc["spec"]) if "spec" in doc else None
    truth = None
    if all(k in doc for k in ("spikes", "kernel", "trend")):
        noise = np.asarray(doc.get("noise", np.zeros_like(y)), dtype=float)
        truth = GroundTruth(spikes=np.asarray(doc["spikes"], dtype=float),
                            kernel=np.asarray(doc["kernel"], dtype=float),
                            trend=np.asarray(doc["trend"], dtype=float),
                            noise=noise, noise_sigma=float(doc.get("noise_sigma", 0.0)))
    return spec, truth, y


# ---------------------------------------------------------------- results


def result_document(result: SolveResult, extra: Optional[dict] = None) -> dict:
    doc = {
        "stop_reason": result.stop_reason.value,
        "iterations": result.iterations,
        "certificate_failures": result.certificate_failures,
        "s_hat": result.s_hat,
        "pi_hat": result.pi_hat,
        "t_hat": result.t_hat,
        "objective_trace": result.objective_trace,
        "tr_trials_per_iter": result.tr_trials_per_iter,
    }
    if extra:
        doc.update(extra)
    return doc


DIAGNOSTIC_COLUMNS = (
    "k", "lip1", "lip2", "trials_used", "accepted_radius", "first_radius", "in_ball",
    "metric_min", "metric_max", "step_s_sq", "step_pi_sq", "omega_start", "omega_mid",
    "omega_end", "cert_s_descent", "cert_s_residual", "cert_pi_descent", "cert_pi_residual",
    "certificate_ok", "s_feasible", "pi_feasible",
)


def diagnostic_rows(result: SolveResult):
    for r in result.diagnostics:
        yield [r.k, r.lip1, r.lip2, r.trials_used, r.accepted_radius, r.radii_tried[0],
               r.in_ball, r.metric_min, r.metric_max, r.step_s_sq, r.step_pi_sq,
               r.omega_start, r.omega_mid, r.omega_end, r.cert_s_descent, r.cert_s_residual,
               r.cert_pi_descent, r.cert_pi_residual, r.certificate_ok, r.s_feasible,
               r.pi_feasible]


# ---------------------------------------------------------------- run configuration


@dataclass
class RunConfig:
    """Parsed run configuration document.

    Either ``dataset`` (generated on the fly) or ``dataset_path`` (a dataset
    document, relative to the config file) provides the observation. The
    filter is a fixed ``FilterSpec`` or ``None`` for automatic cutoff
    selection.
    """

    name: str = "run"
    dataset: Optional[DatasetSpec] = None
    dataset_path: Optional[Path] = None
    noise_seed: int = 0
    filter: Optional[FilterSpec] = None
    transition_bins: int = 2
    spoq: SpoqParams = field(default_factory=SpoqParams)
    box: BoxSet = field(default_factory=BoxSet)
    solver: SolverConfig = field(default_factory=SolverConfig)
    grid: GridSpec = field(default_factory=GridSpec)
    n_seeds: int = 20
    first_seed: int = 1
    raw: dict = field(default_factory=dict)

    def with_seed(self, seed: Optional[int]) -> "RunConfig":
        if seed is None or self.dataset is None:
            return self
        d = self.dataset.to_dict()
        d["seed"] = int(seed)
        new = RunConfig(**{k: getattr(self, k) for k in self.__dataclass_fields__})
        new.dataset = DatasetSpec.from_dict(d)
        return new

    def load_observation(self) -> Tuple[Optional[DatasetSpec], Optional[GroundTruth], np.ndarray]:
        if self.dataset_path is not None:
            return load_dataset(self.dataset_path)
        if self.dataset is None:
            raise ConfigError("configuration has neither 'dataset' nor 'dataset_path'")
        truth, y = generate_dataset(self.dataset, self.noise_seed)
        return self.dataset, truth, y

    def to_dict(self) -> dict:
        d = {"name": self.name}
        if self.dataset is not None:
            d["dataset"] = self.dataset.to_dict()
        if self.dataset_path is not None:
            d["dataset_path"] = str(self.dataset_path)
        d["noise_seed"] = self.noise_seed
        d["filter"] = self.filter.to_dict() if self.filter is not None else "auto"
        d["spoq"] = self.spoq.to_dict()
        d["box"] = self.box.to_dict()
        d["solver"] = self.solver.to_dict()
        d["grid"] = self.grid.to_dict()
        d["battery"] = {"n_seeds": self.n_seeds, "first_seed": self.first_seed}
        return d


_KNOWN_KEYS = {"name", "description", "dataset", "dataset_path", "noise_seed", "filter",
               "spoq", "box", "solver", "grid", "battery"}


def parse_config(doc: dict, base_dir: Optional[Path] = None) -> RunConfig:
    if not isinstance(doc, dict):
        raise ConfigError("configuration must be a JSON object")
    unknown = set(doc) - _KNOWN_KEYS
    if unknown:
        raise ConfigError(f"unknown configuration keys: {sorted(unknown)}")
    try:
        cfg = RunConfig(raw=doc, name=str(doc.get("name", "run")))
        if "dataset" in doc:
            cfg.dataset = DatasetSpec.from_dict(doc["dataset"])
        if "dataset_path" in doc:
            p = Path(doc["dataset_path"])
            cfg.dataset_path = p if p.is_absolute() or base_dir is None else base_dir / p
        cfg.noise_seed = int(doc.get("noise_seed", 0))
        filt = doc.get("filter", "auto")
        if filt == "auto":
            cfg.filter = None
        elif isinstance(filt, dict):
            cfg.filter = FilterSpec.from_dict(filt)
            cfg.transition_bins = cfg.filter.transition_bins
        else:
            raise ConfigError("'filter' must be an object or \"auto\"")
        if "spoq" in doc:
            cfg.spoq = SpoqParams.from_dict(doc["spoq"])
        if "box" in doc:
            cfg.box = BoxSet(**doc["box"])
        if "solver" in doc:
            cfg.solver = SolverConfig.from_dict(doc["solver"])
        if "grid" in doc:
            cfg.grid = GridSpec.from_dict(doc["grid"])
        bat = doc.get("battery", {})
        cfg.n_seeds = int(bat.get("n_seeds", 20))
        cfg.first_seed = int(bat.get("first_seed", 1))
    except ConfigError:
        raise
    except (TypeError, ValueError, KeyError) as exc:
        raise ConfigError(str(exc)) from exc
    return cfg


PRESET_PREFIX = "preset:"


def list_presets() -> List[str]:
    files = resources.files("pendantss").joinpath("presets").iterdir()
    return sorted(p.name[:-5] for p in files if p.name.endswith(".json"))


def load_config(ref: str) -> RunConfig:
    """Load a configuration file, or a bundled preset given as ``preset:NAME``."""
    if ref.startswith(PRESET_PREFIX):
        name = ref[len(PRESET_PREFIX):]
        res = resources.files("pendantss").joinpath("presets", f"{name}.json")
        if not res.is_file():
            raise ConfigError(f"unknown preset {name!r}; available: {', '.join(list_presets())}")
        return parse_config(json.loads(res.read_text()))
    path = Path(ref)
    try:
        doc = read_json(path)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return parse_config(doc, path.parent)
