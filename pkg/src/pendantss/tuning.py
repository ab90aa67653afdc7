"""Hyperparameter grid search and repeated-noise trial batteries.

Tuning follows the known-reference protocol: one fully known realization is
solved for every grid point and scored with ``2 SNR_s + SNR_pi + SNR_t``.
Evaluation then repeats the solve over fresh noise draws that share the same
spikes, kernel and trend.
"""

from __future__ import annotations

import itertools
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import spoq
from .filters import CutoffChoice, FilterSpec, select_cutoff, spectral_peaks
from .metrics import MetricsReport, evaluate
from .projections import BoxSet
from .signal_model import DatasetSpec, GroundTruth, generate_dataset
from .solver import (ProblemInstance, SolverConfig, center_shift_postprocess,
                     data_fidelity, initial_point, objective, solve)

logger = logging.getLogger(__name__)

__all__ = [
    "GridSpec",
    "EmptyGridError",
    "residual_scale",
    "solve_and_score",
    "grid_search",
    "tune_cutoff",
    "BatteryResult",
    "run_trial_battery",
    "PairTuning",
    "tune_pair",
    "METRIC_NAMES",
]

METRIC_NAMES = ("snr_s", "tsnr_s", "snr_t", "snr_pi", "weighted")


class EmptyGridError(ValueError):
    """Every grid point violates the SPOQ parameter conditions."""


@dataclass(frozen=True)
class GridSpec:
    """Grid over ``(lambda, beta, eta, (p, q))``.

    With ``lambda_relative`` the lambda values are multipliers of the initial
    data-fit residual ``0.5 ||H (y - pi_0 * s_0)||**2``.
    """

    lambda_values: Tuple[float, ...] = (1e-3, 1e-2, 1e-1, 1.0, 10.0)
    beta_values: Tuple[float, ...] = (1e-4, 1e-3, 1e-2)
    eta_values: Tuple[float, ...] = (1e-2, 1e-1, 1.0)
    pq_pairs: Tuple[Tuple[float, float], ...] = ((1.0, 2.0), (0.75, 2.0))
    alpha: float = 7e-7
    lambda_relative: bool = True

    def __post_init__(self):
        for name in ("lambda_values", "beta_values", "eta_values", "pq_pairs"):
            vals = tuple(getattr(self, name))
            if not vals:
                raise ValueError(f"{name} must be non-empty")
            object.__setattr__(self, name, vals)
        object.__setattr__(self, "pq_pairs", tuple(tuple(map(float, pq)) for pq in self.pq_pairs))
        for name in ("lambda_values", "beta_values", "eta_values"):
            if any(v <= 0 for v in getattr(self, name)):
                raise ValueError(f"{name} must be positive")

    def points(self, scale: float = 1.0):
        """Yield ``SpoqParams`` in (p, q), lambda, beta, eta order."""
        for (p, q), lam, beta, eta in itertools.product(
                self.pq_pairs, sorted(self.lambda_values), sorted(self.beta_values),
                sorted(self.eta_values)):
            yield spoq.SpoqParams(p=p, q=q, alpha=self.alpha, beta=beta, eta=eta,
                                  lam=lam * scale if self.lambda_relative else lam)

    def to_dict(self) -> dict:
        return {"lambda_values": list(self.lambda_values), "beta_values": list(self.beta_values),
                "eta_values": list(self.eta_values), "pq_pairs": [list(pq) for pq in self.pq_pairs],
                "alpha": self.alpha, "lambda_relative": self.lambda_relative}

    @classmethod
    def from_dict(cls, d: dict) -> "GridSpec":
        d = dict(d)
        for key in ("lambda_values", "beta_values", "eta_values"):
            if key in d:
                d[key] = tuple(float(v) for v in d[key])
        if "pq_pairs" in d:
            d["pq_pairs"] = tuple(tuple(pq) for pq in d["pq_pairs"])
        return cls(**d)


def residual_scale(y, filt: FilterSpec, kernel_len: int, config: SolverConfig,
                   box: BoxSet = BoxSet()) -> float:
    """Data-fit term at the default initialization."""
    inst = ProblemInstance(y, filt, spoq.SpoqParams(), box, kernel_len)
    s0, pi0 = initial_point(inst, config)
    return data_fidelity(s0, pi0, inst)


def solve_and_score(inst: ProblemInstance, truth: Optional[GroundTruth], config: SolverConfig):
    """Solve, re-center, and score when the ground truth is known.

    Returns ``(result, centered_s, centered_pi, metrics_or_None)``.
    """
    res = solve(inst, config)
    s_c, pi_c = center_shift_postprocess(res.s_hat, res.pi_hat)
    metrics = evaluate(truth, s_c, pi_c, res.t_hat) if truth is not None else None
    return res, s_c, pi_c, metrics


def _grid_worker(args):
    y, filt, box, kernel_len, known_kernel, params, truth, config = args
    inst = ProblemInstance(y, filt, params, box, kernel_len, known_kernel)
    res, _, _, m = solve_and_score(inst, truth, config)
    return m, res.iterations, res.stop_reason.value, res.objective_trace[-1]


def _map(func, items, jobs: int):
    if jobs <= 1 or len(items) <= 1:
        return [func(it) for it in items]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(func, items))


def grid_search(y, truth: GroundTruth, grid: GridSpec, config: SolverConfig,
                filt: FilterSpec, kernel_len: Optional[int] = None,
                box: BoxSet = BoxSet(), jobs: int = 1,
                require_convergence: bool = True) -> Tuple[spoq.SpoqParams, List[dict]]:
    """Solve at every admissible grid point and keep the best weighted SNR.

    Inadmissible points are kept in the table with ``status`` explaining the
    violated condition. With `require_convergence`, only points whose solve
    met the tolerance stop are eligible (all scored points are used if none
    did). Ties are broken by smaller lambda, then beta, then eta.

    Returns
    -------
    best : SpoqParams
    table : list of dict
        One row per grid point, in grid order.
    """
    kernel_len = truth.kernel.size if kernel_len is None else kernel_len
    known = None if config.blind else truth.kernel
    scale = residual_scale(y, filt, kernel_len, config, box) if grid.lambda_relative else 1.0

    rows: List[dict] = []
    pending = []
    for params in grid.points(scale):
        row = {"p": params.p, "q": params.q, "alpha": params.alpha, "beta": params.beta,
               "eta": params.eta, "lambda": params.lam}
        try:
            spoq.validate(params)
        except spoq.ParameterInvalid as exc:
            row["status"] = f"skipped: {exc}"
            rows.append(row)
            continue
        row["status"] = "ok"
        rows.append(row)
        pending.append((len(rows) - 1, (y, filt, box, kernel_len, known, params, truth, config)))
    if not pending:
        raise EmptyGridError("no grid point satisfies the SPOQ parameter conditions")

    outputs = _map(_grid_worker, [t[1] for t in pending], jobs)
    for (idx, _), (m, iters, stop, omega) in zip(pending, outputs):
        rows[idx].update(m.to_dict())
        rows[idx].update({"iterations": iters, "stop_reason": stop, "objective": omega})

    best_idx = best_row(rows, require_convergence)
    r = rows[best_idx]
    best = spoq.SpoqParams(p=r["p"], q=r["q"], alpha=r["alpha"], beta=r["beta"],
                           eta=r["eta"], lam=r["lambda"])
    return best, rows


def best_row(rows: Sequence[dict], require_convergence: bool = True) -> int:
    """Index of the best scored row (max weighted; ties to smaller lambda, beta, eta)."""
    scored = [(i, r) for i, r in enumerate(rows)
              if r.get("status") == "ok" and np.isfinite(r.get("weighted", np.nan))]
    if not scored:
        raise EmptyGridError("no scored grid point")
    if require_convergence:
        converged = [(i, r) for i, r in scored if r.get("stop_reason") == "tolerance"]
        if converged:
            scored = converged
        else:
            logger.warning("no grid point reached the tolerance stop; ranking all points")
    return min(scored, key=lambda ir: (-ir[1]["weighted"], ir[1]["lambda"],
                                       ir[1]["beta"], ir[1]["eta"]))[0]


def tune_cutoff(y, truth: Optional[GroundTruth], params: spoq.SpoqParams,
                config: SolverConfig, kernel_len: int, box: BoxSet = BoxSet(),
                transition_bins: int = 2, candidates=None) -> CutoffChoice:
    """Choose the low-pass cutoff among the spectral peaks of `y`.

    Each candidate is scored by a pilot solve: weighted SNR when the truth is
    known, otherwise the negated final objective.
    """
    known = None if config.blind or truth is None else truth.kernel

    def scorer(filt: FilterSpec) -> float:
        inst = ProblemInstance(y, filt, params, box, kernel_len, known)
        res, s_c, pi_c, m = solve_and_score(inst, truth, config)
        if m is not None:
            return m.weighted
        return -objective(res.s_hat, res.pi_hat, inst)

    return select_cutoff(y, scorer, candidates=candidates, transition_bins=transition_bins)


@dataclass
class PairTuning:
    """Outcome of tuning one ``(p, q)`` setting: cutoff, then the grid."""

    pq: Tuple[float, float]
    cutoff: CutoffChoice
    best: spoq.SpoqParams
    rows: List[dict]

    @property
    def filter(self) -> FilterSpec:
        return self.cutoff.filter

    @property
    def best_metrics(self) -> dict:
        r = self.rows[best_row(self.rows)]
        return {k: r[k] for k in METRIC_NAMES}


def pilot_params(grid: GridSpec, pq: Tuple[float, float], scale: float) -> spoq.SpoqParams:
    """Central grid point for one (p, q), used to score cutoff candidates."""
    mid = lambda v: sorted(v)[len(v) // 2]  # noqa: E731
    lam = mid(grid.lambda_values)
    return spoq.SpoqParams(p=pq[0], q=pq[1], alpha=grid.alpha, beta=mid(grid.beta_values),
                           eta=mid(grid.eta_values),
                           lam=lam * scale if grid.lambda_relative else lam)


def tune_pair(y, truth: GroundTruth, grid: GridSpec, pq, config: SolverConfig,
              kernel_len: int, box: BoxSet = BoxSet(), filt: Optional[FilterSpec] = None,
              transition_bins: int = 2, jobs: int = 1) -> PairTuning:
    """Select the cutoff (unless `filt` is given) then grid-search one (p, q).

    The cutoff is scored with the central grid point, so the residual scale is
    computed with a provisional filter at the first spectral peak.
    """
    pq = (float(pq[0]), float(pq[1]))
    sub = GridSpec(grid.lambda_values, grid.beta_values, grid.eta_values, (pq,),
                   grid.alpha, grid.lambda_relative)
    if filt is None:
        peaks = [j for j in spectral_peaks(y) if j + transition_bins <= len(y) // 2]
        provisional = FilterSpec(peaks[0] if peaks else max(1, len(y) // 20), transition_bins)
        scale = residual_scale(y, provisional, kernel_len, config, box)
        choice = tune_cutoff(y, truth, pilot_params(sub, pq, scale), config, kernel_len, box,
                             transition_bins)
    else:
        choice = CutoffChoice(filt, [], False)
    best, rows = grid_search(y, truth, sub, config, choice.filter, kernel_len, box, jobs)
    for r in rows:
        r["cutoff_bin"] = choice.filter.cutoff_bin
        r["transition_bins"] = choice.filter.transition_bins
    return PairTuning(pq, choice, best, rows)


@dataclass
class BatteryResult:
    rows: List[dict]
    summary: Dict[str, dict]
    n_ok: int
    n_failed: int

    def summary_row(self) -> dict:
        row = {"noise_seed": "summary", "status": f"ok={self.n_ok} failed={self.n_failed}"}
        for name in METRIC_NAMES:
            row[f"{name}_mean"] = self.summary[name]["mean"]
            row[f"{name}_std"] = self.summary[name]["std"]
        return row


def _battery_worker(args):
    spec, noise_seed, params, filt, box, config = args
    truth, y = generate_dataset(spec, noise_seed)
    known = None if config.blind else truth.kernel
    inst = ProblemInstance(y, filt, params, box, spec.kernel_len, known)
    try:
        res, _, _, m = solve_and_score(inst, truth, config)
    except Exception as exc:  # recorded per seed, excluded from the aggregate
        return {"noise_seed": noise_seed, "status": f"error: {exc}"}
    row = {"noise_seed": noise_seed, "status": "ok"}
    row.update(m.to_dict())
    row.update({"iterations": res.iterations, "stop_reason": res.stop_reason.value,
                "monotone": bool(np.all(np.diff(res.objective_trace) <= 1e-9)),
                "certificate_failures": res.certificate_failures})
    return row


def aggregate(rows: Sequence[dict]) -> Dict[str, dict]:
    """Mean and sample standard deviation of each metric over ``ok`` rows."""
    ok = [r for r in rows if r.get("status") == "ok"]
    out = {}
    for name in METRIC_NAMES:
        vals = np.array([r[name] for r in ok], dtype=float)
        out[name] = {
            "mean": float(vals.mean()) if vals.size else math.nan,
            "std": float(vals.std(ddof=1)) if vals.size > 1 else math.nan,
            "median": float(np.median(vals)) if vals.size else math.nan,
            "count": int(vals.size),
        }
    return out


def run_trial_battery(spec: DatasetSpec, params: spoq.SpoqParams, filt: FilterSpec,
                      config: SolverConfig, n_seeds: int, first_seed: int = 1,
                      noise_seeds: Optional[Sequence[int]] = None,
                      box: BoxSet = BoxSet(), jobs: int = 1) -> BatteryResult:
    """Solve `n_seeds` noise realizations of one dataset and aggregate metrics.

    Noise seeds default to ``first_seed, ..., first_seed + n_seeds - 1``; seed
    0 is reserved for tuning.
    """
    if noise_seeds is None:
        if n_seeds < 2:
            raise ValueError("a battery needs at least two seeds")
        noise_seeds = list(range(first_seed, first_seed + n_seeds))
    noise_seeds = list(noise_seeds)
    if len(noise_seeds) < 2:
        raise ValueError("a battery needs at least two seeds")
    spoq.validate(params)
    rows = _map(_battery_worker, [(spec, s, params, filt, box, config) for s in noise_seeds], jobs)
    n_ok = sum(r["status"] == "ok" for r in rows)
    return BatteryResult(rows, aggregate(rows), n_ok, len(rows) - n_ok)
