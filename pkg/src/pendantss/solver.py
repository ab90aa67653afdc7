"""Trust-region block-coordinate variable-metric forward-backward solver.

Minimizes over ``s`` in a box and ``pi`` in the unit simplex::

    Omega(s, pi) = 0.5 * ||H (y - pi * s)||**2 + lam * psi(s)

by alternating a projected variable-metric gradient step on the signal, whose
diagonal majorant metric is only valid outside an lq ball and is therefore
wrapped in a shrinking trust-region loop, with a projected gradient step on
the kernel. The trend is recovered afterwards as ``L (y - pi * s)``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import List, Optional, Tuple

import numpy as np

from . import spoq
from .filters import FilterSpec, apply_lowpass, frequency_response
from .projections import (BoxSet, normal_cone_residual_box,
                          normal_cone_residual_simplex, project_box,
                          project_simplex)
from .signal_model import (_conv, _conv_adj_kernel, _conv_adj_signal,
                           convolve_same, gaussian_kernel)

logger = logging.getLogger(__name__)

__all__ = [
    "SolverConfig",
    "ProblemInstance",
    "IterationRecord",
    "SolveResult",
    "StopReason",
    "SolverError",
    "objective",
    "grad1_f",
    "grad2_f",
    "estimate_sq_norm",
    "lipschitz_rho1",
    "lipschitz_rho2",
    "tr_radius_schedule",
    "signal_update",
    "kernel_update",
    "initial_point",
    "solve",
    "center_shift_postprocess",
    "descent_report",
    "stationarity_residuals",
]

GAMMA_BOUNDS = (0.01, 1.99)
CERT_SLACK = 1e-9
LIP_SAFETY = 1.01
LIP_FLOOR = 1e-12


class SolverError(RuntimeError):
    pass


class StopReason(str, Enum):
    TOLERANCE = "tolerance"
    MAX_ITER = "max_iter"


@dataclass(frozen=True)
class SolverConfig:
    theta: float = 0.5
    max_tr_trials: int = 50
    gamma_s: float = 1.9
    gamma_pi: float = 1.9
    epsilon: Optional[float] = None
    k_max: int = 2000
    blind: bool = True
    kappa1: float = 1e6
    kappa2: float = 1e6
    init_level: float = 1.0
    init_kernel_sigma: float = 1.0

    def __post_init__(self):
        if not 0 < self.theta < 1:
            raise ValueError("theta must lie in (0, 1)")
        if self.max_tr_trials < 1:
            raise ValueError("max_tr_trials must be positive")
        lo, hi = GAMMA_BOUNDS
        for name in ("gamma_s", "gamma_pi"):
            g = getattr(self, name)
            if not lo <= g <= hi:
                raise ValueError(f"{name} must lie in [{lo}, {hi}], got {g}")
        if self.epsilon is not None and self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if self.k_max < 0:
            raise ValueError("k_max must be non-negative")
        if self.kappa1 <= 0 or self.kappa2 <= 0:
            raise ValueError("kappa1 and kappa2 must be positive")
        if self.init_level <= 0:
            raise ValueError("init_level must be positive")

    def tolerance(self, n: int) -> float:
        return math.sqrt(n) * 1e-6 if self.epsilon is None else self.epsilon

    @property
    def gamma_bar(self) -> float:
        """Largest margin ``g`` with both step sizes in ``[g, 2 - g]``."""
        return min(2.0 - max(self.gamma_s, self.gamma_pi), min(self.gamma_s, self.gamma_pi))

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}

    @classmethod
    def from_dict(cls, d: dict) -> "SolverConfig":
        return cls(**d)


@dataclass(frozen=True)
class ProblemInstance:
    observation: np.ndarray
    filter: FilterSpec
    spoq: spoq.SpoqParams
    box: BoxSet = BoxSet()
    kernel_len: int = 21
    known_kernel: Optional[np.ndarray] = None

    def __post_init__(self):
        y = np.asarray(self.observation, dtype=float)
        if y.ndim != 1 or not np.all(np.isfinite(y)):
            raise ValueError("observation must be a finite 1-D array")
        object.__setattr__(self, "observation", y)
        if self.kernel_len % 2 != 1 or self.kernel_len > y.size:
            raise ValueError("kernel_len must be odd and not exceed the signal length")
        self.filter.check_length(y.size)
        if self.known_kernel is not None:
            k = np.asarray(self.known_kernel, dtype=float)
            if k.size != self.kernel_len:
                raise ValueError("known_kernel length differs from kernel_len")
            object.__setattr__(self, "known_kernel", k)
        # cached gains of H and H^2 on the rfft bins
        gain = 1.0 - frequency_response(y.size, self.filter)
        object.__setattr__(self, "_hp_gain", gain)
        object.__setattr__(self, "_hp_gain2", gain * gain)

    @property
    def n(self) -> int:
        return self.observation.size

    def highpass(self, x: np.ndarray) -> np.ndarray:
        return np.fft.irfft(np.fft.rfft(x) * self._hp_gain, n=x.size)

    def highpass2(self, x: np.ndarray) -> np.ndarray:
        return np.fft.irfft(np.fft.rfft(x) * self._hp_gain2, n=x.size)


# ---------------------------------------------------------------- objective


def _residual(s, pi, inst: ProblemInstance) -> np.ndarray:
    return inst.observation - _conv(s, pi)


def data_fidelity(s, pi, inst: ProblemInstance) -> float:
    r = inst.highpass(_residual(s, pi, inst))
    return 0.5 * float(r @ r)


def smooth_part(s, pi, inst: ProblemInstance) -> float:
    return data_fidelity(s, pi, inst) + inst.spoq.lam * spoq.psi(s, inst.spoq)


def objective(s, pi, inst: ProblemInstance, simplex_tol: float = 1e-9) -> float:
    """Full objective, ``+inf`` outside the constraint sets."""
    s = np.asarray(s, dtype=float)
    pi = np.asarray(pi, dtype=float)
    if not inst.box.contains(s):
        return math.inf
    if np.any(pi < 0) or abs(pi.sum() - 1.0) > simplex_tol:
        return math.inf
    return smooth_part(s, pi, inst)


def grad1_f(s, pi, inst: ProblemInstance) -> np.ndarray:
    s = np.asarray(s, dtype=float)
    r = inst.highpass2(_residual(s, pi, inst))
    return -_conv_adj_signal(r, np.asarray(pi, dtype=float)) + inst.spoq.lam * spoq.grad_psi(s, inst.spoq)


def grad2_f(s, pi, inst: ProblemInstance) -> np.ndarray:
    s = np.asarray(s, dtype=float)
    pi = np.asarray(pi, dtype=float)
    r = inst.highpass2(_residual(s, pi, inst))
    return -_conv_adj_kernel(r, s, pi.size)


# ---------------------------------------------------------------- Lipschitz constants


POWER_BLOCK = 4


def _power_iteration(normal, x0, tol=1e-6, max_iter=200, block=POWER_BLOCK):
    # Block power iteration with a Rayleigh-Ritz step. A single start vector
    # can be nearly orthogonal to the top eigenvector, which stalls the plain
    # iteration on the second eigenvalue when the two are close.
    x = np.asarray(x0, dtype=float)
    nx = np.linalg.norm(x)
    if nx == 0:
        raise ValueError("power iteration needs a non-zero start vector")
    n = x.size
    b = min(block, n)
    X = np.empty((n, b))
    X[:, 0] = x / nx
    if b > 1:
        X[:, 1:] = np.random.default_rng(n).standard_normal((n, b - 1))
    Q, _ = np.linalg.qr(X)
    val = 0.0
    vec = X[:, 0]
    for _ in range(max_iter):
        Z = np.column_stack([normal(Q[:, j]) for j in range(b)])
        T = Q.T @ Z
        w, U = np.linalg.eigh(0.5 * (T + T.T))
        new = float(w[-1])
        vec = Q @ U[:, -1]
        if new <= 0:
            return 0.0, vec
        if abs(new - val) <= tol * new:
            return new, vec
        val = new
        Q, _ = np.linalg.qr(Z @ U[:, ::-1])
    return val, vec


def estimate_sq_norm(forward, adjoint, x0: np.ndarray, tol: float = 1e-6,
                     max_iter: int = 200) -> Tuple[float, np.ndarray]:
    """Largest eigenvalue of ``adjoint(forward(.))`` by power iteration.

    Stops when the Rayleigh quotient changes by less than `tol` relative, or
    after `max_iter` iterations. Returns the estimate of ``||M||**2`` and the
    unit iterate, which can warm start the next call.
    """
    return _power_iteration(lambda x: adjoint(forward(x)), x0, tol, max_iter)


def _start_vector(size: int) -> np.ndarray:
    return np.random.default_rng(size).standard_normal(size) + 1.0


def lipschitz_rho1(pi, inst: ProblemInstance, x0=None, raw: bool = False):
    """Lipschitz constant of the signal gradient of the data term.

    Returns ``(Lambda_1, eigvec)``; with ``raw=True`` the power-iteration
    value is returned without safety factor and floor.
    """
    pi = np.asarray(pi, dtype=float)
    block = POWER_BLOCK if x0 is None else 1
    if x0 is None:
        x0 = _start_vector(inst.n)
    val, vec = _power_iteration(
        lambda x: _conv_adj_signal(inst.highpass2(_conv(x, pi)), pi), x0, block=block)
    return (val if raw else max(LIP_SAFETY * val, LIP_FLOOR)), vec


def lipschitz_rho2(s, inst: ProblemInstance, x0=None, raw: bool = False):
    """Lipschitz constant of the kernel gradient of the data term."""
    s = np.asarray(s, dtype=float)
    length = inst.kernel_len
    block = POWER_BLOCK if x0 is None else 1
    if x0 is None:
        x0 = _start_vector(length)
    if not np.any(s):
        return (0.0 if raw else LIP_FLOOR), np.asarray(x0, dtype=float)
    val, vec = _power_iteration(
        lambda k: _conv_adj_kernel(inst.highpass2(_conv(s, k)), s, length), x0, block=block)
    return (val if raw else max(LIP_SAFETY * val, LIP_FLOOR)), vec


# ---------------------------------------------------------------- block updates


def tr_radius_schedule(s, q: float, theta: float, n_trials: int) -> List[float]:
    """Trust-region radii tried at one signal update.

    First radius is ``sum |s_n|**q``, then geometric decay by `theta`, and the
    last trial always uses radius 0.
    """
    radii = []
    rho = float(np.sum(np.abs(np.asarray(s, dtype=float)) ** q))
    for i in range(1, n_trials + 1):
        if i == n_trials:
            rho = 0.0
        elif i > 1:
            rho = theta * rho
        radii.append(rho)
    return radii


@dataclass
class IterationRecord:
    """Diagnostics of one outer iteration."""

    k: int
    lip1: float
    lip2: float
    radii_tried: List[float]
    accepted_radius: float
    trials_used: int
    in_ball: bool
    metric_min: float
    metric_max: float
    step_s_sq: float
    step_s_metric_sq: float
    step_pi_sq: float
    omega_start: float
    omega_mid: float
    omega_end: float
    cert_s_descent: float
    cert_s_residual: float
    cert_pi_descent: float
    cert_pi_residual: float
    s_feasible: bool
    pi_feasible: bool

    @property
    def certificate_ok(self) -> bool:
        return min(self.cert_s_descent, self.cert_s_residual,
                   self.cert_pi_descent, self.cert_pi_residual) >= -CERT_SLACK

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


@dataclass
class SignalStep:
    s: np.ndarray
    trials_used: int
    radii: List[float]
    radius: float
    in_ball: bool
    metric: np.ndarray
    cert_descent: float
    cert_residual: float


def signal_update(s_k, pi_k, inst: ProblemInstance, config: SolverConfig,
                  lip1: Optional[float] = None) -> SignalStep:
    """One trust-region majorize-minimize step on the signal.

    Each trial builds the diagonal metric for the current radius and takes
    the exact projected step; the first candidate lying outside the lq ball
    of that radius is accepted. Both optimality certificates are evaluated
    as margins (non-negative when satisfied).
    """
    s_k = np.asarray(s_k, dtype=float)
    prm = inst.spoq
    if lip1 is None:
        lip1, _ = lipschitz_rho1(pi_k, inst)
    g = grad1_f(s_k, pi_k, inst)
    base = spoq.mm_metric_diag(s_k, lip1, 0.0, prm) - prm.lam * spoq.chi(0.0, prm)

    tried = []
    radii = tr_radius_schedule(s_k, prm.q, config.theta, config.max_tr_trials)
    for i, rho in enumerate(radii, start=1):
        tried.append(rho)
        metric = base + prm.lam * spoq.chi(rho, prm)
        cand = project_box(s_k - config.gamma_s * g / metric, inst.box)
        if spoq.in_ball_complement(cand, rho, prm.q):
            break
    else:
        raise SolverError("no trust-region trial accepted; the final radius should be 0")

    d = cand - s_k
    dA = float(np.sum(metric * d * d))
    cert_descent = -(float(d @ g) + dA / config.gamma_s)
    resid = normal_cone_residual_box(cand, g, inst.box)
    cert_residual = config.kappa1 * math.sqrt(dA) - resid
    return SignalStep(cand, i, tried, rho, True, metric, cert_descent, cert_residual)


@dataclass
class KernelStep:
    pi: np.ndarray
    lip2: float
    cert_descent: float
    cert_residual: float


def kernel_update(s_next, pi_k, inst: ProblemInstance, config: SolverConfig,
                  lip2: Optional[float] = None) -> KernelStep:
    """Projected gradient step on the kernel with step ``gamma_pi / Lambda_2``.

    In non-blind mode the kernel is returned unchanged.
    """
    pi_k = np.asarray(pi_k, dtype=float)
    if not config.blind:
        return KernelStep(pi_k.copy(), math.nan, 0.0, 0.0)
    if lip2 is None:
        lip2, _ = lipschitz_rho2(s_next, inst)
    g = grad2_f(s_next, pi_k, inst)
    pi_new = project_simplex(pi_k - config.gamma_pi * g / lip2)
    d = pi_new - pi_k
    dd = float(d @ d)
    cert_descent = -(float(d @ g) + lip2 * dd / config.gamma_pi)
    resid = normal_cone_residual_simplex(pi_new, g)
    cert_residual = config.kappa2 * math.sqrt(lip2) * math.sqrt(dd) - resid
    return KernelStep(pi_new, lip2, cert_descent, cert_residual)


# ---------------------------------------------------------------- driver


@dataclass
class SolveResult:
    s_hat: np.ndarray
    pi_hat: np.ndarray
    t_hat: np.ndarray
    objective_trace: List[float]
    iterations: int
    tr_trials_per_iter: List[int]
    stop_reason: StopReason
    diagnostics: List[IterationRecord] = field(default_factory=list)
    s0: Optional[np.ndarray] = None
    pi0: Optional[np.ndarray] = None

    @property
    def certificate_failures(self) -> int:
        return sum(not rec.certificate_ok for rec in self.diagnostics)

    @property
    def peak_signal(self) -> np.ndarray:
        return convolve_same(self.s_hat, self.pi_hat)


def initial_point(inst: ProblemInstance, config: SolverConfig) -> Tuple[np.ndarray, np.ndarray]:
    """Constant positive signal and a centered unit-width Gaussian kernel
    (or the known kernel in non-blind mode)."""
    s0 = project_box(np.full(inst.n, config.init_level), inst.box)
    if config.blind or inst.known_kernel is None:
        pi0 = project_simplex(gaussian_kernel(inst.kernel_len, config.init_kernel_sigma,
                                              support="samples"))
    else:
        pi0 = np.asarray(inst.known_kernel, dtype=float).copy()
    return s0, pi0


def solve(inst: ProblemInstance, config: SolverConfig, s0=None, pi0=None) -> SolveResult:
    """Run the alternating solver until ``||s_k - s_{k+1}|| <= epsilon`` or
    `k_max` outer iterations."""
    spoq.validate(inst.spoq)
    if not config.blind and inst.known_kernel is None and pi0 is None:
        raise ValueError("non-blind mode needs a known kernel")
    ds0, dpi0 = initial_point(inst, config)
    s = ds0 if s0 is None else project_box(s0, inst.box)
    pi = dpi0 if pi0 is None else project_simplex(pi0)
    s_init, pi_init = s.copy(), pi.copy()
    eps = config.tolerance(inst.n)

    omega = objective(s, pi, inst)
    trace = [omega]
    trials: List[int] = []
    records: List[IterationRecord] = []
    stop = StopReason.MAX_ITER
    vec1 = vec2 = None
    lip1 = lip2 = math.nan
    if not config.blind:
        lip1, vec1 = lipschitz_rho1(pi, inst)

    k = 0
    while k < config.k_max:
        if config.blind or k == 0:
            lip1, vec1 = lipschitz_rho1(pi, inst, vec1)
        step = signal_update(s, pi, inst, config, lip1)
        s_new = step.s
        omega_mid = objective(s_new, pi, inst)
        trace.append(omega_mid)

        if config.blind:
            lip2, vec2 = lipschitz_rho2(s_new, inst, vec2)
            kstep = kernel_update(s_new, pi, inst, config, lip2)
            pi_new = kstep.pi
            omega_end = objective(s_new, pi_new, inst)
            trace.append(omega_end)
        else:
            kstep = KernelStep(pi, math.nan, 0.0, 0.0)
            pi_new = pi
            omega_end = omega_mid

        ds = s_new - s
        dpi = pi_new - pi
        records.append(IterationRecord(
            k=k, lip1=lip1, lip2=kstep.lip2, radii_tried=step.radii,
            accepted_radius=step.radius, trials_used=step.trials_used,
            in_ball=spoq.in_ball_complement(s_new, step.radius, inst.spoq.q),
            metric_min=float(step.metric.min()), metric_max=float(step.metric.max()),
            step_s_sq=float(ds @ ds), step_s_metric_sq=float(np.sum(step.metric * ds * ds)),
            step_pi_sq=float(dpi @ dpi),
            omega_start=omega, omega_mid=omega_mid, omega_end=omega_end,
            cert_s_descent=step.cert_descent, cert_s_residual=step.cert_residual,
            cert_pi_descent=kstep.cert_descent, cert_pi_residual=kstep.cert_residual,
            s_feasible=inst.box.contains(s_new),
            pi_feasible=bool(np.all(pi_new >= 0) and abs(pi_new.sum() - 1) <= 1e-12),
        ))
        if not records[-1].certificate_ok:
            logger.warning("optimality certificate violated at iteration %d", k)
        trials.append(step.trials_used)

        s, pi, omega = s_new, pi_new, omega_end
        k += 1
        if math.sqrt(float(ds @ ds)) <= eps:
            stop = StopReason.TOLERANCE
            break

    t_hat = apply_lowpass(inst.observation - _conv(s, pi), inst.filter)
    logger.info("stopped after %d iterations (%s), objective %.6g", k, stop.value, omega)
    return SolveResult(s_hat=s, pi_hat=pi, t_hat=t_hat, objective_trace=trace,
                       iterations=k, tr_trials_per_iter=trials, stop_reason=stop,
                       diagnostics=records, s0=s_init, pi0=pi_init)


# ---------------------------------------------------------------- post-processing and checks


def kernel_shift(pi) -> int:
    """Offset of the kernel's center of mass from its central tap."""
    pi = np.asarray(pi, dtype=float)
    total = pi.sum()
    if total == 0:
        return 0
    com = float(np.arange(pi.size) @ pi) / total
    return int(round(com)) - (pi.size - 1) // 2


def center_shift_postprocess(s_hat, pi_hat) -> Tuple[np.ndarray, np.ndarray]:
    """Re-center the kernel on its central tap, moving the spikes the other way.

    The kernel is rolled circularly; the signal is shifted with zero fill.
    """
    s_hat = np.asarray(s_hat, dtype=float)
    pi_hat = np.asarray(pi_hat, dtype=float)
    delta = kernel_shift(pi_hat)
    if delta == 0:
        return s_hat.copy(), pi_hat.copy()
    pi_new = np.roll(pi_hat, -delta)
    s_new = np.zeros_like(s_hat)
    if delta > 0:
        s_new[delta:] = s_hat[:-delta]
    else:
        s_new[:delta] = s_hat[-delta:]
    return s_new, pi_new


def descent_report(result: SolveResult, config: SolverConfig) -> dict:
    """Quantified descent margins for every block update.

    The lower metric bound is taken as the smallest metric entry and kernel
    Lipschitz constant observed over the run. Margins are
    ``Omega_before - Omega_after - mu/2 * ||step||**2`` and must stay above
    ``-1e-9``.
    """
    recs = result.diagnostics
    gb = config.gamma_bar
    if not recs:
        return {"lambda_low": math.nan, "mu1": math.nan, "mu2": math.nan,
                "signal_margins": [], "kernel_margins": [], "min_margin": math.inf}
    lows = [r.metric_min for r in recs]
    if config.blind:
        lows += [r.lip2 for r in recs]
    lam_low = min(lows)
    mu1 = lam_low * gb / (2 - gb)
    mu2 = lam_low * gb * (2 - gb)
    sig = [r.omega_start - r.omega_mid - 0.5 * mu1 * r.step_s_sq for r in recs]
    ker = [r.omega_mid - r.omega_end - 0.5 * mu2 * r.step_pi_sq for r in recs] if config.blind else []
    return {"lambda_low": lam_low, "mu1": mu1, "mu2": mu2,
            "signal_margins": sig, "kernel_margins": ker,
            "min_margin": min(sig + ker)}


def stationarity_residuals(s, pi, inst: ProblemInstance, blind: bool = True) -> Tuple[float, float]:
    """Normal-cone residuals of both partial gradients at ``(s, pi)``."""
    r1 = normal_cone_residual_box(s, grad1_f(s, pi, inst), inst.box)
    r2 = normal_cone_residual_simplex(pi, grad2_f(s, pi, inst)) if blind else 0.0
    return r1, r2
