"""Smoothed p-over-q (SPOQ) norm-ratio sparsity penalty.

For ``0 < p < 2 <= q`` and positive smoothing constants ``alpha``, ``beta``,
``eta``::

    lp_alpha_p(s) = sum_n (s_n**2 + alpha**2)**(p/2) - alpha**p
    lq_eta(s)     = (eta**q + sum_n |s_n|**q)**(1/q)
    psi(s)        = log((lp_alpha_p(s) + beta**p)**(1/p) / lq_eta(s))

``(p, q) = (1, 2)`` is the SOOT special case.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "SpoqParams",
    "ParameterInvalid",
    "validate",
    "lp_alpha_p",
    "lq_eta",
    "psi",
    "grad_psi",
    "chi",
    "mm_metric_diag",
    "in_ball_complement",
]


class ParameterInvalid(ValueError):
    """SPOQ parameters outside their admissible range."""


@dataclass(frozen=True)
class SpoqParams:
    p: float = 1.0
    q: float = 2.0
    alpha: float = 7e-7
    beta: float = 5e-3
    eta: float = 1e-1
    lam: float = 1.0

    def to_dict(self) -> dict:
        return {"p": self.p, "q": self.q, "alpha": self.alpha, "beta": self.beta,
                "eta": self.eta, "lambda": self.lam}

    @classmethod
    def from_dict(cls, d: dict) -> "SpoqParams":
        d = dict(d)
        lam = d.pop("lambda", d.pop("lam", 1.0))
        return cls(lam=float(lam), **{k: float(v) for k, v in d.items()})

    def replace(self, **kw) -> "SpoqParams":
        d = {"p": self.p, "q": self.q, "alpha": self.alpha, "beta": self.beta,
             "eta": self.eta, "lam": self.lam}
        d.update(kw)
        return SpoqParams(**d)


def validate(params: SpoqParams) -> None:
    """Raise :class:`ParameterInvalid` naming the first violated condition."""
    p, q = params.p, params.q
    for name in ("p", "q", "alpha", "beta", "eta", "lam"):
        if not math.isfinite(getattr(params, name)):
            raise ParameterInvalid(f"{name} must be finite")
    if not 0 < p < 2:
        raise ParameterInvalid(f"p must lie in (0, 2), got p={p}")
    if q < 2:
        raise ParameterInvalid(f"q must satisfy q >= 2, got q={q}")
    if params.alpha <= 0:
        raise ParameterInvalid("alpha must be > 0")
    if params.beta <= 0:
        raise ParameterInvalid("beta must be > 0")
    if params.eta <= 0:
        raise ParameterInvalid("eta must be > 0")
    if params.lam < 0:
        raise ParameterInvalid("lambda must be >= 0")
    if q == 2:
        lhs = params.eta ** 2 * params.alpha ** (p - 2)
        rhs = params.beta ** p
        if not lhs > rhs:
            raise ParameterInvalid(
                f"q = 2 requires eta^2 * alpha^(p-2) > beta^p, got {lhs!r} <= {rhs!r}")


def _signal(s) -> np.ndarray:
    s = np.asarray(s, dtype=float)
    if np.any(np.isnan(s)):
        raise ValueError("signal contains NaN")
    return s


def _lp_terms(s, p, alpha):
    # (s^2 + a^2)^(p/2) - a^p without cancellation for |s| << a
    return alpha ** p * np.expm1(0.5 * p * np.log1p((s / alpha) ** 2))


def lp_alpha_p(s, params: SpoqParams) -> float:
    s = _signal(s)
    return float(np.sum(_lp_terms(s, params.p, params.alpha)))


def _lq_q(s, params):
    return params.eta ** params.q + float(np.sum(np.abs(s) ** params.q))


def lq_eta(s, params: SpoqParams) -> float:
    s = _signal(s)
    return _lq_q(s, params) ** (1.0 / params.q)


def psi(s, params: SpoqParams) -> float:
    s = _signal(s)
    bp = params.beta ** params.p
    lp = lp_alpha_p(s, params)
    log_num = math.log(bp) + math.log1p(lp / bp)
    return log_num / params.p - math.log(_lq_q(s, params)) / params.q


def grad_psi(s, params: SpoqParams) -> np.ndarray:
    s = _signal(s)
    p, q, alpha = params.p, params.q, params.alpha
    denom_p = lp_alpha_p(s, params) + params.beta ** p
    denom_q = _lq_q(s, params)
    return (s * (s ** 2 + alpha ** 2) ** (p / 2 - 1) / denom_p
            - np.sign(s) * np.abs(s) ** (q - 1) / denom_q)


def chi(rho: float, params: SpoqParams) -> float:
    """Curvature bound of the log-lq term outside the lq ball of radius `rho`."""
    q = params.q
    return (q - 1) / (params.eta ** q + rho ** q) ** (2.0 / q)


def mm_metric_diag(s, lip_rho1: float, rho: float, params: SpoqParams) -> np.ndarray:
    """Diagonal of the majorant metric at `s` for trust-region radius `rho`."""
    s = _signal(s)
    if rho < 0:
        raise ValueError("rho must be non-negative")
    p, alpha = params.p, params.alpha
    denom_p = lp_alpha_p(s, params) + params.beta ** p
    return (lip_rho1 + params.lam * chi(rho, params)
            + params.lam * (s ** 2 + alpha ** 2) ** (p / 2 - 1) / denom_p)


def in_ball_complement(s, rho: float, q: float) -> bool:
    """True when ``sum |s_n|**q >= rho**q``."""
    if rho < 0:
        raise ValueError("rho must be non-negative")
    return bool(np.sum(np.abs(np.asarray(s, dtype=float)) ** q) >= rho ** q)
