"""Box and unit-simplex constraint sets: projections and normal-cone residuals."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "BoxSet",
    "SimplexSet",
    "project_box",
    "project_simplex",
    "project_simplex_sort",
    "normal_cone_residual_box",
    "normal_cone_residual_simplex",
]


@dataclass(frozen=True)
class BoxSet:
    lower: float = 0.0
    upper: float = 100.0

    def __post_init__(self):
        if not self.lower < self.upper:
            raise ValueError("box requires lower < upper")

    def contains(self, x) -> bool:
        x = np.asarray(x, dtype=float)
        return bool(np.all((x >= self.lower) & (x <= self.upper)))

    def to_dict(self) -> dict:
        return {"lower": self.lower, "upper": self.upper}


@dataclass(frozen=True)
class SimplexSet:
    dimension: int

    def __post_init__(self):
        if self.dimension < 1:
            raise ValueError("simplex dimension must be >= 1")

    def contains(self, x, tol: float = 1e-12) -> bool:
        x = np.asarray(x, dtype=float)
        return bool(x.size == self.dimension and np.all(x >= 0) and abs(x.sum() - 1) <= tol)


def project_box(z, box: BoxSet) -> np.ndarray:
    return np.clip(np.asarray(z, dtype=float), box.lower, box.upper)


def project_simplex(z) -> np.ndarray:
    """Euclidean projection onto the unit simplex (Condat's algorithm).

    Exact; expected linear time. The threshold ``tau`` is found with the
    online filtering pass followed by the cleanup loop, then the output is
    ``max(z - tau, 0)``.
    """
    y = np.asarray(z, dtype=float).ravel()
    n = y.size
    if n == 0:
        raise ValueError("cannot project an empty vector")
    if n == 1:
        return np.ones(1)
    # already feasible up to summation rounding: z is its own projection
    if y.min() >= 0 and abs(y.sum() - 1.0) <= 4 * n * np.finfo(float).eps:
        return y.copy()

    v = [y[0]]
    v_tilde = []
    rho = y[0] - 1.0
    for yn in y[1:]:
        if yn > rho:
            rho += (yn - rho) / (len(v) + 1)
            if rho > yn - 1.0:
                v.append(yn)
            else:
                v_tilde.extend(v)
                v = [yn]
                rho = yn - 1.0
    for yv in v_tilde:
        if yv > rho:
            v.append(yv)
            rho += (yv - rho) / len(v)
    changed = True
    while changed:
        changed = False
        for yv in list(v):
            if yv <= rho:
                v.remove(yv)
                rho += (rho - yv) / len(v)
                changed = True
    x = np.maximum(y - rho, 0.0)
    # the max(.,0) clip leaves the sum within a few ulps of 1; fold the rest
    # into the largest entry so the sum is exact to rounding
    s = x.sum()
    if s != 1.0:
        x[np.argmax(x)] += 1.0 - s
    return x


def project_simplex_sort(z) -> np.ndarray:
    """Reference sort-and-threshold projection, O(n log n)."""
    y = np.asarray(z, dtype=float).ravel()
    u = np.sort(y)[::-1]
    css = np.cumsum(u) - 1.0
    k = np.arange(1, y.size + 1)
    r = np.nonzero(u - css / k > 0)[0][-1]
    tau = css[r] / (r + 1)
    return np.maximum(y - tau, 0.0)


def normal_cone_residual_box(x, g, box: BoxSet) -> float:
    """``min ||g + r||`` over ``r`` in the normal cone of the box at `x`."""
    x = np.asarray(x, dtype=float)
    g = np.asarray(g, dtype=float)
    if not box.contains(x):
        raise ValueError("x lies outside the box")
    res = g.copy()
    at_lo = x == box.lower
    at_hi = x == box.upper
    res[at_lo] = np.minimum(g[at_lo], 0.0)
    res[at_hi] = np.maximum(g[at_hi], 0.0)
    return float(np.linalg.norm(res))


def normal_cone_residual_simplex(x, g, tol: float = 1e-9) -> float:
    """``min ||g + r||`` over ``r`` in the normal cone of the unit simplex at `x`.

    The cone at `x` is ``{tau * 1 - u : u >= 0, u_i = 0 where x_i > 0}``, so the
    squared residual is a convex piecewise quadratic in ``tau`` minimized
    exactly segment by segment.
    """
    x = np.asarray(x, dtype=float)
    g = np.asarray(g, dtype=float)
    if np.any(x < 0) or abs(x.sum() - 1.0) > tol:
        raise ValueError("x lies outside the unit simplex")
    pos = x > 0
    g_in = g[pos]
    g_zero = np.sort(g[~pos])[::-1]  # breakpoints -g ascending

    def cost(tau):
        return (np.sum((g_in + tau) ** 2)
                + np.sum(np.minimum(g_zero + tau, 0.0) ** 2))

    # zero coordinate i is active (contributes) iff tau < -g_i
    bps = -g_zero
    edges = np.concatenate(([-np.inf], bps, [np.inf]))
    best = np.inf
    for m in range(edges.size - 1):
        lo, hi = edges[m], edges[m + 1]
        active = g_zero[m:]  # entries with breakpoint > tau on this segment
        tot = g_in.sum() + active.sum()
        cnt = g_in.size + active.size
        tau = -tot / cnt if cnt else lo
        tau = min(max(tau, lo), hi)
        if np.isfinite(tau):
            best = min(best, cost(tau))
    return float(np.sqrt(max(best, 0.0)))
