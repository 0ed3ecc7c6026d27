"""Sample-quality diagnostics.

Multivariate TV is never estimated directly.  Reports use the weight
lower bound ``1/2 sum |a_i - p_i|`` and TV between 1-D projections
(Gaussian KDE on a shared grid), both lower-bound surrogates.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import _kernels as _k
from . import mixture as mx
from .mixture import Mixture
from .quadrature import trapezoid_weights

GRID_POINTS = 2048
BANDWIDTH_FLOOR = 1e-6


@dataclass
class KDECurve:
    grid: np.ndarray
    density: np.ndarray
    bandwidth: float

    @property
    def integral(self) -> float:
        return float(np.dot(trapezoid_weights(self.grid), self.density))


@dataclass
class TVReport:
    estimate: float
    method: str
    meta: dict = field(default_factory=dict)
    mc_error: Optional[float] = None


@dataclass
class WeightRecoveryReport:
    fractions: np.ndarray
    weights: np.ndarray
    bound: float
    counts: np.ndarray
    std_errors: np.ndarray


def silverman_bandwidth(samples: np.ndarray) -> float:
    x = np.asarray(samples, dtype=float)
    n = x.size
    sd = np.std(x, ddof=1)
    iqr = np.subtract(*np.percentile(x, [75, 25]))
    spread = min(sd, iqr / 1.34) if iqr > 0 else sd
    return max(0.9 * spread * n ** (-0.2), BANDWIDTH_FLOOR)


def default_grid_from_samples(samples, n: int = GRID_POINTS, pad: float = 6.0) -> np.ndarray:
    x = np.asarray(samples, dtype=float)
    s = max(float(np.std(x)), 1e-3)
    return np.linspace(x.min() - pad * s, x.max() + pad * s, n)


def mixture_grid_1d(m: Mixture, direction=None, n: int = GRID_POINTS, pad: float = 6.0) -> np.ndarray:
    """Grid over the projected mode hull padded by 6 max-std."""
    u = _unit(direction, m.dim)
    proj = m.modes @ u
    s = max(c.std_max for c in m.components)
    return np.linspace(proj.min() - pad * s, proj.max() + pad * s, n)


def _unit(direction, d):
    u = np.eye(d)[0] if direction is None else np.asarray(direction, dtype=float).reshape(d)
    nrm = np.linalg.norm(u)
    if nrm == 0:
        raise ValueError("zero direction")
    return u / nrm


def kde_1d(samples, bandwidth="auto", grid=None) -> KDECurve:
    """Gaussian-kernel density estimate evaluated on ``grid``."""
    x = np.asarray(samples, dtype=float).ravel()
    if x.size < 2:
        raise ValueError("KDE needs at least two samples")
    if grid is None:
        grid = default_grid_from_samples(x)
    grid = np.asarray(grid, dtype=float)
    if grid.size == 0:
        raise ValueError("empty grid")
    bw = silverman_bandwidth(x) if bandwidth == "auto" else max(float(bandwidth), BANDWIDTH_FLOOR)
    if grid.size > 1 and np.all(np.diff(grid) > 0):
        dens = _k.kde_sum(grid, x, bw)
    else:
        dens = np.zeros_like(grid)
        for a in range(0, x.size, 4096):  # chunk over samples to bound memory
            z = (grid[:, None] - x[None, a:a + 4096]) / bw
            dens += np.exp(-0.5 * z * z).sum(axis=1)
    dens /= x.size * bw * math.sqrt(2 * math.pi)
    return KDECurve(grid, dens, bw)


def tv_grid_1d(f: KDECurve | tuple, g: KDECurve | tuple) -> TVReport:
    """``1/2 int |f - g|`` by trapezoid on a shared grid, clamped to [0, 1]."""
    fx, fy = (f.grid, f.density) if isinstance(f, KDECurve) else f
    gx, gy = (g.grid, g.density) if isinstance(g, KDECurve) else g
    if fx.shape != gx.shape or not np.array_equal(fx, gx):
        raise ValueError("curves live on different grids")
    est = 0.5 * float(np.dot(trapezoid_weights(fx), np.abs(np.asarray(fy) - np.asarray(gy))))
    return TVReport(min(max(est, 0.0), 1.0), "grid-1d", {"n_grid": int(fx.size)})


def density_curve(m: Mixture, grid, direction=None) -> tuple:
    """Exact density of a 1-D mixture, or of the projection of a Gaussian
    mixture onto ``direction``."""
    grid = np.asarray(grid, dtype=float)
    if m.dim == 1 and direction is None:
        return grid, np.exp(mx.log_density(m, grid[:, None]))
    if not m.is_gaussian:
        raise ValueError("projected densities need Gaussian components")
    u = _unit(direction, m.dim)
    dens = np.zeros_like(grid)
    for w, c in zip(m.weights, m.components):
        mu = float(c.mean @ u)
        var = float(u @ c.cov @ u)
        dens += w * np.exp(-0.5 * (grid - mu) ** 2 / var) / math.sqrt(2 * math.pi * var)
    return grid, dens


def weight_recovery(endpoints, m: Mixture) -> WeightRecoveryReport:
    """Cluster endpoints by :func:`~earlylmc.mixture.i_max` and compare
    the fractions with the true weights."""
    X = np.atleast_2d(np.asarray(endpoints, dtype=float))
    if X.shape[0] == 0:
        raise ValueError("no endpoints")
    labels = mx.i_max(m, X)
    counts = np.bincount(np.atleast_1d(labels), minlength=m.K)
    n = X.shape[0]
    frac = counts / n
    return WeightRecoveryReport(
        fractions=frac,
        weights=m.weights.copy(),
        bound=0.5 * float(np.abs(frac - m.weights).sum()),
        counts=counts,
        std_errors=np.sqrt(m.weights * (1 - m.weights) / n),
    )


def projected_tv(endpoints, m: Mixture, directions: Sequence, n_ref: int, rng: np.random.Generator,
                 reference: Optional[np.ndarray] = None, bandwidth="shared") -> TVReport:
    """Max over directions of the grid TV between the KDE of projected
    endpoints and the KDE of ``n_ref`` projected ground-truth draws.

    With ``bandwidth="shared"`` both KDEs use the larger of the two
    Silverman bandwidths.  Smoothing both laws with the same kernel can
    only shrink their TV, so the estimate stays a lower-bound surrogate
    and is not inflated by unequal smoothing of unequal sample sizes.
    """
    X = np.atleast_2d(np.asarray(endpoints, dtype=float))
    if m.dim < 2:
        raise ValueError("projected TV needs d >= 2")
    ref = mx.sample_ground_truth(m, n_ref, rng) if reference is None else np.atleast_2d(reference)
    per, bws = [], []
    for u in directions:
        u = np.asarray(u, dtype=float)
        if np.linalg.norm(u) == 0:
            raise ValueError("zero direction")
        if abs(np.linalg.norm(u) - 1.0) > 1e-9:
            raise ValueError("directions must be unit vectors")
        a, b = X @ u, ref @ u
        grid = mixture_grid_1d(m, u)
        bw = max(silverman_bandwidth(a), silverman_bandwidth(b)) if bandwidth == "shared" else bandwidth
        ka, kb = kde_1d(a, bw, grid), kde_1d(b, bw, grid)
        per.append(tv_grid_1d(ka, kb).estimate)
        bws.append(ka.bandwidth)
    return TVReport(max(per), "projected",
                    {"per_direction": per, "bandwidths": bws, "n_ref": int(ref.shape[0]), "n": int(X.shape[0])})


def endpoint_tv_1d(endpoints, m: Mixture, grid=None) -> TVReport:
    """Grid TV between the KDE of 1-D endpoints and the exact density."""
    x = np.asarray(endpoints, dtype=float).ravel()
    grid = mixture_grid_1d(m) if grid is None else grid
    kde = kde_1d(x, grid=grid)
    rep = tv_grid_1d(kde, density_curve(m, grid))
    rep.meta["bandwidth"] = kde.bandwidth
    return rep


def cross_mode_transitions(ens, m: Mixture) -> np.ndarray:
    """Per-chain number of changes of the ``i_max`` label between
    consecutive recorded states."""
    n, r, d = ens.states.shape
    labels = mx.i_max(m, ens.states.reshape(n * r, d)).reshape(n, r)
    return np.sum(labels[:, 1:] != labels[:, :-1], axis=1)


def concentration_check(samples, component, t_list: Sequence[float]) -> dict:
    """Exceedance ``P[|x - u| >= D + t]`` against ``exp(-alpha t^2 / 4)``
    plus a 3-sigma binomial slack."""
    X = np.atleast_2d(np.asarray(samples, dtype=float))
    n, d = X.shape
    alpha = component.alpha
    D = mx.concentration_radius(d, alpha, component.beta / alpha)
    r = np.linalg.norm(X - component.mode, axis=1)
    rows = []
    for t in t_list:
        rate = float(np.mean(r >= D + t))
        bound = math.exp(-alpha * t * t / 4.0)
        slack = 3.0 * math.sqrt(max(bound * (1 - bound), 1.0 / n) / n)
        rows.append({"t": float(t), "rate": rate, "bound": bound, "slack": slack, "passed": rate <= bound + slack})
    return {"D": D, "rows": rows, "passed": all(r["passed"] for r in rows)}


def drift_stats(traj, m: Mixture, block: int, eta: float = 0.1, L: Optional[float] = None) -> dict:
    """Within-block maximal displacement versus
    ``2H(A0 + A1 |Z - u_S|) + sqrt(48 d H ln(6N/eta))`` with ``H = block*h``,
    ``A1 = beta``, ``A0 = beta L`` and ``u_S`` the weighted mode mean."""
    steps = np.asarray(traj.record_steps)
    if steps.size > 1 and not np.all(np.diff(steps) == 1):
        raise ValueError("drift statistics need a stride-1 trajectory")
    Z = np.asarray(traj.states, dtype=float)
    d = Z.shape[1]
    H = block * traj.h
    modes = m.modes
    if L is None:
        L = float(max(np.linalg.norm(modes[i] - modes[j]) for i in range(m.K) for j in range(m.K)))
    u_S = m.weights @ modes
    A1, A0 = m.beta, m.beta * L
    starts = np.arange(0, Z.shape[0] - 1, block)
    N = max(len(starts), 1)
    disp, bound = [], []
    for s in starts:
        seg = Z[s:s + block + 1]
        disp.append(float(np.max(np.linalg.norm(seg[1:] - seg[0], axis=1))))
        bound.append(2 * H * (A0 + A1 * float(np.linalg.norm(seg[0] - u_S))) + math.sqrt(48 * d * H * math.log(6 * N / eta)))
    disp, bound = np.array(disp), np.array(bound)
    frac = float(np.mean(disp > bound)) if disp.size else 0.0
    return {
        "block": block,
        "n_blocks": int(disp.size),
        "max_displacement": disp,
        "bound": bound,
        "exceedance_fraction": frac,
        "eta": eta,
        "slack": 3 * math.sqrt(eta * (1 - eta) / N),
        "passed": frac <= eta + 3 * math.sqrt(eta * (1 - eta) / N),
    }
