"""Mixtures of strongly log-concave components.

A :class:`Mixture` holds weights ``p`` and components ``mu_i`` with
``-log mu_i`` being alpha-strongly convex and beta-smooth.  Everything is
evaluated in log space so that well separated modes do not underflow.

All array-valued functions accept either one point of shape ``(d,)`` or a
batch of shape ``(n, d)`` and return results with the matching leading
shape.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.special import logsumexp

from . import _kernels as _k

LOG_2PI = math.log(2.0 * math.pi)


class DimensionError(ValueError):
    """Raised when a point does not match the mixture dimension."""


class RescaleWarning(UserWarning):
    """Issued when beta < 1; schedules still consume the actual beta."""


# ---------------------------------------------------------------------------
# Components
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class GaussianComponent:
    """Gaussian component ``N(mean, cov)``.

    ``alpha = 1/lambda_max(cov)`` and ``beta = 1/lambda_min(cov)``.
    """

    mean: np.ndarray
    cov: np.ndarray
    prec: np.ndarray = field(init=False, repr=False)
    chol: np.ndarray = field(init=False, repr=False)
    log_norm: float = field(init=False, repr=False)
    alpha: float = field(init=False)
    beta: float = field(init=False)

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        cov = np.asarray(self.cov, dtype=float)
        if mean.ndim != 1:
            raise ValueError("mean must be a vector")
        d = mean.shape[0]
        if cov.ndim == 0:
            cov = float(cov) * np.eye(d)
        if cov.shape != (d, d):
            raise DimensionError(f"covariance shape {cov.shape} does not match d={d}")
        if not np.allclose(cov, cov.T, rtol=0, atol=1e-12 * max(1.0, np.abs(cov).max())):
            raise ValueError("covariance must be symmetric")
        cov = 0.5 * (cov + cov.T)
        eig = np.linalg.eigvalsh(cov)
        if eig[0] <= 0:
            raise ValueError("covariance must be positive definite")
        chol = np.linalg.cholesky(cov)
        prec = np.linalg.inv(cov)
        prec = 0.5 * (prec + prec.T)
        logdet = 2.0 * float(np.sum(np.log(np.diag(chol))))
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)
        object.__setattr__(self, "chol", chol)
        object.__setattr__(self, "prec", prec)
        object.__setattr__(self, "log_norm", -0.5 * (d * LOG_2PI + logdet))
        object.__setattr__(self, "alpha", float(1.0 / eig[-1]))
        object.__setattr__(self, "beta", float(1.0 / eig[0]))

    @property
    def dim(self) -> int:
        return self.mean.shape[0]

    @property
    def mode(self) -> np.ndarray:
        return self.mean

    @property
    def std_max(self) -> float:
        return 1.0 / math.sqrt(self.alpha)

    def log_density(self, X: np.ndarray) -> np.ndarray:
        diff = X - self.mean
        quad = np.einsum("ni,ij,nj->n", diff, self.prec, diff)
        return self.log_norm - 0.5 * quad

    def grad_potential(self, X: np.ndarray) -> np.ndarray:
        return np.einsum("ij,nj->ni", self.prec, X - self.mean)

    def hess_potential(self, X: np.ndarray) -> np.ndarray:
        return np.broadcast_to(self.prec, (X.shape[0],) + self.prec.shape)

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        z = rng.standard_normal((n, self.dim))
        return self.mean + z @ self.chol.T

    @property
    def can_sample(self) -> bool:
        return True


@dataclass(frozen=True, eq=False)
class CustomComponent:
    """Component given by a normalized potential ``V`` with ``mu = exp(-V)``.

    The callables take a batch ``(n, d)`` and return ``(n,)``, ``(n, d)``
    and ``(n, d, d)`` respectively.  ``alpha`` and ``beta`` are trusted as
    declared; :func:`audit_custom_component` checks them at sample points.
    ``sampler(rng, n)`` is an approved approximate sampler, if any.
    """

    potential: Callable[[np.ndarray], np.ndarray]
    grad: Callable[[np.ndarray], np.ndarray]
    hess: Callable[[np.ndarray], np.ndarray]
    mode: np.ndarray
    alpha: float
    beta: float
    sampler: Optional[Callable[[np.random.Generator, int], np.ndarray]] = None

    def __post_init__(self):
        object.__setattr__(self, "mode", np.atleast_1d(np.asarray(self.mode, dtype=float)))
        if not (self.alpha > 0 and self.beta >= self.alpha):
            raise ValueError("custom component needs 0 < alpha <= beta")

    @property
    def dim(self) -> int:
        return self.mode.shape[0]

    @property
    def mean(self) -> np.ndarray:
        return self.mode

    @property
    def std_max(self) -> float:
        return 1.0 / math.sqrt(self.alpha)

    def log_density(self, X):
        return -np.asarray(self.potential(X), dtype=float)

    def grad_potential(self, X):
        return np.asarray(self.grad(X), dtype=float)

    def hess_potential(self, X):
        return np.asarray(self.hess(X), dtype=float)

    def sample(self, rng, n):
        if self.sampler is None:
            raise ValueError("custom component has no approved approximate sampler")
        return np.asarray(self.sampler(rng, n), dtype=float).reshape(n, self.dim)

    @property
    def can_sample(self) -> bool:
        return self.sampler is not None


def audit_custom_component(comp, points: np.ndarray, step: float = 1e-5) -> dict:
    """Finite-difference audit of a component's gradient, Hessian and
    declared alpha/beta at the given points."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    n, d = points.shape
    grad_err = 0.0
    hess_err = 0.0
    eig_lo, eig_hi = np.inf, -np.inf
    eye = np.eye(d)
    for x in points:
        g = comp.grad_potential(x[None])[0]
        H = comp.hess_potential(x[None])[0]
        fd_g = np.array([
            (comp.log_density((x + step * e)[None])[0] - comp.log_density((x - step * e)[None])[0])
            / (-2 * step)
            for e in eye
        ])
        fd_H = np.stack([
            (comp.grad_potential((x + step * e)[None])[0] - comp.grad_potential((x - step * e)[None])[0])
            / (2 * step)
            for e in eye
        ])
        grad_err = max(grad_err, float(np.max(np.abs(g - fd_g))))
        hess_err = max(hess_err, float(np.max(np.abs(H - fd_H))))
        ev = np.linalg.eigvalsh(0.5 * (H + H.T))
        eig_lo = min(eig_lo, float(ev[0]))
        eig_hi = max(eig_hi, float(ev[-1]))
    return {
        "max_grad_error": grad_err,
        "max_hess_error": hess_err,
        "min_hess_eig": eig_lo,
        "max_hess_eig": eig_hi,
        "alpha_ok": eig_lo >= comp.alpha * (1 - 1e-8),
        "beta_ok": eig_hi <= comp.beta * (1 + 1e-8),
    }


# ---------------------------------------------------------------------------
# Mixture
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SmoothnessSummary:
    alpha: float
    beta: float
    kappa: float
    p_star: float
    K: int
    D: float
    rescale_advised: bool


class Mixture:
    """Finite mixture ``sum_i p_i mu_i`` of log-concave components."""

    def __init__(self, components: Sequence, weights: Sequence[float], enforce_beta_ge_1: bool = False):
        components = list(components)
        if len(components) == 0:
            raise ValueError("mixture needs at least one component")
        w = np.asarray(weights, dtype=float).ravel()
        if w.shape[0] != len(components):
            raise ValueError("weights and components differ in length")
        if np.any(~np.isfinite(w)) or np.any(w <= 0):
            raise ValueError("weights must be positive")
        if abs(w.sum() - 1.0) > 1e-12:
            raise ValueError(f"weights sum to {w.sum()!r}, expected 1")
        dims = {c.dim for c in components}
        if len(dims) != 1:
            raise DimensionError("components have different dimensions")
        self.components = tuple(components)
        self.weights = w
        self.log_weights = np.log(w)
        self.dim = dims.pop()
        if enforce_beta_ge_1 and self.beta < 1:
            warnings.warn(
                f"beta={self.beta:.4g} < 1; rescale the domain so that beta >= 1",
                RescaleWarning,
                stacklevel=2,
            )

    @classmethod
    def gaussian(cls, means, covs, weights, **kw) -> "Mixture":
        """Build a Gaussian mixture; ``covs`` entries may be scalars
        (isotropic variance), vectors (diagonal) or full matrices."""
        means = [np.atleast_1d(np.asarray(m, dtype=float)) for m in means]
        comps = []
        for m, c in zip(means, covs):
            c = np.asarray(c, dtype=float)
            if c.ndim == 1:
                c = np.diag(c)
            comps.append(GaussianComponent(m, c))
        return cls(comps, weights, **kw)

    @property
    def K(self) -> int:
        return len(self.components)

    @property
    def alpha(self) -> float:
        return min(c.alpha for c in self.components)

    @property
    def beta(self) -> float:
        return max(c.beta for c in self.components)

    @property
    def kappa(self) -> float:
        return self.beta / self.alpha

    @property
    def p_star(self) -> float:
        return float(self.weights.min())

    @property
    def modes(self) -> np.ndarray:
        return np.stack([c.mode for c in self.components])

    @property
    def is_gaussian(self) -> bool:
        return all(isinstance(c, GaussianComponent) for c in self.components)

    def with_weights(self, weights) -> "Mixture":
        return Mixture(self.components, weights)

    def subset(self, indices: Sequence[int]) -> "Mixture":
        """Renormalized sub-mixture over ``indices``."""
        idx = list(indices)
        w = self.weights[idx]
        return Mixture([self.components[i] for i in idx], w / w.sum())

    def _as_batch(self, x):
        X = np.asarray(x, dtype=float)
        single = X.ndim == 1
        if single:
            X = X[None, :]
        if X.ndim != 2 or X.shape[1] != self.dim:
            raise DimensionError(f"expected points of dimension {self.dim}, got shape {np.shape(x)}")
        if not np.all(np.isfinite(X)):
            raise ValueError("non-finite input point")
        return X, single

    def _gaussian_arrays(self):
        # stacked (means, precisions, log w_i + log normalizer) for the compiled score
        if not hasattr(self, "_garrays"):
            self._garrays = (
                np.ascontiguousarray(self.modes),
                np.ascontiguousarray(np.stack([c.prec for c in self.components])),
                np.array([lw + c.log_norm for lw, c in zip(self.log_weights, self.components)]),
            )
        return self._garrays

    def component_log_densities(self, X: np.ndarray) -> np.ndarray:
        """``log mu_i(x)`` for a batch, shape ``(n, K)``."""
        return np.stack([c.log_density(X) for c in self.components], axis=1)

    def component_grad_potentials(self, X: np.ndarray) -> np.ndarray:
        """``grad V_i(x)`` for a batch, shape ``(n, K, d)``."""
        return np.stack([c.grad_potential(X) for c in self.components], axis=1)


# ---------------------------------------------------------------------------
# Operations
# ---------------------------------------------------------------------------


def _squeeze(out, single):
    return out[0] if single else out


def log_density(m: Mixture, x) -> np.ndarray | float:
    """``log sum_i p_i mu_i(x)`` by log-sum-exp."""
    X, single = m._as_batch(x)
    out = logsumexp(m.component_log_densities(X) + m.log_weights, axis=1)
    return float(out[0]) if single else out


def responsibilities(m: Mixture, x) -> np.ndarray:
    """Posterior weights ``p_i mu_i(x) / mu(x)``, computed in log space."""
    X, single = m._as_batch(x)
    return _squeeze(_responsibilities(m, X), single)


def _responsibilities(m: Mixture, X: np.ndarray) -> np.ndarray:
    a = m.component_log_densities(X) + m.log_weights
    a -= logsumexp(a, axis=1, keepdims=True)
    return np.exp(a)


def score(m: Mixture, x) -> np.ndarray:
    """``grad log mu(x) = -sum_i r_i(x) grad V_i(x)``."""
    X, single = m._as_batch(x)
    return _squeeze(_score(m, X), single)


def _score(m: Mixture, X: np.ndarray) -> np.ndarray:
    # Unchecked batch path used by the sampler; rows are computed
    # independently so the result does not depend on the batch layout.
    if m.is_gaussian:
        means, precs, logc = m._gaussian_arrays()
        return _k.gmm_score(np.ascontiguousarray(X, dtype=float), means, precs, logc)
    if m.K == 1:
        return -m.components[0].grad_potential(X)
    r = _responsibilities(m, X)
    G = m.component_grad_potentials(X)
    return -np.einsum("nk,nkd->nd", r, G)


def hessian_log_density(m: Mixture, x) -> np.ndarray:
    """Hessian of ``log mu``.

    Uses ``grad^2 V = sum_i r_i grad^2 V_i - 1/2 sum_{i,j} r_i r_j
    (grad V_i - grad V_j)(grad V_i - grad V_j)^T`` and returns its negative.
    """
    X, single = m._as_batch(x)
    r = _responsibilities(m, X)
    G = m.component_grad_potentials(X)
    H = np.stack([c.hess_potential(X) for c in m.components], axis=1)
    hess_V = np.einsum("nk,nkij->nij", r, H)
    diff = G[:, :, None, :] - G[:, None, :, :]
    hess_V -= 0.5 * np.einsum("nk,nl,nkli,nklj->nij", r, r, diff, diff)
    out = -0.5 * (hess_V + np.swapaxes(hess_V, 1, 2))
    return _squeeze(out, single)


def i_max(m: Mixture, x, subset: Optional[Sequence[int]] = None) -> int | np.ndarray:
    """Index of the component with the largest density at ``x``.

    Ties (exact float equality) go to the largest index, so for a
    symmetric pair at its midpoint the answer is the second component.
    """
    idx = np.arange(m.K) if subset is None else np.asarray(sorted(set(subset)), dtype=int)
    if idx.size == 0:
        raise ValueError("subset must be nonempty")
    X, single = m._as_batch(x)
    logs = m.component_log_densities(X)[:, idx]
    # argmax on the reversed columns returns the last maximizer
    rev = logs.shape[1] - 1 - np.argmax(logs[:, ::-1], axis=1)
    out = idx[rev]
    return int(out[0]) if single else out


def sample_ground_truth(m: Mixture, n: int, rng: np.random.Generator) -> np.ndarray:
    """Ancestral sampling: component labels from ``p``, then exact draws.

    Returns an array of shape ``(n, d)``; :func:`sample_with_labels` also
    returns the labels.
    """
    return sample_with_labels(m, n, rng)[0]


def sample_with_labels(m: Mixture, n: int, rng: np.random.Generator):
    for c in m.components:
        if not c.can_sample:
            raise ValueError("custom component without an approved approximate sampler")
    if n < 0:
        raise ValueError("n must be nonnegative")
    labels = rng.choice(m.K, size=n, p=m.weights)
    out = np.empty((n, m.dim))
    for k, c in enumerate(m.components):
        sel = np.flatnonzero(labels == k)
        if sel.size:
            out[sel] = c.sample(rng, sel.size)
    return out, labels


def concentration_radius(d: int, alpha: float, kappa: float) -> float:
    """``D = 5 sqrt(d/alpha) ln(10 kappa)``."""
    return 5.0 * math.sqrt(d / alpha) * math.log(10.0 * kappa)


def smoothness_summary(m: Mixture) -> SmoothnessSummary:
    alpha, beta = m.alpha, m.beta
    kappa = beta / alpha
    return SmoothnessSummary(
        alpha=alpha,
        beta=beta,
        kappa=kappa,
        p_star=m.p_star,
        K=m.K,
        D=concentration_radius(m.dim, alpha, kappa),
        rescale_advised=beta < 1,
    )
