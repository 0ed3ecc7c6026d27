"""Score models and score matching.

Four kinds of vector field approximate ``grad log mu``:

* :class:`ExactScore` - the mixture score itself;
* :class:`WeightBiasedScore` - the same components under wrong weights;
* :class:`AdditiveFieldScore` - a base model plus a constant or sinusoidal
  perturbation with a controllable L2(mu) size;
* :class:`MLPScore` - ``W2 tanh(W1 x + b1) + b2`` trained by vanilla
  (Hyvarinen) or denoising score matching with hand-written gradients.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np

from . import _kernels as _k
from . import mixture as mx
from .mixture import DimensionError, Mixture


FRESH_BLOCK = 4096


class TrainingDiverged(RuntimeError):
    """Raised when the loss becomes non-finite; carries the step index."""

    def __init__(self, step: int):
        super().__init__(f"non-finite loss at step {step}")
        self.step = step


# ---------------------------------------------------------------------------
# Models
# ---------------------------------------------------------------------------


class ScoreModel:
    """Base class: subclasses implement ``batch(X)`` on an ``(n, d)`` array."""

    dim: int
    tag: str = "score"

    def batch(self, X: np.ndarray) -> np.ndarray:  # pragma: no cover - interface
        raise NotImplementedError

    def __call__(self, x):
        return evaluate(self, x)


class ExactScore(ScoreModel):
    tag = "exact"

    def __init__(self, m: Mixture):
        self.mixture = m
        self.dim = m.dim

    def batch(self, X):
        return mx._score(self.mixture, X)


class WeightBiasedScore(ScoreModel):
    """Score of ``sum_i q_i mu_i`` for fake weights ``q``."""

    tag = "biased"

    def __init__(self, m: Mixture, fake_weights):
        self.mixture = m
        self.fake = m.with_weights(fake_weights)
        self.fake_weights = self.fake.weights
        self.dim = m.dim

    def batch(self, X):
        return mx._score(self.fake, X)


class AdditiveFieldScore(ScoreModel):
    """``base(x) + field(x)``.

    ``kind="constant"``: ``field(x) = vector``.
    ``kind="sine"``: ``field(x) = amplitude * sin(<frequency, x> + phase) * direction``
    with ``direction`` a unit vector.
    """

    tag = "field"

    def __init__(self, base: ScoreModel, kind: str = "constant", vector=None, amplitude: float = 0.0,
                 frequency=None, phase: float = 0.0, direction=None, nominal_eps: Optional[float] = None):
        self.base = base
        self.dim = base.dim
        self.kind = kind
        if kind == "constant":
            self.vector = np.asarray(vector, dtype=float).reshape(self.dim)
            self.nominal_eps = float(np.linalg.norm(self.vector)) if nominal_eps is None else nominal_eps
        elif kind == "sine":
            self.amplitude = float(amplitude)
            self.frequency = np.asarray(frequency if frequency is not None else np.eye(self.dim)[0], dtype=float).reshape(self.dim)
            self.phase = float(phase)
            u = np.asarray(direction if direction is not None else np.eye(self.dim)[0], dtype=float).reshape(self.dim)
            self.direction = u / np.linalg.norm(u)
            self.nominal_eps = nominal_eps
        else:
            raise ValueError(f"unknown field kind {kind!r}")

    def field(self, X):
        if self.kind == "constant":
            return np.broadcast_to(self.vector, X.shape)
        return self.amplitude * np.sin(X @ self.frequency + self.phase)[:, None] * self.direction

    def batch(self, X):
        return self.base.batch(X) + self.field(X)


@dataclass
class MLPScore(ScoreModel):
    """One hidden tanh layer: ``s(x) = W2 tanh(W1 x + b1) + b2``."""

    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray
    seed: Optional[int] = None
    loss_tag: str = "none"
    tag: str = field(default="mlp", init=False)

    def __post_init__(self):
        self.W1 = np.asarray(self.W1, dtype=float)
        self.b1 = np.asarray(self.b1, dtype=float)
        self.W2 = np.asarray(self.W2, dtype=float)
        self.b2 = np.asarray(self.b2, dtype=float)
        H, d = self.W1.shape
        if self.b1.shape != (H,) or self.W2.shape != (d, H) or self.b2.shape != (d,):
            raise DimensionError("inconsistent MLP parameter shapes")
        self.dim = d

    @property
    def hidden(self) -> int:
        return self.W1.shape[0]

    @classmethod
    def init(cls, d: int, hidden: int, rng: np.random.Generator, seed: Optional[int] = None) -> "MLPScore":
        """Uniform init on ``+-1/sqrt(fan_in)``."""
        a1 = 1.0 / math.sqrt(d)
        a2 = 1.0 / math.sqrt(hidden)
        return cls(
            W1=rng.uniform(-a1, a1, (hidden, d)),
            b1=rng.uniform(-a1, a1, hidden),
            W2=rng.uniform(-a2, a2, (d, hidden)),
            b2=rng.uniform(-a2, a2, d),
            seed=seed,
        )

    def params(self) -> list[np.ndarray]:
        return [self.W1, self.b1, self.W2, self.b2]

    def copy(self) -> "MLPScore":
        return MLPScore(*(p.copy() for p in self.params()), seed=self.seed, loss_tag=self.loss_tag)

    def hidden_activations(self, X: np.ndarray) -> np.ndarray:
        A = _k.preactivation(np.ascontiguousarray(X, dtype=float), self.W1, self.b1)
        return np.tanh(A, out=A)

    def batch(self, X):
        return self.hidden_activations(np.asarray(X, dtype=float)) @ self.W2.T + self.b2


def evaluate(model: ScoreModel, x) -> np.ndarray:
    X = np.asarray(x, dtype=float)
    single = X.ndim == 1
    if single:
        X = X[None, :]
    if X.ndim != 2 or X.shape[1] != model.dim:
        raise DimensionError(f"expected points of dimension {model.dim}, got shape {np.shape(x)}")
    out = model.batch(X)
    return out[0] if single else out


# ---------------------------------------------------------------------------
# Error measurement
# ---------------------------------------------------------------------------


def l2_error(model: ScoreModel, m: Mixture, n_mc: int, rng: np.random.Generator) -> tuple[float, float]:
    """Monte-Carlo ``E_mu |s - grad log mu|^2`` and its standard error."""
    if n_mc < 100:
        raise ValueError("n_mc must be at least 100")
    X = mx.sample_ground_truth(m, n_mc, rng)
    sq = np.sum((model.batch(X) - mx._score(m, X)) ** 2, axis=1)
    return float(sq.mean()), float(sq.std(ddof=1) / math.sqrt(n_mc))


@dataclass(frozen=True)
class BadSetConfig:
    eps_score_1: float

    def __post_init__(self):
        if not self.eps_score_1 > 0:
            raise ValueError("eps_score_1 must be positive")

    @classmethod
    def from_tv(cls, eps_tv: float, T: float) -> "BadSetConfig":
        """``eps_score_1^2 = eps_tv^2 / (8 T)``."""
        return cls(math.sqrt(eps_tv**2 / (8.0 * T)))


def bad_set_member(model: ScoreModel, m: Mixture, cfg: BadSetConfig, x):
    """True where ``|s(x) - grad log mu(x)| > eps_score_1``."""
    X = np.atleast_2d(np.asarray(x, dtype=float))
    out = np.linalg.norm(model.batch(X) - mx._score(m, X), axis=1) > cfg.eps_score_1
    return bool(out[0]) if np.ndim(x) == 1 else out


def bad_set_rate(model: ScoreModel, m: Mixture, cfg: BadSetConfig, n_mc: int, rng: np.random.Generator) -> dict:
    """Empirical ``mu(B)`` with binomial standard error and the Markov bound
    ``mu(B) <= E|s - grad log mu|^2 / eps_score_1^2``."""
    X = mx.sample_ground_truth(m, n_mc, rng)
    sq = np.sum((model.batch(X) - mx._score(m, X)) ** 2, axis=1)
    rate = float(np.mean(sq > cfg.eps_score_1**2))
    l2 = float(sq.mean())
    return {
        "rate": rate,
        "std_error": math.sqrt(max(rate * (1 - rate), 1.0 / n_mc) / n_mc),
        "l2_error": l2,
        "markov_bound": l2 / cfg.eps_score_1**2,
    }


# ---------------------------------------------------------------------------
# Score-matching objectives with hand-derived gradients
# ---------------------------------------------------------------------------


def vanilla_loss_and_grad(net: MLPScore, X: np.ndarray):
    """``J = mean[ 1/2 |s(x)|^2 + div s(x) ]`` and its parameter gradient.

    For one hidden layer ``div s(x) = sum_k tanh'(a_k) c_k`` with
    ``c_k = sum_j W2[j, k] W1[k, j]``; the gradient is written out by hand
    in :func:`earlylmc._kernels.vanilla_loss_grad`.
    """
    X = np.ascontiguousarray(X, dtype=float)
    Z = np.ascontiguousarray(net.hidden_activations(X))
    loss, *grads = _k.vanilla_loss_grad(X, Z, net.W1, net.W2, net.b2)
    return float(loss), list(grads)


def denoising_loss_and_grad(net: MLPScore, X: np.ndarray, xi: np.ndarray, sigma: float):
    """``J = mean |s(x + sigma xi) + xi / sigma|^2`` and its gradient."""
    Xt = np.ascontiguousarray(X + sigma * xi, dtype=float)
    Z = np.ascontiguousarray(net.hidden_activations(Xt))
    loss, *grads = _k.denoising_loss_grad(Xt, np.ascontiguousarray(xi, dtype=float), float(sigma), Z, net.W1, net.W2, net.b2)
    return float(loss), list(grads)


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------


@dataclass
class TrainConfig:
    loss: str = "vanilla"
    noise_sigma: float = 0.1
    optimizer: str = "adam"
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    steps: int = 1000
    batch_size: Optional[int] = None
    epochs: Optional[int] = None
    hidden_width: int = 64
    seed: int = 0

    def __post_init__(self):
        if not self.lr > 0:
            raise ValueError("lr must be positive")
        if self.batch_size is not None and self.batch_size < 1:
            raise ValueError("batch_size must be at least 1")
        if self.loss not in ("vanilla", "denoising"):
            raise ValueError(f"unknown loss {self.loss!r}")
        if self.optimizer not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.loss == "denoising" and not self.noise_sigma > 0:
            raise ValueError("denoising needs noise_sigma > 0")
        if self.steps < 0:
            raise ValueError("steps must be nonnegative")
        if self.epochs is not None and (self.epochs < 0 or self.batch_size is None):
            raise ValueError("epochs must be nonnegative and need a batch_size")

    def n_steps(self, n_data: Optional[int]) -> int:
        """Optimizer steps: ``steps``, or ``epochs * ceil(n / batch_size)``
        when epochs are given for a fixed dataset."""
        if self.epochs is None or n_data is None:
            return self.steps
        return self.epochs * -(-n_data // self.batch_size)


@dataclass
class TrainReport:
    loss_curve: np.ndarray
    wall_clock: float
    l2_error: Optional[float] = None
    l2_std_error: Optional[float] = None
    notes: list[str] = field(default_factory=list)

    @property
    def l2_ci95(self) -> Optional[tuple[float, float]]:
        if self.l2_error is None:
            return None
        return (self.l2_error - 1.96 * self.l2_std_error, self.l2_error + 1.96 * self.l2_std_error)


class _Adam:
    def __init__(self, params, lr, b1, b2, eps):
        self.lr, self.b1, self.b2, self.eps = lr, b1, b2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, params, grads):
        self.t += 1
        c1 = 1.0 - self.b1**self.t
        c2 = 1.0 - self.b2**self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


class _SGD:
    def __init__(self, lr):
        self.lr = lr

    def step(self, params, grads):
        for p, g in zip(params, grads):
            p -= self.lr * g


def _train(data: Union[np.ndarray, Mixture], cfg: TrainConfig, objective: str, eval_mixture: Optional[Mixture], n_eval: int):
    rng = np.random.default_rng(cfg.seed)
    fresh = isinstance(data, Mixture)
    if fresh:
        d = data.dim
    else:
        data = np.atleast_2d(np.asarray(data, dtype=float))
        if data.shape[0] == 0:
            raise ValueError("training data is empty")
        d = data.shape[1]
    net = MLPScore.init(d, cfg.hidden_width, rng, seed=cfg.seed)
    net.loss_tag = objective
    params = net.params()
    opt = (_Adam(params, cfg.lr, cfg.beta1, cfg.beta2, cfg.adam_eps) if cfg.optimizer == "adam" else _SGD(cfg.lr))
    n_steps = cfg.n_steps(None if fresh else data.shape[0])
    curve = np.empty(n_steps)
    batch = cfg.batch_size or 1
    pool, pos = np.empty((0, d)), 0
    order = None
    t0 = time.perf_counter()
    for step in range(n_steps):
        if fresh:
            # fresh draws every step, generated in blocks to cut call overhead
            if pos + batch > pool.shape[0]:
                pool, pos = mx.sample_ground_truth(data, max(FRESH_BLOCK, batch), rng), 0
            X = pool[pos:pos + batch]
            pos += batch
        elif cfg.epochs is not None:
            per_epoch = -(-data.shape[0] // cfg.batch_size)
            k = step % per_epoch
            if k == 0:
                order = rng.permutation(data.shape[0])
            X = data[np.sort(order[k * cfg.batch_size:(k + 1) * cfg.batch_size])]
        elif cfg.batch_size is None or cfg.batch_size >= data.shape[0]:
            X = data
        else:
            X = data[np.sort(rng.integers(0, data.shape[0], cfg.batch_size))]
        if objective == "vanilla":
            loss, grads = vanilla_loss_and_grad(net, X)
        else:
            xi = rng.standard_normal(X.shape)
            loss, grads = denoising_loss_and_grad(net, X, xi, cfg.noise_sigma)
        if not math.isfinite(loss) or not all(np.all(np.isfinite(g)) for g in grads):
            raise TrainingDiverged(step)
        curve[step] = loss
        opt.step(params, grads)
    report = TrainReport(loss_curve=curve, wall_clock=time.perf_counter() - t0)
    if objective == "denoising":
        report.notes.append(
            f"denoising objective targets the score of mu convolved with N(0, {cfg.noise_sigma}^2 I); "
            "bias relative to the clean score grows with sigma^2"
        )
    if eval_mixture is not None:
        est, se = l2_error(net, eval_mixture, n_eval, np.random.default_rng([cfg.seed, 1]))
        report.l2_error, report.l2_std_error = est, se
    return net, report


def train_vanilla(data, cfg: TrainConfig, eval_mixture: Optional[Mixture] = None, n_eval: int = 10_000):
    """Minimize the Hyvarinen objective.

    ``data`` is either a fixed ``(n, d)`` sample (full batch; minibatches
    drawn with replacement when ``cfg.batch_size`` is set; shuffled passes
    when ``cfg.epochs`` is set too) or a
    :class:`Mixture`, in which case a fresh batch is drawn every step.
    """
    if cfg.loss != "vanilla":
        raise ValueError("train_vanilla needs cfg.loss == 'vanilla'")
    return _train(data, cfg, "vanilla", eval_mixture, n_eval)


def train_denoising(data, cfg: TrainConfig, eval_mixture: Optional[Mixture] = None, n_eval: int = 10_000):
    """Minimize ``E |s(x + sigma xi) + xi / sigma|^2``."""
    if cfg.loss != "denoising":
        raise ValueError("train_denoising needs cfg.loss == 'denoising'")
    return _train(data, cfg, "denoising", eval_mixture, n_eval)


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------


def save_mlp(net: MLPScore, path) -> None:
    """Text weight file: one JSON header line, then one line per parameter
    array (row-major, 17 significant digits)."""
    header = {
        "format": "earlylmc-mlp/1",
        "d": net.dim,
        "hidden": net.hidden,
        "activation": "tanh",
        "seed": net.seed,
        "loss": net.loss_tag,
        "order": ["W1", "b1", "W2", "b2"],
    }
    with open(path, "w") as fh:
        fh.write(json.dumps(header, sort_keys=True) + "\n")
        for p in net.params():
            fh.write(" ".join(f"{v:.17g}" for v in p.ravel()) + "\n")


def load_mlp(path) -> MLPScore:
    with open(path) as fh:
        header = json.loads(fh.readline())
        if header.get("format") != "earlylmc-mlp/1" or header.get("activation") != "tanh":
            raise ValueError(f"{path}: not an earlylmc MLP weight file")
        d, H = header["d"], header["hidden"]
        arrays = [np.array([float(v) for v in fh.readline().split()]) for _ in range(4)]
    return MLPScore(arrays[0].reshape(H, d), arrays[1], arrays[2].reshape(d, H), arrays[3],
                    seed=header.get("seed"), loss_tag=header.get("loss", "none"))


def save_loss_curve(curve, path) -> None:
    with open(path, "w") as fh:
        fh.write("step,loss\n")
        for i, v in enumerate(curve):
            fh.write(f"{i},{v:.17g}\n")
