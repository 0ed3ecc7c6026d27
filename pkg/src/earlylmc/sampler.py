"""Langevin Monte Carlo ensembles with data-based initialization.

Each chain runs ``X <- X + h s(X) + sqrt(2h) xi`` for a fixed number of
steps starting from a point of the initialization set.  Chains draw noise
from their own counter-based Philox stream keyed by ``(master_seed,
chain)``; the stream position is the step index.  Chains are advanced in
fixed tiles of :data:`CHAIN_TILE`, so endpoints are identical whatever
the number of worker threads.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np

from . import _kernels as _k
from . import mixture as mx
from .mixture import Mixture
from .scores import BadSetConfig, ScoreModel

CHAIN_TILE = 512
NOISE_BLOCK = 1024
DIVERGENCE_NORM = 1e8


@dataclass(frozen=True)
class Schedule:
    h: float
    n_steps: int
    record_stride: int = 1

    def __post_init__(self):
        if not (self.h > 0 and math.isfinite(self.h)):
            raise ValueError("step size must be positive and finite")
        if self.n_steps < 0:
            raise ValueError("n_steps must be nonnegative")
        if self.record_stride < 1:
            raise ValueError("record_stride must be at least 1")

    @property
    def T(self) -> float:
        return self.h * self.n_steps

    @property
    def record_steps(self) -> np.ndarray:
        return np.arange(0, self.n_steps + 1, self.record_stride)


@dataclass
class InitSet:
    points: np.ndarray
    provenance: str

    def __post_init__(self):
        self.points = np.atleast_2d(np.asarray(self.points, dtype=float))
        if self.points.shape[0] == 0:
            raise ValueError("initialization set is empty")

    @property
    def M(self) -> int:
        return self.points.shape[0]


@dataclass
class Trajectory:
    chain: int
    start_index: int
    record_steps: np.ndarray
    states: np.ndarray
    endpoint: np.ndarray
    bad_hits: np.ndarray
    diverged: bool
    diverged_step: int
    h: float


@dataclass
class Ensemble:
    """Endpoints and stride-thinned states of every chain.

    ``states`` has shape ``(n_chains, n_records, d)``; ``bad_hits[c]`` lists
    the step indices at which chain ``c`` sat in the bad set.
    """

    schedule: Schedule
    model_tag: str
    master_seed: int
    start_index: np.ndarray
    states: np.ndarray
    endpoints: np.ndarray
    bad_hits: list
    diverged: np.ndarray
    diverged_step: np.ndarray
    init_mode: str

    @property
    def n_chains(self) -> int:
        return self.endpoints.shape[0]

    @property
    def record_steps(self) -> np.ndarray:
        return self.schedule.record_steps

    @property
    def bad_hit_counts(self) -> np.ndarray:
        return np.array([len(b) for b in self.bad_hits], dtype=int)

    def state_at(self, step: int) -> np.ndarray:
        idx = np.flatnonzero(self.record_steps == step)
        if idx.size == 0:
            raise KeyError(f"step {step} was not recorded (stride {self.schedule.record_stride})")
        return self.states[:, idx[0], :]

    def trajectory(self, c: int) -> Trajectory:
        return Trajectory(
            chain=c,
            start_index=int(self.start_index[c]),
            record_steps=self.record_steps,
            states=self.states[c],
            endpoint=self.endpoints[c],
            bad_hits=np.asarray(self.bad_hits[c], dtype=int),
            diverged=bool(self.diverged[c]),
            diverged_step=int(self.diverged_step[c]),
            h=self.schedule.h,
        )

    @property
    def trajectories(self) -> list[Trajectory]:
        return [self.trajectory(c) for c in range(self.n_chains)]


# ---------------------------------------------------------------------------
# Random streams
# ---------------------------------------------------------------------------


def chain_stream(master_seed: int, chain: int, purpose: int = 0) -> np.random.Generator:
    """Philox stream keyed by ``(master_seed, chain, purpose)``.

    Purpose 0 is the Langevin noise, purpose 1 the choice of start point.
    """
    ss = np.random.SeedSequence(entropy=int(master_seed), spawn_key=(int(chain), int(purpose)))
    return np.random.Generator(np.random.Philox(ss))


# ---------------------------------------------------------------------------
# Update rule
# ---------------------------------------------------------------------------


def lmc_step(x, h: float, model: ScoreModel, noise) -> np.ndarray:
    """``x + h s(x) + sqrt(2h) noise``."""
    X = np.asarray(x, dtype=float)
    single = X.ndim == 1
    Xb = X[None, :] if single else X
    Nb = np.asarray(noise, dtype=float).reshape(Xb.shape)
    with np.errstate(over="ignore", invalid="ignore"):
        out = _update(Xb, model.batch(Xb), h, math.sqrt(2.0 * h), Nb)
    if not np.all(np.isfinite(out)):
        raise FloatingPointError("non-finite chain state")
    return out[0] if single else out


def _update(X, S, h, root2h, noise):
    return X + h * S + root2h * noise


# ---------------------------------------------------------------------------
# Initialization
# ---------------------------------------------------------------------------


def data_based_init(source: Union[Mixture, np.ndarray], M: Optional[int] = None, rng: Optional[np.random.Generator] = None) -> InitSet:
    """``M`` ground-truth draws from a mixture, or an external batch as is."""
    if isinstance(source, Mixture):
        if M is None or M < 1:
            raise ValueError("M must be at least 1")
        if rng is None:
            raise ValueError("sampling from a mixture needs an rng")
        return InitSet(mx.sample_ground_truth(source, M, rng), "ground-truth")
    pts = np.atleast_2d(np.asarray(source, dtype=float))
    if M is not None and M != pts.shape[0]:
        raise ValueError(f"external batch has {pts.shape[0]} points, expected {M}")
    if pts.shape[0] == 0:
        raise ValueError("M must be at least 1")
    return InitSet(pts, "external")


def start_indices(init: InitSet, n_chains: int, master_seed: int, mode: Optional[str] = None) -> tuple[np.ndarray, str]:
    if mode is None:
        mode = "per-sample" if n_chains == init.M else "resample"
    if mode == "per-sample":
        return np.arange(n_chains) % init.M, mode
    if mode == "resample":
        return np.array([chain_stream(master_seed, c, 1).integers(init.M) for c in range(n_chains)]), mode
    raise ValueError(f"unknown init mode {mode!r}")


# ---------------------------------------------------------------------------
# Ensembles
# ---------------------------------------------------------------------------


def _run_tile(chains, X0, sched: Schedule, model: ScoreModel, master_seed: int,
              monitor: Optional[tuple[BadSetConfig, Mixture]], aggregate: int):
    n, d = X0.shape
    h = sched.h
    root2h = math.sqrt(2.0 * h)
    streams = [chain_stream(master_seed, c, 0) for c in chains]
    rec_steps = sched.record_steps
    states = np.empty((n, rec_steps.size, d))
    X = X0.copy()
    states[:, 0] = X
    rec = 1
    hits: list[list[int]] = [[] for _ in range(n)]
    diverged = np.zeros(n, dtype=bool)
    div_step = np.full(n, -1)
    block = np.empty((n, 0, d))
    bpos = 0
    inv_sqrt_agg = 1.0 / math.sqrt(aggregate)
    for step in range(sched.n_steps):
        if bpos == block.shape[1]:
            nb = min(NOISE_BLOCK, sched.n_steps - step)
            raw = np.stack([g.standard_normal((nb * aggregate, d)) for g in streams])
            if aggregate > 1:
                raw = raw.reshape(n, nb, aggregate, d).sum(axis=2) * inv_sqrt_agg
            block = raw
            bpos = 0
        noise = block[:, bpos]
        bpos += 1
        S = model.batch(X)
        if monitor is not None:
            cfg, m = monitor
            bad = np.sum((S - mx._score(m, X)) ** 2, axis=1) > cfg.eps_score_1**2
            for i in np.flatnonzero(bad & ~diverged):
                hits[i].append(step)
        _k.advance(X, S, h, root2h, noise, diverged, div_step, step, DIVERGENCE_NORM)
        if rec < rec_steps.size and rec_steps[rec] == step + 1:
            states[:, rec] = X
            rec += 1
    return states, X, hits, diverged, div_step


def run_ensemble(
    init: InitSet,
    sched: Schedule,
    model: ScoreModel,
    n_chains: int,
    master_seed: int,
    parallelism: int = 1,
    monitor: Optional[tuple[BadSetConfig, Mixture]] = None,
    init_mode: Optional[str] = None,
    noise_aggregate: int = 1,
) -> Ensemble:
    """Run ``n_chains`` LMC chains.

    ``noise_aggregate = r`` drives each step with the normalized sum of
    ``r`` consecutive draws of the chain's stream; a run at ``h`` with
    ``r`` is then coupled to a run at ``h / r`` with ``r = 1``.
    """
    if n_chains < 1:
        raise ValueError("n_chains must be at least 1")
    if init.points.shape[1] != model.dim:
        raise mx.DimensionError("initialization and score model dimensions differ")
    idx, mode = start_indices(init, n_chains, master_seed, init_mode)
    X0 = init.points[idx]
    tiles = [np.arange(a, min(a + CHAIN_TILE, n_chains)) for a in range(0, n_chains, CHAIN_TILE)]

    def work(t):
        return _run_tile(t, X0[t], sched, model, master_seed, monitor, noise_aggregate)

    if parallelism > 1 and len(tiles) > 1:
        with ThreadPoolExecutor(max_workers=parallelism) as pool:
            results = list(pool.map(work, tiles))
    else:
        results = [work(t) for t in tiles]
    return Ensemble(
        schedule=sched,
        model_tag=getattr(model, "tag", type(model).__name__),
        master_seed=int(master_seed),
        start_index=idx,
        states=np.concatenate([r[0] for r in results]),
        endpoints=np.concatenate([r[1] for r in results]),
        bad_hits=[hits for r in results for hits in r[2]],
        diverged=np.concatenate([r[3] for r in results]),
        diverged_step=np.concatenate([r[4] for r in results]),
        init_mode=mode,
    )


# ---------------------------------------------------------------------------
# Discretization probe
# ---------------------------------------------------------------------------


@dataclass
class ProbeReport:
    h_coarse: float
    h_fine: float
    T: float
    tv: float
    tv_mc_error: float
    var_coarse: float
    var_fine: float
    direction: np.ndarray
    n_chains: int
    extras: dict = field(default_factory=dict)


def discretization_probe(
    init: InitSet,
    model: ScoreModel,
    T: float,
    h_coarse: float,
    refine: int,
    master_seed: int,
    n_chains: int = 10_000,
    direction=None,
    parallelism: int = 1,
    n_boot: int = 50,
) -> ProbeReport:
    """Endpoint TV between coupled runs at ``h`` and ``h / refine``.

    Both runs share starts and Brownian increments (the coarse step uses
    the normalized sum of ``refine`` fine draws).  TV is measured on the
    projection onto ``direction`` by KDE on a shared grid; the MC error is
    the bootstrap standard deviation over chains.
    """
    from .diagnostics import kde_1d, tv_grid_1d, default_grid_from_samples

    if refine < 2:
        raise ValueError("refine must be at least 2")
    h_fine = h_coarse / refine
    n_c = int(round(T / h_coarse))
    n_f = n_c * refine
    coarse = run_ensemble(init, Schedule(h_coarse, n_c, max(n_c, 1)), model, n_chains, master_seed,
                          parallelism, noise_aggregate=refine)
    fine = run_ensemble(init, Schedule(h_fine, n_f, max(n_f, 1)), model, n_chains, master_seed, parallelism)
    u = np.eye(model.dim)[0] if direction is None else np.asarray(direction, dtype=float)
    if np.linalg.norm(u) == 0:
        raise ValueError("zero direction")
    u = u / np.linalg.norm(u)
    a = coarse.endpoints @ u
    b = fine.endpoints @ u
    grid = default_grid_from_samples(np.concatenate([a, b]))

    def tv_of(ia, ib):
        return tv_grid_1d(kde_1d(a[ia], grid=grid), kde_1d(b[ib], grid=grid)).estimate

    allidx = np.arange(n_chains)
    tv = tv_of(allidx, allidx)
    boot_rng = np.random.default_rng([master_seed, 7])
    boots = []
    for _ in range(n_boot):
        ib = boot_rng.integers(0, n_chains, n_chains)
        boots.append(tv_of(ib, ib))
    return ProbeReport(
        h_coarse=h_coarse, h_fine=h_fine, T=n_c * h_coarse, tv=tv,
        tv_mc_error=float(np.std(boots, ddof=1)),
        var_coarse=float(np.var(a, ddof=1)), var_fine=float(np.var(b, ddof=1)),
        direction=u, n_chains=n_chains,
    )


def ou_endpoint_variance(sigma2: float, h: float, n_steps: int, var0: float) -> float:
    """Exact variance after ``n_steps`` LMC steps on ``N(m, sigma2)`` started
    from a law with variance ``var0``: ``a^{2n} var0 + 2h (1 - a^{2n}) / (1 - a^2)``
    with ``a = 1 - h / sigma2``."""
    a2 = (1.0 - h / sigma2) ** 2
    a2n = a2 ** n_steps
    return a2n * var0 + 2.0 * h * (1.0 - a2n) / (1.0 - a2)
