"""Overlaps, overlap graphs, log-Sobolev certificates and schedules.

The overlap of two densities is ``delta(nu, pi) = int min(nu, pi)``, which
equals ``1 - d_TV(nu, pi)``.  Components with overlap at least ``delta``
are joined in the overlap graph; a connected graph yields Poincare and
log-Sobolev bounds for the whole mixture.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .mixture import Mixture, concentration_radius, log_density
from .quadrature import QuadratureError, adaptive_trapezoid, trapezoid_weights

# ---------------------------------------------------------------------------
# Overlaps
# ---------------------------------------------------------------------------


@dataclass
class OverlapMatrix:
    delta: np.ndarray
    error: np.ndarray
    method: str

    @property
    def K(self) -> int:
        return self.delta.shape[0]


def _pair_box(m: Mixture, i: int, j: int, width: float = 8.0):
    ci, cj = m.components[i], m.components[j]
    modes = np.stack([ci.mode, cj.mode])
    s = max(ci.std_max, cj.std_max)
    return modes.min(axis=0) - width * s, modes.max(axis=0) + width * s


def overlap(
    m: Mixture,
    i: int,
    j: int,
    method: str = "auto",
    tol: float = 1e-8,
    n_mc: int = 100_000,
    rng: Optional[np.random.Generator] = None,
) -> tuple[float, float]:
    """Overlap ``int min(mu_i, mu_j)`` and its error estimate.

    ``quadrature`` (d <= 3) refines a trapezoid grid on the hull of the two
    modes padded by 8 standard deviations.  ``monte-carlo`` averages
    ``min(1, mu_j/mu_i)`` over draws from ``mu_i`` and returns the standard
    error.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    if method == "auto":
        method = "quadrature" if m.dim <= 3 else "monte-carlo"
    if i == j:
        return 1.0, 0.0
    ci, cj = m.components[i], m.components[j]
    if method == "quadrature":
        if m.dim > 3:
            raise ValueError("quadrature overlap supports d <= 3 only")
        lo, hi = _pair_box(m, i, j)
        smin = min(1.0 / math.sqrt(ci.beta), 1.0 / math.sqrt(cj.beta))
        per_axis = int(min(max(np.max(hi - lo) / (0.25 * smin), 33), {1: 20001, 2: 801, 3: 129}[m.dim]))

        def integrand(X):
            return np.exp(np.minimum(ci.log_density(X), cj.log_density(X)))

        val, err = adaptive_trapezoid(integrand, lo, hi, tol, n0=per_axis)
        return float(min(max(val, 0.0), 1.0)), float(err)
    if method == "monte-carlo":
        if rng is None:
            rng = np.random.default_rng(0)
        X = ci.sample(rng, n_mc)
        ratio = np.exp(np.minimum(0.0, cj.log_density(X) - ci.log_density(X)))
        return float(ratio.mean()), float(ratio.std(ddof=1) / math.sqrt(n_mc))
    raise ValueError(f"unknown overlap method {method!r}")


def overlap_matrix(m: Mixture, method: str = "auto", tol: float = 1e-8, n_mc: int = 100_000, seed: int = 0) -> OverlapMatrix:
    K = m.K
    delta = np.eye(K)
    err = np.zeros((K, K))
    used = method if method != "auto" else ("quadrature" if m.dim <= 3 else "monte-carlo")
    for i in range(K):
        for j in range(i + 1, K):
            # one stream per pair keeps entries independent of evaluation order
            rng = np.random.default_rng([seed, i, j])
            v, e = overlap(m, i, j, used, tol, n_mc, rng)
            delta[i, j] = delta[j, i] = v
            err[i, j] = err[j, i] = e
    return OverlapMatrix(delta, err, used)


def overlap_matrix_from_array(delta) -> OverlapMatrix:
    d = np.asarray(delta, dtype=float)
    if d.ndim != 2 or d.shape[0] != d.shape[1] or not np.allclose(d, d.T):
        raise ValueError("overlap matrix must be square and symmetric")
    d = d.copy()
    np.fill_diagonal(d, 1.0)
    return OverlapMatrix(d, np.zeros_like(d), "given")


# ---------------------------------------------------------------------------
# Overlap graph
# ---------------------------------------------------------------------------


@dataclass
class OverlapGraph:
    threshold: float
    adjacency: np.ndarray
    components: list[tuple[int, ...]]
    diameters: list[int]

    @property
    def K(self) -> int:
        return self.adjacency.shape[0]

    @property
    def is_connected(self) -> bool:
        return len(self.components) == 1

    @property
    def n_edges(self) -> int:
        return int(np.triu(self.adjacency, 1).sum())

    def component_of(self, i: int) -> int:
        for r, comp in enumerate(self.components):
            if i in comp:
                return r
        raise IndexError(i)


def _bfs(adj: np.ndarray, start: int) -> dict[int, int]:
    dist = {start: 0}
    queue = deque([start])
    while queue:
        u = queue.popleft()
        for v in np.flatnonzero(adj[u]):
            v = int(v)
            if v not in dist:
                dist[v] = dist[u] + 1
                queue.append(v)
    return dist


def build_graph(overlaps: OverlapMatrix | np.ndarray, delta: float) -> OverlapGraph:
    """Graph with an edge ``(i, j)`` iff ``delta_ij >= delta``."""
    if not (0 < delta <= 1):
        raise ValueError("threshold must lie in (0, 1]")
    D = overlaps.delta if isinstance(overlaps, OverlapMatrix) else np.asarray(overlaps, dtype=float)
    K = D.shape[0]
    adj = D >= delta
    np.fill_diagonal(adj, False)
    seen: set[int] = set()
    comps: list[tuple[int, ...]] = []
    diams: list[int] = []
    for i in range(K):
        if i in seen:
            continue
        comp = tuple(sorted(_bfs(adj, i)))
        seen.update(comp)
        comps.append(comp)
        diams.append(max(max(_bfs(adj, u).values()) for u in comp))
    return OverlapGraph(float(delta), adj, comps, diams)


def connectivity_threshold(overlaps: OverlapMatrix | np.ndarray) -> float:
    """Largest threshold at which the overlap graph is connected (the
    bottleneck of a maximum spanning tree)."""
    D = overlaps.delta if isinstance(overlaps, OverlapMatrix) else np.asarray(overlaps, dtype=float)
    K = D.shape[0]
    if K == 1:
        return 1.0
    in_tree = {0}
    best = np.full(K, -np.inf)
    best[1:] = D[0, 1:]
    bottleneck = 1.0
    while len(in_tree) < K:
        cand = [k for k in range(K) if k not in in_tree]
        k = max(cand, key=lambda c: best[c])
        bottleneck = min(bottleneck, best[k])
        in_tree.add(k)
        for c in cand:
            if c != k:
                best[c] = max(best[c], D[k, c])
    return float(bottleneck)


# ---------------------------------------------------------------------------
# Log-Sobolev certificate
# ---------------------------------------------------------------------------


def chain_lsi_constant(p_star: float) -> float:
    """Log-Sobolev constant ``ln(4/p_*)`` of the instant-mixing chain."""
    return math.log(4.0 / p_star)


def chain_lsi_constant_formal(p_star: float) -> float:
    """The ``1 + ln(1/p_*)`` value quoted in the theorem statement."""
    return 1.0 + math.log(1.0 / p_star)


@dataclass
class LSICertificate:
    c_pi_bound: float
    c_ls_bound: float
    delta_used: float
    diameter: int
    chain_constant: float
    chain_constant_formal: float
    component_c_ls: list[float]
    weights: list[float]
    indices: tuple[int, ...]
    c_ls_main_text: float
    c_ls_appendix: float

    def as_items(self) -> list[tuple[str, object]]:
        return [
            ("indices", list(self.indices)),
            ("delta_used", self.delta_used),
            ("diameter", self.diameter),
            ("chain_constant", self.chain_constant),
            ("chain_constant_formal", self.chain_constant_formal),
            ("component_c_ls", self.component_c_ls),
            ("weights", self.weights),
            ("c_pi_bound", self.c_pi_bound),
            ("c_ls_bound", self.c_ls_bound),
            ("c_ls_main_text", self.c_ls_main_text),
            ("c_ls_appendix", self.c_ls_appendix),
        ]


def _certify(weights: np.ndarray, c_ls: np.ndarray, delta: float, diameter: int, indices) -> LSICertificate:
    p_star = float(weights.min())
    M = max(int(diameter), 1)
    n = len(weights)
    chain = chain_lsi_constant(p_star)
    formal = chain_lsi_constant_formal(p_star)
    worst = float(np.max(c_ls / weights))
    c_pi = 4.0 * M / delta * worst  # C_PI(mu_i) <= C_LS(mu_i) = 1/alpha_i
    c_ls_bound = 4.0 * M * chain / delta * worst
    return LSICertificate(
        c_pi_bound=c_pi,
        c_ls_bound=c_ls_bound,
        delta_used=float(delta),
        diameter=M,
        chain_constant=chain,
        chain_constant_formal=formal,
        component_c_ls=[float(c) for c in c_ls],
        weights=[float(w) for w in weights],
        indices=tuple(int(i) for i in indices),
        c_ls_main_text=4.0 * n * formal / p_star / delta * float(c_ls.max()),
        c_ls_appendix=4.0 * n**2 * formal / p_star / delta * float(c_ls.max()),
    )


def lsi_bound(m: Mixture, graph: OverlapGraph, require_connected: bool = True):
    """Poincare and log-Sobolev bounds from a connected overlap graph.

    ``C_LS(mu) <= 4 M ln(4/p_*) / delta * max_i C_LS(mu_i)/p_i`` with
    ``M`` the graph diameter and ``C_LS(mu_i) = 1/alpha_i``.  For a
    disconnected graph, either raise or return one certificate per
    connected part (each part renormalized).
    """
    if graph.K != m.K:
        raise ValueError("graph and mixture sizes differ")
    c_ls = np.array([1.0 / c.alpha for c in m.components])
    if graph.is_connected:
        return _certify(m.weights, c_ls, graph.threshold, graph.diameters[0], range(m.K))
    if require_connected:
        raise ValueError(f"overlap graph at delta={graph.threshold} is disconnected: {graph.components}")
    out = []
    for comp, diam in zip(graph.components, graph.diameters):
        idx = list(comp)
        w = m.weights[idx] / m.weights[idx].sum()
        out.append(_certify(w, c_ls[idx], graph.threshold, diam, idx))
    return out


# ---------------------------------------------------------------------------
# 1-D numerical verification
# ---------------------------------------------------------------------------


@dataclass
class TestFunction:
    __test__ = False  # keep pytest from collecting this name

    name: str
    f: Callable[[np.ndarray], np.ndarray]
    df: Callable[[np.ndarray], np.ndarray]


def default_test_family(m: Mixture) -> list[TestFunction]:
    """x, x^2, logistic steps and Gaussian bumps at 5 locations."""
    modes = m.modes[:, 0]
    locs = np.linspace(modes.min() - 1.0, modes.max() + 1.0, 5)
    fam = [
        TestFunction("x", lambda x: x, lambda x: np.ones_like(x)),
        TestFunction("x^2", lambda x: x * x, lambda x: 2 * x),
    ]
    for c in locs:
        def step(x, c=c):
            return 0.5 * (1.0 + np.tanh(0.5 * (x - c)))

        def dstep(x, c=c):
            s = step(x)
            return s * (1.0 - s)

        fam.append(TestFunction(f"logistic@{c:.6g}", step, dstep))
    for c in locs:
        fam.append(TestFunction(
            f"bump@{c:.6g}",
            lambda x, c=c: np.exp(-0.5 * (x - c) ** 2),
            lambda x, c=c: -(x - c) * np.exp(-0.5 * (x - c) ** 2),
        ))
    return fam


def default_grid_1d(m: Mixture, n: int = 8001, width: float = 12.0) -> np.ndarray:
    modes = m.modes[:, 0]
    s = max(c.std_max for c in m.components)
    return np.linspace(modes.min() - width * s, modes.max() + width * s, n)


def _check_grid_covers(m: Mixture, grid: np.ndarray, nstd: float = 8.0) -> None:
    for c in m.components:
        if grid[0] > c.mode[0] - nstd * c.std_max or grid[-1] < c.mode[0] + nstd * c.std_max:
            raise ValueError("grid must cover 8 standard deviations of every component")


def _entropy(g: np.ndarray, dens_w: np.ndarray) -> float:
    """``Ent[g] = E[g ln g] - E[g] ln E[g]`` for quadrature masses ``dens_w``."""
    glogg = np.where(g > 0, g * np.log(np.where(g > 0, g, 1.0)), 0.0)
    mean = float(np.dot(dens_w, g))
    return float(np.dot(dens_w, glogg)) - (mean * math.log(mean) if mean > 0 else 0.0)


def _self_checked(compute: Callable[[np.ndarray], float | np.ndarray], grid: np.ndarray, rtol: float = 1e-6):
    """Evaluate on the grid and on every other grid point; raise if the two
    trapezoid estimates disagree beyond ``rtol``."""
    fine = np.asarray(compute(grid), dtype=float)
    sub = grid[::2] if (grid.size % 2 == 1) else np.append(grid[:-1:2], grid[-1])
    coarse = np.asarray(compute(sub), dtype=float)
    scale = np.maximum(1.0, np.abs(fine))
    if np.any(np.abs(fine - coarse) > rtol * scale):
        raise QuadratureError("grid too coarse: trapezoid halving disagrees by more than 1e-6")
    return fine


def lsi_ratios_1d(m: Mixture, family: Sequence[TestFunction], grid: np.ndarray) -> list[tuple[str, float]]:
    def compute(x):
        w = trapezoid_weights(x)

        dens_w = w * np.exp(log_density(m, x[:, None]))
        out = []
        for tf in family:
            f = tf.f(x)
            ent = _entropy(f * f, dens_w)
            energy = float(np.dot(dens_w, tf.df(x) ** 2))
            out.append(ent / (2 * energy) if energy > 0 else 0.0)
        return np.array(out)

    vals = _self_checked(compute, grid)
    return [(tf.name, float(v)) for tf, v in zip(family, vals)]


def verify_lsi_1d(m: Mixture, c: float, family: Optional[Sequence[TestFunction]] = None, grid: Optional[np.ndarray] = None) -> dict:
    """Check ``Ent[f^2] / (2 E[f'^2]) <= c`` for every test function."""
    if m.dim != 1:
        raise ValueError("verify_lsi_1d needs d = 1")
    family = default_test_family(m) if family is None else list(family)
    grid = default_grid_1d(m) if grid is None else np.asarray(grid, dtype=float)
    _check_grid_covers(m, grid)
    ratios = lsi_ratios_1d(m, family, grid)
    worst = max((r for _, r in ratios), default=0.0)
    return {
        "constant": c,
        "ratios": ratios,
        "max_ratio": worst,
        "passed": all(r <= c * (1 + 1e-6) for _, r in ratios),
    }


def decomposition_checks_1d(m: Mixture, f: TestFunction | Callable, grid: Optional[np.ndarray] = None, rtol: float = 1e-6) -> dict:
    """Variance decomposition, entropy decomposition and the pairwise
    comparison inequality, all by trapezoid quadrature.

    ``C_ij`` is the double integral of ``(f(x)-f(y))^2 mu_i(x) mu_j(y)``
    on the product grid.
    """
    if m.dim != 1:
        raise ValueError("decomposition checks need d = 1")
    fn = f.f if isinstance(f, TestFunction) else f
    grid = default_grid_1d(m, n=2049) if grid is None else np.asarray(grid, dtype=float)
    _check_grid_covers(m, grid)
    K = m.K
    p = m.weights

    def compute(x):
        w = trapezoid_weights(x)
        dens = np.exp(m.component_log_densities(x[:, None])).T  # (K, n)
        a = dens * w
        fx = fn(x)
        F2 = (fx[:, None] - fx[None, :]) ** 2
        C = a @ F2 @ a.T
        mix_w = p @ a
        mean_mix = float(mix_w @ fx)
        var_mix = float(mix_w @ (fx - mean_mix) ** 2)
        means = a @ fx
        variances = np.array([a[i] @ (fx - means[i]) ** 2 for i in range(K)])
        g = fx * fx
        ent_mix = _entropy(g, mix_w)
        ent_comp = np.array([_entropy(g, a[i]) for i in range(K)])
        gbar = a @ g
        ent_p = _entropy(gbar, p)
        return np.concatenate([
            [2 * var_mix, float(p @ C @ p), ent_mix, float(p @ ent_comp) + ent_p],
            C.ravel(), variances, means,
        ])

    v = _self_checked(compute, grid)
    two_var, sum_c, ent_mix, ent_rhs = v[:4]
    C = v[4:4 + K * K].reshape(K, K)
    variances = v[4 + K * K:4 + K * K + K]
    means = v[4 + K * K + K:4 + K * K + 2 * K]
    # min(mu_i, mu_j) has a kink, so the overlap gets its own refinement
    ov = overlap_matrix(m, "quadrature", tol=1e-9).delta

    def rel(a, b):
        return abs(a - b) / max(1.0, abs(a), abs(b))

    pairs = []
    for i in range(K):
        for j in range(i + 1, K):
            d = ov[i, j]
            bound = (2 * (2 - d) / d) * (variances[i] + variances[j]) if d > 0 else math.inf
            pairs.append({
                "i": i, "j": j, "overlap": float(d), "C_ij": float(C[i, j]), "bound": float(bound),
                "closed_form": float(variances[i] + variances[j] + (means[i] - means[j]) ** 2),
                "holds": bool(C[i, j] <= bound * (1 + rtol)),
            })
    return {
        "variance": {"two_var": float(two_var), "sum_pp_C": float(sum_c), "rel_error": rel(two_var, sum_c),
                     "holds": rel(two_var, sum_c) <= rtol},
        "entropy": {"ent_mixture": float(ent_mix), "decomposed": float(ent_rhs), "rel_error": rel(ent_mix, ent_rhs),
                    "holds": rel(ent_mix, ent_rhs) <= rtol},
        "compare_pair": pairs,
        "passed": rel(two_var, sum_c) <= rtol and rel(ent_mix, ent_rhs) <= rtol and all(q["holds"] for q in pairs),
    }


# ---------------------------------------------------------------------------
# Small-weight thresholding
# ---------------------------------------------------------------------------


def threshold_small_weights(m: Mixture | Sequence[float], threshold: float):
    """Split indices into kept ``{i : p_i >= threshold}`` and discarded.

    Returns ``(kept, discarded, renormalized_weights_of_kept)``.
    """
    if not (0 < threshold < 1):
        raise ValueError("threshold must lie in (0, 1)")
    p = m.weights if isinstance(m, Mixture) else np.asarray(m, dtype=float)
    kept = [i for i in range(len(p)) if p[i] >= threshold]
    if not kept:
        raise ValueError("threshold exceeds every weight; nothing kept")
    discarded = [i for i in range(len(p)) if p[i] < threshold]
    w = p[kept]
    return kept, discarded, w / w.sum()


# ---------------------------------------------------------------------------
# Multiscale recursion
# ---------------------------------------------------------------------------


def _log(x: float) -> float:
    return math.log(x) if x > 0 else -math.inf


def mixing_time_constant(p_star: float, K: int) -> float:
    """``C_{p_*,K} = 4 K^2 ln(4/p_*) / p_*``."""
    return 4.0 * K * K * chain_lsi_constant(p_star) / p_star


def next_log_delta(log_delta: float, *, alpha, beta, L, p_star, K, d, eps, tau) -> float:
    """One step of the delta recursion, in log space.

    ``eps`` and ``tau`` are the already-reduced accuracy parameters.
    """
    bl = beta * L
    log_num = 1.5 * log_delta + 1.5 * _log(alpha) + 2.5 * _log(p_star) + 2 * _log(eps) + _log(tau)
    l1 = math.log(1.0 / p_star)
    l2 = math.log(beta**2 * L / eps * math.log(1.0 / tau) / alpha)
    l3_arg = math.log(16.0 * d * bl**2 / (eps * tau * alpha)) - log_delta
    log_den = (
        5 * math.log(10.0) + 5 * math.log(K) + math.log(d) + 3 * math.log(bl)
        + 1.5 * _log(l1) + 1.5 * _log(l2) + 2.51 * _log(l3_arg)
    )
    return log_num - log_den


@dataclass
class MultiscalePlan:
    delta_sequence: list[float]
    log_delta_sequence: list[float]
    graphs: list[OverlapGraph]
    terminal_scale: int
    partition: list[tuple[int, ...]]
    branch: str
    mixing_time: float
    L: float
    eps_tilde: float
    tau_tilde: float
    p_star: float
    kept: list[int] = field(default_factory=list)
    discarded: list[int] = field(default_factory=list)
    threshold_trace: list[dict] = field(default_factory=list)

    @property
    def component_counts(self) -> list[int]:
        return [len(g.components) for g in self.graphs]

    def as_items(self) -> list[tuple[str, object]]:
        return [
            ("branch", self.branch),
            ("terminal_scale", self.terminal_scale),
            ("partition", [list(p) for p in self.partition]),
            ("partition_one_based", [[i + 1 for i in p] for p in self.partition]),
            ("log_delta_sequence", self.log_delta_sequence),
            ("delta_sequence", self.delta_sequence),
            ("component_counts", self.component_counts),
            ("mixing_time", self.mixing_time),
            ("L", self.L),
            ("eps_tilde", self.eps_tilde),
            ("tau_tilde", self.tau_tilde),
            ("p_star", self.p_star),
            ("kept", self.kept or None),
            ("discarded", self.discarded or None),
        ]


def _delta_sequence(K: int, **kw) -> list[float]:
    logs = [0.0]
    if K < 2:
        return logs
    for _ in range(K):
        logs.append(next_log_delta(logs[-1], K=K, **kw))
    return logs


def multiscale_plan(
    m: Mixture,
    eps_tv: float,
    tau: float,
    overlaps: Optional[OverlapMatrix] = None,
    L: Optional[float] = None,
    threshold_small: bool = False,
) -> MultiscalePlan:
    """Run the delta recursion until the overlap graph either separates
    (all cross-part overlaps at most the next delta) or becomes connected.

    ``L`` defaults to ``max(10 D, max_ij |u_i - u_j|)``.
    """
    if not (0 < eps_tv < 0.5 and 0 < tau < 0.5):
        raise ValueError("eps_tv and tau must lie in (0, 1/2)")
    if overlaps is None:
        overlaps = overlap_matrix(m)
    K, d = m.K, m.dim
    alpha, beta = m.alpha, m.beta
    modes = m.modes
    spread = float(max(np.linalg.norm(modes[i] - modes[j]) for i in range(K) for j in range(K)))
    if L is None:
        L = max(10.0 * concentration_radius(d, alpha, beta / alpha), spread)

    trace: list[dict] = []
    kept = list(range(K))
    discarded: list[int] = []
    p = m.weights
    p_star = float(p.min())
    eps_t = eps_tv / (9 * K)

    def seq_for(ps):
        tau_t = ps * eps_tv / (9 * K)
        return tau_t, _delta_sequence(K, alpha=alpha, beta=beta, L=L, p_star=ps, d=d, eps=eps_t, tau=tau_t)

    if threshold_small and K > 1:
        ps = 1.0 / K
        for s in range(K):
            kept, discarded, _ = threshold_small_weights(p, ps) if ps < 1 else (list(range(K)), [], None)
            _, logs = seq_for(ps)
            nxt = math.exp(logs[K]) / 8.0
            heavy = max((p[i] for i in discarded), default=0.0)
            trace.append({"s": s, "p_s_star": ps, "delta_s_K": math.exp(logs[K]), "discarded": list(discarded)})
            if heavy <= nxt or not discarded or s >= K - 2:
                break
            ps = nxt
        p_star = ps if discarded else float(p.min())

    sub = overlaps.delta[np.ix_(kept, kept)]
    Ks = len(kept)
    tau_t, logs = seq_for(p_star)
    deltas = [math.exp(v) for v in logs]
    graphs: list[OverlapGraph] = []
    terminal = None
    for s in range(Ks):
        g = build_graph(sub, deltas[s]) if deltas[s] > 0 else build_graph(sub, 5e-324)
        graphs.append(g)
        comp_of = {i: r for r, comp in enumerate(g.components) for i in comp}
        cross = [sub[i, j] for i in range(Ks) for j in range(i + 1, Ks) if comp_of[i] != comp_of[j]]
        nxt = deltas[s + 1] if s + 1 < len(deltas) else 0.0
        if not cross or max(cross) <= nxt:
            terminal = s
            break
    if terminal is None:  # unreachable by construction; kept as a guard
        raise RuntimeError("multiscale recursion did not terminate")
    g = graphs[terminal]
    partition = [tuple(kept[i] for i in comp) for comp in g.components]
    C = mixing_time_constant(p_star, K)
    T = (2 * C / (deltas[terminal] * alpha)) * (
        math.log(beta**2 * L / alpha) + math.log(math.log(1.0 / tau_t)) + 2 * math.log(1.0 / eps_t)
    ) if deltas[terminal] > 0 else math.inf
    return MultiscalePlan(
        delta_sequence=deltas,
        log_delta_sequence=logs,
        graphs=graphs,
        terminal_scale=terminal,
        partition=partition,
        branch="connected" if len(partition) == 1 else "separated",
        mixing_time=T,
        L=L,
        eps_tilde=eps_t,
        tau_tilde=tau_t,
        p_star=p_star,
        kept=kept,
        discarded=discarded,
        threshold_trace=trace,
    )


# ---------------------------------------------------------------------------
# Step-size / horizon schedule
# ---------------------------------------------------------------------------


@dataclass
class ScheduleParams:
    L0: float
    L: float
    T: float
    h: float
    N: Optional[int]
    eps_score_budget: float
    M_min: float
    log_T: float
    log_h: float
    kappa: float
    p_star: float
    D: float
    alpha: float
    beta: float
    K: int
    d: int
    eps_tv: float
    tau: float
    constants_mode: str

    def as_items(self) -> list[tuple[str, object]]:
        keys = ["constants_mode", "eps_tv", "tau", "K", "d", "alpha", "beta", "kappa", "p_star", "D",
                "L0", "L", "T", "log_T", "h", "log_h", "N", "eps_score_budget", "M_min"]
        return [(k, getattr(self, k)) for k in keys]


def schedule_params(m: Mixture, eps_tv: float, tau: float, constants_mode: str = "literal-unit", constants: Optional[dict] = None) -> ScheduleParams:
    """Evaluate the recommended ``L0, T, h``, score-error budget and sample
    count with every Theta-constant equal to one (``literal-unit``), or
    multiplied by caller constants ``{L0, T, h, eps_score, M}``
    (``user-scaled``)."""
    if not (0 < eps_tv < 0.5 and 0 < tau < 0.5):
        raise ValueError("eps_tv and tau must lie in (0, 1/2)")
    if constants_mode == "literal-unit":
        c = {}
    elif constants_mode == "user-scaled":
        c = dict(constants or {})
    else:
        raise ValueError(f"unknown constants_mode {constants_mode!r}")
    cL0, cT, ch, ceps, cM = (float(c.get(k, 1.0)) for k in ("L0", "T", "h", "eps_score", "M"))
    K, d = m.K, m.dim
    alpha, beta = m.alpha, m.beta
    kappa = beta / alpha
    ps = m.p_star
    eps = eps_tv

    L0 = cL0 * kappa**2 * K * math.sqrt(d) * (math.log(10 * kappa) + math.exp(K) * math.log(d / (ps * eps)))
    L = L0 / (kappa * K)
    bl0 = beta * L0
    expo = 2.0 * (1.5 ** (K - 1) - 1.0)
    log_T = math.log(cT) - math.log(alpha) + 2 * math.log(K) - math.log(ps) + math.log(math.log(10 / ps))
    if expo != 0.0:
        log_inner = (
            8 * math.log(10) + math.log(d) + 3 * math.log(bl0) + K
            + 1.5 * math.log(math.log(1 / ps)) + 5 * math.log(math.log(16 * d * bl0**2 / (eps * tau * alpha)))
            - 3.5 * math.log(ps) - 3 * math.log(eps) - 1.5 * math.log(alpha)
        )
        log_T += expo * log_inner
    log_h = math.log(ch) + 4 * math.log(eps) - 4 * math.log(bl0) - math.log(d) - log_T
    T = math.exp(log_T) if log_T < 709 else math.inf
    h = math.exp(log_h)
    log_budget = math.log(ceps) + 0.5 * math.log(ps) + 2 * math.log(eps) + 0.5 * log_h - math.log(7) - log_T
    budget = math.exp(log_budget)
    M_min = cM * 4000 / ps * eps**-4 * K**2 * math.log(K / eps) * math.log(1 / tau)
    N_log = log_T - log_h
    N = math.ceil(math.exp(N_log)) if N_log < 700 else None
    return ScheduleParams(
        L0=L0, L=L, T=T, h=h, N=N, eps_score_budget=budget, M_min=M_min, log_T=log_T, log_h=log_h,
        kappa=kappa, p_star=ps, D=concentration_radius(d, alpha, kappa), alpha=alpha, beta=beta,
        K=K, d=d, eps_tv=eps_tv, tau=tau, constants_mode=constants_mode,
    )
