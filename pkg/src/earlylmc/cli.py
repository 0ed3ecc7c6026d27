"""Command-line entry point: ``earlylmc <subcommand>``.

Subcommands: ``simulate``, ``train-score``, ``certify-lsi``, ``schedule``,
``diagnose`` and ``reproduce``.  Every run writes CSV/text/SVG artifacts
plus ``config.yaml`` (the resolved configuration) and ``manifest.json``
(checksums, versions and the command that re-creates the run).

Exit codes: 0 success, 2 configuration error, 3 numeric divergence,
4 failed acceptance threshold in ``--check`` mode.
"""

from __future__ import annotations

import argparse
import math
import os
import sys
import time
from functools import reduce
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import config as cfgmod
from . import diagnostics as dg
from . import inequalities as ineq
from . import mixture as mx
from . import plots
from . import reports as rp
from . import sampler as sp
from . import scores as sc

ENV_OUT = "EARLYLMC_OUT"
DEFAULT_OUT = "earlylmc-out"

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DIVERGED = 3
EXIT_CHECK = 4


class RunFailure(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


# ---------------------------------------------------------------------------
# Presets
# ---------------------------------------------------------------------------

FIG1_HORIZONS = (0, 200, 20000)
FIG2_HORIZONS = (300, 12000, 120000)


def fig1_config(score: str = "trained", full: bool = False, seed: int = 0) -> dict:
    """Two unit-variance Gaussians at -3 and +3, 40 data points, h = 0.01."""
    doc = {
        "mixture": {"means": [[-3.0], [3.0]], "covs": [1.0, 1.0], "weights": [0.5, 0.5]},
        "init": {"M": 40, "mode": "per-sample"},
        "schedule": {"h": 0.01, "n_steps": max(FIG1_HORIZONS), "record_stride": 200},
        "n_chains": 40,
        "diagnostics": {"kde_steps": list(FIG1_HORIZONS), "transitions": True},
        "master_seed": seed,
    }
    doc["score"] = _preset_score(score, "fig1", full)
    return doc


def fig2_config(score: str = "trained", full: bool = False, seed: int = 0) -> dict:
    """``(2/3) N(-6 e1, 1.5 I) + (1/3) N(6 e1, 1.5 I)`` in d = 32, 15 data
    points, h = 0.001."""
    d = 32
    e1 = [1.0] + [0.0] * (d - 1)
    doc = {
        "mixture": {"means": [[-6.0 * v for v in e1], [6.0 * v for v in e1]], "covs": [1.5, 1.5],
                    "weights": [2.0 / 3.0, 1.0 / 3.0]},
        "init": {"M": 15, "mode": "per-sample"},
        "schedule": {"h": 0.001, "n_steps": max(FIG2_HORIZONS), "record_stride": 100},
        "n_chains": 15,
        "diagnostics": {"kde_steps": [], "transitions": True, "projected_directions": [e1], "n_ref": 10000},
        "master_seed": seed,
    }
    doc["score"] = _preset_score(score, "fig2", full)
    return doc


def _preset_score(kind: str, fig: str, full: bool) -> dict:
    if kind == "exact":
        return {"kind": "exact"}
    if kind == "biased":
        return {"kind": "biased", "weights": [0.8, 0.2]}
    if kind != "trained":
        raise cfgmod.ConfigError(f"unknown preset score {kind!r}", "--score")
    if fig == "fig1":
        # fresh single draws, plain SGD; the full setting is 3e5 steps at
        # lr 1e-5 with 2048 units, the default a scaled-down version
        train = {"loss": "vanilla", "optimizer": "sgd", "batch_size": 1, "n_train": None,
                 "hidden_width": 2048 if full else 256, "steps": 300_000 if full else 20_000,
                 "lr": 1e-5 if full else 1e-3}
    else:
        # Adam on fresh batches of 256, 200 batches per epoch, denoising loss
        train = {"loss": "denoising", "noise_sigma": 0.1, "optimizer": "adam", "lr": 1e-3,
                 "batch_size": 256, "n_train": None, "hidden_width": 2048 if full else 256,
                 "steps": 200 * (300 if full else 10)}
    return {"kind": "train", "train": train}


# ---------------------------------------------------------------------------
# Building blocks
# ---------------------------------------------------------------------------


def _out_dir(arg: Optional[str], cfg: Optional[dict] = None) -> Path:
    path = arg or (cfg or {}).get("output") or os.environ.get(ENV_OUT) or DEFAULT_OUT
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    return p


def _train_config(t: dict) -> sc.TrainConfig:
    keys = ("loss", "noise_sigma", "optimizer", "lr", "beta1", "beta2", "adam_eps", "steps", "batch_size",
            "epochs", "hidden_width", "seed")
    return sc.TrainConfig(**{k: t[k] for k in keys})


def build_score(cfg: dict, m: mx.Mixture, out_dir: Path, artifacts: list, sections: list, timing: dict):
    """Score model per ``cfg["score"]`` and, for trained models, the
    held-out L2 error (``None`` otherwise)."""
    s = cfg["score"]
    kind = s["kind"]
    if kind == "exact":
        return sc.ExactScore(m), None
    if kind == "biased":
        return sc.WeightBiasedScore(m, s["weights"]), None
    if kind == "field":
        f = s["field"]
        return sc.AdditiveFieldScore(
            sc.ExactScore(m), kind=f["kind"], vector=f.get("vector"), amplitude=f.get("amplitude", 0.0),
            frequency=f.get("frequency"), phase=f.get("phase", 0.0), direction=f.get("direction"),
            nominal_eps=f.get("nominal_eps"),
        ), None
    if kind == "file":
        try:
            return sc.load_mlp(s["path"]), None
        except (OSError, ValueError) as exc:
            raise cfgmod.ConfigError(str(exc), "score/path") from None
    t = s["train"]
    tc = _train_config(t)
    if t.get("n_train"):
        data = mx.sample_ground_truth(m, int(t["n_train"]), np.random.default_rng([tc.seed, 3]))
    else:
        data = m  # fresh samples every step
    trainer = sc.train_vanilla if tc.loss == "vanilla" else sc.train_denoising
    try:
        net, rep = trainer(data, tc, eval_mixture=m, n_eval=int(t.get("n_eval", 10000)))
    except sc.TrainingDiverged as exc:
        raise RunFailure(EXIT_DIVERGED, str(exc)) from None
    timing["training"] = rep.wall_clock
    sc.save_mlp(net, out_dir / "score_model.txt")
    artifacts.append(out_dir / "score_model.txt")
    artifacts.append(rp.write_loss_curve(rep.loss_curve, out_dir / "loss_curve.csv"))
    if cfg["diagnostics"].get("plots", True) and rep.loss_curve.size:
        artifacts.append(plots.loss_curve(rep.loss_curve, out_dir / "loss_curve.svg"))
    lo, hi = rep.l2_ci95
    sections.append(("training", [
        ("loss", tc.loss), ("optimizer", tc.optimizer), ("lr", tc.lr), ("hidden_width", tc.hidden_width),
        ("steps", int(rep.loss_curve.size)), ("data", "fresh" if data is m else f"fixed n={t['n_train']}"),
        ("final_loss", float(rep.loss_curve[-1]) if rep.loss_curve.size else None),
        ("l2_error", rep.l2_error), ("l2_std_error", rep.l2_std_error), ("l2_ci95", [lo, hi]),
        *[(f"note_{i}", n) for i, n in enumerate(rep.notes)],
    ]))
    return net, rep.l2_error


def build_init(cfg: dict, m: mx.Mixture) -> sp.InitSet:
    ini = cfg["init"]
    if "path" in ini:
        try:
            pts = rp.read_endpoints(ini["path"])
        except (OSError, ValueError) as exc:
            raise cfgmod.ConfigError(str(exc), "init/path") from None
        if pts.shape[1] != m.dim:
            raise cfgmod.ConfigError(f"init points have dimension {pts.shape[1]}, mixture {m.dim}", "init/path")
        return sp.data_based_init(pts)
    seed = ini.get("seed", cfg["master_seed"])
    return sp.data_based_init(m, int(ini["M"]), np.random.default_rng([seed, 2]))


def _direction(cfg: dict, d: int) -> np.ndarray:
    u = cfg["diagnostics"].get("direction")
    if u is None:
        return np.eye(d)[0]
    u = np.asarray(u, dtype=float)
    if u.shape != (d,) or np.linalg.norm(u) == 0:
        raise cfgmod.ConfigError("direction must be a nonzero vector of the mixture dimension", "diagnostics/direction")
    return u / np.linalg.norm(u)


def _check(results: list, name: str, value, limit, ok: bool) -> None:
    results.append((name, value, limit, ok))


# ---------------------------------------------------------------------------
# Diagnostics shared by simulate / diagnose / reproduce
# ---------------------------------------------------------------------------


def endpoint_diagnostics(X: np.ndarray, m: mx.Mixture, cfg: dict, seed: int, out_dir: Path,
                         artifacts: list, checks: list) -> list:
    diag = cfg["diagnostics"]
    lim = cfg["checks"]
    items: list = []
    if diag.get("weight_recovery", True):
        wr = dg.weight_recovery(X, m)
        items += [("cluster_counts", wr.counts), ("cluster_fractions", wr.fractions), ("weights", wr.weights),
                  ("binomial_std_errors", wr.std_errors), ("weight_tv_lower_bound", wr.bound)]
        if "max_weight_bound" in lim:
            _check(checks, "weight_tv_lower_bound", wr.bound, lim["max_weight_bound"], wr.bound <= lim["max_weight_bound"])
    dirs = diag.get("projected_directions") or []
    if dirs and m.dim >= 2:
        units = [np.asarray(u, dtype=float) / np.linalg.norm(u) for u in dirs]
        ref = mx.sample_ground_truth(m, int(diag.get("n_ref", 10000)), np.random.default_rng([seed, 4]))
        rep = dg.projected_tv(X, m, units, len(ref), None, reference=ref)
        items += [("projected_tv", rep.estimate), ("projected_tv_per_direction", rep.meta["per_direction"]),
                  ("projected_tv_bandwidths", rep.meta["bandwidths"]), ("projected_tv_n_ref", rep.meta["n_ref"])]
        if "max_projected_tv" in lim:
            _check(checks, "projected_tv", rep.estimate, lim["max_projected_tv"], rep.estimate <= lim["max_projected_tv"])
    if X.shape[0] >= 2 and m.dim == 1:
        rep = dg.endpoint_tv_1d(X, m)
        items += [("endpoint_tv_1d", rep.estimate), ("endpoint_kde_bandwidth", rep.meta["bandwidth"])]
        if "max_endpoint_tv" in lim:
            _check(checks, "endpoint_tv_1d", rep.estimate, lim["max_endpoint_tv"], rep.estimate <= lim["max_endpoint_tv"])
    return items


def kde_artifacts(ens: sp.Ensemble, m: mx.Mixture, steps: Sequence[int], u: np.ndarray, out_dir: Path,
                  artifacts: list, plot: bool, title: str = "") -> list:
    """KDE CSV per requested step (projection on ``u``) plus one overlay."""
    grid = dg.mixture_grid_1d(m, u)
    truth = dg.density_curve(m, grid, None if m.dim == 1 else u)[1] if (m.dim == 1 or m.is_gaussian) else None
    items, curves = [], []
    for s in steps:
        x = ens.state_at(int(s)) @ u
        if x.size < 2:
            continue
        kde = dg.kde_1d(x, grid=grid)
        artifacts.append(rp.write_kde(kde, out_dir / f"kde_step{int(s)}.csv", truth))
        curves.append((f"step {int(s)}", grid, kde.density))
        items.append((f"kde_step{int(s)}_bandwidth", kde.bandwidth))
        items.append((f"kde_step{int(s)}_integral", kde.integral))
        if truth is not None:
            items.append((f"kde_step{int(s)}_tv_vs_truth", dg.tv_grid_1d(kde, (grid, truth)).estimate))
    if plot and curves:
        artifacts.append(plots.kde_overlay(curves, out_dir / "kde_overlay.svg",
                                           truth=(grid, truth) if truth is not None else None, title=title,
                                           xlabel="x" if m.dim == 1 else "projection on direction"))
    return items


# ---------------------------------------------------------------------------
# simulate
# ---------------------------------------------------------------------------


def run_simulation(cfg: dict, out_dir: Path, argv: Sequence[str], threads: Optional[int] = None,
                   extra_checks=None) -> tuple[int, list]:
    """Train/build the score, run the ensemble, write every artifact and
    return ``(exit_code_without_check, check_results)``.

    ``extra_checks(ens, m, out_dir, artifacts)`` may add preset-specific
    checks (and artifacts) before the report is written.
    """
    t0 = time.perf_counter()
    timing: dict = {}
    m = cfgmod.build_mixture(cfg)
    seed = int(cfg["master_seed"])
    threads = int(threads or cfg.get("threads", 1))
    artifacts: list = []
    sections: list = []
    checks: list = []
    model, train_l2 = build_score(cfg, m, out_dir, artifacts, sections, timing)
    if model.dim != m.dim:
        raise cfgmod.ConfigError(f"score model dimension {model.dim} differs from mixture dimension {m.dim}", "score")
    init = build_init(cfg, m)
    sch = cfg["schedule"]
    sched = sp.Schedule(float(sch["h"]), int(sch["n_steps"]), int(sch.get("record_stride", 1)))
    n_chains = int(cfg.get("n_chains", init.M))
    diag = cfg["diagnostics"]
    monitor = None
    l2 = None
    if "bad_set" in diag:
        bcfg = sc.BadSetConfig.from_tv(diag["bad_set"]["eps_tv"], diag["bad_set"]["T"])
        monitor = (bcfg, m)
    kde_steps = [int(s) for s in diag.get("kde_steps", [])]
    missing = [s for s in kde_steps if s > sched.n_steps or s % sched.record_stride]
    if missing:
        raise cfgmod.ConfigError(f"kde steps {missing} are not recorded states (stride {sched.record_stride}, "
                                 f"n_steps {sched.n_steps})", "diagnostics/kde_steps")
    t1 = time.perf_counter()
    ens = sp.run_ensemble(init, sched, model, n_chains, seed, parallelism=threads, monitor=monitor,
                          init_mode=cfg["init"].get("mode"))
    timing["sampling"] = time.perf_counter() - t1
    artifacts.append(rp.write_trajectories(ens, out_dir / "trajectories.csv"))
    artifacts.append(rp.write_endpoints(ens, m, out_dir / "endpoints.csv"))

    run_items = [
        ("mixture_K", m.K), ("dimension", m.dim), ("score_model", model.tag), ("h", sched.h),
        ("n_steps", sched.n_steps), ("T", sched.T), ("record_stride", sched.record_stride), ("n_chains", n_chains),
        ("init_M", init.M), ("init_provenance", init.provenance), ("init_mode", ens.init_mode),
        ("init_cluster_counts", np.bincount(np.atleast_1d(mx.i_max(m, init.points)), minlength=m.K)),
        ("master_seed", seed), ("diverged_chains", int(ens.diverged.sum())),
    ]
    sections.insert(0, ("run", run_items))
    u = _direction(cfg, m.dim)
    plot = diag.get("plots", True)
    items = kde_artifacts(ens, m, kde_steps, u, out_dir, artifacts, plot) if kde_steps else []
    for k, v in items:
        if k.endswith("_integral") and abs(v - 1.0) > 1e-3:
            _check(checks, k, v, "1 +- 1e-3", False)
    items += endpoint_diagnostics(ens.endpoints, m, cfg, seed, out_dir, artifacts, checks)
    if diag.get("transitions", True):
        tr = dg.cross_mode_transitions(ens, m)
        items += [("cross_mode_transitions_total", int(tr.sum())), ("chains_with_transitions", int(np.sum(tr > 0)))]
        if "max_transitions" in cfg["checks"]:
            lim = cfg["checks"]["max_transitions"]
            _check(checks, "cross_mode_transitions_total", int(tr.sum()), lim, int(tr.sum()) <= lim)
    if monitor is not None:
        l2, se = sc.l2_error(model, m, max(int(diag.get("n_ref", 10000)), 100), np.random.default_rng([seed, 5]))
        eps1 = monitor[0].eps_score_1
        hits = ens.bad_hit_counts
        pairs = n_chains * sched.n_steps
        items += [("eps_score_1", eps1), ("l2_error", l2), ("l2_std_error", se),
                  ("bad_set_hits_total", int(hits.sum())),
                  ("bad_set_pair_fraction", float(hits.sum() / pairs) if pairs else 0.0),
                  ("markov_bound_per_step", l2 / eps1**2),
                  ("markov_bound_hits_per_chain", sched.n_steps * l2 / eps1**2),
                  ("mean_hits_per_chain", float(hits.mean()))]
    if "max_diverged" in cfg["checks"]:
        _check(checks, "diverged_chains", int(ens.diverged.sum()), cfg["checks"]["max_diverged"],
               int(ens.diverged.sum()) <= cfg["checks"]["max_diverged"])
    if "max_l2_error" in cfg["checks"]:
        l2v = train_l2 if train_l2 is not None else l2
        if l2v is None:
            l2v, _ = sc.l2_error(model, m, 10000, np.random.default_rng([seed, 5]))
        _check(checks, "l2_error", l2v, cfg["checks"]["max_l2_error"], l2v <= cfg["checks"]["max_l2_error"])
    if extra_checks is not None:
        checks += extra_checks(ens, m, out_dir, artifacts)
    sections.append(("diagnostics", items))
    if plot:
        n_show = min(n_chains, 40)
        ref = mx.sample_ground_truth(m, 2000, np.random.default_rng([seed, 6])) if m.dim >= 2 else None
        artifacts.append(plots.trajectory_projection(ens.states[:n_show], out_dir / "trajectories.svg",
                                                     record_steps=ens.record_steps, reference=ref))
    _finish(out_dir, cfg, argv, sections, checks, artifacts, timing, t0)
    code = EXIT_DIVERGED if ens.diverged.any() else EXIT_OK
    return code, checks


def _finish(out_dir: Path, cfg: Optional[dict], argv, sections, checks, artifacts, timing, t0) -> None:
    if checks:
        sections.append(("checks", [(name, f"{rp.fmt(v)} vs {rp.fmt(lim)}: {'pass' if ok else 'FAIL'}")
                                    for name, v, lim, ok in checks]))
    artifacts.append(rp.write_report(out_dir / "report.txt", sections))
    cfg_hash = None
    if cfg is not None:
        (out_dir / "config.yaml").write_text(cfgmod.dump(cfg))
        artifacts.append(out_dir / "config.yaml")
        cfg_hash = cfgmod.config_hash(cfg)
    timing["total"] = time.perf_counter() - t0
    rp.write_manifest(out_dir, argv, cfg_hash, cfg.get("master_seed") if cfg else None, artifacts, timing)


def _resolve_run_config(args) -> dict:
    if args.preset and args.config:
        raise cfgmod.ConfigError("give either --config or --preset", "arguments")
    if args.preset:
        doc = (fig1_config if args.preset == "fig1" else fig2_config)("exact" if args.preset == "fig2" else "trained",
                                                                      seed=args.seed or 0)
        cfg = cfgmod.resolve(doc, f"preset {args.preset}")
    elif args.config:
        cfg = cfgmod.load(args.config)
    else:
        raise cfgmod.ConfigError("--config or --preset is required", "arguments")
    if args.seed is not None:
        cfg["master_seed"] = int(args.seed)
    if getattr(args, "threads", None):
        cfg["threads"] = int(args.threads)
    return cfg


def _rerun_argv(command: str, out_dir: Path) -> list:
    return [command, "--config", str(out_dir / "config.yaml")]


def cmd_simulate(args) -> int:
    cfg = _resolve_run_config(args)
    out_dir = _out_dir(args.out, cfg)
    code, checks = run_simulation(cfg, out_dir, _rerun_argv("simulate", out_dir), cfg["threads"])
    _print_summary(out_dir, checks)
    return _final_code(code, checks, args.check)


def _final_code(code: int, checks: list, check_mode: bool) -> int:
    if code != EXIT_OK:
        return code
    if check_mode and not all(ok for *_, ok in checks):
        return EXIT_CHECK
    return EXIT_OK


def _print_summary(out_dir: Path, checks: list) -> None:
    print(f"artifacts written to {out_dir}")
    for name, v, lim, ok in checks:
        print(f"check {name}: {rp.fmt(v)} vs {rp.fmt(lim)} -> {'pass' if ok else 'FAIL'}")


# ---------------------------------------------------------------------------
# train-score
# ---------------------------------------------------------------------------


def cmd_train_score(args) -> int:
    cfg = _resolve_run_config(args)
    if cfg["score"]["kind"] != "train":
        raise cfgmod.ConfigError("train-score needs score.kind = train", "score/kind")
    if args.seed is not None:
        cfg["score"]["train"]["seed"] = int(args.seed)
    out_dir = _out_dir(args.out, cfg)
    t0 = time.perf_counter()
    m = cfgmod.build_mixture(cfg)
    artifacts, sections, checks, timing = [], [], [], {}
    model, l2 = build_score(cfg, m, out_dir, artifacts, sections, timing)
    if "max_l2_error" in cfg["checks"]:
        _check(checks, "l2_error", l2, cfg["checks"]["max_l2_error"], l2 <= cfg["checks"]["max_l2_error"])
    _finish(out_dir, cfg, _rerun_argv("train-score", out_dir), sections, checks, artifacts, timing, t0)
    _print_summary(out_dir, checks)
    print(f"model {model.hidden} hidden units, l2_error {l2:.6g}")
    return _final_code(EXIT_OK, checks, args.check)


# ---------------------------------------------------------------------------
# certify-lsi / schedule
# ---------------------------------------------------------------------------


def certify_sections(cfg: dict) -> tuple[list, list]:
    m = cfgmod.build_mixture(cfg)
    opts = cfg.get("lsi", {})
    ov = ineq.overlap_matrix(m, opts.get("overlap_method", "auto"), seed=int(cfg["master_seed"]))
    rows = [(i, j, ov.delta[i, j], ov.error[i, j]) for i in range(m.K) for j in range(m.K)]
    thr = ineq.connectivity_threshold(ov) if m.K > 1 else 1.0
    delta = opts.get("delta") or thr
    graph = ineq.build_graph(ov, delta)
    sections = [("mixture", [("K", m.K), ("dimension", m.dim), ("weights", m.weights), ("alpha", m.alpha),
                             ("beta", m.beta), ("kappa", m.kappa), ("p_star", m.p_star)]),
                ("overlap_graph", [("method", ov.method), ("connectivity_threshold", thr), ("delta", delta),
                                   ("edges", graph.n_edges), ("connected", graph.is_connected),
                                   ("parts", [list(c) for c in graph.components]), ("diameters", graph.diameters)])]
    certs = ineq.lsi_bound(m, graph, require_connected=False)
    certs = certs if isinstance(certs, list) else [certs]
    for n, c in enumerate(certs):
        sections.append((f"certificate_{n}", c.as_items()))
    if opts.get("verify_1d", True) and m.dim == 1 and len(certs) == 1:
        v = ineq.verify_lsi_1d(m, certs[0].c_ls_bound)
        sections.append(("verification_1d", [("max_ratio", v["max_ratio"]), ("constant", v["constant"]),
                                             ("passed", v["passed"]),
                                             *[(f"ratio_{name}", r) for name, r in v["ratios"]]]))
    if "eps_tv" in opts and "tau" in opts:
        plan = ineq.multiscale_plan(m, opts["eps_tv"], opts["tau"], overlaps=ov, L=opts.get("L"),
                                    threshold_small=opts.get("threshold_small", False))
        sections.append(("multiscale_plan", plan.as_items()))
    return sections, rows


def cmd_certify_lsi(args) -> int:
    cfg = _resolve_run_config(args)
    out_dir = _out_dir(args.out, cfg)
    t0 = time.perf_counter()
    sections, rows = certify_sections(cfg)
    artifacts = [rp.write_csv(out_dir / "overlaps.csv", ["i", "j", "overlap", "error"], rows)]
    _finish(out_dir, cfg, _rerun_argv("certify-lsi", out_dir), sections, [], artifacts, {}, t0)
    print((out_dir / "report.txt").read_text(), end="")
    return EXIT_OK


def cmd_schedule(args) -> int:
    cfg = _resolve_run_config(args)
    if "theory" not in cfg:
        raise cfgmod.ConfigError("schedule needs a 'theory' section with eps_tv and tau", "theory")
    out_dir = _out_dir(args.out, cfg)
    t0 = time.perf_counter()
    th = cfg["theory"]
    m = cfgmod.build_mixture(cfg)
    try:
        p = ineq.schedule_params(m, th["eps_tv"], th["tau"], th.get("constants_mode", "literal-unit"),
                                 th.get("constants"))
    except ValueError as exc:
        raise cfgmod.ConfigError(str(exc), "theory") from None
    summ = mx.smoothness_summary(m)
    sections = [("mixture", [("K", m.K), ("dimension", m.dim), ("alpha", summ.alpha), ("beta", summ.beta),
                             ("kappa", summ.kappa), ("p_star", summ.p_star), ("D", summ.D)]),
                ("schedule", p.as_items())]
    _finish(out_dir, cfg, _rerun_argv("schedule", out_dir), sections, [], [], {}, t0)
    print((out_dir / "report.txt").read_text(), end="")
    return EXIT_OK


# ---------------------------------------------------------------------------
# diagnose
# ---------------------------------------------------------------------------


def cmd_diagnose(args) -> int:
    cfg = _resolve_run_config(args)
    out_dir = _out_dir(args.out, cfg)
    t0 = time.perf_counter()
    m = cfgmod.build_mixture(cfg)
    try:
        X = rp.read_endpoints(args.endpoints)
    except (OSError, ValueError) as exc:
        raise cfgmod.ConfigError(str(exc), "endpoints") from None
    if X.shape[1] != m.dim:
        raise cfgmod.ConfigError(f"endpoints have dimension {X.shape[1]}, mixture {m.dim}", "endpoints")
    artifacts, checks = [], []
    items = [("n_endpoints", X.shape[0]), ("source", str(args.endpoints))]
    items += endpoint_diagnostics(X, m, cfg, int(cfg["master_seed"]), out_dir, artifacts, checks)
    if X.shape[0] >= 2:
        u = _direction(cfg, m.dim)
        grid = dg.mixture_grid_1d(m, u)
        kde = dg.kde_1d(X @ u, grid=grid)
        truth = dg.density_curve(m, grid, None if m.dim == 1 else u)[1] if (m.dim == 1 or m.is_gaussian) else None
        artifacts.append(rp.write_kde(kde, out_dir / "kde_endpoints.csv", truth))
        if cfg["diagnostics"].get("plots", True):
            artifacts.append(plots.kde_overlay([("endpoints", grid, kde.density)], out_dir / "kde_endpoints.svg",
                                               truth=(grid, truth) if truth is not None else None))
    _finish(out_dir, cfg, ["diagnose", "--config", str(out_dir / "config.yaml"), str(args.endpoints)],
            [("diagnostics", items)], checks, artifacts, {}, t0)
    _print_summary(out_dir, checks)
    return _final_code(EXIT_OK, checks, args.check)


# ---------------------------------------------------------------------------
# reproduce
# ---------------------------------------------------------------------------


def cmd_reproduce(args) -> int:
    full = bool(args.full)
    seed = 0 if args.seed is None else int(args.seed)
    fig = args.figure
    builder = fig1_config if fig == "fig1" else fig2_config
    doc = builder(args.score, full=full, seed=seed)
    horizons = sorted(set(args.horizon)) if args.horizon else list(FIG1_HORIZONS if fig == "fig1" else FIG2_HORIZONS)
    n_steps = max(horizons)
    stride = reduce(math.gcd, [h for h in horizons if h > 0], 0) or 1
    if fig == "fig2":
        stride = math.gcd(stride, 100)  # keep trajectory plots smooth
    doc["schedule"] = {"h": doc["schedule"]["h"], "n_steps": n_steps, "record_stride": stride}
    if fig == "fig1":
        doc["diagnostics"]["kde_steps"] = horizons
    cfg = cfgmod.resolve(doc, f"preset {fig}")
    cfg["threads"] = int(args.threads or 1)
    out_dir = _out_dir(args.out, cfg)
    argv = ["reproduce", fig, "--score", args.score, "--seed", str(seed)]
    argv += [a for h in horizons for a in ("--horizon", str(h))] + (["--full"] if full else [])
    extra = _fig2_checks(cfg, horizons) if fig == "fig2" else _fig1_checks(horizons)
    code, checks = run_simulation(cfg, out_dir, argv, cfg["threads"], extra_checks=extra)
    _print_summary(out_dir, checks)
    return _final_code(code, checks, args.check)


def _fig2_checks(cfg: dict, horizons):
    """Per horizon: a projection plot, cluster fractions within 3 binomial
    standard errors of the weights, and no cross-mode transition for
    horizons up to 12000 steps."""

    def run(ens, m, out_dir, artifacts):
        out = []
        ref = mx.sample_ground_truth(m, 2000, np.random.default_rng([cfg["master_seed"], 6]))
        steps = ens.record_steps
        n = ens.n_chains
        for hz in horizons:
            upto = steps <= hz
            states = ens.states[:, upto]
            artifacts.append(plots.trajectory_projection(states, out_dir / f"projection_T{hz}.svg",
                                                         reference=ref, title=f"T = {hz}"))
            labels = np.atleast_1d(mx.i_max(m, states.reshape(-1, m.dim))).reshape(n, -1)
            if hz <= 12000:
                tr = int(np.sum(labels[:, 1:] != labels[:, :-1]))
                out.append((f"transitions_up_to_T{hz}", tr, 0, tr == 0))
            frac = np.bincount(labels[:, -1], minlength=m.K) / n
            tol = 3 * np.sqrt(m.weights * (1 - m.weights) / n)
            out.append((f"fractions_T{hz}", frac, "p +- 3 se", bool(np.all(np.abs(frac - m.weights) <= tol))))
        return out

    return run


def _fig1_checks(horizons):
    """KDE normalization at every horizon (the per-step TVs are reported
    in the diagnostics section)."""

    def run(ens, m, out_dir, artifacts):
        out = []
        grid = dg.mixture_grid_1d(m)
        for hz in horizons:
            x = ens.state_at(hz)[:, 0]
            integral = dg.kde_1d(x, grid=grid).integral
            out.append((f"kde_step{hz}_integral", integral, "1 +- 1e-3", abs(integral - 1) <= 1e-3))
        return out

    return run


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="earlylmc", description="Langevin Monte Carlo with data-based initialization")
    sub = p.add_subparsers(dest="command", required=True)

    def common(q, run=True):
        q.add_argument("--config", help="YAML experiment file")
        q.add_argument("--preset", choices=["fig1", "fig2"], help="built-in configuration instead of --config")
        q.add_argument("--seed", type=int, help="override master_seed")
        q.add_argument("--out", help=f"output directory (default ${ENV_OUT} or ./{DEFAULT_OUT})")
        if run:
            q.add_argument("--threads", type=int, help="worker threads for the chain ensemble")
            q.add_argument("--check", action="store_true", help="exit 4 when a configured threshold fails")

    common(sub.add_parser("simulate", help="run an LMC ensemble from a config"))
    common(sub.add_parser("train-score", help="train an MLP score model"))
    common(sub.add_parser("certify-lsi", help="overlap graph, LSI certificate, multiscale plan"), run=False)
    common(sub.add_parser("schedule", help="theoretical step size / horizon / sample budget"), run=False)
    q = sub.add_parser("diagnose", help="diagnostics of an endpoint CSV against the config mixture")
    common(q)
    q.add_argument("endpoints", help="CSV with x_0..x_{d-1} columns")
    r = sub.add_parser("reproduce", help="figure presets")
    r.add_argument("figure", choices=["fig1", "fig2"])
    r.add_argument("--score", choices=["trained", "exact", "biased"], default="trained")
    r.add_argument("--horizon", type=int, action="append", help="iteration count to report (repeatable)")
    r.add_argument("--full", action="store_true", help="full-size training instead of the scaled-down default")
    r.add_argument("--seed", type=int)
    r.add_argument("--out")
    r.add_argument("--threads", type=int)
    r.add_argument("--check", action="store_true")
    return p


COMMANDS = {
    "simulate": cmd_simulate,
    "train-score": cmd_train_score,
    "certify-lsi": cmd_certify_lsi,
    "schedule": cmd_schedule,
    "diagnose": cmd_diagnose,
    "reproduce": cmd_reproduce,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    if getattr(args, "horizon", None) and any(h < 0 for h in args.horizon):
        print("error: horizons must be nonnegative", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return COMMANDS[args.command](args)
    except cfgmod.ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except RunFailure as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
