"""Delimited and key/value outputs.

Every float is printed with 17 significant digits so that artifacts
round-trip exactly and byte comparisons between runs are meaningful.
Nothing time-dependent is written into CSVs or text reports; wall-clock
figures go to the manifest only.
"""

from __future__ import annotations

import hashlib
import json
import platform
import sys
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from . import mixture as mx


def fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.17g}"
    if isinstance(v, (list, tuple, np.ndarray)):
        return "[" + ", ".join(fmt(x) for x in v) + "]"
    return str(v)


def write_csv(path, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
    path = Path(path)
    with open(path, "w", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for r in rows:
            fh.write(",".join(fmt(v) for v in r) + "\n")
    return path


# ---------------------------------------------------------------------------
# Ensemble artifacts
# ---------------------------------------------------------------------------


def write_trajectories(ens, path) -> Path:
    """``chain,step,t,x_0..x_{d-1}`` for every recorded state."""
    n, r, d = ens.states.shape
    steps = ens.record_steps
    h = ens.schedule.h
    header = ["chain", "step", "t"] + [f"x_{j}" for j in range(d)]
    row = "%d,%d," + ",".join(["%.17g"] * (d + 1)) + "\n"
    times = [float(s * h) for s in steps]
    path = Path(path)
    with open(path, "w", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for c in range(n):
            S = ens.states[c].tolist()
            fh.write("".join(row % (c, int(steps[k]), times[k], *S[k]) for k in range(r)))
    return path


def write_endpoints(ens, m: Optional[mx.Mixture], path) -> Path:
    """``chain,x_0..x_{d-1},cluster,bad_hits,diverged``; the cluster is the
    ``i_max`` label (``-1`` when no mixture is given)."""
    X = ens.endpoints
    d = X.shape[1]
    labels = np.atleast_1d(mx.i_max(m, X) if m is not None else np.full(X.shape[0], -1))
    hits = ens.bad_hit_counts
    header = ["chain"] + [f"x_{j}" for j in range(d)] + ["cluster", "bad_hits", "diverged"]
    row = "%d," + ",".join(["%.17g"] * d) + ",%d,%d,%d\n"
    path = Path(path)
    with open(path, "w", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for c, x in enumerate(X.tolist()):
            fh.write(row % (c, *x, int(labels[c]), int(hits[c]), int(bool(ens.diverged[c]))))
    return path


def read_endpoints(path) -> np.ndarray:
    """Endpoint coordinates from an endpoint (or any ``x_*``) CSV."""
    with open(path) as fh:
        header = fh.readline().strip().split(",")
    cols = [i for i, h in enumerate(header) if h.startswith("x_")]
    if not cols:
        raise ValueError(f"{path}: no x_* columns")
    data = np.loadtxt(path, delimiter=",", skiprows=1, usecols=cols, ndmin=2)
    return data


def write_kde(curve, path, truth: Optional[np.ndarray] = None) -> Path:
    """``x,density`` (plus ``truth`` when an exact density is supplied)."""
    if truth is None:
        return write_csv(path, ["x", "density"], zip(curve.grid, curve.density))
    return write_csv(path, ["x", "density", "truth"], zip(curve.grid, curve.density, truth))


def write_loss_curve(curve, path) -> Path:
    return write_csv(path, ["step", "loss"], enumerate(np.asarray(curve, dtype=float)))


# ---------------------------------------------------------------------------
# Text reports
# ---------------------------------------------------------------------------


def format_items(items: Iterable[tuple[str, object]]) -> str:
    lines = []
    for k, v in items:
        if v is None:
            continue
        lines.append(f"{k}: {fmt(v)}")
    return "\n".join(lines) + "\n"


def write_report(path, sections: Sequence[tuple[str, Iterable[tuple[str, object]]]]) -> Path:
    """``[section]`` headers followed by ``key: value`` lines."""
    parts = []
    for title, items in sections:
        parts.append(f"[{title}]\n" + format_items(items))
    Path(path).write_text("\n".join(parts))
    return Path(path)


# ---------------------------------------------------------------------------
# Manifest
# ---------------------------------------------------------------------------


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def versions() -> dict:
    import matplotlib
    import numba
    import scipy

    from . import __version__

    return {
        "earlylmc": __version__,
        "python": sys.version.split()[0],
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "numba": numba.__version__,
        "matplotlib": matplotlib.__version__,
        "platform": platform.platform(),
    }


def write_manifest(out_dir, argv: Sequence[str], cfg_hash: Optional[str], seed: Optional[int],
                   artifacts: Sequence[Path], timing: Optional[dict] = None) -> Path:
    """``manifest.json``: the command that re-creates the run, config hash,
    seed, library versions and a checksum per artifact."""
    out_dir = Path(out_dir)
    doc = {
        "argv": list(argv),
        "config_sha256": cfg_hash,
        "master_seed": seed,
        "versions": versions(),
        "artifacts": {Path(a).name: sha256_file(a) for a in sorted(artifacts, key=lambda p: Path(p).name)},
        "timing_seconds": timing or {},
    }
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return path


def verify_manifest(path) -> dict:
    """Compare the checksums in a manifest with the files next to it."""
    path = Path(path)
    doc = json.loads(path.read_text())
    out = {}
    for name, digest in doc["artifacts"].items():
        f = path.parent / name
        out[name] = f.exists() and sha256_file(f) == digest
    return out
