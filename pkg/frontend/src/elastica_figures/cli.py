"""Figure generation from simulator artifacts.

Consumes only the documented on-disk outputs (run-log CSV, sweep-report
JSON, MMS table CSV) -- no numerical recomputation.  Re-running on identical
inputs produces identical PNG/SVG files (fixed styles, no timestamps, fixed
svg hash salt).

Usage: figures <spec.json>

Spec schema (strict, versioned):
    {"schema": 1, "kind": "energy-time" | "sweep-spread" | "inviscid-rate"
        | "mms-order", "input": <path>, "output": <path without extension>,
     "logy": bool (optional)}
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

RUN_LOG_COLUMNS = [
    "t", "dt", "E_basic", "dissipation_integral", "J_drift_max",
    "div_residual_max", "ghost_residual_max", "q_min", "q_max",
]

_ALLOWED_KEYS = {"schema", "kind", "input", "output", "logy"}
_KINDS = {"energy-time", "sweep-spread", "inviscid-rate", "mms-order"}


class SpecError(Exception):
    pass


def _deterministic_style():
    plt.rcParams.update({
        "svg.hashsalt": "elastica-figures",
        "figure.dpi": 110,
        "font.size": 10,
        "axes.grid": True,
        "grid.alpha": 0.3,
    })


def load_spec(path: str) -> dict:
    try:
        raw = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise SpecError(f"cannot read spec {path}: {exc}") from exc
    if not isinstance(raw, dict):
        raise SpecError("spec must be a JSON object")
    unknown = set(raw) - _ALLOWED_KEYS
    if unknown:
        raise SpecError(f"unknown spec keys: {sorted(unknown)}")
    if raw.get("schema") != 1:
        raise SpecError("spec schema must be 1")
    if raw.get("kind") not in _KINDS:
        raise SpecError(f"kind must be one of {sorted(_KINDS)}")
    for key in ("input", "output"):
        if key not in raw:
            raise SpecError(f"spec needs {key!r}")
    return raw


def read_run_log(path: Path) -> dict:
    lines = path.read_text().splitlines()
    if not lines or not lines[0].startswith("# config_hash="):
        raise SpecError(f"{path}: missing config_hash comment line")
    header = lines[1].split(",")
    if header != RUN_LOG_COLUMNS:
        raise SpecError(f"{path}: run-log columns {header} do not match the documented schema")
    data = np.array([[float(x) for x in ln.split(",")] for ln in lines[2:]])
    if data.size == 0:
        raise SpecError(f"{path}: empty run log")
    return {name: data[:, k] for k, name in enumerate(RUN_LOG_COLUMNS)}


def read_sweep(path: Path) -> dict:
    rep = json.loads(path.read_text())
    for key in ("members", "epsilon_ref", "inviscid_slope", "spread_ratio"):
        if key not in rep:
            raise SpecError(f"{path}: sweep report missing {key!r}")
    return rep


def read_mms(path: Path) -> list:
    lines = path.read_text().splitlines()
    if not lines or not lines[0].startswith("# config_hash="):
        raise SpecError(f"{path}: missing config_hash comment line")
    if lines[1] != "problem,n1,n2,l2_error":
        raise SpecError(f"{path}: MMS table columns do not match the documented schema")
    rows = []
    for ln in lines[2:]:
        name, n1, n2, err = ln.split(",")
        rows.append((name, int(n1), int(n2), float(err)))
    if not rows:
        raise SpecError(f"{path}: empty MMS table")
    return rows


def fig_energy_time(log: dict, logy: bool):
    fig, ax = plt.subplots(figsize=(6, 4))
    total = log["E_basic"] + log["dissipation_integral"]
    ax.plot(log["t"], log["E_basic"], label="basic energy")
    ax.plot(log["t"], total, label="energy + dissipation integral", ls="--")
    if logy:
        ax.set_yscale("log")
    ax.set_xlabel("t")
    ax.set_ylabel("energy")
    ax.legend()
    ax.set_title("basic energy balance along the run")
    return fig


def fig_sweep_spread(rep: dict, logy: bool):
    eps = sorted((float(k) for k in rep["members"]), reverse=True)
    vals = [rep["members"][f"{e:.6e}"]["max_E_viscous"] for e in eps]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(eps, vals, marker="o")
    ax.set_xscale("log")
    if logy:
        ax.set_yscale("log")
    ax.set_xlabel("viscosity")
    ax.set_ylabel("sup_t high-order energy")
    ax.set_title(f"energy spread across viscosities (ratio {rep['spread_ratio']:.3f})")
    return fig


def fig_inviscid_rate(rep: dict, logy: bool):
    eps_ref = rep["epsilon_ref"]
    pairs = [
        (float(k), m["eta_diff_sup"]) for k, m in rep["members"].items()
        if float(k) != eps_ref
    ]
    pairs.sort(reverse=True)
    eps = [p[0] for p in pairs]
    diffs = [p[1] for p in pairs]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.loglog(eps, diffs, marker="s")
    slope = rep["inviscid_slope"]
    ax.annotate(f"slope = {slope!r}", xy=(0.05, 0.9), xycoords="axes fraction")
    ax.set_xlabel("viscosity")
    ax.set_ylabel("sup_t L2 distance to the reference map")
    ax.set_title("convergence toward the smallest-viscosity run")
    return fig


def fig_mms_order(rows: list, logy: bool):
    by_problem = {}
    for name, n1, n2, err in rows:
        by_problem.setdefault(name, []).append((n1, err))
    fig, ax = plt.subplots(figsize=(6, 4))
    for name, pts in sorted(by_problem.items()):
        pts.sort()
        ns = np.array([p[0] for p in pts], dtype=float)
        errs = np.array([p[1] for p in pts])
        ax.loglog(ns, errs, marker="o", label=name)
    ns = np.array(sorted({p[0] for pts in by_problem.values() for p in pts}), dtype=float)
    ref = errs[0] * (ns / ns[0]) ** -2.0
    ax.loglog(ns, ref, "k:", label="slope -2")
    ax.set_xlabel("n1")
    ax.set_ylabel("L2 error")
    ax.legend()
    ax.set_title("manufactured-solution convergence")
    return fig


def render(spec: dict) -> list[str]:
    _deterministic_style()
    kind = spec["kind"]
    inp = Path(spec["input"])
    logy = bool(spec.get("logy", False))
    if kind == "energy-time":
        fig = fig_energy_time(read_run_log(inp), logy)
    elif kind == "sweep-spread":
        fig = fig_sweep_spread(read_sweep(inp), logy)
    elif kind == "inviscid-rate":
        fig = fig_inviscid_rate(read_sweep(inp), logy)
    else:
        fig = fig_mms_order(read_mms(inp), logy)
    out = Path(spec["output"])
    out.parent.mkdir(parents=True, exist_ok=True)
    written = []
    for ext in ("png", "svg"):
        path = out.with_suffix(f".{ext}")
        fig.savefig(path, metadata=_clean_metadata(ext))
        written.append(str(path))
    plt.close(fig)
    return written


def _clean_metadata(ext: str):
    if ext == "png":
        return {"Software": None}
    return {"Date": None}


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    if len(argv) != 1:
        print("usage: figures <spec.json>", file=sys.stderr)
        return 2
    try:
        spec = load_spec(argv[0])
        written = render(spec)
    except SpecError as exc:
        print(f"figure spec error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # no partial files on unexpected failure
        print(f"figure rendering failed: {exc}", file=sys.stderr)
        return 1
    print(json.dumps({"written": written}))
    return 0


if __name__ == "__main__":
    sys.exit(main())
