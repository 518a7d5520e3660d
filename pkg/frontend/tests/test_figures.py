"""Figure-package tests, including the secondary acceptance criterion:
all four figure kinds render deterministically from real simulator artifacts
and the inviscid-rate annotation matches the sweep report's slope."""

import json
import subprocess
import sys
from pathlib import Path

import pytest

from elastica_figures.cli import SpecError, load_spec, main, read_run_log, render

REPO = Path(__file__).resolve().parent.parent.parent


@pytest.fixture(scope="module")
def artifacts(tmp_path_factory):
    """Small real runs through the primary CLI: run log, sweep report, MMS
    table (same writers as the acceptance experiments)."""
    root = tmp_path_factory.mktemp("artifacts")
    env_cfg = {
        "schema": 1, "kind": "simulate",
        "grid": {"n1": 32, "n2": 17},
        "sim": {"epsilon": 0.0, "t_end": 0.02},
        "initial_data": {"kind": "perturbed", "amplitude": 0.02},
        "output_dir": str(root / "run"),
    }
    sweep_cfg = {
        "schema": 1, "kind": "sweep",
        "grid": {"n1": 32, "n2": 17},
        "sim": {"epsilon": 0.0, "t_end": 0.02},
        "initial_data": {"kind": "perturbed", "amplitude": 0.02},
        "epsilon_list": [1e-1, 1e-2, 1e-3],
        "output_dir": str(root / "sweep"),
    }
    mms_cfg = {"schema": 1, "kind": "mms", "output_dir": str(root / "mms")}
    for name, cfg in (("run", env_cfg), ("sweep", sweep_cfg), ("mms", mms_cfg)):
        cfg_path = root / f"{name}.json"
        cfg_path.write_text(json.dumps(cfg))
        proc = subprocess.run(
            [sys.executable, "-m", "elastica.cli", name if name != "run" else "simulate",
             "--config", str(cfg_path)],
            capture_output=True, text=True, cwd=REPO,
        )
        assert proc.returncode == 0, proc.stderr
    return {
        "run_log": root / "run" / "run.csv",
        "sweep": root / "sweep" / "sweep.json",
        "mms": root / "mms" / "mms.csv",
    }


def _spec(kind, inp, out):
    return {"schema": 1, "kind": kind, "input": str(inp), "output": str(out)}


def test_all_four_kinds_render(artifacts, tmp_path):
    for kind, src in (
        ("energy-time", artifacts["run_log"]),
        ("sweep-spread", artifacts["sweep"]),
        ("inviscid-rate", artifacts["sweep"]),
        ("mms-order", artifacts["mms"]),
    ):
        written = render(_spec(kind, src, tmp_path / kind))
        for path in written:
            assert Path(path).exists()
            assert Path(path).stat().st_size > 0


def test_rendering_is_deterministic(artifacts, tmp_path):
    spec = _spec("energy-time", artifacts["run_log"], tmp_path / "a")
    render(spec)
    first = {p: Path(p).read_bytes() for p in
             [str(tmp_path / "a.png"), str(tmp_path / "a.svg")]}
    spec = _spec("energy-time", artifacts["run_log"], tmp_path / "a")
    render(spec)
    for p, content in first.items():
        assert Path(p).read_bytes() == content


def test_inviscid_rate_annotation_matches_report(artifacts, tmp_path):
    report_slope = json.loads(artifacts["sweep"].read_text())["inviscid_slope"]
    written = render(_spec("inviscid-rate", artifacts["sweep"], tmp_path / "rate"))
    svg = Path([p for p in written if p.endswith(".svg")][0]).read_text()
    # the annotation embeds repr(slope); recover and compare to full precision
    import re

    texts = re.findall(r"slope = ([0-9eE+.\-]+)", svg)
    assert texts, "slope annotation missing from the figure"
    assert abs(float(texts[0]) - report_slope) <= 1e-12


def test_strict_schema_rejects_bad_inputs(artifacts, tmp_path):
    # missing column
    mangled = tmp_path / "bad.csv"
    lines = artifacts["run_log"].read_text().splitlines()
    lines[1] = lines[1].replace(",ghost_residual_max", "")
    mangled.write_text("\n".join(lines))
    with pytest.raises(SpecError):
        read_run_log(mangled)
    # unknown spec keys
    spec_path = tmp_path / "spec.json"
    spec_path.write_text(json.dumps({
        "schema": 1, "kind": "energy-time", "input": str(artifacts["run_log"]),
        "output": str(tmp_path / "x"), "theme": "dark",
    }))
    with pytest.raises(SpecError):
        load_spec(str(spec_path))


def test_cli_exit_codes(artifacts, tmp_path):
    spec_path = tmp_path / "spec.json"
    spec_path.write_text(json.dumps(_spec("energy-time", artifacts["run_log"], tmp_path / "ok")))
    assert main([str(spec_path)]) == 0
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"schema": 1, "kind": "nope", "input": "x", "output": "y"}))
    assert main([str(bad)]) == 2
    assert main([]) == 2
    # schema mismatch in the data file aborts with no partial figure
    broken = tmp_path / "broken.csv"
    broken.write_text("not,a,log\n")
    spec_path.write_text(json.dumps(_spec("energy-time", broken, tmp_path / "partial")))
    assert main([str(spec_path)]) == 2
    assert not (tmp_path / "partial.png").exists()
