import json
import os
import subprocess
import sys

import numpy as np
import pytest
import yaml

from ssdeconv import __version__
from ssdeconv.cli import Artifacts, UsageError, apply_overrides, build_parser, main, read_sample
from ssdeconv.config import default_config

SMALL = {
    "seed": 5,
    "simulate": {"n": 200},
    "chain": {"iters": 40, "burnin": 20, "thin": 2, "grid_points": 64},
    "grid": {"n_points": 1024},
    "rates": {"n_grid": [64, 128, 256, 512], "reps": 10, "eval_points": 64,
              "methods": ["DKE", "KDE"]},
    "concentration": {"reps": 20, "n": 200, "h_grid": [0.8, 0.6, 0.4]},
}


@pytest.fixture
def cfg_path(tmp_path):
    path = tmp_path / "cfg.yaml"
    path.write_text(yaml.safe_dump(SMALL), encoding="utf-8")
    return path


def run(cmd, cfg_path, out, *extra):
    return main([cmd, "--config", str(cfg_path), "--out", str(out), *extra])


def body(path):
    return [l for l in path.read_text(encoding="utf-8").splitlines() if not l.startswith("#")]


def meta(path):
    rows = [l for l in path.read_text(encoding="utf-8").splitlines() if l.startswith("#")]
    return dict(r[2:].split(": ", 1) for r in rows)


def tree(root):
    return sorted(str(p.relative_to(root)) for p in root.rglob("*"))


def test_simulate_rerun_identical(tmp_path, cfg_path):
    assert run("simulate", cfg_path, tmp_path / "a") == 0
    assert run("simulate", cfg_path, tmp_path / "b") == 0
    a, b = tmp_path / "a" / "W.csv", tmp_path / "b" / "W.csv"
    assert a.read_bytes() == b.read_bytes()
    assert len(body(a)) == 1 + 200
    assert run("simulate", cfg_path, tmp_path / "c", "--seed", "6") == 0
    assert body(tmp_path / "c" / "W.csv") != body(a)


def test_kernel_check_r0_row(tmp_path, cfg_path):
    assert run("kernel-check", cfg_path, tmp_path / "o") == 0
    rows = body(tmp_path / "o" / "moments.csv")
    assert rows[0] == "r,moment,shifted_grid_check,status"
    r0 = rows[1].split(",")
    assert r0[0] == "0" and r0[3] == "ok"
    assert abs(float(r0[1]) - 1) <= 1e-8
    assert len(rows) == 1 + 7


def test_header_block(tmp_path, cfg_path):
    out = tmp_path / "o"
    assert run("simulate", cfg_path, out) == 0
    m = meta(out / "W.csv")
    cfg = default_config().with_updates(**SMALL)
    assert m["tool"] == f"ssdeconv {__version__}"
    assert m["command"] == "simulate"
    assert m["config_hash"] == cfg.config_hash()
    assert m["seed"] == "5"
    assert json.loads(m["config"]) == json.loads(cfg.canonical_json())


def test_unknown_subcommand_exit_2():
    proc = subprocess.run([sys.executable, "-m", "ssdeconv", "frobnicate"],
                          capture_output=True, text=True)
    assert proc.returncode == 2
    assert "usage:" in proc.stderr


def test_invalid_config_exit_2(tmp_path, capsys):
    path = tmp_path / "bad.yaml"
    path.write_text("bandwidth: {gamma: 1.5}\nbogus: 1\n", encoding="utf-8")
    assert main(["simulate", "--config", str(path), "--out", str(tmp_path / "o")]) == 2
    err = json.loads(capsys.readouterr().err)
    assert err["error"] == "ConfigError" and err["exit_code"] == 2
    assert len(err["details"]) == 2
    assert not (tmp_path / "o").exists()


def test_missing_input_exit_2(tmp_path, cfg_path, capsys):
    out = tmp_path / "o"
    assert run("estimate-dke", cfg_path, out) == 2
    assert run("estimate-dke", cfg_path, out, "--input", str(tmp_path / "none.csv")) == 2
    err = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert "not found" in err["message"]
    assert json.loads((out / "error.json").read_text())["exit_code"] == 2


def test_runtime_failure_exit_1_with_error_json(tmp_path, cfg_path, capsys):
    out = tmp_path / "o"
    # the DKW check needs at least 200 replicates; the small config has 20
    assert run("concentration", cfg_path, out, "--mode", "dkw") == 1
    err = json.loads(capsys.readouterr().err)
    assert err["exit_code"] == 1 and err["error"] == "ValueError"
    assert json.loads((out / "error.json").read_text()) == err


def test_every_subcommand_writes_only_inside_out(tmp_path, cfg_path):
    out = tmp_path / "o"
    before = tree(tmp_path)
    assert run("simulate", cfg_path, out) == 0
    W = str(out / "W.csv")
    assert run("kernel-check", cfg_path, out) == 0
    assert run("estimate-dke", cfg_path, out, "--input", W) == 0
    assert run("fit-dpmm", cfg_path, out, "--input", W) == 0
    assert run("rates", cfg_path, out) == 0
    assert run("concentration", cfg_path, out, "--mode", "lemma1") == 0
    assert run("concentration", cfg_path, out, "--mode", "plugin-test") == 0
    outside = [p for p in tree(tmp_path) if p not in before and not p.startswith("o")]
    assert outside == []
    files = set(tree(out))
    assert {"W.csv", "X.csv", "moments.csv", "dke.csv", "dke_meta.json", "dpmm_summary.csv",
            "dpmm_draws.csv", "dpmm_diagnostics.json", "report.csv", "fits.csv",
            "lemma1.csv", "lemma1_fit.json", "plugin.csv",
            "plotdata/kernel_K.csv", "plotdata/median_error_DKE_p2.csv"} <= files
    assert not any(f.endswith(".tmp") for f in files)
    for f in files:
        if f.endswith(".csv"):
            assert meta(out / f)["seed"] == "5"
    dke = np.loadtxt(out / "dke.csv", delimiter=",", comments="#", skiprows=6)
    assert np.all(np.isfinite(dke))


def test_artifacts_refuse_escape(tmp_path):
    art = Artifacts(tmp_path / "o", default_config(), "simulate")
    with pytest.raises(UsageError):
        art.write_text("../escape.txt", "x")
    with pytest.raises(UsageError):
        art.write_text(str(tmp_path / "abs.txt"), "x")
    assert not (tmp_path / "escape.txt").exists() and not (tmp_path / "abs.txt").exists()


def test_atomic_write_leaves_no_partial_file(tmp_path, monkeypatch):
    art = Artifacts(tmp_path, default_config(), "simulate")
    art.write_text("f.csv", "old\n")

    def boom(src, dst):
        raise OSError("disk full")

    monkeypatch.setattr(os, "replace", boom)
    with pytest.raises(OSError):
        art.write_text("f.csv", "new\n")
    assert (tmp_path / "f.csv").read_text() == "old\n"
    assert tree(tmp_path) == ["f.csv"]


def test_threads_env_fallback(monkeypatch):
    parser = build_parser()
    monkeypatch.setenv("DECONV_THREADS", "3")
    cfg = apply_overrides(default_config(), parser.parse_args(["rates"]))
    assert cfg.threads == 3
    cfg = apply_overrides(default_config(), parser.parse_args(["rates", "--threads", "2"]))
    assert cfg.threads == 2
    monkeypatch.delenv("DECONV_THREADS")
    assert apply_overrides(default_config(), parser.parse_args(["rates"])).threads is None


def test_flag_overrides():
    args = build_parser().parse_args(["concentration", "--n", "300", "--sigma", "0.4",
                                      "--h", "0.7", "--p", "4", "--seed", "9"])
    cfg = apply_overrides(default_config(), args)
    assert (cfg.simulate.n, cfg.concentration.n) == (300, 300)
    assert cfg.error.sigma == 0.4
    assert (cfg.bandwidth.h, cfg.concentration.h) == (0.7, 0.7)
    assert (cfg.concentration.p, cfg.rates.p_list) == (4.0, [4.0])
    assert cfg.seed == 9


def test_read_sample(tmp_path):
    path = tmp_path / "w.csv"
    path.write_text("# comment\nw\n1.5\n-2\n\n3e-1\n", encoding="utf-8")
    np.testing.assert_array_equal(read_sample(path), [1.5, -2.0, 0.3])
    path.write_text("w\n1\nabc\n", encoding="utf-8")
    with pytest.raises(UsageError, match="non-numeric"):
        read_sample(path)
    path.write_text("# only comments\n", encoding="utf-8")
    with pytest.raises(UsageError, match="no observations"):
        read_sample(path)
