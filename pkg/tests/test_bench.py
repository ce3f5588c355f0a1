import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from nsrom import bench
from nsrom.cli import main


@pytest.fixture(scope="module")
def bundle16(tmp_path_factory):
    out = tmp_path_factory.mktemp("bundle16")
    assert main(["offline", "--n", "16", "--seed", "7", "--n-trial", "200",
                 "--set", "strategies=full_ks,full_ntrial,mixed", "--out", str(out)]) == 0
    return out


def test_config_file_and_overrides(tmp_path):
    cfg = tmp_path / "exp.cfg"
    cfg.write_text("# desk run\nn = 16\ntau = 1e-3\nsolvers = direct, online-ns\nseed = 4  # inline\n")
    c = bench.load_config(cfg, {"seed": "9"})
    assert (c.n, c.tau, c.seed) == (16, 1e-3, 9)
    assert c.solvers == ("direct", "online-ns")
    assert c.n_trial == 2000 and c.delta == 1e-8 and c.n_s == 10


@pytest.mark.parametrize("text, match", [
    ("n = 16\nbogus = 1\n", r":2: unknown field 'bogus'"),
    ("n 16\n", r":1: expected 'key = value'"),
    ("n = sixteen\n", r"field 'n': cannot parse"),
    ("strategy = best\n", r"unknown strategy"),
    ("n = 15\n", r"even"),
])
def test_config_errors(tmp_path, text, match):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text(text)
    with pytest.raises((bench.ConfigError, ValueError), match=match):
        bench.load_config(cfg)


def test_config_hash_tracks_fields():
    a, b = bench.ExperimentConfig(), bench.ExperimentConfig()
    assert a.hash() == b.hash()
    b.seed = 1
    assert a.hash() != b.hash()


def test_offline_manifest_is_deterministic(bundle16, tmp_path):
    again = tmp_path / "again"
    assert main(["offline", "--n", "16", "--seed", "7", "--n-trial", "200",
                 "--set", "strategies=full_ks,full_ntrial,mixed", "--out", str(again)]) == 0
    first = (bundle16 / "manifest.json").read_bytes()
    assert (again / "manifest.json").read_bytes() == first
    manifest = json.loads(first)
    assert manifest["seed"] == 7 and manifest["n_trial"] == 200
    assert manifest["k"] == 3 * manifest["k_s"]
    assert manifest["n_deim"] == manifest["k_s"]


def test_offline_infinite_tau(tmp_path):
    assert main(["offline", "--n", "8", "--set", "tau=inf", "--set", "n_trial=5",
                 "--out", str(tmp_path)]) == 0
    assert json.loads((tmp_path / "manifest.json").read_text())["k"] == 3


def _read(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


def test_online_csv(bundle16, tmp_path):
    out = tmp_path / "online.csv"
    assert main(["online", "--n", "16", "--seed", "7", "--n-s", "3", "--bundle", str(bundle16),
                 "--csv", str(out)]) == 0
    rows = _read(out)
    per_sample = [r for r in rows if r["xi_id"] != "mean"]
    means = {(r["model"], r["preconditioner"]): r for r in rows if r["xi_id"] == "mean"}
    # full, full-loose, reduced, and DEIM with 5 solver choices
    assert len(per_sample) == 3 * 8 and len(means) == 8
    assert len({r["config_hash"] for r in rows}) == 1
    assert all(float(r["eta"]) < 1e-8 for r in per_sample if r["model"] == "full")
    assert float(means[("deim", "online-ns")]["mean_linear_iters"]) <= 4
    assert float(means[("deim", "offline-stokes")]["mean_linear_iters"]) <= 40
    assert float(means[("deim", "none")]["element_visits"]) < 64

    again = tmp_path / "again.csv"
    main(["online", "--n", "16", "--seed", "7", "--n-s", "3", "--bundle", str(bundle16), "--csv", str(again)])
    strip = lambda rs: [{k: v for k, v in r.items() if k != "wall_time"} for r in rs]  # noqa: E731
    assert strip(_read(again)) == strip(rows)


@pytest.mark.parametrize("sweep", bench.SWEEPS)
def test_figure_data(bundle16, tmp_path, sweep):
    out = tmp_path / f"{sweep}.csv"
    assert main(["figure-data", "--n", "16", "--n-s", "2", "--set", "ndeim_values=4,16,32",
                 "--bundle", str(bundle16), "--sweep", sweep, "--csv", str(out)]) == 0
    rows = _read(out)
    assert {r["n_deim"] for r in rows} == {"4", "16", "32"}
    if sweep == "strategy-comparison":
        assert {r["strategy"] for r in rows} == {"full_ks", "full_ntrial", "mixed"}
    if sweep == "gappy-vs-deim":
        gappy = [r for r in rows if r["method"] == "gappy"]
        assert all(int(r["n_indices"]) == 2 * int(r["n_deim"]) for r in gappy)
    deim = [float(r["mean_eta"]) for r in rows if r["method"] == "deim" and r["strategy"] == "full_ks"]
    assert deim[-1] <= deim[0]


def test_missing_bundle_exit_code(tmp_path, capsys):
    assert main(["online", "--bundle", str(tmp_path / "nope"), "--csv", str(tmp_path / "x.csv")]) == 2
    assert "no offline bundle" in capsys.readouterr().err


def test_grid_mismatch_rejected(bundle16, tmp_path):
    assert main(["online", "--n", "8", "--bundle", str(bundle16), "--csv", str(tmp_path / "x.csv")]) == 2


def test_verify_subcommand_exit_codes():
    ok = subprocess.run([sys.executable, "-m", "nsrom", "verify", "-k", "test_deim_unit_vector"],
                        capture_output=True)
    assert ok.returncode == 0
    bad = subprocess.run([sys.executable, "-m", "nsrom", "verify", "-k", "no_such_test_name"],
                         capture_output=True)
    assert bad.returncode != 0
