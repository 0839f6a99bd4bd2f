import subprocess
import sys

import numpy as np
import pandas as pd
import pytest

from feedsim.cli import EXIT_CONFIG, EXIT_DATA, EXIT_NONCONVERGENCE, EXIT_OK, load_config, run
from feedsim.reports import BINSCATTER_COLUMNS, QUANTILE_COLUMNS, binscatter, quantile_table, shares_binscatter

SMALL = """
[simulation]
n_users = 6000
"""

NARROW = """
[simulation]
n_users = 100000
taste = uniform:0.044,0.104
"""


def write(tmp_path, text, name="cfg.ini"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def csv_bytes(d):
    return {p.name: p.read_bytes() for p in sorted(d.glob("*.csv"))}


def manifest(d):
    return dict(line.split("=", 1) for line in (d / "manifest.txt").read_text().splitlines())


@pytest.fixture(scope="module")
def sim_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("sim")
    cfg = write(d, SMALL)
    assert run(["simulate", "--config", cfg, "--seed", "4", "--out", str(d / "out")]) == EXIT_OK
    return d


def test_simulate_outputs_and_manifest(sim_dir):
    out = sim_dir / "out"
    panel = pd.read_csv(out / "panel.csv")
    assert len(panel) == 12_000
    m = manifest(out)
    assert m["command"] == "simulate" and m["seed"] == "4" and m["output"] == "panel.csv"
    assert len(m["config_hash"]) == 64
    assert {"version_numpy", "version_pandas", "backend", "wall_time_seconds"} <= set(m)


@pytest.mark.parametrize("command", ["simulate", "counterfactual"])
def test_byte_identical_across_runs_and_workers(tmp_path, command):
    cfg = write(tmp_path, SMALL)
    outs = []
    for i, workers in enumerate([1, 1, 4]):
        d = tmp_path / f"o{i}"
        assert run([command, "--config", cfg, "--seed", "9", "--out", str(d), "--workers", str(workers)]) == EXIT_OK
        outs.append(d)
    assert csv_bytes(outs[0]) == csv_bytes(outs[1]) == csv_bytes(outs[2])
    assert manifest(outs[0])["config_hash"] == manifest(outs[2])["config_hash"]


def test_config_hash_tracks_seed_and_values(tmp_path):
    a = run(["simulate", "--config", write(tmp_path, SMALL), "--seed", "1", "--out", str(tmp_path / "a")])
    b = run(["simulate", "--config", write(tmp_path, SMALL), "--seed", "2", "--out", str(tmp_path / "b")])
    assert a == b == EXIT_OK
    assert manifest(tmp_path / "a")["config_hash"] != manifest(tmp_path / "b")["config_hash"]
    _, c1 = load_config(write(tmp_path, "[params]\ntheta = 0.2\nmu=0.1\n", "x.ini"))
    _, c2 = load_config(write(tmp_path, "[params]\nmu = 0.1\ntheta=0.2   # note\n", "y.ini"))
    assert c1 == c2


def test_estimate_from_panel(sim_dir, tmp_path):
    cfg = write(tmp_path, f"[input]\npanel = {sim_dir / 'out' / 'panel.csv'}\n")
    assert run(["estimate", "--config", cfg, "--out", str(tmp_path / "e")]) == EXIT_OK
    est = pd.read_csv(tmp_path / "e" / "theta_estimates.csv")
    assert list(est["method"]) == ["ols", "iv2sls", "reliability", "iv2sls_log"]
    q = pd.read_csv(tmp_path / "e" / "quantile_effects.csv")
    assert list(q.columns) == QUANTILE_COLUMNS
    assert q.groupby("outcome").size().eq(5).all() and q["outcome"].nunique() == 6
    b = pd.read_csv(tmp_path / "e" / "binscatter.csv")
    assert list(b.columns) == BINSCATTER_COLUMNS and len(b) == 20
    for name in ("steady_state.csv", "theta_by_group.csv", "manifest.txt"):
        assert (tmp_path / "e" / name).exists()


def test_counterfactual_frontier(tmp_path):
    cfg = write(tmp_path, SMALL + "[counterfactual]\na_grid = 0,0.2,0.4,0.6,0.8,1.0\n")
    assert run(["counterfactual", "--config", cfg, "--seed", "3", "--out", str(tmp_path)]) == EXIT_OK
    f = pd.read_csv(tmp_path / "frontier.csv")
    assert len(f) == 6 and list(f["a"]) == [0.0, 0.2, 0.4, 0.6, 0.8, 1.0]
    assert (np.diff(f["toxic_shares"]) <= 1e-12).all()
    b = pd.read_csv(tmp_path / "shares_binscatter.csv")
    assert list(b.columns) == BINSCATTER_COLUMNS and (b["y_mean"] < 0).all()
    assert set(pd.read_csv(tmp_path / "frontier_long.csv").columns) == {"a", "series", "value"}


def test_classify(tmp_path):
    scores = tmp_path / "scores.csv"
    scores.write_text("item_id,score,label\n1,0.643,toxic\n2,0.174,non-toxic\n3,0.25,toxic\n4,0.15,non-toxic\n")
    cfg = write(tmp_path, f"[input]\nscores = {scores}\n")
    assert run(["classify", "--config", cfg, "--out", str(tmp_path / "c")]) == EXIT_OK
    rep = pd.read_csv(tmp_path / "c" / "threshold_report.csv")
    assert rep.loc[rep["selected"], "threshold"].tolist() == [0.2]
    out = pd.read_csv(tmp_path / "c" / "scores_binarized.csv")
    assert out["toxic"].tolist() == [True, False, True, False]


def test_full_pipeline_on_narrow_taste(tmp_path):
    cfg = write(tmp_path, NARROW)
    assert run(["full-pipeline", "--config", cfg, "--seed", "11", "--out", str(tmp_path)]) == EXIT_OK
    s = pd.read_csv(tmp_path / "summary.csv").set_index("quantity")
    assert s.loc["theta_iv", "ok"] == 1.0
    assert s.loc["theta_ols", "estimate"] < s.loc["theta_iv", "estimate"]
    expected = {"panel.csv", "theta_estimates.csv", "calibration_report.csv", "frontier.csv", "summary.csv",
                "quantile_effects.csv", "binscatter.csv", "manifest.txt"}
    assert expected <= {p.name for p in tmp_path.iterdir()}


def test_full_pipeline_defaults_log_iv_covers(tmp_path):
    cfg = write(tmp_path, "[simulation]\nn_users = 100000\n")
    assert run(["full-pipeline", "--config", cfg, "--seed", "3", "--out", str(tmp_path)]) == EXIT_OK
    s = pd.read_csv(tmp_path / "summary.csv").set_index("quantity")
    assert s.loc["theta_iv_log", "ok"] == 1.0
    # linear IV targets its linearised value on the skewed default taste
    assert s.loc["theta_linearized_target", "truth"] == pytest.approx(0.192, abs=2e-3)


# -- errors and exit codes ---------------------------------------------------------

@pytest.mark.parametrize("text", ["[simulation]\nusers = 5\n", "[bogus]\nx = 1\n", "[params]\ntheta = 1.5\n",
                                  "[simulation]\nn_users = many\n", "[counterfactual]\ntarget = quintiles:7\n"])
def test_bad_config_exits_2(tmp_path, text):
    assert run(["simulate", "--config", write(tmp_path, text), "--seed", "1", "--out", str(tmp_path / "o")]) == EXIT_CONFIG
    assert not (tmp_path / "o" / "manifest.txt").exists()


def test_missing_seed_and_bad_flags(tmp_path):
    assert run(["simulate", "--out", str(tmp_path)]) == EXIT_CONFIG
    assert run(["simulate", "--seed", "-1", "--out", str(tmp_path)]) == EXIT_CONFIG
    assert run(["simulate", "--seed", "1", "--workers", "0", "--out", str(tmp_path)]) == EXIT_CONFIG
    assert run(["frobnicate"]) == EXIT_CONFIG
    assert run(["estimate", "--out", str(tmp_path)]) == EXIT_CONFIG
    assert run(["simulate", "--config", str(tmp_path / "nope.ini"), "--seed", "1"]) == EXIT_CONFIG


def test_refuses_overwrite_without_force(tmp_path):
    cfg = write(tmp_path, "[simulation]\nn_users = 500\n")
    args = ["simulate", "--config", cfg, "--seed", "1", "--out", str(tmp_path / "o")]
    assert run(args) == EXIT_OK
    before = (tmp_path / "o" / "panel.csv").read_bytes()
    assert run(args) == EXIT_CONFIG
    assert (tmp_path / "o" / "panel.csv").read_bytes() == before
    assert run(args + ["--force"]) == EXIT_OK


def test_data_contract_violation_exits_4_and_cleans_up(tmp_path):
    bad = tmp_path / "panel.csv"
    bad.write_text("user_id,views\n1,2\n")
    cfg = write(tmp_path, f"[input]\npanel = {bad}\n")
    assert run(["estimate", "--config", cfg, "--out", str(tmp_path / "e")]) == EXIT_DATA
    scores = tmp_path / "scores.csv"
    scores.write_text("item_id,score\n1,1.7\n")
    cfg = write(tmp_path, f"[input]\nscores = {scores}\n", "c.ini")
    assert run(["classify", "--config", cfg, "--out", str(tmp_path / "c")]) == EXIT_DATA


def test_estimate_on_tiny_panel_exits_4_without_leftovers(tmp_path):
    cfg = write(tmp_path, "[simulation]\nn_users = 40\n")
    assert run(["simulate", "--config", cfg, "--seed", "1", "--out", str(tmp_path / "s")]) == EXIT_OK
    cfg2 = write(tmp_path, f"[input]\npanel = {tmp_path / 's' / 'panel.csv'}\n", "e.ini")
    assert run(["estimate", "--config", cfg2, "--out", str(tmp_path / "e")]) == EXIT_DATA
    assert list((tmp_path / "e").iterdir()) == []


def test_non_convergence_exits_3_and_cleans_up(sim_dir, tmp_path):
    cfg = write(tmp_path, f"[input]\npanel = {sim_dir / 'out' / 'panel.csv'}\n[calibration]\nmax_iter = 3\ntheta = 0.16\n")
    assert run(["calibrate", "--config", cfg, "--out", str(tmp_path / "k")]) == EXIT_NONCONVERGENCE
    assert list((tmp_path / "k").iterdir()) == []


def test_module_entry_point(tmp_path):
    res = subprocess.run([sys.executable, "-m", "feedsim", "--help"], capture_output=True, text=True)
    assert res.returncode == 0 and "full-pipeline" in res.stdout
    res = subprocess.run([sys.executable, "-m", "feedsim", "simulate", "--out", str(tmp_path)],
                         capture_output=True, text=True)
    assert res.returncode == EXIT_CONFIG and "seed" in res.stderr


# -- plot tables -------------------------------------------------------------------

def test_binscatter_matches_groupby_oracle():
    rng = np.random.default_rng(0)
    x = rng.normal(size=1003)
    y = 2 * x + rng.normal(size=1003)
    x[5] = np.nan
    got = binscatter(x, y, 20)
    df = pd.DataFrame({"x": x, "y": y}).dropna()
    rank = df["x"].rank(method="first").astype(int) - 1
    df["bin"] = rank * 20 // len(df) + 1
    want = df.groupby("bin").agg(n=("x", "size"), x_mean=("x", "mean"), y_mean=("y", "mean")).reset_index()
    assert got["n"].tolist() == want["n"].tolist()
    assert np.allclose(got[["x_mean", "y_mean"]], want[["x_mean", "y_mean"]], rtol=1e-12)


def test_empty_inputs_give_header_only(default_panel):
    empty = default_panel.iloc[:0]
    assert list(quantile_table(empty).columns) == QUANTILE_COLUMNS and len(quantile_table(empty)) == 0
    assert list(binscatter([], []).columns) == BINSCATTER_COLUMNS
    assert len(shares_binscatter(empty)) == 0
