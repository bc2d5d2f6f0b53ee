import csv
import io
from dataclasses import replace

import numpy as np
import pytest

from interference_bandits.config import ExperimentConfig, MovieLensSettings, default_policies
from interference_bandits.domain import transform_covariates
from interference_bandits.environment import a1_beta, a1_value, a2_regret
from interference_bandits.experiments import (
    config_hash,
    counterpart_labels,
    csv_text,
    paired_comparisons,
    prepare_movielens,
    replay_movielens,
    run_coverage,
    run_movielens,
    run_regret,
    simulate,
    wilson_band,
    write_result,
)
from interference_bandits.policies import PolicyConfig

ALL = ("EG", "UCB", "TS", "ClassicalEG", "ClassicalUCB", "ClassicalTS")


def regret_cfg(reps=3, env=None, names=ALL, **kw):
    env = a2_regret(horizon=30) if env is None else env
    pols = [(n, PolicyConfig(n), "known") for n in names]
    return ExperimentConfig("regret", env, pols, reps, (10, env.horizon), **kw)


def read_csv(text):
    lines = text.splitlines()
    assert lines[0].startswith("# config_sha256=")
    return list(csv.DictReader(io.StringIO("\n".join(lines[1:]))))


# ---------------------------------------------------------------------------
# regret


def test_regret_rows_and_summary():
    cfg = regret_cfg()
    res = run_regret(cfg)
    assert len(res.rows) == 3 * 6 * 2
    keys = [(r["replication"], r["policy"], r["checkpoint"]) for r in res.rows]
    assert keys == sorted(keys, key=lambda k: (k[0], ALL.index(k[1]), k[2]))
    for r in res.rows:
        assert r["avg_regret"] == pytest.approx(r["cum_regret"] / r["n_bar"])
        assert r["cum_regret"] >= 0
    assert {s["replications"] for s in res.summary} == {3}
    assert set(res.checks) == {"EG<ClassicalEG", "UCB<ClassicalUCB", "TS<ClassicalTS"}


def test_regret_needs_both_kinds_of_policy():
    with pytest.raises(ValueError, match="classical"):
        run_regret(regret_cfg(names=("EG", "TS")))
    with pytest.raises(ValueError, match="aware"):
        run_regret(regret_cfg(names=("ClassicalEG",)))


def test_output_identical_across_worker_counts():
    one = run_regret(regret_cfg(reps=4, workers=1))
    two = run_regret(regret_cfg(reps=4, workers=2))
    assert one.config_hash == two.config_hash
    assert csv_text(one.fields, one.rows, one.config_hash) == \
        csv_text(two.fields, two.rows, two.config_hash)
    assert one.summary == two.summary


def test_config_hash_tracks_results_not_logistics():
    cfg = regret_cfg()
    assert config_hash(cfg) == config_hash(replace(cfg, workers=8, output_dir="elsewhere"))
    assert config_hash(cfg) != config_hash(replace(cfg, master_seed=1))
    assert len(config_hash(cfg)) == 64


def test_written_csvs_carry_header_and_hash(tmp_path):
    res = run_regret(regret_cfg(reps=2))
    paths = write_result(res, tmp_path, gnuplot=True)
    names = sorted(p.name for p in paths)
    assert names == ["regret.csv", "regret_paired.csv", "regret_summary.csv",
                     "regret_summary.dat"]
    for p in paths:
        if p.suffix != ".csv":
            continue
        raw = p.read_bytes()
        assert raw.startswith(b"# config_sha256=" + res.config_hash.encode())
        assert b"\r\n" in raw
        rows = read_csv(raw.decode())
        assert rows
    dat = (tmp_path / "regret_summary.dat").read_text().splitlines()
    assert dat[0].split()[2:] == sorted(ALL)
    assert len(dat) == 3


def test_rerun_is_byte_identical(tmp_path):
    cfg = regret_cfg(reps=2)
    a = write_result(run_regret(cfg), tmp_path / "a")
    b = write_result(run_regret(cfg), tmp_path / "b")
    for pa, pb in zip(a, b):
        assert pa.read_bytes() == pb.read_bytes()


def test_oracle_regret_is_zero():
    tr = simulate(a2_regret(horizon=20), PolicyConfig("Oracle"), 0, 0)
    assert tr.regrets == [0.0] * 20


def test_identity_environment_traces_match():
    env = a2_regret(horizon=40).with_identity()
    res = run_regret(regret_cfg(reps=5, env=env))
    paired = res.extra["paired"][1]
    for p in paired:
        assert p["mean_diff"] == 0.0
    assert res.checks == {"EG~ClassicalEG": True, "UCB~ClassicalUCB": True, "TS~ClassicalTS": True}
    for aware, classical in (("EG", "ClassicalEG"), ("UCB", "ClassicalUCB"), ("TS", "ClassicalTS")):
        a = simulate(env, PolicyConfig(aware), 3, 1)
        c = simulate(env, PolicyConfig(classical), 3, 1)
        for x, y in zip(a.actions, c.actions):
            assert np.array_equal(x, y)


def test_paired_comparison_arithmetic():
    rows = [{"policy": p, "replication": r, "checkpoint": 5, "avg_regret": v}
            for p, r, v in [("A", 0, 1.0), ("A", 1, 2.0), ("B", 0, 3.0), ("B", 1, 3.5)]]
    (out,) = paired_comparisons(rows, 5, {"A": "B"})
    assert out["mean_diff"] == pytest.approx(-1.75)
    assert out["se_diff"] == pytest.approx(0.25)
    assert out["dominates"]


def test_counterpart_labels_use_algorithms_not_labels():
    pols = [("mine", PolicyConfig("TS"), "known"), ("base", PolicyConfig("ClassicalTS"), "known"),
            ("lonely", PolicyConfig("EG"), "known")]
    assert counterpart_labels(pols) == {"mine": "base"}


# ---------------------------------------------------------------------------
# coverage


def coverage_cfg(kind, reps=4, horizon=40, alpha=0.05, **kw):
    env = (a1_beta if kind == "coverage_beta" else a1_value)(horizon=horizon)
    return ExperimentConfig(kind, env, default_policies(kind), reps, (20, horizon),
                            alpha_level=alpha, mc_samples=2000, **kw)


@pytest.mark.parametrize("kind", ["coverage_beta", "coverage_v"])
def test_coverage_outputs(kind):
    res = run_coverage(coverage_cfg(kind))
    assert len(res.rows) == 4 * 3 * 2
    assert set(res.checks) == {"EG", "UCB", "TS"}
    for s in res.summary:
        assert s["wilson_lo"] <= s["coverage"] <= s["wilson_hi"]
        assert s["replications"] == 4
    if kind == "coverage_v":
        r = res.rows[0]
        assert r["ci_lower"] <= r["v_dr"] <= r["ci_upper"]
        assert len({row["v_star"] for row in res.rows}) == 1


@pytest.mark.parametrize("kind", ["coverage_beta", "coverage_v"])
def test_alpha_one_gives_zero_coverage(kind):
    res = run_coverage(coverage_cfg(kind, reps=3, alpha=1.0))
    assert all(s["coverage"] == 0.0 for s in res.summary)
    assert not res.passed


def test_coverage_rejects_other_kinds():
    with pytest.raises(ValueError):
        run_coverage(regret_cfg())


def test_wilson_band_reference_values():
    # Wilson 95% interval for 190/200, closed form
    lo, hi = wilson_band(190, 200)
    z = 1.959963984540054
    p, n = 0.95, 200
    centre = (p + z * z / (2 * n)) / (1 + z * z / n)
    half = z * np.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / (1 + z * z / n)
    assert lo == pytest.approx(centre - half, abs=1e-12)
    assert hi == pytest.approx(centre + half, abs=1e-12)


# ---------------------------------------------------------------------------
# MovieLens


def ml_settings(movielens_dir, rounds=250, models=("I", "II")):
    return MovieLensSettings(str(movielens_dir / "ratings.dat"), str(movielens_dir / "users.dat"),
                             str(movielens_dir / "movies.dat"), rounds, models)


def test_movielens_model_two_oracle_matches_enumeration(movielens_dir):
    data = prepare_movielens(ml_settings(movielens_dir, rounds=400, models=("II",)))
    small = [r for r in data.rounds if len(r.user_ids) <= 10]
    assert len(small) == len(data.rounds)
    series = replay_movielens(data, "II", PolicyConfig("Oracle"), 0, 0, sigma=0.0)
    beta = data.beta_fit
    for r, got in zip(data.rounds[:60], series):
        n = len(r.user_ids)
        best = max(
            transform_covariates(r.contexts, r.interference,
                                 [(m >> k) & 1 for k in range(n)]).sum(0) @ beta.stacked
            for m in range(2**n)
        )
        assert got * n == pytest.approx(best, rel=1e-10, abs=1e-10)


def test_movielens_aware_policies_beat_classical(movielens_dir):
    names = ("EG", "UCB", "TS", "ClassicalEG", "ClassicalUCB", "ClassicalTS")
    cfg = ExperimentConfig("movielens", None, [(n, PolicyConfig(n), "known") for n in names], 10,
                           movielens=ml_settings(movielens_dir))
    res = run_movielens(cfg)
    assert res.checks == {"II:EG>ClassicalEG": True, "II:UCB>ClassicalUCB": True,
                          "II:TS>ClassicalTS": True}
    summary = {(s["model"], s["policy"]): s["mean_final_cum_avg"] for s in res.summary}
    assert ("I", "Oracle") in summary and ("II", "Oracle") in summary
    # the oracle gap is reported for both models
    for model in ("I", "II"):
        assert summary[(model, "Oracle")] >= max(summary[(model, n)] for n in names) - 0.05
