"""Experiment drivers: regret comparison, coverage, MovieLens replay.

Every replication owns two generators derived from ``(master_seed, rep)``:
stream 0 drives the environment, stream 1 the policy. Policies compared
within a replication therefore face the same rounds, coefficients and noise
draws. Rows are sorted before writing, so the worker count never changes
the output bytes.
"""
from __future__ import annotations

import csv
import dataclasses
import hashlib
import io
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import stats

from . import estimator as est
from . import movielens as ml
from .config import ExperimentConfig
from .domain import BetaVector, unit_regret
from .environment import EnvironmentConfig, SyntheticEnvironment, monte_carlo_v_star
from .inference import chi2_quantile, inference_report
from .policies import PolicyConfig, make_agent
from .value_estimation import value_report

REGRET_FIELDS = ("replication", "policy", "checkpoint", "n_bar", "cum_regret", "avg_regret")
REGRET_SUMMARY_FIELDS = ("policy", "checkpoint", "mean_avg_regret", "se_avg_regret",
                         "mean_cum_regret", "replications")
PAIRED_FIELDS = ("policy", "baseline", "checkpoint", "mean_diff", "se_diff", "dominates")
BETA_FIELDS = ("replication", "policy", "checkpoint", "n_bar", "chi2_stat", "threshold",
               "covered")
V_FIELDS = ("replication", "policy", "checkpoint", "n_bar", "v_ipw", "v_dm", "v_dr",
            "sigma_v", "ci_lower", "ci_upper", "v_star", "covered")
COVERAGE_SUMMARY_FIELDS = ("policy", "checkpoint", "coverage", "wilson_lo", "wilson_hi",
                           "covered", "replications")
MOVIELENS_FIELDS = ("model", "replication", "policy", "t", "n_units", "avg_rating",
                    "cum_avg_rating")
MOVIELENS_SUMMARY_FIELDS = ("model", "policy", "mean_final_cum_avg", "se_final_cum_avg",
                            "replications")


@dataclass
class ExperimentResult:
    kind: str
    fields: tuple
    rows: list
    summary_fields: tuple
    summary: list
    extra: dict = field(default_factory=dict)
    checks: dict = field(default_factory=dict)
    config_hash: str = ""

    @property
    def passed(self) -> bool:
        return all(self.checks.values())


# ---------------------------------------------------------------------------
# provenance and output


def _jsonable(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    return str(obj)


def config_hash(cfg: ExperimentConfig) -> str:
    """SHA-256 over every setting that can change results (not workers or output_dir)."""
    d = dataclasses.asdict(cfg)
    d.pop("workers", None)
    d.pop("output_dir", None)
    blob = json.dumps(d, sort_keys=True, default=_jsonable)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def _cell(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def csv_text(fields: Sequence[str], rows: Sequence[dict], digest: str) -> str:
    buf = io.StringIO()
    buf.write(f"# config_sha256={digest}\n")
    wr = csv.writer(buf, lineterminator="\r\n")
    wr.writerow(fields)
    for row in rows:
        wr.writerow([_cell(row[f]) for f in fields])
    return buf.getvalue()


def write_csv(path, fields, rows, digest) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(csv_text(fields, rows, digest))
    return path


def write_gnuplot(path, fields, rows, key: str, series: str, value: str) -> Path:
    """Whitespace columns file: ``key`` then one column of ``value`` per ``series``."""
    names = sorted({r[series] for r in rows}, key=str)
    keys = sorted({r[key] for r in rows})
    table = {(r[key], r[series]): r[value] for r in rows}
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("# " + " ".join([key, *[str(n) for n in names]]) + "\n")
        for k in keys:
            cells = [_cell(table.get((k, n), float("nan"))) for n in names]
            fh.write(" ".join([_cell(k), *cells]) + "\n")
    return path


def write_result(result: ExperimentResult, out_dir, gnuplot: bool = False) -> list:
    out = Path(out_dir)
    stem = result.kind
    paths = [
        write_csv(out / f"{stem}.csv", result.fields, result.rows, result.config_hash),
        write_csv(out / f"{stem}_summary.csv", result.summary_fields, result.summary,
                  result.config_hash),
    ]
    for name, (fields, rows) in sorted(result.extra.items()):
        paths.append(write_csv(out / f"{stem}_{name}.csv", fields, rows, result.config_hash))
    if gnuplot and result.summary:
        key, series, value = _GNUPLOT_COLUMNS[result.kind]
        paths.append(write_gnuplot(out / f"{stem}_summary.dat", result.summary_fields,
                                   result.summary, key, series, value))
    return paths


_GNUPLOT_COLUMNS = {
    "regret": ("checkpoint", "policy", "mean_avg_regret"),
    "coverage_beta": ("checkpoint", "policy", "coverage"),
    "coverage_v": ("checkpoint", "policy", "coverage"),
    "movielens": ("model", "policy", "mean_final_cum_avg"),
}


# ---------------------------------------------------------------------------
# shared helpers


def replication_streams(master_seed: int, rep: int):
    return (np.random.default_rng([master_seed, rep, 0]),
            np.random.default_rng([master_seed, rep, 1]))


def resolve_policy(pc: PolicyConfig, sigma_mode: str, env_sigma: float,
                   known_sigma: bool = True) -> PolicyConfig:
    """Fill in the policy's noise level: the true one, or leave it to the plug-in estimate."""
    if pc.sigma is None and sigma_mode == "known" and known_sigma and env_sigma > 0:
        return replace(pc, sigma=env_sigma)
    return pc


def wilson_band(successes: int, n: int, level: float = 0.95) -> tuple:
    ci = stats.binomtest(int(successes), int(n)).proportion_ci(level, method="wilson")
    return float(ci.low), float(ci.high)


def _map(fn: Callable, jobs: list, workers: int) -> list:
    if workers <= 1 or len(jobs) <= 1:
        return [fn(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, jobs))


def _mean_se(values) -> tuple:
    v = np.asarray(values, dtype=float)
    if v.size < 2:
        return float(v.mean()) if v.size else float("nan"), float("nan")
    return float(v.mean()), float(v.std(ddof=1) / math.sqrt(v.size))


# ---------------------------------------------------------------------------
# single-run simulation


@dataclass
class RunTrace:
    """What one policy did in one replication."""

    policy: str
    beta: BetaVector
    actions: list
    regrets: list
    n_units: list
    agent: object
    snapshots: dict = field(default_factory=dict)
    modes: list = field(default_factory=list)
    epsilons: list = field(default_factory=list)


def simulate(env_cfg: EnvironmentConfig, pc: PolicyConfig, master_seed: int, rep: int,
             label: str = "", checkpoints: Sequence[int] = (),
             on_checkpoint: Optional[Callable] = None, beta: Optional[BetaVector] = None,
             horizon: Optional[int] = None) -> RunTrace:
    """Run one policy through one replication of a synthetic environment.

    ``on_checkpoint(agent, env, t)`` is called after each listed round and its
    return value stored under ``t`` in ``snapshots``.
    """
    env_rng, pol_rng = replication_streams(master_seed, rep)
    env = SyntheticEnvironment(env_cfg, env_rng, beta)
    agent = make_agent(pc, env_cfg.d, pol_rng, env.beta)
    trace = RunTrace(label or pc.algorithm, env.beta, [], [], [], agent)
    cps = set(checkpoints)
    for rnd in env.rounds(horizon):
        out = agent.run_round(rnd, env.reward_fn(rnd))
        omega = rnd.interference.sum(axis=0)
        trace.actions.append(out.actions)
        trace.regrets.append(float(unit_regret(omega, rnd.contexts, env.beta, out.actions).sum()))
        trace.n_units.append(rnd.n_units)
        trace.modes.append(out.mode)
        trace.epsilons.append(out.epsilon)
        if rnd.t in cps and on_checkpoint is not None:
            trace.snapshots[rnd.t] = on_checkpoint(agent, env, rnd.t)
    return trace


# ---------------------------------------------------------------------------
# regret


def _regret_job(args) -> list:
    cfg, rep = args
    rows = []
    for label, pc, mode in cfg.policies:
        pc = resolve_policy(pc, mode, cfg.env.sigma, cfg.known_sigma)
        tr = simulate(cfg.env, pc, cfg.master_seed, rep, label)
        cum = np.cumsum(tr.regrets)
        nb = np.cumsum(tr.n_units)
        for c in cfg.checkpoints:
            rows.append({
                "replication": rep, "policy": label, "checkpoint": c,
                "n_bar": int(nb[c - 1]), "cum_regret": float(cum[c - 1]),
                "avg_regret": float(cum[c - 1] / nb[c - 1]),
            })
    return rows


def _check_regret_policies(cfg: ExperimentConfig):
    algos = [pc.algorithm for _, pc, _ in cfg.policies]
    if not any(a in ("EG", "UCB", "TS") for a in algos):
        raise ValueError("regret experiments need at least one interference-aware policy")
    if not any(a.startswith("Classical") for a in algos):
        raise ValueError("regret experiments need at least one classical policy")


def paired_comparisons(rows: list, checkpoint: int, labels: dict) -> list:
    """Paired differences (aware minus classical) of average regret at ``checkpoint``."""
    by = {(r["policy"], r["replication"]): r["avg_regret"]
          for r in rows if r["checkpoint"] == checkpoint}
    out = []
    for aware, classical in sorted(labels.items()):
        reps = sorted(rep for (p, rep) in by if p == aware and (classical, rep) in by)
        if not reps:
            continue
        diff = [by[(aware, r)] - by[(classical, r)] for r in reps]
        m, se = _mean_se(diff)
        out.append({"policy": aware, "baseline": classical, "checkpoint": checkpoint,
                    "mean_diff": m, "se_diff": se,
                    "dominates": bool(m < 0 and (len(diff) < 2 or -m > 2 * se))})
    return out


def counterpart_labels(policies) -> dict:
    """Map each interference-aware label to the label of its classical twin."""
    by_algo = {pc.algorithm: label for label, pc, _ in policies}
    return {by_algo[a]: by_algo["Classical" + a] for a in ("EG", "UCB", "TS")
            if a in by_algo and "Classical" + a in by_algo}


def run_regret(cfg: ExperimentConfig) -> ExperimentResult:
    _check_regret_policies(cfg)
    jobs = [(cfg, rep) for rep in range(cfg.replications)]
    rows = [r for chunk in _map(_regret_job, jobs, cfg.workers) for r in chunk]
    order = {label: k for k, (label, _, _) in enumerate(cfg.policies)}
    rows.sort(key=lambda r: (r["replication"], order[r["policy"]], r["checkpoint"]))
    summary = []
    for label, _, _ in cfg.policies:
        for c in cfg.checkpoints:
            sel = [r for r in rows if r["policy"] == label and r["checkpoint"] == c]
            m, se = _mean_se([r["avg_regret"] for r in sel])
            summary.append({"policy": label, "checkpoint": c, "mean_avg_regret": m,
                            "se_avg_regret": se,
                            "mean_cum_regret": float(np.mean([r["cum_regret"] for r in sel])),
                            "replications": len(sel)})
    paired = paired_comparisons(rows, cfg.checkpoints[-1], counterpart_labels(cfg.policies))
    if cfg.env.w_spec.kind == "identity":
        # without interference the twins should tie: paired difference within 2 stderr
        checks = {f"{p['policy']}~{p['baseline']}": bool(
            p["mean_diff"] == 0 or abs(p["mean_diff"]) <= 2 * p["se_diff"]) for p in paired}
    else:
        checks = {f"{p['policy']}<{p['baseline']}": p["dominates"] for p in paired}
    return ExperimentResult("regret", REGRET_FIELDS, rows, REGRET_SUMMARY_FIELDS, summary,
                            {"paired": (PAIRED_FIELDS, paired)}, checks, config_hash(cfg))


# ---------------------------------------------------------------------------
# coverage


def _sigma_for_inference(agent, env_sigma: float, known: bool) -> float:
    if known and env_sigma > 0:
        return env_sigma
    try:
        s = est.sigma_hat(agent.state)
    except (est.InsufficientData, est.EstimationNotReady):
        return float("nan")
    return s


def _beta_snapshot(cfg: ExperimentConfig):
    def snap(agent, env, t):
        beta_hat = agent.current_beta()
        if beta_hat is None:
            return None
        sigma = _sigma_for_inference(agent, cfg.env.sigma, cfg.known_sigma)
        try:
            rep = inference_report(agent.state, beta_hat, env.beta, sigma, cfg.alpha_level)
        except est.EstimationNotReady:
            return None
        return {"n_bar": int(agent.state.n_bar), "chi2_stat": rep.chi2_stat,
                "threshold": chi2_quantile(cfg.alpha_level, rep.df), "covered": rep.covered}
    return snap


def _value_snapshot(cfg: ExperimentConfig, v_star: float):
    def snap(agent, env, t):
        log = agent.log
        beta_hat = agent.current_beta()
        if beta_hat is None or len(log) < 2:
            return None
        log.final_beta = beta_hat
        log.final_kappa = agent.tracker.kappa
        sigma = _sigma_for_inference(agent, cfg.env.sigma, cfg.known_sigma)
        vr = value_report(log, sigma, cfg.alpha_level)
        return {"n_bar": len(log), "v_ipw": vr.v_ipw, "v_dm": vr.v_dm, "v_dr": vr.v_dr,
                "sigma_v": vr.sigma_v_hat, "ci_lower": vr.ci_lower, "ci_upper": vr.ci_upper,
                "v_star": v_star, "covered": vr.covers(v_star)}
    return snap


def v_star_for(cfg: ExperimentConfig, beta: BetaVector, rep: Optional[int] = None) -> float:
    """Monte Carlo optimal value, from a stream disjoint from every replication's."""
    key = [cfg.master_seed, 2**31 - 1] if rep is None else [cfg.master_seed, rep, 2]
    v, _ = monte_carlo_v_star(cfg.env, beta, max(cfg.mc_samples, 1000),
                              np.random.default_rng(key))
    return v


def _fixed_beta(env: EnvironmentConfig) -> Optional[BetaVector]:
    if env.beta0 is not None and env.beta1 is not None:
        return env.draw_beta(np.random.default_rng(0))
    return None


def _coverage_job(args) -> list:
    cfg, rep, v_star = args
    rows = []
    for label, pc, mode in cfg.policies:
        pc = resolve_policy(pc, mode, cfg.env.sigma, cfg.known_sigma)
        if cfg.kind == "coverage_beta":
            snap = _beta_snapshot(cfg)
        else:
            if v_star is None:
                env_rng, _ = replication_streams(cfg.master_seed, rep)
                v_star = v_star_for(cfg, cfg.env.draw_beta(env_rng), rep)
            snap = _value_snapshot(cfg, v_star)
        tr = simulate(cfg.env, pc, cfg.master_seed, rep, label, cfg.checkpoints, snap)
        for c in cfg.checkpoints:
            s = tr.snapshots.get(c)
            if s is None:
                continue
            rows.append({"replication": rep, "policy": label, "checkpoint": c, **s})
    return rows


def coverage_summary(rows: list, policies: Sequence[str], checkpoints: Sequence[int]) -> list:
    out = []
    for label in policies:
        for c in checkpoints:
            sel = [bool(r["covered"]) for r in rows if r["policy"] == label and r["checkpoint"] == c]
            n = len(sel)
            k = int(sum(sel))
            lo, hi = wilson_band(k, n) if n else (float("nan"), float("nan"))
            out.append({"policy": label, "checkpoint": c,
                        "coverage": k / n if n else float("nan"), "wilson_lo": lo,
                        "wilson_hi": hi, "covered": k, "replications": n})
    return out


def run_coverage(cfg: ExperimentConfig, band: tuple = (0.90, 0.98)) -> ExperimentResult:
    if cfg.kind not in ("coverage_beta", "coverage_v"):
        raise ValueError("run_coverage needs kind coverage_beta or coverage_v")
    v_star = None
    if cfg.kind == "coverage_v":
        beta = _fixed_beta(cfg.env)
        if beta is not None:
            v_star = v_star_for(cfg, beta)
    jobs = [(cfg, rep, v_star) for rep in range(cfg.replications)]
    rows = [r for chunk in _map(_coverage_job, jobs, cfg.workers) for r in chunk]
    labels = [label for label, _, _ in cfg.policies]
    order = {label: k for k, label in enumerate(labels)}
    rows.sort(key=lambda r: (r["replication"], order[r["policy"]], r["checkpoint"]))
    summary = coverage_summary(rows, labels, cfg.checkpoints)
    final = cfg.checkpoints[-1]
    checks = {s["policy"]: bool(band[0] <= s["coverage"] <= band[1])
              for s in summary if s["checkpoint"] == final}
    fields = BETA_FIELDS if cfg.kind == "coverage_beta" else V_FIELDS
    return ExperimentResult(cfg.kind, fields, rows, COVERAGE_SUMMARY_FIELDS, summary, {},
                            checks, config_hash(cfg))


# ---------------------------------------------------------------------------
# MovieLens


@dataclass
class MovieLensData:
    rounds: list
    events: list
    arm_means: dict
    beta_fit: Optional[BetaVector]
    sigma_fit: float


def prepare_movielens(settings) -> MovieLensData:
    events, users = ml.load_dataset(settings.ratings, settings.users, settings.movies,
                                    strict=settings.strict)
    rounds = ml.build_rounds(events, users, settings.rounds, settings.l_w_target,
                             settings.attributes)
    means, _ = ml.user_arm_means(events, settings.fallback)
    beta = sigma = None
    if "II" in settings.reward_models:
        beta, sigma = ml.fit_reward_model_two(rounds)
    return MovieLensData(rounds, events, means, beta, sigma or 0.0)


def replay_movielens(data: MovieLensData, model: str, pc: PolicyConfig, master_seed: int,
                     rep: int, sigma: Optional[float] = None) -> list:
    """Per-round mean rating of one policy on the replayed rounds."""
    env_rng, pol_rng = replication_streams(master_seed, rep)
    env = ml.MovieLensEnvironment(data.rounds, model, data.arm_means, data.beta_fit,
                                  data.sigma_fit if sigma is None else sigma, env_rng)
    d = data.rounds[0].contexts.shape[1]
    oracle = pc.algorithm == "Oracle"
    agent = None if oracle else make_agent(pc, d, pol_rng)
    out = []
    for mr in data.rounds:
        fn = env.reward_fn(mr)
        if oracle:
            # the oracle for either model plays the per-unit optimal arm directly
            rewards = np.asarray(fn(env.oracle_actions(mr)), dtype=float)
        else:
            rewards = agent.run_round(mr.as_round(), fn).rewards
        out.append(float(rewards.mean()))
    return out


def _movielens_job(args) -> list:
    cfg, data, rep = args
    rows = []
    for model in cfg.movielens.reward_models:
        for label, pc, mode in cfg.policies:
            sigma = data.sigma_fit if model == "II" else 0.0
            pc = resolve_policy(pc, mode, sigma, cfg.known_sigma)
            series = replay_movielens(data, model, pc, cfg.master_seed, rep)
            sizes = [len(r.user_ids) for r in data.rounds]
            total = 0.0
            units = 0
            for mr, avg, n in zip(data.rounds, series, sizes):
                total += avg * n
                units += n
                rows.append({"model": model, "replication": rep, "policy": label, "t": mr.t,
                             "n_units": n, "avg_rating": avg, "cum_avg_rating": total / units})
    return rows


def run_movielens(cfg: ExperimentConfig, data: Optional[MovieLensData] = None) -> ExperimentResult:
    data = prepare_movielens(cfg.movielens) if data is None else data
    policies = list(cfg.policies)
    if not any(pc.algorithm == "Oracle" for _, pc, _ in policies):
        policies.append(("Oracle", PolicyConfig("Oracle"), "known"))
    cfg = replace(cfg, policies=policies)
    jobs = [(cfg, data, rep) for rep in range(cfg.replications)]
    rows = [r for chunk in _map(_movielens_job, jobs, cfg.workers) for r in chunk]
    order = {label: k for k, (label, _, _) in enumerate(policies)}
    models = {m: k for k, m in enumerate(cfg.movielens.reward_models)}
    rows.sort(key=lambda r: (models[r["model"]], r["replication"], order[r["policy"]], r["t"]))
    last = data.rounds[-1].t
    summary = []
    finals = {}
    for model in cfg.movielens.reward_models:
        for label, _, _ in policies:
            vals = [r["cum_avg_rating"] for r in rows
                    if r["model"] == model and r["policy"] == label and r["t"] == last]
            finals[(model, label)] = vals
            m, se = _mean_se(vals)
            summary.append({"model": model, "policy": label, "mean_final_cum_avg": m,
                            "se_final_cum_avg": se, "replications": len(vals)})
    checks = {}
    for aware, classical in counterpart_labels(policies).items():
        if "II" in cfg.movielens.reward_models:
            diff = np.subtract(finals[("II", aware)], finals[("II", classical)])
            checks[f"II:{aware}>{classical}"] = bool(diff.mean() > 0)
    return ExperimentResult("movielens", MOVIELENS_FIELDS, rows, MOVIELENS_SUMMARY_FIELDS,
                            summary, {}, checks, config_hash(cfg))


RUNNERS = {"regret": run_regret, "coverage_beta": run_coverage, "coverage_v": run_coverage,
           "movielens": run_movielens}


def run_experiment(cfg: ExperimentConfig) -> ExperimentResult:
    return RUNNERS[cfg.kind](cfg)
