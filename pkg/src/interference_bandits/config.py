"""Experiment configuration files.

INI-style text, one ``[section]`` per group, ``key = value`` lines; keys are
referred to as ``section.key`` in messages and docs. Policy sections are
named ``[policy.<label>]``. See the README for the full key reference.
"""
from __future__ import annotations

import configparser
import re
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .environment import PRESETS, ContextSpec, EnvironmentConfig, InterferenceSpec
from .estimator import ClippingSchedule
from .policies import PolicyConfig

KINDS = ("regret", "coverage_beta", "coverage_v", "movielens")

EXPERIMENT_KEYS = {"kind", "replications", "checkpoints", "alpha_level", "master_seed",
                   "output_dir", "mc_samples", "workers", "known_sigma"}
ENV_KEYS = {"preset", "horizon", "poisson_lambda", "contexts", "interference", "beta0", "beta1",
            "beta0_range", "beta1_range", "sigma", "seed"}
POLICY_KEYS = {"algorithm", "t0", "alpha", "v", "eg_c", "eg_constant", "clip_c",
               "clip_exponent", "sigma", "prior_scale"}
MOVIELENS_KEYS = {"ratings", "users", "movies", "rounds", "reward_models", "l_w_target",
                  "attributes", "fallback", "strict"}


class ConfigError(ValueError):
    pass


@dataclass
class MovieLensSettings:
    ratings: str = ""
    users: str = ""
    movies: Optional[str] = None
    rounds: int = 200
    reward_models: tuple = ("I", "II")
    l_w_target: float = 5.0
    attributes: tuple = ("gender", "occupation", "age")
    fallback: str = "global"
    strict: bool = False


@dataclass
class ExperimentConfig:
    kind: str
    env: Optional[EnvironmentConfig] = None
    policies: list = field(default_factory=list)
    replications: int = 20
    checkpoints: tuple = ()
    alpha_level: float = 0.05
    output_dir: str = "results"
    master_seed: int = 0
    mc_samples: int = 1_000_000
    workers: int = 1
    known_sigma: bool = True
    movielens: Optional[MovieLensSettings] = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"experiment.kind must be one of {KINDS}")
        if self.replications < 1:
            raise ConfigError("experiment.replications must be >= 1")
        cps = tuple(int(c) for c in self.checkpoints)
        if list(cps) != sorted(cps):
            raise ConfigError("experiment.checkpoints must be sorted ascending")
        horizon = self.horizon
        if cps and horizon is not None and cps[-1] > horizon:
            raise ConfigError("experiment.checkpoints must not exceed the horizon")
        if not cps and horizon is not None:
            cps = (horizon,)
        self.checkpoints = cps
        if not 0 < self.alpha_level <= 1:
            raise ConfigError("experiment.alpha_level must lie in (0, 1]")
        if self.kind == "movielens" and self.movielens is None:
            raise ConfigError("movielens experiments need a [movielens] section")
        if self.kind != "movielens" and self.env is None:
            raise ConfigError("an [environment] section is required")

    @property
    def horizon(self) -> Optional[int]:
        if self.kind == "movielens":
            return self.movielens.rounds if self.movielens else None
        return self.env.horizon if self.env else None


# ---------------------------------------------------------------------------
# value parsers

_CALL = re.compile(r"^\s*(\w+)\s*\((.*)\)\s*$")


def parse_floats(text: str) -> tuple:
    try:
        return tuple(float(v) for v in text.replace(";", ",").split(",") if v.strip())
    except ValueError as exc:
        raise ConfigError(f"expected numbers, got {text!r}") from exc


def parse_context_spec(text: str) -> ContextSpec:
    m = _CALL.match(text)
    if not m:
        raise ConfigError(f"bad context law {text!r}; use constant(c), normal(m, var), uniform(a, b)")
    kind, args = m.group(1).lower(), parse_floats(m.group(2))
    try:
        return ContextSpec(kind, *args)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad context law {text!r}: {exc}") from exc


def parse_contexts(text: str) -> tuple:
    parts = re.findall(r"\w+\s*\([^)]*\)", text)
    if not parts:
        raise ConfigError("environment.contexts is empty")
    return tuple(parse_context_spec(p) for p in parts)


def parse_interference(text: str) -> InterferenceSpec:
    if text.strip().lower() == "identity":
        return InterferenceSpec("identity")
    m = _CALL.match(text)
    if not m or m.group(1).lower() != "mixture":
        raise ConfigError(f"bad interference spec {text!r}")
    args = [a.strip() for a in m.group(2).split(",")]
    symmetric = True
    if args and args[-1].lower() in ("symmetric", "asymmetric"):
        symmetric = args.pop().lower() == "symmetric"
    bounds = parse_floats(",".join(args))
    if len(bounds) != 4:
        raise ConfigError("mixture needs neg_lo, neg_hi, pos_lo, pos_hi")
    try:
        return InterferenceSpec("mixture", *bounds, symmetric=symmetric)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"expected a boolean, got {text!r}")


# ---------------------------------------------------------------------------
# sections


def env_from_section(sec) -> EnvironmentConfig:
    preset = sec.get("preset")
    kw = {}
    if "horizon" in sec:
        kw["horizon"] = int(sec["horizon"])
    if "poisson_lambda" in sec:
        kw["poisson_lambda"] = float(sec["poisson_lambda"])
    if "contexts" in sec:
        kw["contexts"] = parse_contexts(sec["contexts"])
    if "interference" in sec:
        kw["w_spec"] = parse_interference(sec["interference"])
    for key in ("beta0", "beta1", "beta0_range", "beta1_range"):
        if key in sec:
            kw[key] = parse_floats(sec[key])
    if "beta0" in kw or "beta1" in kw:
        kw.setdefault("beta0_range", None)
        kw.setdefault("beta1_range", None)
    if "sigma" in sec:
        kw["sigma"] = float(sec["sigma"])
    if "seed" in sec:
        kw["seed"] = int(sec["seed"])
    try:
        if preset:
            if preset not in PRESETS:
                raise ConfigError(f"unknown environment preset {preset!r}")
            base = PRESETS[preset]()
            if "beta0_range" in kw and "beta0" not in kw:
                kw.update(beta0=None, beta1=None)
            return replace(base, **kw)
        return EnvironmentConfig(**kw)
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"invalid environment: {exc}") from exc


def policy_from_section(sec, d: int) -> PolicyConfig:
    kw = {"algorithm": sec.get("algorithm", "EG")}
    for key, typ in (("t0", int), ("alpha", float), ("v", float), ("eg_c", float),
                     ("eg_constant", float)):
        if key in sec:
            kw[key] = typ(sec[key])
    if "clip_c" in sec or "clip_exponent" in sec:
        kw["clipping"] = ClippingSchedule(float(sec.get("clip_c", 0.1)),
                                          float(sec.get("clip_exponent", 0.49)))
    if "sigma" in sec and sec["sigma"].strip() not in ("known", "estimate"):
        kw["sigma"] = float(sec["sigma"])
    if "prior_scale" in sec:
        kw["prior_cov"] = float(sec["prior_scale"]) * np.eye(2 * d)
    try:
        return PolicyConfig(**kw)
    except ValueError as exc:
        raise ConfigError(f"invalid policy: {exc}") from exc


def policy_sigma_mode(sec) -> str:
    return sec.get("sigma", "known").strip()


def load_config(text: str, strict: bool = False) -> tuple:
    """Parse config text into ``(ExperimentConfig, unknown_keys)``.

    With ``strict=True`` unknown sections or keys raise :class:`ConfigError`.
    """
    parser = configparser.ConfigParser(inline_comment_prefixes=("#",), interpolation=None)
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from exc
    unknown = []

    def check(section, allowed):
        for key in parser[section]:
            if key not in allowed:
                unknown.append(f"{section}.{key}")

    for section in parser.sections():
        if section == "experiment":
            check(section, EXPERIMENT_KEYS)
        elif section == "environment":
            check(section, ENV_KEYS)
        elif section.startswith("policy."):
            check(section, POLICY_KEYS)
        elif section == "movielens":
            check(section, MOVIELENS_KEYS)
        else:
            unknown.append(section)
    if strict and unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    if "experiment" not in parser:
        raise ConfigError("missing [experiment] section")
    ex = parser["experiment"]
    kind = ex.get("kind", "").strip()
    env = env_from_section(parser["environment"]) if "environment" in parser else None
    if env is None and kind in KINDS and kind != "movielens":
        env = default_environment(kind)
    d = env.d if env else 7
    policies = []
    for section in parser.sections():
        if section.startswith("policy."):
            pc = policy_from_section(parser[section], d)
            policies.append((section.split(".", 1)[1], pc, policy_sigma_mode(parser[section])))
    ml = None
    if "movielens" in parser:
        m = parser["movielens"]
        ml = MovieLensSettings(
            ratings=m.get("ratings", ""),
            users=m.get("users", ""),
            movies=m.get("movies") or None,
            rounds=int(m.get("rounds", 200)),
            reward_models=tuple(s.strip() for s in m.get("reward_models", "I, II").split(",")),
            l_w_target=float(m.get("l_w_target", 5.0)),
            attributes=tuple(s.strip() for s in
                             m.get("attributes", "gender, occupation, age").split(",")),
            fallback=m.get("fallback", "global").strip(),
            strict=_bool(m.get("strict", "false")),
        )
        bad = set(ml.reward_models) - {"I", "II"}
        if bad:
            raise ConfigError(f"movielens.reward_models: unknown models {sorted(bad)}")
    try:
        cfg = ExperimentConfig(
            kind=kind,
            env=env,
            policies=policies or default_policies(kind),
            replications=int(ex.get("replications", 20)),
            checkpoints=tuple(int(c) for c in parse_floats(ex.get("checkpoints", ""))),
            alpha_level=float(ex.get("alpha_level", 0.05)),
            output_dir=ex.get("output_dir", "results"),
            master_seed=int(ex.get("master_seed", 0)),
            mc_samples=int(float(ex.get("mc_samples", 1_000_000))),
            workers=int(ex.get("workers", 1)),
            known_sigma=_bool(ex.get("known_sigma", "true")),
            movielens=ml,
        )
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from exc
    return cfg, unknown


def default_environment(kind: str) -> Optional[EnvironmentConfig]:
    return {
        "regret": PRESETS["a2_regret"],
        "coverage_beta": PRESETS["a1_beta"],
        "coverage_v": PRESETS["a1_value"],
    }.get(kind, lambda: None)()


COVERAGE_EG_EPSILON = 0.05


def default_policies(kind: str) -> list:
    """``(label, PolicyConfig, sigma_mode)`` triples used when a config lists none."""
    if kind in ("coverage_beta", "coverage_v"):
        return [
            ("EG", PolicyConfig("EG", eg_constant=COVERAGE_EG_EPSILON), "known"),
            ("UCB", PolicyConfig("UCB"), "known"),
            ("TS", PolicyConfig("TS"), "known"),
        ]
    names = ("EG", "UCB", "TS", "ClassicalEG", "ClassicalUCB", "ClassicalTS")
    return [(n, PolicyConfig(n), "known") for n in names]


def default_config(kind: str) -> ExperimentConfig:
    env = default_environment(kind)
    if kind == "movielens":
        raise ConfigError("movielens needs dataset paths; pass --config")
    reps = 200 if kind.startswith("coverage") else 20
    horizon = env.horizon
    cps = tuple(sorted({horizon // 4, horizon // 2, horizon}))
    return ExperimentConfig(kind, env, default_policies(kind), reps, cps)


def apply_preset(cfg: ExperimentConfig, preset: str) -> ExperimentConfig:
    """``desk``: B=200 / 20 seeds, T=200 coverage; ``paper``: B=1000 / S=100, T=500 coverage."""
    if preset not in ("desk", "paper"):
        raise ConfigError(f"unknown preset {preset!r}")
    if cfg.kind.startswith("coverage"):
        reps, horizon = (200, 200) if preset == "desk" else (1000, 500)
        env = replace(cfg.env, horizon=horizon)
        cps = tuple(sorted({horizon // 4, horizon // 2, horizon}))
        return replace(cfg, env=env, replications=reps, checkpoints=cps)
    if cfg.kind == "regret":
        reps = 20 if preset == "desk" else 100
        return replace(cfg, replications=reps)
    return cfg
