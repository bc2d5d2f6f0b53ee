"""MovieLens-1M style benchmark: ingestion, rounds, Jaccard interference, reward models.

Arms are genres (1 = Comedy, 0 = Drama). Each rating event becomes a unit;
a user rating several times within a round shows up as several units with
identical features, linked by interference weight 1.

Input formats
-------------
``::``-separated MovieLens 1M files (``ratings.dat`` needs ``movies.dat``
for genres) or CSV with headers ``user_id,timestamp,genre,rating`` and
``user_id,gender,age,occupation,zip``.
"""
from __future__ import annotations

import csv
import logging
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy import linalg

from .domain import BetaVector, Round, transform_covariates
from .environment import realize

log = logging.getLogger(__name__)

GENRE_ARMS = {"Comedy": 1, "Drama": 0}
FEATURE_NAMES = ("intercept", "age", "gender", "occ_1", "occ_2", "occ_3", "occ_4")
N_OCCUPATION_DUMMIES = 4
DEFAULT_ATTRIBUTES = ("gender", "occupation", "age")


class MalformedLineError(ValueError):
    pass


class RankDeficientError(np.linalg.LinAlgError):
    def __init__(self, columns):
        self.columns = list(columns)
        super().__init__(f"design is rank deficient; collinear columns: {', '.join(self.columns)}")


@dataclass(frozen=True)
class RatingEvent:
    user_id: int
    timestamp: int
    genre: str
    rating: int

    @property
    def arm(self) -> int:
        return GENRE_ARMS[self.genre]


@dataclass(frozen=True)
class UserFeatures:
    user_id: int
    gender: str
    age: int
    occupation: int
    feature: np.ndarray = field(compare=False)

    def attributes(self, which: Sequence[str] = DEFAULT_ATTRIBUTES) -> tuple:
        values = {"gender": self.gender, "occupation": self.occupation, "age": self.age // 10}
        return tuple((k, values[k]) for k in which)


@dataclass
class LoadStats:
    skipped: int = 0
    filtered: int = 0


def _split(line: str) -> list:
    return line.rstrip("\r\n").split("::")


def _is_ml_format(path: Path) -> bool:
    with open(path, encoding="latin-1") as fh:
        first = fh.readline()
    return "::" in first


def _read_movies(path: Path, strict: bool, stats: LoadStats) -> dict:
    genres = {}
    with open(path, encoding="latin-1") as fh:
        for line in fh:
            if not line.strip():
                continue
            parts = _split(line)
            try:
                genres[int(parts[0])] = parts[2].split("|")
            except (IndexError, ValueError):
                if strict:
                    raise MalformedLineError(f"bad movie line: {line!r}")
                stats.skipped += 1
    return genres


def _arm_genre(genres: Sequence[str]) -> Optional[str]:
    # first of Comedy / Drama in listed order wins
    for g in genres:
        if g in GENRE_ARMS:
            return g
    return None


def _read_events(ratings_path: Path, movies_path: Optional[Path], strict: bool,
                 stats: LoadStats) -> list:
    events = []
    if _is_ml_format(ratings_path):
        if movies_path is None:
            raise ValueError("'::' ratings need a movies file for genres")
        movies = _read_movies(movies_path, strict, stats)
        with open(ratings_path, encoding="latin-1") as fh:
            for line in fh:
                if not line.strip():
                    continue
                try:
                    uid, mid, rating, ts = _split(line)
                    uid, mid, rating, ts = int(uid), int(mid), int(rating), int(ts)
                    genre = _arm_genre(movies[mid])
                except (ValueError, KeyError):
                    if strict:
                        raise MalformedLineError(f"bad rating line: {line!r}")
                    stats.skipped += 1
                    continue
                if genre is None:
                    stats.filtered += 1
                    continue
                events.append(RatingEvent(uid, ts, genre, rating))
        return events

    with open(ratings_path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            try:
                ev = (int(row["user_id"]), int(row["timestamp"]), row["genre"].strip(),
                      int(row["rating"]))
            except (KeyError, TypeError, ValueError):
                if strict:
                    raise MalformedLineError(f"bad rating row: {row!r}")
                stats.skipped += 1
                continue
            genre = _arm_genre(ev[2].split("|"))
            if genre is None:
                stats.filtered += 1
                continue
            events.append(RatingEvent(ev[0], ev[1], genre, ev[3]))
    return events


def _read_users(users_path: Path, strict: bool, stats: LoadStats) -> dict:
    raw = {}
    if _is_ml_format(users_path):
        with open(users_path, encoding="latin-1") as fh:
            rows = [_split(line) for line in fh if line.strip()]
        keyed = [dict(zip(("user_id", "gender", "age", "occupation", "zip"), r)) for r in rows]
    else:
        with open(users_path, newline="", encoding="utf-8") as fh:
            keyed = list(csv.DictReader(fh))
    for row in keyed:
        try:
            uid = int(row["user_id"])
            gender = row["gender"].strip().upper()
            if gender not in ("F", "M"):
                raise ValueError(gender)
            raw[uid] = (gender, int(row["age"]), int(row["occupation"]))
        except (KeyError, TypeError, ValueError, AttributeError):
            if strict:
                raise MalformedLineError(f"bad user row: {row!r}")
            stats.skipped += 1
    return raw


def top_occupations(occupations: Sequence[int], k: int = N_OCCUPATION_DUMMIES) -> tuple:
    """Most frequent occupation codes, ties broken by the smaller code."""
    counts = Counter(occupations)
    return tuple(sorted(counts, key=lambda o: (-counts[o], o))[:k])


def user_feature(gender: str, age: int, occupation: int, top: Sequence[int]) -> np.ndarray:
    dummies = [1.0 if occupation == o else 0.0 for o in top]
    dummies += [0.0] * (N_OCCUPATION_DUMMIES - len(dummies))
    return np.array([1.0, float(age), 1.0 if gender == "F" else 0.0, *dummies])


def load_dataset(ratings_path, users_path, movies_path=None, strict: bool = False,
                 stats: Optional[LoadStats] = None):
    """Parse ratings and users; keep Comedy/Drama events only.

    Returns ``(events, users)`` where ``users`` maps user id to
    :class:`UserFeatures` for every user with a retained event. Malformed
    lines raise in strict mode and are counted in ``stats`` otherwise.
    """
    stats = LoadStats() if stats is None else stats
    ratings_path, users_path = Path(ratings_path), Path(users_path)
    movies_path = Path(movies_path) if movies_path is not None else None
    for p in (ratings_path, users_path, movies_path):
        if p is not None and not p.exists():
            raise FileNotFoundError(p)
    events = _read_events(ratings_path, movies_path, strict, stats)
    raw_users = _read_users(users_path, strict, stats)
    known = [e for e in events if e.user_id in raw_users]
    stats.skipped += len(events) - len(known)
    retained_ids = sorted({e.user_id for e in known})
    top = top_occupations([raw_users[u][2] for u in retained_ids])
    users = {
        u: UserFeatures(u, *raw_users[u], feature=user_feature(*raw_users[u], top))
        for u in retained_ids
    }
    if stats.skipped:
        log.warning("skipped %d malformed or unmatched lines", stats.skipped)
    return known, users


def partition_rounds(events: Sequence[RatingEvent], t_rounds: int) -> list:
    """Sort by timestamp and cut into ``t_rounds`` contiguous groups of near-equal size."""
    if t_rounds < 1:
        raise ValueError("t_rounds must be >= 1")
    if len(events) < t_rounds:
        raise ValueError(f"{len(events)} events cannot fill {t_rounds} rounds")
    order = sorted(range(len(events)), key=lambda k: (events[k].timestamp, k))
    return [[events[k] for k in chunk] for chunk in np.array_split(np.array(order), t_rounds)]


def jaccard_similarity(a, b) -> float:
    a, b = set(a), set(b)
    union = a | b
    return len(a & b) / len(union) if union else 0.0


def jaccard_interference(round_users: Sequence[UserFeatures], l_w_target: float = 5.0,
                         attributes: Sequence[str] = DEFAULT_ATTRIBUTES) -> np.ndarray:
    """Symmetric interference from attribute-set Jaccard similarity.

    Units of the same user are linked with weight 1. Other pairs are scaled
    by ``min(s_i, s_j)``, where ``s_i`` shrinks row ``i``'s remaining
    off-diagonal mass so its absolute row sum stays within ``l_w_target``.
    """
    n = len(round_users)
    if n == 0:
        raise ValueError("empty round")
    k = len(attributes)
    attrs = [u.attributes(attributes) for u in round_users]
    matches = np.zeros((n, n))
    for col in range(k):
        codes: dict = {}
        vals = np.array([codes.setdefault(a[col], len(codes)) for a in attrs])
        matches += vals[:, None] == vals[None, :]
    raw = matches / (2 * k - matches)  # |S_i & S_j| / |S_i | S_j| for one value per attribute
    ids = np.array([u.user_id for u in round_users])
    same = ids[:, None] == ids[None, :]
    np.fill_diagonal(same, False)
    other = raw * ~same
    np.fill_diagonal(other, 0.0)
    budget = np.maximum(l_w_target - 1.0 - same.sum(axis=1), 0.0)
    mass = other.sum(axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        s = np.where(mass > budget, budget / np.where(mass > 0, mass, 1.0), 1.0)
    w = other * np.minimum(s[:, None], s[None, :]) + same
    np.fill_diagonal(w, 1.0)
    return w


def user_arm_means(events: Sequence[RatingEvent], fallback: str = "global"):
    """Per-user average rating under each arm.

    Returns ``(means, n_fallback)`` with ``means[user_id] = (mean_drama, mean_comedy)``.
    Missing arms use the global arm mean (``fallback="global"``) or the
    user's mean over both arms (``fallback="user"``).
    """
    sums: dict = {}
    for e in events:
        s = sums.setdefault(e.user_id, [0.0, 0, 0.0, 0])
        s[2 * e.arm] += e.rating
        s[2 * e.arm + 1] += 1
    tot = [0.0, 0, 0.0, 0]
    for s in sums.values():
        for k in range(4):
            tot[k] += s[k]
    global_mean = [tot[0] / tot[1] if tot[1] else 0.0, tot[2] / tot[3] if tot[3] else 0.0]
    means = {}
    n_fallback = 0
    for uid, s in sums.items():
        pair = []
        for a in (0, 1):
            if s[2 * a + 1]:
                pair.append(s[2 * a] / s[2 * a + 1])
                continue
            n_fallback += 1
            if fallback == "user":
                pair.append((s[0] + s[2]) / (s[1] + s[3]))
            else:
                pair.append(global_mean[a])
        means[uid] = tuple(pair)
    return means, n_fallback


def reward_model_one(interference: np.ndarray, actions, unit_means: np.ndarray) -> np.ndarray:
    """``R_i = sum_j W_ij Rbar_j(a_j)``; ``unit_means`` is ``(n, 2)`` per-unit arm means."""
    a = np.asarray(actions, dtype=int)
    chosen = unit_means[np.arange(a.size), a]
    return interference @ chosen


@dataclass
class MovieLensRound:
    t: int
    user_ids: np.ndarray
    contexts: np.ndarray
    interference: np.ndarray
    logged_arms: np.ndarray
    ratings: np.ndarray

    def as_round(self) -> Round:
        return Round(self.t, self.contexts, self.interference)


def build_rounds(events, users, t_rounds: int = 200, l_w_target: float = 5.0,
                 attributes: Sequence[str] = DEFAULT_ATTRIBUTES) -> list:
    out = []
    for t, group in enumerate(partition_rounds(events, t_rounds), start=1):
        us = [users[e.user_id] for e in group]
        out.append(MovieLensRound(
            t,
            np.array([e.user_id for e in group]),
            np.vstack([u.feature for u in us]),
            jaccard_interference(us, l_w_target, attributes),
            np.array([e.arm for e in group], dtype=np.int8),
            np.array([e.rating for e in group], dtype=float),
        ))
    return out


def _column_names(d: int) -> list:
    names = FEATURE_NAMES if d == len(FEATURE_NAMES) else [f"x{k + 1}" for k in range(d)]
    return [f"arm{a}:{n}" for a in (0, 1) for n in names]


def fit_reward_model_two(rounds: Sequence) -> tuple:
    """Batch OLS of logged ratings on transformed covariates built from the logged arms.

    ``rounds`` holds objects with ``contexts``, ``interference``,
    ``logged_arms`` and ``ratings``. Returns ``(beta_fit, sigma_fit)``.
    """
    xt = np.vstack([transform_covariates(r.contexts, r.interference, r.logged_arms)
                    for r in rounds])
    y = np.concatenate([r.ratings for r in rounds])
    n, k = xt.shape
    if n < k:
        raise RankDeficientError(_column_names(k // 2))
    _, rfac, piv = linalg.qr(xt, mode="economic", pivoting=True)
    diag = np.abs(np.diag(rfac))
    rank = int(np.sum(diag > diag[0] * 1e-10)) if diag.size and diag[0] > 0 else 0
    if rank < k:
        names = _column_names(k // 2)
        raise RankDeficientError([names[j] for j in sorted(piv[rank:])])
    coef, *_ = np.linalg.lstsq(xt, y, rcond=None)
    resid = y - xt @ coef
    sigma = float(np.sqrt(resid @ resid / max(n - k, 1)))
    return BetaVector.from_stacked(coef), sigma


class MovieLensEnvironment:
    """Replays the ingested rounds with model-I or model-II rewards."""

    def __init__(self, rounds: Sequence[MovieLensRound], model: str,
                 arm_means: Optional[dict] = None, beta: Optional[BetaVector] = None,
                 sigma: float = 0.0, rng: Optional[np.random.Generator] = None):
        if model not in ("I", "II"):
            raise ValueError("model must be 'I' or 'II'")
        if model == "I" and arm_means is None:
            raise ValueError("model I needs per-user arm means")
        if model == "II" and beta is None:
            raise ValueError("model II needs fitted coefficients")
        self.rounds = list(rounds)
        self.model = model
        self.arm_means = arm_means
        self.beta = beta
        self.sigma = sigma
        self.rng = rng if rng is not None else np.random.default_rng(0)

    def unit_means(self, mr: MovieLensRound) -> np.ndarray:
        return np.array([self.arm_means[u] for u in mr.user_ids], dtype=float)

    def reward_fn(self, mr: MovieLensRound):
        if self.model == "I":
            means = self.unit_means(mr)
            return lambda actions: reward_model_one(mr.interference, actions, means)
        return lambda actions: realize(mr.contexts, mr.interference, actions, self.beta,
                                       self.sigma, self.rng)

    def oracle_actions(self, mr: MovieLensRound) -> np.ndarray:
        """Per-unit arm maximizing the round's total expected rating."""
        omega = mr.interference.sum(axis=0)
        if self.model == "I":
            m = self.unit_means(mr)
            zeta = omega * (m[:, 1] - m[:, 0])
        else:
            zeta = omega * (mr.contexts @ self.beta.gap)
        return (zeta > 0).astype(np.int8)


ARCHIVE_UNIT_FIELDS = ("t", "i", "user_id", "logged_arm", "rating")


def write_round_archive(prefix, rounds: Sequence[MovieLensRound]) -> tuple:
    """Write ``<prefix>_units.csv`` and ``<prefix>_interference.csv`` (nonzero off-diagonals)."""
    prefix = Path(prefix)
    units_path = prefix.with_name(prefix.name + "_units.csv")
    w_path = prefix.with_name(prefix.name + "_interference.csv")
    d = rounds[0].contexts.shape[1] if rounds else 0
    with open(units_path, "w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh)
        wr.writerow([*ARCHIVE_UNIT_FIELDS, *[f"x{k + 1}" for k in range(d)]])
        for r in rounds:
            for i in range(len(r.user_ids)):
                wr.writerow([r.t, i, int(r.user_ids[i]), int(r.logged_arms[i]),
                             repr(float(r.ratings[i])), *[repr(float(v)) for v in r.contexts[i]]])
    with open(w_path, "w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh)
        wr.writerow(["t", "i", "j", "w"])
        for r in rounds:
            ii, jj = np.nonzero(r.interference)
            for i, j in zip(ii, jj):
                if i != j:
                    wr.writerow([r.t, int(i), int(j), repr(float(r.interference[i, j]))])
    return units_path, w_path


def read_round_archive(prefix) -> list:
    prefix = Path(prefix)
    with open(prefix.with_name(prefix.name + "_units.csv"), newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    with open(prefix.with_name(prefix.name + "_interference.csv"), newline="",
              encoding="utf-8") as fh:
        wrows = list(csv.DictReader(fh))
    xcols = sorted((c for c in rows[0] if c.startswith("x")), key=lambda c: int(c[1:])) if rows else []
    by_t: dict = {}
    for r in rows:
        by_t.setdefault(int(r["t"]), []).append(r)
    out = []
    for t in sorted(by_t):
        rs = sorted(by_t[t], key=lambda r: int(r["i"]))
        n = len(rs)
        w = np.eye(n)
        out.append(MovieLensRound(
            t,
            np.array([int(r["user_id"]) for r in rs]),
            np.array([[float(r[c]) for c in xcols] for r in rs]),
            w,
            np.array([int(r["logged_arm"]) for r in rs], dtype=np.int8),
            np.array([float(r["rating"]) for r in rs]),
        ))
    index = {r.t: r for r in out}
    for r in wrows:
        index[int(r["t"])].interference[int(r["i"]), int(r["j"])] = float(r["w"])
    return out
