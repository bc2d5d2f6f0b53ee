"""Write a small synthetic dataset in the MovieLens 1M ``::`` layout.

200 users, 60 movies, about 3000 ratings. Ratings follow a user-level
linear taste model so the genre choice matters and differs across users.
Ratings also carry a peer effect: events are cut into the same time-ordered
rounds the loader builds, and each rating shifts with the genres watched by
similar users (shared gender, occupation or age decade) in that round.

    python3 scripts/make_movielens_fixture.py tests/fixtures/movielens
"""
import argparse
from pathlib import Path

import numpy as np

AGES = (1, 18, 25, 35, 45, 50, 56)
OCCUPATIONS = tuple(range(21))
GENRES = ("Comedy", "Drama", "Comedy|Romance", "Drama|Comedy", "Action", "Romance|Drama")


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("out", type=Path)
    ap.add_argument("--users", type=int, default=200)
    ap.add_argument("--movies", type=int, default=60)
    ap.add_argument("--ratings", type=int, default=3000)
    ap.add_argument("--rounds", type=int, default=250)
    ap.add_argument("--peer", type=float, default=0.15, help="peer-effect strength")
    ap.add_argument("--seed", type=int, default=7)
    args = ap.parse_args()
    rng = np.random.default_rng(args.seed)
    args.out.mkdir(parents=True, exist_ok=True)

    occ_p = rng.dirichlet(np.full(len(OCCUPATIONS), 0.6))
    users = []
    for uid in range(1, args.users + 1):
        gender = "F" if rng.random() < 0.45 else "M"
        age = int(rng.choice(AGES))
        occ = int(rng.choice(OCCUPATIONS, p=occ_p))
        users.append((uid, gender, age, occ, f"{rng.integers(10000, 99999)}"))
    with open(args.out / "users.dat", "w", encoding="latin-1") as fh:
        for u in users:
            fh.write("::".join(map(str, u)) + "\n")

    movies = []
    for mid in range(1, args.movies + 1):
        movies.append((mid, f"Movie {mid} ({1980 + mid % 20})", GENRES[mid % len(GENRES)]))
    with open(args.out / "movies.dat", "w", encoding="latin-1") as fh:
        for m in movies:
            fh.write("::".join(map(str, m)) + "\n")

    # comedy preference rises for women and younger users; drama for older users
    taste = {}
    for uid, gender, age, occ, _ in users:
        comedy = 0.6 * (gender == "F") - 0.025 * (age - 30) + 0.2 * (occ % 3 - 1)
        taste[uid] = (3.4 + 0.01 * age, 3.4 + comedy + 0.3 * rng.standard_normal())
    base_ts = 978_300_000
    n = args.ratings
    uid = rng.integers(1, args.users + 1, size=n)
    mid = rng.integers(1, args.movies + 1, size=n)
    ts = base_ts + rng.integers(0, 5_000_000, size=n)
    noise = 0.8 * rng.standard_normal(n)
    first = [GENRES[m % len(GENRES)].split("|")[0] for m in mid]
    arm = np.array([{"Comedy": 1, "Drama": 0}.get(g, -1) for g in first])
    own = np.array([taste[u][1] if a == 1 else taste[u][0] for u, a in zip(uid, arm)])

    # peer effect within time-ordered rounds of the retained (Comedy/Drama) events
    peer = np.zeros(n)
    kept = np.flatnonzero(arm >= 0)
    order = kept[np.lexsort((np.arange(kept.size), ts[kept]))]
    info = {u[0]: (u[1], u[2] // 10, u[3]) for u in users}
    for chunk in np.array_split(order, args.rounds):
        for i in chunk:
            for j in chunk:
                if i != j:
                    overlap = sum(p == q for p, q in zip(info[uid[i]], info[uid[j]])) / 3
                    peer[i] += overlap * (1.0 if arm[j] == 1 else -1.0)
    rating = np.clip(np.rint(own + args.peer * peer + noise), 1, 5).astype(int)
    with open(args.out / "ratings.dat", "w", encoding="latin-1") as fh:
        for k in range(n):
            fh.write(f"{uid[k]}::{mid[k]}::{rating[k]}::{ts[k]}\n")

if __name__ == "__main__":
    main()
