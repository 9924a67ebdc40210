"""MovieLens-1M parsing, preprocessing, normalization, folds, and groups.

Input files are the dataset's own ``::``-delimited format (ratings.dat,
users.dat, movies.dat; ISO-8859-1 titles tolerated). Preprocessing keeps
movies tagged with at least one of {Action, Romance, Crime, Musical,
Sci-Fi} and then removes users left with fewer than 50 ratings.
"""

from __future__ import annotations

import csv
import logging
import os
from dataclasses import dataclass

import numpy as np

from .errors import DataError, ParseError
from .fairness import PROTECTED, UNPROTECTED, GroupAssignment

log = logging.getLogger(__name__)

KEPT_GENRES = frozenset({"Action", "Romance", "Crime", "Musical", "Sci-Fi"})
MIN_USER_RATINGS = 50

_GENDER_TO_GROUP = {"F": PROTECTED, "M": UNPROTECTED}


@dataclass(frozen=True)
class Rating:
    user: int
    item: int
    value: float  # raw 1-5 level
    timestamp: int


@dataclass(frozen=True)
class UserInfo:
    gender: str
    age: int
    occupation: int


@dataclass(frozen=True)
class MovieInfo:
    title: str
    genres: frozenset


@dataclass(frozen=True)
class Dataset:
    ratings: tuple
    users: dict
    movies: dict

    def ratings_array(self, indices=None) -> np.ndarray:
        """(n, 3) array of (user, item, raw value) rows."""
        rows = self.ratings if indices is None else [self.ratings[j] for j in indices]
        if not rows:
            return np.zeros((0, 3))
        return np.array([(r.user, r.item, r.value) for r in rows], dtype=float)


@dataclass(frozen=True)
class FoldSplit:
    fold_id: int
    train: tuple
    test: tuple


def _parse_lines(path, n_fields: int, what: str):
    if not os.path.exists(path):
        raise DataError(f"missing {what} file: {path}")
    with open(path, encoding="ISO-8859-1") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n").rstrip("\r")
            if not line:
                continue
            parts = line.split("::")
            if len(parts) != n_fields:
                raise ParseError(
                    f"expected {n_fields} '::'-delimited fields, got {len(parts)}",
                    path=path,
                    line=lineno,
                )
            yield lineno, parts


def parse_movielens(directory) -> Dataset:
    """Parse ratings.dat, users.dat and movies.dat from a directory.

    Ratings referencing unknown users or movies are dropped (count logged).
    """
    users = {}
    for lineno, parts in _parse_lines(os.path.join(directory, "users.dat"), 5, "users"):
        try:
            uid = int(parts[0])
            users[uid] = UserInfo(gender=parts[1], age=int(parts[2]), occupation=int(parts[3]))
        except ValueError as exc:
            raise ParseError(str(exc), path=os.path.join(directory, "users.dat"), line=lineno) from exc

    movies = {}
    for lineno, parts in _parse_lines(os.path.join(directory, "movies.dat"), 3, "movies"):
        try:
            mid = int(parts[0])
        except ValueError as exc:
            raise ParseError(str(exc), path=os.path.join(directory, "movies.dat"), line=lineno) from exc
        genres = frozenset(g for g in parts[2].split("|") if g)
        movies[mid] = MovieInfo(title=parts[1], genres=genres)

    ratings = []
    orphans = 0
    rpath = os.path.join(directory, "ratings.dat")
    for lineno, parts in _parse_lines(rpath, 4, "ratings"):
        try:
            user, item, value, ts = int(parts[0]), int(parts[1]), float(parts[2]), int(parts[3])
        except ValueError as exc:
            raise ParseError(str(exc), path=rpath, line=lineno) from exc
        if not 1 <= value <= 5:
            raise ParseError(f"rating value {value} outside 1-5", path=rpath, line=lineno)
        if user not in users or item not in movies:
            orphans += 1
            continue
        ratings.append(Rating(user=user, item=item, value=value, timestamp=ts))
    if orphans:
        log.warning("dropped %d ratings referencing unknown users/movies", orphans)
    return Dataset(ratings=tuple(ratings), users=users, movies=movies)


def preprocess(ds: Dataset) -> Dataset:
    """Genre filter, then drop users with fewer than 50 remaining ratings.

    Idempotent; the resulting users/movies maps contain only entities still
    referenced by ratings. Counts are logged.
    """
    kept_movies = {m for m, info in ds.movies.items() if info.genres & KEPT_GENRES}
    ratings = [r for r in ds.ratings if r.item in kept_movies]
    counts: dict = {}
    for r in ratings:
        counts[r.user] = counts.get(r.user, 0) + 1
    kept_users = {u for u, c in counts.items() if c >= MIN_USER_RATINGS}
    ratings = tuple(r for r in ratings if r.user in kept_users)
    referenced_movies = {r.item for r in ratings}
    out = Dataset(
        ratings=ratings,
        users={u: ds.users[u] for u in sorted(kept_users)},
        movies={m: ds.movies[m] for m in sorted(referenced_movies)},
    )
    log.info(
        "preprocess: %d ratings, %d users, %d movies",
        len(out.ratings),
        len(out.users),
        len(out.movies),
    )
    return out


def normalize(value):
    """Affine map of the 1-5 rating scale onto [0, 1]."""
    v = np.asarray(value, dtype=float)
    if np.any((v < 1) | (v > 5)) or not np.all(np.isin(v, (1.0, 2.0, 3.0, 4.0, 5.0))):
        raise ValueError("rating values must be in {1, 2, 3, 4, 5}")
    out = (v - 1.0) / 4.0
    return float(out) if np.isscalar(value) else out


def denormalize(value):
    """Inverse of normalize: [0, 1] back onto the 1-5 scale."""
    v = np.asarray(value, dtype=float)
    out = v * 4.0 + 1.0
    return float(out) if np.isscalar(value) else out


def make_folds(ds: Dataset, k: int = 5, seed: int = 42) -> list[FoldSplit]:
    """Shuffle rating indices and partition them into k test sets (sizes +-1)."""
    if k < 2:
        raise ValueError("k must be >= 2")
    n = len(ds.ratings)
    if n < k:
        raise DataError(f"cannot make {k} folds from {n} ratings")
    rng = np.random.default_rng(seed)
    order = rng.permutation(n)
    chunks = np.array_split(order, k)
    folds = []
    all_indices = set(range(n))
    for fid, test in enumerate(chunks, start=1):
        test_set = set(int(j) for j in test)
        train = tuple(sorted(all_indices - test_set))
        folds.append(FoldSplit(fold_id=fid, train=train, test=tuple(sorted(test_set))))
    return folds


def derive_groups(ds: Dataset) -> GroupAssignment:
    """F -> protected, M -> unprotected; any other gender code is an error."""
    membership = {}
    for uid, info in ds.users.items():
        group = _GENDER_TO_GROUP.get(info.gender)
        if group is None:
            raise DataError(f"unknown gender code {info.gender!r} for user {uid}")
        membership[uid] = group
    return GroupAssignment(membership=membership)


# ---------------------------------------------------------------------------
# CSV caches: a single-file dataset dump and fold manifests.
# ---------------------------------------------------------------------------


def save_dataset_csv(path, ds: Dataset) -> None:
    """Single-file CSV cache with a record-type column."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["record", "f1", "f2", "f3", "f4"])
        for uid in sorted(ds.users):
            u = ds.users[uid]
            writer.writerow(["user", uid, u.gender, u.age, u.occupation])
        for mid in sorted(ds.movies):
            m = ds.movies[mid]
            writer.writerow(["movie", mid, m.title, "|".join(sorted(m.genres)), ""])
        for r in ds.ratings:
            writer.writerow(["rating", r.user, r.item, repr(r.value), r.timestamp])


def load_dataset_csv(path) -> Dataset:
    users, movies, ratings = {}, {}, []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        for lineno, row in enumerate(reader, start=1):
            if lineno == 1 and row and row[0] == "record":
                continue
            if not row:
                continue
            try:
                kind = row[0]
                if kind == "user":
                    users[int(row[1])] = UserInfo(
                        gender=row[2], age=int(row[3]), occupation=int(row[4])
                    )
                elif kind == "movie":
                    genres = frozenset(g for g in row[3].split("|") if g)
                    movies[int(row[1])] = MovieInfo(title=row[2], genres=genres)
                elif kind == "rating":
                    ratings.append(
                        Rating(
                            user=int(row[1]),
                            item=int(row[2]),
                            value=float(row[3]),
                            timestamp=int(row[4]),
                        )
                    )
                else:
                    raise ParseError(f"unknown record type {kind!r}", path=path, line=lineno)
            except (ValueError, IndexError) as exc:
                raise ParseError(str(exc), path=path, line=lineno) from exc
    return Dataset(ratings=tuple(ratings), users=users, movies=movies)


def save_folds(path, folds: list[FoldSplit]) -> None:
    """Fold manifest: rows ``fold,rating_index,split``."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["fold", "rating_index", "split"])
        for fold in folds:
            for j in fold.train:
                writer.writerow([fold.fold_id, j, "train"])
            for j in fold.test:
                writer.writerow([fold.fold_id, j, "test"])


def load_folds(path) -> list[FoldSplit]:
    acc: dict = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        for lineno, row in enumerate(reader, start=1):
            if lineno == 1 and row and row[0] == "fold":
                continue
            if len(row) != 3 or row[2] not in ("train", "test"):
                raise ParseError("bad fold manifest row", path=path, line=lineno)
            fid, idx = int(row[0]), int(row[1])
            acc.setdefault(fid, {"train": [], "test": []})[row[2]].append(idx)
    return [
        FoldSplit(fold_id=fid, train=tuple(sorted(v["train"])), test=tuple(sorted(v["test"])))
        for fid, v in sorted(acc.items())
    ]
