"""Shared fixtures: synthetic MovieLens-format data with a seeded group bias."""

from __future__ import annotations

import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))  # make `oracles` importable

KEPT_GENRES = ("Action", "Romance", "Crime", "Musical", "Sci-Fi")
AGES = (1, 18, 25, 35, 45, 50, 56)


def write_synthetic_movielens(
    directory,
    n_users: int = 20,
    n_items: int = 10,
    seed: int = 7,
    protected_level: float = 4.2,
    unprotected_level: float = 2.2,
    noise: float = 0.6,
):
    """Write ratings.dat/users.dat/movies.dat with a gender rating bias.

    Even user ids are female (protected), odd male. Protected users rate
    around ``protected_level``, unprotected around ``unprotected_level``
    (raw 1-5), separating the normalized group means by roughly
    (protected_level - unprotected_level) / 4.
    """
    rng = np.random.default_rng(seed)
    os.makedirs(directory, exist_ok=True)

    with open(os.path.join(directory, "users.dat"), "w") as fh:
        for uid in range(1, n_users + 1):
            gender = "F" if uid % 2 == 0 else "M"
            age = AGES[rng.integers(len(AGES))]
            occ = int(rng.integers(0, 21))
            fh.write(f"{uid}::{gender}::{age}::{occ}::00000\n")

    with open(os.path.join(directory, "movies.dat"), "w") as fh:
        for mid in range(1, n_items + 1):
            genre = KEPT_GENRES[mid % len(KEPT_GENRES)]
            extra = KEPT_GENRES[(mid + 2) % len(KEPT_GENRES)]
            fh.write(f"{mid}::Synthetic Movie {mid} (2000)::{genre}|{extra}\n")

    ts = 978300000
    with open(os.path.join(directory, "ratings.dat"), "w") as fh:
        for uid in range(1, n_users + 1):
            center = protected_level if uid % 2 == 0 else unprotected_level
            for mid in range(1, n_items + 1):
                level = int(np.clip(round(rng.normal(center, noise)), 1, 5))
                fh.write(f"{uid}::{mid}::{level}::{ts}\n")
                ts += 1
    return directory


@pytest.fixture
def synthetic_dir(tmp_path):
    return write_synthetic_movielens(str(tmp_path / "ml"))


@pytest.fixture
def synthetic_dataset(synthetic_dir):
    from fairhinge import parse_movielens

    return parse_movielens(synthetic_dir)
