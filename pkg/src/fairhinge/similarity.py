"""Top-k cosine similarity graphs over sparse feature vectors.

Four graph kinds feed the rule grounder: rating-pattern similarity between
users and between items (collaborative filtering), demographic similarity
between users, and content similarity between items.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .errors import ParseError

log = logging.getLogger(__name__)

USER_RATING = "user_rating"
ITEM_RATING = "item_rating"
USER_DEMOGRAPHIC = "user_demographic"
ITEM_CONTENT = "item_content"

GRAPH_KINDS = (USER_RATING, ITEM_RATING, USER_DEMOGRAPHIC, ITEM_CONTENT)

# Rating-pattern graphs key similarity on users; demographic graphs too.
USER_SIDE_KINDS = (USER_RATING, USER_DEMOGRAPHIC)


@dataclass(frozen=True)
class SimilarityGraph:
    """Per-entity top-k neighbor lists with scores in [0, 1].

    Lists are sorted by descending score (ties broken by entity id) and
    contain no self-edges. Entities with empty feature vectors are omitted.
    """

    kind: str
    neighbors: dict

    def __post_init__(self):
        if self.kind not in GRAPH_KINDS:
            raise ValueError(f"unknown similarity kind {self.kind!r}")


def cosine_similarity(vectors: dict, k: int, min_overlap: int, kind: str) -> SimilarityGraph:
    """Top-k cosine neighbors for each entity.

    ``vectors`` maps entity id -> {dimension: value}. Cosine is computed
    over the full sparse vectors; pairs sharing fewer than ``min_overlap``
    nonzero dimensions are excluded, as are non-positive scores (a zero
    score grounds to a vacuous rule anyway).
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if min_overlap < 1:
        raise ValueError("min_overlap must be >= 1")

    entities = sorted(e for e, vec in vectors.items() if vec)
    if len(entities) < 2:
        return SimilarityGraph(kind=kind, neighbors={})
    dims = sorted({d for e in entities for d in vectors[e]})
    dim_index = {d: j for j, d in enumerate(dims)}

    rows, cols, vals = [], [], []
    for i, e in enumerate(entities):
        for d, v in vectors[e].items():
            if v != 0.0:
                rows.append(i)
                cols.append(dim_index[d])
                vals.append(float(v))
    X = sp.csr_matrix((vals, (rows, cols)), shape=(len(entities), len(dims)))

    norms = np.sqrt(np.asarray(X.multiply(X).sum(axis=1)).ravel())
    nonzero = norms > 0
    inv = np.zeros_like(norms)
    inv[nonzero] = 1.0 / norms[nonzero]
    Xn = sp.diags(inv) @ X

    scores = (Xn @ Xn.T).toarray()
    support = (X != 0).astype(np.int32)
    overlap = (support @ support.T).toarray()

    np.fill_diagonal(scores, 0.0)
    scores[overlap < min_overlap] = 0.0
    np.clip(scores, 0.0, 1.0, out=scores)

    neighbors = {}
    for i, e in enumerate(entities):
        row = scores[i]
        cand = np.nonzero(row > 0.0)[0]
        if cand.size == 0:
            continue
        order = sorted(cand, key=lambda j: (-row[j], entities[j]))[:k]
        neighbors[e] = tuple((entities[j], float(row[j])) for j in order)
    return SimilarityGraph(kind=kind, neighbors=neighbors)


def user_rating_vectors(ratings) -> dict:
    """Sparse per-user rating vectors: user -> {item: value}."""
    out: dict = {}
    for user, item, value in ratings:
        out.setdefault(int(user), {})[int(item)] = float(value)
    return out


def item_rating_vectors(ratings) -> dict:
    out: dict = {}
    for user, item, value in ratings:
        out.setdefault(int(item), {})[int(user)] = float(value)
    return out


def user_demographic_vectors(users: dict) -> dict:
    """One-hot gender, age bucket, and occupation per user."""
    return {
        uid: {f"gender={u.gender}": 1.0, f"age={u.age}": 1.0, f"occupation={u.occupation}": 1.0}
        for uid, u in users.items()
    }


def item_content_vectors(movies: dict) -> dict:
    """One-hot genre set per movie; movies without genres are omitted."""
    return {
        mid: {f"genre={g}": 1.0 for g in sorted(m.genres)}
        for mid, m in movies.items()
        if m.genres
    }


def save_graph(path, graph: SimilarityGraph) -> None:
    """Persist a graph as CSV rows ``kind,entity_a,entity_b,score``."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["kind", "entity_a", "entity_b", "score"])
        for entity in sorted(graph.neighbors):
            for other, score in graph.neighbors[entity]:
                writer.writerow([graph.kind, entity, other, repr(score)])


def load_graph(path) -> SimilarityGraph:
    neighbors: dict = {}
    kind = None
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        for lineno, row in enumerate(reader, start=1):
            if lineno == 1 and row and row[0] == "kind":
                continue
            if len(row) != 4:
                raise ParseError("expected 4 columns", path=path, line=lineno)
            try:
                row_kind, a, b, score = row[0], int(row[1]), int(row[2]), float(row[3])
            except ValueError as exc:
                raise ParseError(str(exc), path=path, line=lineno) from exc
            if kind is None:
                kind = row_kind
            elif kind != row_kind:
                raise ParseError("mixed graph kinds in one file", path=path, line=lineno)
            neighbors.setdefault(a, []).append((b, score))
    if kind is None:
        raise ParseError("empty similarity file", path=path)
    return SimilarityGraph(kind=kind, neighbors={a: tuple(v) for a, v in neighbors.items()})
