"""Semantic-consistency scoring between artwork images and mesh renders.

Embedding vectors are produced externally (one "label<TAB>dim<TAB>values"
line per image); this module only does the similarity math: cosine
similarity per pair, the unit-vector dot-product shortcut, and the mean
score over a method's pairs.
"""

from dataclasses import dataclass

import numpy as np

__all__ = [
    "Embedding",
    "SimilarityReport",
    "cosine_similarity",
    "dot_if_normalized",
    "mean_similarity",
    "load_embeddings",
    "write_embeddings",
]

_UNIT_TOL = 1e-4


@dataclass(frozen=True, eq=False)
class Embedding:
    """Labeled float vector; must be finite and non-zero."""

    values: np.ndarray
    label: str

    def __post_init__(self):
        v = np.array(self.values, dtype=np.float64, copy=True).reshape(-1)
        if v.size < 1:
            raise ValueError(f"embedding {self.label!r} is empty")
        if not np.isfinite(v).all():
            raise ValueError(f"embedding {self.label!r} contains non-finite values")
        if not np.any(v != 0.0):
            raise ValueError(f"embedding {self.label!r} is the zero vector")
        v.flags.writeable = False
        object.__setattr__(self, "values", v)

    @property
    def dimension(self):
        return self.values.size


@dataclass(frozen=True)
class SimilarityReport:
    """Per-pair cosine scores (with their labels) and their arithmetic mean."""

    labels: tuple
    scores: tuple
    mean: float

    @property
    def pair_count(self):
        return len(self.scores)


def cosine_similarity(a, b):
    """dot(a, b) / (|a| * |b|), clamped into [-1, 1] against rounding."""
    if a.dimension != b.dimension:
        raise ValueError(f"dimension mismatch: {a.dimension} vs {b.dimension}")
    sim = float(np.dot(a.values, b.values) / (np.linalg.norm(a.values) * np.linalg.norm(b.values)))
    return min(1.0, max(-1.0, sim))


def dot_if_normalized(a, b):
    """Plain dot product, valid only for unit vectors.

    Inputs further than 1e-4 from unit norm are rejected; use
    cosine_similarity for un-normalized embeddings.
    """
    if a.dimension != b.dimension:
        raise ValueError(f"dimension mismatch: {a.dimension} vs {b.dimension}")
    for e in (a, b):
        if abs(np.linalg.norm(e.values) - 1.0) > _UNIT_TOL:
            raise ValueError(
                f"embedding {e.label!r} is not unit-normalized; use cosine_similarity"
            )
    return float(np.dot(a.values, b.values))


def mean_similarity(pairs):
    """Mean cosine similarity over (artwork, render) embedding pairs."""
    pairs = list(pairs)
    if not pairs:
        raise ValueError("mean_similarity needs at least one pair")
    labels = tuple(a.label for a, _ in pairs)
    scores = tuple(cosine_similarity(a, b) for a, b in pairs)
    return SimilarityReport(labels=labels, scores=scores, mean=float(np.mean(scores)))


def load_embeddings(path):
    """Load 'label<TAB>dim<TAB>v1 v2 ... vd' lines; dimensions must agree."""
    embeddings = []
    with open(str(path), encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise ValueError(f"{path}:{lineno}: expected 3 tab-separated fields")
            label, dim_s, vec_s = parts
            try:
                dim = int(dim_s)
                values = np.array([float(t) for t in vec_s.split()])
            except ValueError:
                raise ValueError(f"{path}:{lineno}: malformed numeric field") from None
            if values.size != dim:
                raise ValueError(
                    f"{path}:{lineno}: declared dimension {dim} but {values.size} values"
                )
            embeddings.append(Embedding(values, label))
    if not embeddings:
        raise ValueError(f"{path}: no embeddings found")
    dims = {e.dimension for e in embeddings}
    if len(dims) != 1:
        raise ValueError(f"{path}: mixed embedding dimensions {sorted(dims)}")
    return embeddings


def write_embeddings(path, embeddings):
    """Write embeddings in the interchange format (repr floats, UTF-8)."""
    with open(str(path), "w", encoding="utf-8") as f:
        for e in embeddings:
            vec = " ".join(repr(float(x)) for x in e.values)
            f.write(f"{e.label}\t{e.dimension}\t{vec}\n")
