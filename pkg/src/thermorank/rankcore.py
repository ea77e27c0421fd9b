"""Rank vectors, Spearman correlation and the knowledge loss."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import DomainError
from .ingest import ImageRelation


@dataclass(frozen=True)
class RankVector:
    class_ids: tuple[int, ...]
    ranks: tuple[float, ...]

    def __getitem__(self, class_id: int) -> float:
        try:
            return self.ranks[self.class_ids.index(class_id)]
        except ValueError:
            raise DomainError(f"class {class_id} is not in the rank vector") from None

    def as_dict(self) -> dict[int, float]:
        return dict(zip(self.class_ids, self.ranks))


def average_ranks(values: Sequence[float]) -> np.ndarray:
    """1-based ascending ranks; tied values share the mean of their positions."""
    a = np.asarray(values, dtype=np.float64).reshape(-1)
    n = a.size
    order = np.argsort(a, kind="mergesort")
    ranks = np.empty(n, dtype=np.float64)
    i = 0
    while i < n:
        j = i
        while j + 1 < n and a[order[j + 1]] == a[order[i]]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def rank_vector(values: Sequence[tuple[int, float]]) -> RankVector:
    if len(values) == 0:
        raise DomainError("cannot rank an empty list")
    ids = tuple(int(c) for c, _ in values)
    if len(set(ids)) != len(ids):
        raise DomainError(f"duplicate class ids in {ids}")
    ranks = average_ranks([v for _, v in values])
    return RankVector(ids, tuple(float(r) for r in ranks))


def relation_ranks(relation: ImageRelation, include_background: bool = True) -> RankVector:
    return rank_vector(relation.values(include_background))


@dataclass(frozen=True)
class RelationPair:
    """Annotated and predicted relations of one image, compared on shared classes.

    The background (class 0) takes part only when ``include_background`` is set.
    """

    reference: ImageRelation
    predicted: ImageRelation
    include_background: bool = False

    @property
    def shared_classes(self) -> tuple[int, ...]:
        ref = dict(self.reference.values(self.include_background))
        pred = dict(self.predicted.values(self.include_background))
        return tuple(c for c in ref if c in pred)

    def restricted(self) -> tuple[list[tuple[int, float]], list[tuple[int, float]]]:
        shared = self.shared_classes
        ref = dict(self.reference.values(self.include_background))
        pred = dict(self.predicted.values(self.include_background))
        return [(c, ref[c]) for c in shared], [(c, pred[c]) for c in shared]


def spearman_from_values(reference: Sequence[float], predicted: Sequence[float]) -> float | None:
    """Closed-form Spearman rho on aligned value lists; ``None`` below two entries."""
    if len(reference) != len(predicted):
        raise DomainError("reference and predicted lengths differ")
    k = len(reference)
    if k < 2:
        return None
    d = average_ranks(reference) - average_ranks(predicted)
    rho = 1.0 - 6.0 * float(np.dot(d, d)) / (k * (k * k - 1))
    return min(1.0, max(-1.0, rho))


def spearman(pair: RelationPair) -> float | None:
    """Rank correlation over the shared classes, or ``None`` if fewer than two are shared.

    Ties use average ranks with the same closed form, so tied inputs can yield
    values that differ from a Pearson correlation of the ranks.
    """
    ref, pred = pair.restricted()
    return spearman_from_values([v for _, v in ref], [v for _, v in pred])


def knowledge_loss(rho: float) -> float:
    if not -1.0 <= rho <= 1.0:
        raise DomainError(f"rho must lie in [-1, 1], got {rho}")
    return 1.0 - rho


def sign_relation(r: RankVector, k: int, kt: int) -> int:
    diff = r[k] - r[kt]
    return (diff > 0) - (diff < 0)
