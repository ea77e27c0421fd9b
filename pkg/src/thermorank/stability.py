"""Stability of pairwise gray-value relations.

Two routes to the same quantity: a closed form under independent Gaussian
class statistics, and an empirical sign-mean over the images of a dataset in
which both classes occur.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from itertools import combinations
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import DomainError
from .ingest import BACKGROUND_ID, ImageRelation
from .rankcore import relation_ranks, sign_relation

_SQRT2 = math.sqrt(2.0)


def normal_cdf(x: float) -> float:
    """Standard normal CDF through erfc (no cancellation in the lower tail)."""
    return 0.5 * math.erfc(-x / _SQRT2)


@dataclass(frozen=True)
class GaussianClassPair:
    mu_k: float
    sigma_k: float
    mu_kt: float
    sigma_kt: float

    def __post_init__(self) -> None:
        if self.sigma_k < 0 or self.sigma_kt < 0:
            raise DomainError("standard deviations must be nonnegative")

    @property
    def sigma_delta(self) -> float:
        return math.hypot(self.sigma_k, self.sigma_kt)


def closed_form_stability(pair: GaussianClassPair) -> float:
    """``|1 - 2 Phi(-(mu_k - mu_kt) / sigma_delta)|``.

    Evaluated as ``erf(|gap| / (sqrt(2) sigma_delta))``, the same quantity
    without the cancellation near zero and exactly symmetric in the pair.
    """
    gap = pair.mu_k - pair.mu_kt
    sd = pair.sigma_delta
    if sd == 0.0:
        if gap == 0.0:
            raise DomainError("degenerate pair: zero variance and equal means")
        return 1.0
    return math.erf(abs(gap) / (_SQRT2 * sd))


def sign_mean_stability(g_k: np.ndarray, g_kt: np.ndarray) -> float:
    """Empirical stability from paired gray samples (one pair per image)."""
    s = np.sign(np.asarray(g_k, dtype=np.float64) - np.asarray(g_kt, dtype=np.float64))
    if s.size == 0:
        raise DomainError("no samples")
    return abs(int(s.sum())) / s.size


@dataclass(frozen=True)
class StabilityMatrix:
    """Pairwise empirical stability with co-occurrence counts.

    ``sign_sums`` holds the signed totals so that partial matrices merge
    exactly; ``varphi`` is NaN wherever a pair never co-occurs and on the
    diagonal.
    """

    class_ids: tuple[int, ...]
    sign_sums: np.ndarray
    counts: np.ndarray

    def __post_init__(self) -> None:
        ids = tuple(int(c) for c in self.class_ids)
        sums = np.array(self.sign_sums, dtype=np.int64)
        counts = np.array(self.counts, dtype=np.int64)
        k = len(ids)
        if sums.shape != (k, k) or counts.shape != (k, k):
            raise DomainError("matrix shapes do not match class_ids")
        if not (np.array_equal(counts, counts.T) and np.array_equal(sums, -sums.T)):
            raise DomainError("counts must be symmetric and sign sums antisymmetric")
        for a in (sums, counts):
            a.setflags(write=False)
        object.__setattr__(self, "class_ids", ids)
        object.__setattr__(self, "sign_sums", sums)
        object.__setattr__(self, "counts", counts)

    @property
    def varphi(self) -> np.ndarray:
        with np.errstate(invalid="ignore", divide="ignore"):
            v = np.abs(self.sign_sums) / self.counts
        v = np.where(self.counts > 0, v, np.nan)
        np.fill_diagonal(v, np.nan)
        return v

    def _index(self, class_id: int) -> int:
        try:
            return self.class_ids.index(class_id)
        except ValueError:
            raise DomainError(f"class {class_id} not in stability matrix") from None

    def get(self, k: int, kt: int) -> float | None:
        """Stability of the pair, or ``None`` when it was never observed."""
        i, j = self._index(k), self._index(kt)
        if i == j:
            raise DomainError("stability is undefined for a class with itself")
        n = int(self.counts[i, j])
        if n == 0:
            return None
        return abs(int(self.sign_sums[i, j])) / n

    def count(self, k: int, kt: int) -> int:
        return int(self.counts[self._index(k), self._index(kt)])

    def entries(self) -> list[dict]:
        out = []
        for i, j in combinations(range(len(self.class_ids)), 2):
            n = int(self.counts[i, j])
            if n:
                out.append(
                    {
                        "k": self.class_ids[i],
                        "kt": self.class_ids[j],
                        "varphi": abs(int(self.sign_sums[i, j])) / n,
                        "count": n,
                        "sign_sum": int(self.sign_sums[i, j]),
                    }
                )
        return out

    def to_dict(self) -> dict:
        return {"class_ids": list(self.class_ids), "entries": self.entries()}

    @classmethod
    def from_dict(cls, doc: Mapping) -> StabilityMatrix:
        ids = [int(c) for c in doc["class_ids"]]
        pos = {c: i for i, c in enumerate(ids)}
        k = len(ids)
        sums = np.zeros((k, k), dtype=np.int64)
        counts = np.zeros((k, k), dtype=np.int64)
        for e in doc["entries"]:
            i, j, n = pos[int(e["k"])], pos[int(e["kt"])], int(e["count"])
            if "sign_sum" in e:
                s = int(e["sign_sum"])
            else:
                # only the magnitude survives without sign_sum; orientation is irrelevant to varphi
                s = int(round(float(e["varphi"]) * n))
            counts[i, j] = counts[j, i] = n
            sums[i, j], sums[j, i] = s, -s
        return cls(tuple(ids), sums, counts)

    def merge(self, other: StabilityMatrix) -> StabilityMatrix:
        ids = tuple(sorted(set(self.class_ids) | set(other.class_ids)))
        pos = {c: i for i, c in enumerate(ids)}
        k = len(ids)
        sums = np.zeros((k, k), dtype=np.int64)
        counts = np.zeros((k, k), dtype=np.int64)
        for m in (self, other):
            idx = np.array([pos[c] for c in m.class_ids], dtype=np.intp)
            sums[np.ix_(idx, idx)] += m.sign_sums
            counts[np.ix_(idx, idx)] += m.counts
        return StabilityMatrix(ids, sums, counts)


def _accumulate(relations: Sequence[ImageRelation], ids: tuple[int, ...]) -> StabilityMatrix:
    pos = {c: i for i, c in enumerate(ids)}
    k = len(ids)
    sums = np.zeros((k, k), dtype=np.int64)
    counts = np.zeros((k, k), dtype=np.int64)
    for rel in relations:
        ranks = relation_ranks(rel, include_background=True)
        present = ranks.class_ids
        for a, b in combinations(present, 2):
            s = sign_relation(ranks, a, b)
            i, j = pos[a], pos[b]
            sums[i, j] += s
            sums[j, i] -= s
            counts[i, j] += 1
            counts[j, i] += 1
    return StabilityMatrix(ids, sums, counts)


def empirical_stability(relations: Iterable[ImageRelation], threads: int = 1) -> StabilityMatrix:
    """Sign-mean stability for every pair of classes (background is class 0).

    With ``threads > 1`` the images are split into contiguous chunks whose
    integer counters are merged; the result is identical to a sequential run.
    """
    relations = list(relations)
    if not relations:
        raise DomainError("need at least one image relation")
    ids = tuple(sorted({BACKGROUND_ID}.union(*(r.class_ids for r in relations))))
    if threads <= 1 or len(relations) < 2 * threads:
        return _accumulate(relations, ids)
    chunks = [c.tolist() for c in np.array_split(np.arange(len(relations)), threads)]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        parts = list(pool.map(lambda idx: _accumulate([relations[i] for i in idx], ids), chunks))
    out = parts[0]
    for p in parts[1:]:
        out = out.merge(p)
    return out


def image_stability(matrix: StabilityMatrix, classes_in_image: Sequence[int]) -> float | None:
    """Mean stability over ordered pairs of the image's classes.

    Returns ``None`` for images with fewer than two classes, where no relation
    exists to be stable or not.
    """
    classes = list(dict.fromkeys(int(c) for c in classes_in_image))
    k = len(classes)
    if k < 2:
        return None
    terms = []
    for a in classes:
        for b in classes:
            if a == b:
                continue
            known = a in matrix.class_ids and b in matrix.class_ids
            v = matrix.get(a, b) if known else None
            if v is None:
                raise DomainError(f"no stability entry for class pair ({a}, {b})")
            terms.append(v)
    return math.fsum(terms) / (k * (k - 1))
