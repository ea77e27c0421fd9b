"""Expected rank agreement of a detector under the Gaussian offset model.

Each class ``i`` has a gray offset from the image baseline drawn from
``N(mu_i, sigma_i^2)``; a detector of quality ``E_i`` sees the shrunken offset
``E_i * offset``.  The true class order is the order of the mean offsets.

The expected Spearman correlation between predicted and true order is a
weighted sum over the permutations of the classes.  Two factorizations of the
permutation weight are available:

``"chain"``
    product of the successive conditional probabilities, i.e. the joint
    probability that the predicted grays fall in exactly that order.  The
    weights sum to one and the result is the true expectation, which Monte
    Carlo sampling reproduces.
``"marginal"``
    product of the adjacent pairwise probabilities taken as if independent.
    Cheap and closed form, but biased low against the true expectation.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Mapping, Sequence

import numpy as np
from numpy.polynomial import legendre

from .errors import CapacityError, DomainError, PreconditionError
from .stability import normal_cdf

EXACT_MAX_K = 8
FACTORS = ("chain", "marginal")


@dataclass(frozen=True)
class DetectorQuality:
    e: Mapping[int, float]

    def __post_init__(self) -> None:
        e = {int(k): float(v) for k, v in dict(self.e).items()}
        for cid, v in e.items():
            if not 0.0 < v <= 1.0:
                raise DomainError(f"quality of class {cid} must lie in (0, 1], got {v}")
        object.__setattr__(self, "e", dict(sorted(e.items())))

    def __getitem__(self, class_id: int) -> float:
        try:
            return self.e[class_id]
        except KeyError:
            raise DomainError(f"no detection quality for class {class_id}") from None

    def scaled(self, factor: float) -> DetectorQuality:
        return DetectorQuality({k: v * factor for k, v in self.e.items()})


@dataclass(frozen=True)
class TheoremModel:
    quality: DetectorQuality
    offsets: Mapping[int, tuple[float, float]]  # class_id -> (mean offset, std)

    def __post_init__(self) -> None:
        offs = {int(k): (float(m), float(s)) for k, (m, s) in dict(self.offsets).items()}
        if len(offs) < 2:
            raise DomainError("need at least two classes")
        for cid, (_, s) in offs.items():
            if not s > 0:
                raise DomainError(f"sigma of class {cid} must be positive, got {s}")
        if set(offs) != set(self.quality.e):
            raise DomainError("offsets and quality must cover the same classes")
        object.__setattr__(self, "offsets", dict(sorted(offs.items())))

    @property
    def k(self) -> int:
        return len(self.offsets)

    @property
    def class_ids(self) -> tuple[int, ...]:
        return tuple(self.offsets)

    @property
    def reference_order(self) -> tuple[int, ...]:
        """Class ids sorted by mean offset, ascending (ties by id)."""
        return tuple(sorted(self.offsets, key=lambda c: (self.offsets[c][0], c)))

    def predicted_moments(self) -> tuple[np.ndarray, np.ndarray]:
        """Mean and std of ``E_i * offset_i`` in reference order."""
        order = self.reference_order
        e = np.array([self.quality[c] for c in order])
        mu = np.array([self.offsets[c][0] for c in order])
        sd = np.array([self.offsets[c][1] for c in order])
        return e * mu, e * sd

    def with_quality(self, quality: DetectorQuality) -> TheoremModel:
        return TheoremModel(quality, self.offsets)

    @classmethod
    def from_dict(cls, doc: Mapping) -> TheoremModel:
        offsets = {int(o["class_id"]): (float(o["mu"]), float(o["sigma"])) for o in doc["offsets"]}
        quality = DetectorQuality({int(k): float(v) for k, v in doc["quality"].items()})
        return cls(quality, offsets)

    def to_dict(self) -> dict:
        return {
            "offsets": [{"class_id": c, "mu": m, "sigma": s} for c, (m, s) in self.offsets.items()],
            "quality": {str(c): v for c, v in self.quality.e.items()},
        }


@dataclass
class ExpectationReport:
    e_rho: float
    partition_z: float
    factors: str
    # (predicted order lowest->highest as class ids, weight, rho)
    per_permutation: list[tuple[tuple[int, ...], float, float]] | None = None
    mc_estimate: float | None = None
    mc_stderr: float | None = None

    @property
    def mc_gap_in_stderr(self) -> float | None:
        if self.mc_estimate is None or not self.mc_stderr:
            return None
        return (self.mc_estimate - self.e_rho) / self.mc_stderr

    def to_dict(self) -> dict:
        return {
            "e_rho": self.e_rho,
            "e_knowledge_loss": 1.0 - self.e_rho,
            "partition_z": self.partition_z,
            "factors": self.factors,
            "mc_estimate": self.mc_estimate,
            "mc_stderr": self.mc_stderr,
        }


def predicted_class_gray(quality: DetectorQuality, mu0: float, mu_i: float, class_id: int) -> float:
    """Mean gray of a class seen through a detector of quality ``E_i``."""
    return mu0 + (mu_i - mu0) * quality[class_id]


def detection_quality(probs: Sequence[float], overlaps: Sequence[float]) -> float:
    """Mean class probability times mean overlap ratio over a class's boxes."""
    if len(probs) == 0 or len(probs) != len(overlaps):
        raise DomainError("need equal-length, non-empty probability and overlap lists")
    for v in itertools.chain(probs, overlaps):
        if not 0.0 <= v <= 1.0:
            raise DomainError(f"entries must lie in [0, 1], got {v}")
    return (math.fsum(probs) / len(probs)) * (math.fsum(overlaps) / len(overlaps))


def pair_order_prob(model: TheoremModel, i: int, j: int) -> float:
    """Probability that class ``i`` appears brighter than class ``j``."""
    if i == j:
        raise DomainError("pair_order_prob needs two distinct classes")
    for c in (i, j):
        if c not in model.offsets:
            raise DomainError(f"class {c} is not in the model")
    ei, ej = model.quality[i], model.quality[j]
    (mi, si), (mj, sj) = model.offsets[i], model.offsets[j]
    return normal_cdf((ei * mi - ej * mj) / math.hypot(ei * si, ej * sj))


def permutation_rho(perm: Sequence[int]) -> float:
    """Spearman rho between ``perm`` (0-based reference ranks) and the identity."""
    k = len(perm)
    d2 = sum((p - i) ** 2 for i, p in enumerate(perm))
    return 1.0 - 6.0 * d2 / (k * (k * k - 1))


# --------------------------------------------------------------------------
# joint ordering probabilities


_GL_ORDER = 12
_PANELS_PER_CLASS = 24
_HALF_WIDTH_SD = 9.0


@lru_cache(maxsize=None)
def _gauss_legendre_rule(p: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Nodes, weights and cumulative-integration matrix on [-1, 1].

    ``Q @ f(nodes)`` approximates ``int_{-1}^{x_q} f`` at every node ``x_q``.
    """
    x, w = legendre.leggauss(p)
    vander = legendre.legvander(x, p - 1)
    antider = np.empty((p, p))
    for n in range(p):
        coef = np.zeros(p)
        coef[n] = 1.0
        antider[:, n] = legendre.legval(x, legendre.legint(coef, lbnd=-1))
    return x, w, antider @ np.linalg.inv(vander)


def ordering_probabilities(means: Sequence[float], sds: Sequence[float]) -> dict[tuple[int, ...], float]:
    """``P(Y_t0 < Y_t1 < ... )`` for every permutation of independent Gaussians.

    Uses the Markov structure of the ordering event: with ``F_j(y)`` the
    probability that the first ``j`` variables are ordered and below ``y``,
    ``F_j(y) = int_{-inf}^{y} pdf_j(t) F_{j-1}(t) dt``.  The integrals run on
    Gauss-Legendre panels refined around every class's mean, and shared
    prefixes are integrated once.
    """
    m = np.asarray(means, dtype=np.float64)
    s = np.asarray(sds, dtype=np.float64)
    k = m.size
    x, w, q = _gauss_legendre_rule(_GL_ORDER)
    breaks = np.unique(
        np.concatenate(
            [
                np.linspace(mi - _HALF_WIDTH_SD * si, mi + _HALF_WIDTH_SD * si, _PANELS_PER_CLASS + 1)
                for mi, si in zip(m, s)
            ]
        )
    )
    half = np.diff(breaks) / 2.0
    t = (breaks[:-1] + half)[:, None] + half[:, None] * x[None, :]
    pdf = [np.exp(-0.5 * ((t - mi) / si) ** 2) / (si * math.sqrt(2.0 * math.pi)) for mi, si in zip(m, s)]

    out: dict[tuple[int, ...], float] = {}

    def extend(prefix: tuple[int, ...], cdf: np.ndarray) -> None:
        for j in range(k):
            if j in prefix:
                continue
            g = pdf[j] * cdf
            totals = (g @ w) * half
            if len(prefix) == k - 1:
                out[prefix + (j,)] = math.fsum(totals)
                continue
            within = (g @ q.T) * half[:, None]
            start = np.concatenate(([0.0], np.cumsum(totals)[:-1]))
            extend(prefix + (j,), start[:, None] + within)

    extend((), np.ones_like(t))
    return out


def _marginal_weights(model: TheoremModel) -> dict[tuple[int, ...], float]:
    order = model.reference_order
    k = len(order)
    pair = {
        (a, b): pair_order_prob(model, order[a], order[b])
        for a in range(k)
        for b in range(k)
        if a != b
    }
    return {
        perm: math.prod(pair[perm[i + 1], perm[i]] for i in range(k - 1))
        for perm in itertools.permutations(range(k))
    }


def expected_spearman(
    model: TheoremModel,
    factors: str = "chain",
    keep_permutations: bool = False,
) -> ExpectationReport:
    """Exact expectation of rho by enumerating all ``k!`` class orders."""
    if factors not in FACTORS:
        raise DomainError(f"factors must be one of {FACTORS}, got {factors!r}")
    if model.k > EXACT_MAX_K:
        raise CapacityError(
            f"exact enumeration is capped at k={EXACT_MAX_K} (got k={model.k}); "
            "use monte_carlo_expected_spearman instead"
        )
    if factors == "chain":
        weights = ordering_probabilities(*model.predicted_moments())
    else:
        weights = _marginal_weights(model)
    perms = sorted(weights)
    z = math.fsum(weights[p] for p in perms)
    if not z > 0:
        raise DomainError("all permutation weights vanished")
    rhos = {p: permutation_rho(p) for p in perms}
    e_rho = math.fsum(weights[p] * rhos[p] for p in perms) / z
    report = ExpectationReport(min(1.0, max(-1.0, e_rho)), z, factors)
    if keep_permutations:
        order = model.reference_order
        report.per_permutation = [
            (tuple(order[i] for i in p), weights[p], rhos[p]) for p in perms
        ]
    return report


def monte_carlo_expected_spearman(
    model: TheoremModel,
    n_samples: int = 200_000,
    seed: int = 0,
    chunk: int = 100_000,
) -> tuple[float, float]:
    """Sample the offset model directly; returns ``(mean rho, standard error)``."""
    if n_samples < 1000:
        raise DomainError(f"n_samples must be at least 1000, got {n_samples}")
    rng = np.random.default_rng(seed)
    order = model.reference_order
    mu = np.array([model.offsets[c][0] for c in order])
    sd = np.array([model.offsets[c][1] for c in order])
    e = np.array([model.quality[c] for c in order])
    k = len(order)
    ref = np.arange(k)
    rhos = np.empty(n_samples)
    done = 0
    while done < n_samples:
        n = min(chunk, n_samples - done)
        gray = e * rng.normal(mu, sd, size=(n, k))
        ranks = np.argsort(np.argsort(gray, axis=1, kind="stable"), axis=1)
        d2 = ((ranks - ref) ** 2).sum(axis=1)
        rhos[done : done + n] = 1.0 - 6.0 * d2 / (k * (k * k - 1))
        done += n
    return float(rhos.mean()), float(rhos.std(ddof=1) / math.sqrt(n_samples))


# --------------------------------------------------------------------------
# comparison of two detectors


@dataclass
class TheoremComparison:
    first: ExpectationReport
    second: ExpectationReport

    @property
    def e_rho_1(self) -> float:
        return self.first.e_rho

    @property
    def e_rho_2(self) -> float:
        return self.second.e_rho

    @property
    def knowledge_loss_1(self) -> float:
        return 1.0 - self.first.e_rho

    @property
    def knowledge_loss_2(self) -> float:
        return 1.0 - self.second.e_rho

    @property
    def improved(self) -> bool:
        return self.second.e_rho > self.first.e_rho

    def to_dict(self) -> dict:
        return {
            "e_rho_1": self.e_rho_1,
            "e_rho_2": self.e_rho_2,
            "e_knowledge_loss_1": self.knowledge_loss_1,
            "e_knowledge_loss_2": self.knowledge_loss_2,
            "improved": self.improved,
            "first": self.first.to_dict(),
            "second": self.second.to_dict(),
        }


# ratios closer than this are treated as equal, so a common rescaling of all
# qualities is never mistaken for an improvement
_RATIO_RTOL = 1e-12


def check_quality_ordering(model1: TheoremModel, model2: TheoremModel) -> None:
    """Require the second detector to favour brighter-offset classes strictly more."""
    if model1.offsets != model2.offsets:
        raise PreconditionError("both models must share the same class offsets")
    for i, j in itertools.permutations(model1.class_ids, 2):
        if not model1.offsets[i][0] > model1.offsets[j][0]:
            continue
        r1 = model1.quality[i] / model1.quality[j]
        r2 = model2.quality[i] / model2.quality[j]
        if not r2 > r1 * (1.0 + _RATIO_RTOL):
            raise PreconditionError(
                f"quality ratio for pair ({i}, {j}) does not increase: "
                f"E{i}/E{j} = {r1:.6g} -> {r2:.6g}"
            )


def verify_theorem1(
    model1: TheoremModel,
    model2: TheoremModel,
    factors: str = "chain",
    mc_samples: int = 0,
    seed: int = 0,
) -> TheoremComparison:
    """Compare the expected agreement of two detectors over the same offsets.

    ``model2`` must satisfy the quality-ratio ordering against ``model1``.  With
    ``mc_samples > 0`` each report also carries a Monte Carlo estimate.
    """
    check_quality_ordering(model1, model2)
    reports = []
    for offset, model in enumerate((model1, model2)):
        rep = expected_spearman(model, factors)
        if mc_samples:
            rep.mc_estimate, rep.mc_stderr = monte_carlo_expected_spearman(
                model, mc_samples, seed + offset
            )
        reports.append(rep)
    return TheoremComparison(*reports)


def random_valid_pair(rng: np.random.Generator, k: int) -> tuple[TheoremModel, TheoremModel]:
    """Random model pair satisfying the quality-ratio ordering.

    Offsets are drawn positive (classes brighter than the baseline).  Qualities
    of the second model are the first's multiplied by a factor that grows with
    the class's offset rank, then rescaled into (0, 1].
    """
    mus = rng.uniform(0.05, 0.5, size=k)
    sigmas = rng.uniform(0.02, 0.15, size=k)
    ids = list(range(1, k + 1))
    offsets = {c: (float(m), float(s)) for c, m, s in zip(ids, mus, sigmas)}
    e1 = rng.uniform(0.3, 0.9, size=k)
    rank = np.argsort(np.argsort(mus))
    e2 = e1 * np.exp(rng.uniform(0.05, 0.5) * rank)
    e2 = e2 / max(1.0, float(e2.max()))
    q1 = DetectorQuality(dict(zip(ids, e1.tolist())))
    q2 = DetectorQuality(dict(zip(ids, e2.tolist())))
    return TheoremModel(q1, offsets), TheoremModel(q2, offsets)
