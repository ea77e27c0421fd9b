"""Desk-scale reweighted adversarial training on a surrogate detector.

The surrogate keeps one pair of logits per class.  Their sigmoids play the
roles of mean class confidence ``p_k`` and mean box-overlap ratio ``o_k``, and
the detector's quality for the class is ``E_k = p_k * o_k``.  A predicted
class gray is the annotated gray shrunk toward the background by ``E_k``.

Two simplifications relative to full adversarial training on a deep
detector, both deliberate:

* the inner attack is a worst-of-m search over bounded random perturbations
  of the annotated gray relation, keeping the draw with the lowest rank
  agreement (the surrogate's detection loss does not depend on gray values,
  so a loss-maximizing attack would be vacuous);
* the detection loss is ``mean_k (1 - E_k)^2`` over the classes present.
  Any smooth loss decreasing in ``E_k`` would serve.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy.special import expit as _sigmoid

from .errors import ConfigError, DomainError, NumericError
from .ingest import ImageRelation
from .rankcore import RelationPair, knowledge_loss, spearman
from .stability import StabilityMatrix, image_stability
from .weights import WeightConfig, WeightRecord, weight_record

MODES = ("kgat", "plain")


@dataclass
class SurrogateDetector:
    class_ids: tuple[int, ...]
    logits: np.ndarray  # (n_classes, 2): confidence logit, overlap logit

    def __post_init__(self) -> None:
        self.class_ids = tuple(int(c) for c in self.class_ids)
        self.logits = np.array(self.logits, dtype=np.float64).reshape(len(self.class_ids), 2)
        self._pos = {c: i for i, c in enumerate(self.class_ids)}

    @classmethod
    def from_logits(cls, logits: Mapping[int, Sequence[float]]) -> SurrogateDetector:
        ids = sorted(int(c) for c in logits)
        return cls(tuple(ids), [list(logits[c]) for c in ids])

    def copy(self) -> SurrogateDetector:
        return SurrogateDetector(self.class_ids, self.logits.copy())

    def index(self, class_id: int) -> int:
        try:
            return self._pos[class_id]
        except KeyError:
            raise DomainError(f"detector has no parameters for class {class_id}") from None

    def quality(self, class_id: int) -> float:
        p, o = _sigmoid(self.logits[self.index(class_id)])
        return float(p * o)

    def qualities(self) -> dict[int, float]:
        return {c: self.quality(c) for c in self.class_ids}

    def to_dict(self) -> dict:
        return {str(c): [float(a), float(b)] for c, (a, b) in zip(self.class_ids, self.logits)}


def detector_loss_and_grad(det: SurrogateDetector, relation: ImageRelation) -> tuple[float, np.ndarray]:
    """Loss ``mean_k (1 - E_k)^2`` and its gradient with respect to all logits."""
    classes = relation.class_ids
    if not classes:
        raise DomainError("relation has no classes")
    grad = np.zeros_like(det.logits)
    terms = []
    n = len(classes)
    for c in classes:
        i = det.index(c)
        p, o = _sigmoid(det.logits[i])
        e = p * o
        terms.append((1.0 - e) ** 2)
        coef = -2.0 * (1.0 - e) / n
        # dE/da = E (1 - p), dE/db = E (1 - o)
        grad[i, 0] = coef * e * (1.0 - p)
        grad[i, 1] = coef * e * (1.0 - o)
    return math.fsum(terms) / n, grad


def detector_loss(det: SurrogateDetector, relation: ImageRelation) -> float:
    return detector_loss_and_grad(det, relation)[0]


def predict_relation(det: SurrogateDetector, relation: ImageRelation) -> ImageRelation:
    g0 = relation.background_gray
    # written so that E = 1 returns the annotated gray bit for bit
    grays = {c: g - (g - g0) * (1.0 - det.quality(c)) for c, g in relation.class_grays.items()}
    return ImageRelation(relation.image_id, g0, grays, relation.flags)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 20
    batch_size: int = 8
    learning_rate: float = 0.5
    weights: WeightConfig = field(default_factory=WeightConfig)
    perturbation_eps: float = 0.02
    worst_of_m: int = 4
    seed: int = 0
    mode: str = "kgat"
    rank_background: bool = False
    single_class_stability: float = 1.0

    def __post_init__(self) -> None:
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.epochs < 0 or self.batch_size < 1:
            raise ConfigError("epochs must be >= 0 and batch_size >= 1")
        if self.perturbation_eps < 0 or self.worst_of_m < 1:
            raise ConfigError("perturbation_eps must be >= 0 and worst_of_m >= 1")
        if not 0.0 <= self.single_class_stability <= 1.0:
            raise ConfigError("single_class_stability must lie in [0, 1]")

    @classmethod
    def from_dict(cls, doc: Mapping) -> TrainConfig:
        doc = dict(doc)
        pert = doc.pop("perturbation", {})
        weights = WeightConfig(**doc.pop("weights", {}))
        for key in ("init_logits", "schema_version"):
            doc.pop(key, None)
        if "eps" in pert:
            doc["perturbation_eps"] = pert["eps"]
        if "worst_of_m" in pert:
            doc["worst_of_m"] = pert["worst_of_m"]
        if "seed" in pert:
            doc["seed"] = pert["seed"]
        try:
            return cls(weights=weights, **doc)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc


@dataclass(frozen=True)
class EpochStats:
    epoch: int
    l_det: float
    l_knowledge: float
    mean_w_rho: float
    mean_w_s: float


@dataclass
class TrainReport:
    mode: str
    rows: list[EpochStats]
    detector: SurrogateDetector

    @property
    def final(self) -> EpochStats:
        return self.rows[-1]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["epoch", "l_det", "l_knowledge", "mean_w_rho", "mean_w_s"])
        for r in self.rows:
            w.writerow(
                [r.epoch] + [format(v, ".17g") for v in (r.l_det, r.l_knowledge, r.mean_w_rho, r.mean_w_s)]
            )
        return buf.getvalue()

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "epochs": [
                {
                    "epoch": r.epoch,
                    "l_det": r.l_det,
                    "l_knowledge": r.l_knowledge,
                    "mean_w_rho": r.mean_w_rho,
                    "mean_w_s": r.mean_w_s,
                }
                for r in self.rows
            ],
            "final_logits": self.detector.to_dict(),
            "final_quality": {str(c): e for c, e in self.detector.qualities().items()},
        }


def _perturbed(rel: ImageRelation, delta: np.ndarray) -> ImageRelation:
    g0 = min(1.0, max(0.0, rel.background_gray + delta[0]))
    grays = {
        c: min(1.0, max(0.0, g + d)) for (c, g), d in zip(rel.class_grays.items(), delta[1:])
    }
    return ImageRelation(rel.image_id, g0, grays, rel.flags)


def adversarial_rho(
    det: SurrogateDetector, rel: ImageRelation, cfg: TrainConfig, rng: np.random.Generator
) -> float | None:
    """Lowest rank agreement over ``worst_of_m`` bounded perturbations of ``rel``."""
    if cfg.perturbation_eps == 0:
        candidates = [rel]
    else:
        deltas = rng.uniform(-cfg.perturbation_eps, cfg.perturbation_eps, (cfg.worst_of_m, rel.class_count + 1))
        candidates = [_perturbed(rel, d) for d in deltas]
    worst = None
    for cand in candidates:
        rho = spearman(RelationPair(rel, predict_relation(det, cand), cfg.rank_background))
        if rho is not None and (worst is None or rho < worst):
            worst = rho
    return worst


def evaluate(
    det: SurrogateDetector, relations: Sequence[ImageRelation], rank_background: bool = False
) -> tuple[float, float]:
    """Clean mean detection loss and mean knowledge loss.

    Images whose correlation is undefined are left out of the knowledge loss;
    it is NaN when no image has a defined correlation.
    """
    l_det = math.fsum(detector_loss(det, r) for r in relations) / len(relations)
    losses = []
    for r in relations:
        rho = spearman(RelationPair(r, predict_relation(det, r), rank_background))
        if rho is not None:
            losses.append(knowledge_loss(rho))
    l_know = math.fsum(losses) / len(losses) if losses else math.nan
    return l_det, l_know


def image_stabilities(
    relations: Sequence[ImageRelation], stability: StabilityMatrix
) -> list[float | None]:
    return [image_stability(stability, r.class_ids) for r in relations]


def run_training(
    relations: Iterable[ImageRelation],
    stability: StabilityMatrix | None,
    cfg: TrainConfig,
    detector: SurrogateDetector | None = None,
) -> TrainReport:
    """Minibatch gradient descent on the (optionally reweighted) detection loss.

    Row 0 of the report is the untrained detector; row ``e`` is evaluated
    after epoch ``e``.  Weight means are over the samples seen in that epoch.
    In ``plain`` mode every weight is 1 and ``stability`` may be ``None``.
    """
    relations = list(relations)
    if not relations:
        raise DomainError("no training relations")
    if detector is None:
        ids = sorted(set().union(*(r.class_ids for r in relations)))
        detector = SurrogateDetector(tuple(ids), np.zeros((len(ids), 2)))
    det = detector.copy()
    for r in relations:
        for c in r.class_ids:
            det.index(c)

    if stability is not None:
        s_values = image_stabilities(relations, stability)
    elif cfg.mode == "plain":
        s_values = [None] * len(relations)
    else:
        raise DomainError("kgat mode needs a stability matrix")

    rng = np.random.default_rng(cfg.seed)
    kgat = cfg.mode == "kgat"
    rows = [EpochStats(0, *evaluate(det, relations, cfg.rank_background), math.nan, math.nan)]
    for epoch in range(1, cfg.epochs + 1):
        w_rho_seen, w_s_seen = [], []
        order = rng.permutation(len(relations))
        for start in range(0, len(order), cfg.batch_size):
            batch = order[start : start + cfg.batch_size]
            total = np.zeros_like(det.logits)
            for idx in batch:
                rel = relations[idx]
                rho = adversarial_rho(det, rel, cfg, rng)
                _, grad = detector_loss_and_grad(det, rel)
                if kgat:
                    rec = weight_record(rel.image_id, rho, s_values[idx], cfg.weights, cfg.single_class_stability)
                else:
                    rec = WeightRecord(rel.image_id, 0.0 if rho is None else rho, 1.0, 0.0, 1.0)
                total += rec.w_rho * rec.w_s * grad
                w_rho_seen.append(rec.w_rho)
                w_s_seen.append(rec.w_s)
            det.logits -= cfg.learning_rate * (total / len(batch))
        l_det, l_know = evaluate(det, relations, cfg.rank_background)
        if not (math.isfinite(l_det) and np.all(np.isfinite(det.logits))):
            raise NumericError(f"non-finite loss or parameters at epoch {epoch}")
        rows.append(
            EpochStats(
                epoch,
                l_det,
                l_know,
                math.fsum(w_rho_seen) / len(w_rho_seen),
                math.fsum(w_s_seen) / len(w_s_seen),
            )
        )
    return TrainReport(cfg.mode, rows, det)


# --------------------------------------------------------------------------
# standard fixture


COOL_CLASS = 1
HOT_CLASS = 2


def mispredicted_fixture(
    seed: int,
    n_mixed: int = 40,
    n_hot_alone: int = 8,
    n_cool_alone: int = 40,
) -> tuple[list[ImageRelation], SurrogateDetector]:
    """Two classes whose order the initial detector gets backwards.

    The hot class is brighter than the cool one in every annotated image, but
    the starting detector sees the cool class well (``E ~ 0.8``) and the hot
    class poorly (``E = 0.25``), so predicted hot grays sit below predicted
    cool grays.  The hot class mostly appears together with the cool class;
    the cool class also appears alone in many images.
    """
    rng = np.random.default_rng(seed)
    relations = []
    kinds = ["mixed"] * n_mixed + ["hot"] * n_hot_alone + ["cool"] * n_cool_alone
    for image_id, kind in enumerate(kinds, start=1):
        g0 = rng.uniform(0.15, 0.25)
        cool = g0 + rng.normal(0.20, 0.02)
        hot = g0 + rng.normal(0.32, 0.02)
        grays = {
            "mixed": {COOL_CLASS: cool, HOT_CLASS: hot},
            "hot": {HOT_CLASS: hot},
            "cool": {COOL_CLASS: cool},
        }[kind]
        relations.append(ImageRelation(image_id, g0, grays))
    detector = SurrogateDetector.from_logits({COOL_CLASS: (2.2, 2.2), HOT_CLASS: (0.0, 0.0)})
    return relations, detector


def paired_runs(
    seeds: Sequence[int], cfg: TrainConfig, **fixture_kwargs
) -> list[tuple[float, float]]:
    """Final knowledge loss ``(kgat, plain)`` per seed on the standard fixture."""
    from .stability import empirical_stability

    out = []
    for seed in seeds:
        relations, det = mispredicted_fixture(seed, **fixture_kwargs)
        matrix = empirical_stability(relations)
        finals = []
        for mode in MODES:
            report = run_training(relations, matrix, replace(cfg, mode=mode, seed=seed), det)
            finals.append(report.final.l_knowledge)
        out.append((finals[0], finals[1]))
    return out


# budget at which the two modes are compared on the standard fixture; long
# runs drive both to zero knowledge loss and the comparison degenerates
STANDARD_CONFIG = TrainConfig(epochs=4, batch_size=8, learning_rate=0.5)
