"""Per-sample training weights from rank agreement and relation stability.

Weights are plain floats: the optimizer treats them as constants.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Sequence

from .errors import ConfigError, DomainError


@dataclass(frozen=True)
class WeightConfig:
    beta: float = 0.5
    upsilon: float = 0.95
    eta: float = 0.1
    gamma: float = 1.1

    def __post_init__(self) -> None:
        if not 0.0 < self.beta < 1.0:
            raise ConfigError(f"beta must lie strictly inside (0, 1), got {self.beta}")
        # the base is affine in S, so checking both ends of [0, 1] suffices
        if min(self.upsilon, self.upsilon + self.eta) <= 0.0:
            raise ConfigError("upsilon + eta * S must stay positive for S in [0, 1]")
        if not math.isfinite(self.gamma):
            raise ConfigError("gamma must be finite")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class WeightRecord:
    image_id: int
    rho: float
    w_rho: float
    s_x: float
    w_s: float

    @property
    def combined(self) -> float:
        return self.w_rho * self.w_s

    def to_dict(self) -> dict:
        return {
            "image_id": self.image_id,
            "rho": self.rho,
            "w_rho": self.w_rho,
            "s_x": self.s_x,
            "w_s": self.w_s,
            "combined": self.combined,
        }


def _check(rho: float, beta: float) -> None:
    if not 0.0 < beta < 1.0:
        raise ConfigError(f"beta must lie strictly inside (0, 1), got {beta}")
    if not -1.0 <= rho <= 1.0:
        raise DomainError(f"rho must lie in [-1, 1], got {rho}")


def rho_weight(rho: float, beta: float = 0.5) -> float:
    """``1 - ln(1 + beta * rho)``: large for poorly ordered samples, bounded."""
    _check(rho, beta)
    return 1.0 - math.log1p(beta * rho)


def rho_weight_gradient(rho: float, beta: float = 0.5) -> float:
    _check(rho, beta)
    return -beta / (1.0 + beta * rho)


def rho_weight_bounds(beta: float) -> tuple[float, float]:
    return 1.0 - math.log1p(beta), 1.0 - math.log1p(-beta)


def stability_weight(s: float, cfg: WeightConfig = WeightConfig()) -> float:
    if not 0.0 <= s <= 1.0:
        raise DomainError(f"stability must lie in [0, 1], got {s}")
    return (cfg.upsilon + cfg.eta * s) ** cfg.gamma


def resolve_rho(rho: float | None) -> float:
    """Undefined correlation (fewer than two shared classes) counts as 0."""
    return 0.0 if rho is None else rho


def weight_record(
    image_id: int,
    rho: float | None,
    s_x: float | None,
    cfg: WeightConfig = WeightConfig(),
    single_class_stability: float = 1.0,
) -> WeightRecord:
    """Combine both weights for one image.

    ``rho=None`` maps to the neutral 0; ``s_x=None`` (a single-class image)
    maps to ``single_class_stability``.
    """
    r = resolve_rho(rho)
    s = single_class_stability if s_x is None else s_x
    return WeightRecord(image_id, r, rho_weight(r, cfg.beta), s, stability_weight(s, cfg))


def batch_weighted_loss(losses: Sequence[float], records: Sequence[WeightRecord]) -> float:
    """Mean of per-image losses scaled by their combined weights."""
    if len(losses) != len(records):
        raise DomainError(f"{len(losses)} losses but {len(records)} weight records")
    if not losses:
        raise DomainError("empty batch")
    return math.fsum(r.w_rho * r.w_s * l for l, r in zip(losses, records)) / len(losses)
