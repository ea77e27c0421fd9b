"""Gray-body imaging chain and synthetic infrared scenes.

Planck radiance -> emissivity -> transmittance + path radiance -> band
integral -> monotone imaging operator -> additive gray noise.  Wavelengths are
in micrometres, radiance in W m^-2 sr^-1 um^-1 (band radiance in W m^-2 sr^-1).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy import constants

from .errors import DomainError
from .ingest import BoundingBox, GrayImage

H = constants.h
C = constants.c
K_B = constants.k
WIEN_B_UM_K = constants.Wien * 1e6  # 2897.77 um K


def planck_radiance(wavelength_um, temperature_k):
    """Blackbody spectral radiance per micrometre of wavelength.

    Accepts scalars or arrays; returns a float for scalar input.
    """
    lam_um = np.asarray(wavelength_um, dtype=np.float64)
    t = np.asarray(temperature_k, dtype=np.float64)
    if np.any(lam_um <= 0) or np.any(t <= 0):
        raise DomainError("wavelength and temperature must be positive")
    lam = lam_um * 1e-6
    # per metre -> per micrometre
    b = 2.0 * H * C**2 / lam**5 / np.expm1(H * C / (lam * K_B * t)) * 1e-6
    return float(b) if b.ndim == 0 else b


@dataclass(frozen=True)
class SpectralParams:
    """Spatially constant gray-body and propagation parameters of one class."""

    temperature: float
    emissivity: float = 1.0
    transmittance: float = 1.0
    path_radiance: float = 0.0

    def __post_init__(self) -> None:
        if not 0.0 < self.emissivity <= 1.0:
            raise DomainError(f"emissivity must lie in (0, 1], got {self.emissivity}")
        if self.temperature <= 0:
            raise DomainError(f"temperature must be positive, got {self.temperature}")
        if self.transmittance < 0 or self.path_radiance < 0:
            raise DomainError("transmittance and path radiance must be nonnegative")


@dataclass(frozen=True)
class BandSpec:
    lambda_min: float = 8.0
    lambda_max: float = 14.0
    grid_points: int = 121
    response: tuple[float, ...] | None = None  # None means a flat unit response

    def __post_init__(self) -> None:
        if self.grid_points < 2:
            raise DomainError(f"need at least 2 grid points, got {self.grid_points}")
        if not 0 < self.lambda_min < self.lambda_max:
            raise DomainError("need 0 < lambda_min < lambda_max")
        if self.response is not None:
            r = tuple(float(v) for v in self.response)
            if len(r) != self.grid_points:
                raise DomainError("response must have one value per grid point")
            if not all(math.isfinite(v) and v >= 0 for v in r):
                raise DomainError("response values must be finite and nonnegative")
            object.__setattr__(self, "response", r)

    @property
    def wavelengths(self) -> np.ndarray:
        return np.linspace(self.lambda_min, self.lambda_max, self.grid_points)

    @property
    def response_values(self) -> np.ndarray:
        if self.response is None:
            return np.ones(self.grid_points)
        return np.asarray(self.response)


def sensor_radiance(l_obj, params: SpectralParams):
    if np.any(np.asarray(l_obj) < 0):
        raise DomainError("object radiance must be nonnegative")
    return params.transmittance * l_obj + params.path_radiance


def band_radiance(params: SpectralParams, band: BandSpec = BandSpec()) -> float:
    """Trapezoidal band integral of response x at-sensor gray-body radiance."""
    lam = band.wavelengths
    l_obj = params.emissivity * planck_radiance(lam, params.temperature)
    integrand = band.response_values * sensor_radiance(l_obj, params)
    return float(np.trapezoid(integrand, lam))


@dataclass(frozen=True)
class ImagingOperator:
    """Affine map of the radiance window [low, high] onto [0, 1], clipped."""

    low: float
    high: float

    def __post_init__(self) -> None:
        if not self.high > self.low:
            raise DomainError("imaging window needs high > low")

    def __call__(self, radiance):
        g = (np.asarray(radiance, dtype=np.float64) - self.low) / (self.high - self.low)
        g = np.clip(g, 0.0, 1.0)
        return float(g) if g.ndim == 0 else g


@dataclass(frozen=True)
class ClassRegion:
    class_id: int
    params: SpectralParams
    boxes: tuple[BoundingBox, ...]


@dataclass(frozen=True)
class SceneSpec:
    width: int
    height: int
    background: SpectralParams
    classes: tuple[ClassRegion, ...]
    imaging: ImagingOperator
    noise_sigma: float = 0.0
    rng_seed: int = 0
    band: BandSpec = field(default_factory=BandSpec)

    def __post_init__(self) -> None:
        if self.width <= 0 or self.height <= 0:
            raise DomainError("scene dimensions must be positive")
        if self.noise_sigma < 0:
            raise DomainError("noise_sigma must be nonnegative")
        for region in self.classes:
            for b in region.boxes:
                if b.class_id != region.class_id:
                    raise DomainError(f"box class {b.class_id} filed under class {region.class_id}")
                if b.x < 0 or b.y < 0 or b.x + b.w > self.width or b.y + b.h > self.height:
                    raise DomainError(f"box {b} exceeds the {self.width}x{self.height} scene")

    @classmethod
    def from_dict(cls, doc: Mapping) -> SceneSpec:
        def params(d: Mapping) -> SpectralParams:
            return SpectralParams(
                temperature=float(d["temperature"]),
                emissivity=float(d.get("emissivity", 1.0)),
                transmittance=float(d.get("transmittance", 1.0)),
                path_radiance=float(d.get("path_radiance", 0.0)),
            )

        regions = []
        for c in doc["classes"]:
            cid = int(c["class_id"])
            boxes = tuple(BoundingBox(*(int(v) for v in b), cid) for b in c["boxes"])
            regions.append(ClassRegion(cid, params(c), boxes))
        band = doc.get("band", {})
        return cls(
            width=int(doc["width"]),
            height=int(doc["height"]),
            background=params(doc["background"]),
            classes=tuple(regions),
            imaging=ImagingOperator(float(doc["imaging"]["low"]), float(doc["imaging"]["high"])),
            noise_sigma=float(doc.get("noise_sigma", 0.0)),
            rng_seed=int(doc.get("rng_seed", 0)),
            band=BandSpec(
                lambda_min=float(band.get("lambda_min", 8.0)),
                lambda_max=float(band.get("lambda_max", 14.0)),
                grid_points=int(band.get("grid_points", 121)),
                response=band.get("response"),
            ),
        )


def noise_field(seed: int, shape: tuple[int, int], sigma: float) -> np.ndarray:
    """Gaussian noise from a counter-based stream keyed by ``seed``.

    Philox is counter based, so the draw for pixel ``i`` in row-major order
    depends only on (seed, i) and the field is reproducible however it is
    produced.
    """
    gen = np.random.Generator(np.random.Philox(key=seed))
    return sigma * gen.standard_normal(shape)


def render_scene(spec: SceneSpec) -> tuple[GrayImage, list[BoundingBox]]:
    """Render a gray image; later classes paint over earlier ones on overlap."""
    radiance = np.full((spec.height, spec.width), band_radiance(spec.background, spec.band))
    boxes: list[BoundingBox] = []
    for region in spec.classes:
        value = band_radiance(region.params, spec.band)
        for b in region.boxes:
            radiance[b.y : b.y + b.h, b.x : b.x + b.w] = value
            boxes.append(b)
    gray = spec.imaging(radiance)
    if spec.noise_sigma > 0:
        gray = np.clip(gray + noise_field(spec.rng_seed, gray.shape, spec.noise_sigma), 0.0, 1.0)
    return GrayImage(gray), boxes


def coco_document(
    scenes: Sequence[tuple[int, str, GrayImage, Sequence[BoundingBox]]],
    class_names: Mapping[int, str],
) -> dict:
    """COCO-style annotation document for rendered scenes."""
    images, annotations = [], []
    for image_id, file_name, image, boxes in scenes:
        images.append(
            {"id": image_id, "file_name": file_name, "width": image.width, "height": image.height}
        )
        for b in boxes:
            annotations.append(
                {
                    "id": len(annotations) + 1,
                    "image_id": image_id,
                    "category_id": b.class_id,
                    "bbox": [b.x, b.y, b.w, b.h],
                }
            )
    categories = [{"id": cid, "name": name} for cid, name in sorted(class_names.items())]
    return {"images": images, "annotations": annotations, "categories": categories}
