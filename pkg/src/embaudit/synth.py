"""Seeded synthetic fixtures with planted ground truth.

Embedding datasets plant metadata-aligned cluster structure along fixed
axes, including a "flipped" subgroup whose sex-axis component is inverted
while the label stays put.  Image fixtures plant a parameterized neck curve
with a known vertical shift.  Both generators are pure functions of their
spec, so tests can assert exact recovery.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from datetime import date, timedelta
from typing import Optional

import numpy as np

from .data_model import Dataset, EmbeddingRecord, Region, SubjectMetadata
from .errors import ValidationError
from .image_analysis import Image

SEX_AXIS = 0
AGE_AXIS = 1
WEIGHT_AXIS = 2
HEIGHT_AXIS = 3
REGION_AXIS = 4
LOCATION_AXIS0 = 5  # one axis per location


@dataclass(frozen=True)
class SynthEmbeddingSpec:
    """Planted-structure embedding dataset description.

    Separations are expressed in units of the within-cluster noise std.
    flipped_fraction of subjects get their sex-axis coordinate negated
    (keeping the sex label), mirroring a subgroup whose features indicate
    the opposite sex.
    """

    n_subjects: int
    dim: int
    separation: float = 10.0  # male/female gap along the sex axis
    flipped_fraction: float = 0.0
    continuous_scale: float = 2.0  # axis units per standardized factor value
    region_offset: float = 4.0
    locations: tuple = ("Berlin", "Essen", "Neubrandenburg")
    location_offset: float = 0.0
    noise_std: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.n_subjects < 1:
            raise ValidationError("n_subjects must be >= 1")
        if not (0.0 <= self.flipped_fraction <= 1.0):
            raise ValidationError("flipped_fraction must lie in [0, 1]")
        if self.separation < 0:
            raise ValidationError("separation must be >= 0")
        n_axes = LOCATION_AXIS0 + (len(self.locations) if self.location_offset else 0)
        if self.dim < n_axes:
            raise ValidationError(
                f"dim={self.dim} smaller than the {n_axes} requested factor directions"
            )


@dataclass(frozen=True)
class SynthTruth:
    flipped: bool
    sex: str
    age_years: int
    height_m: float
    weight_kg: float
    location: str


def generate_embeddings(spec: SynthEmbeddingSpec):
    """Build (Dataset, truth table) with metadata-aligned Gaussian clusters.

    Per-record noise comes from substreams keyed by record index, so the
    output is deterministic and independent of generation order.
    """
    rng = np.random.default_rng([spec.seed, 0xE0B])
    n = spec.n_subjects
    ids = [f"S{i:05d}" for i in range(n)]

    sexes = np.array(["male"] * ((n + 1) // 2) + ["female"] * (n // 2))
    sexes = sexes[rng.permutation(n)]
    ages = rng.integers(20, 73, size=n)
    # factors are drawn independently so each planted axis carries exactly
    # one variable (probes recover clean directions)
    heights = rng.normal(1.715, 0.09, size=n).clip(1.30, 2.00)
    weights = rng.normal(74.0, 14.0, size=n).clip(40.0, 150.0)
    locations = np.array(spec.locations)[rng.integers(len(spec.locations), size=n)]
    day_offsets = rng.integers(0, 3 * 365, size=n)

    n_flip = int(np.floor(spec.flipped_fraction * n))
    flip_order = rng.permutation(n)
    flipped = np.zeros(n, dtype=bool)
    flipped[flip_order[:n_flip]] = True

    metadata = {}
    truth = {}
    start = date(2014, 6, 1)
    for i, sid in enumerate(ids):
        metadata[sid] = SubjectMetadata(
            subject_id=sid,
            sex=str(sexes[i]),
            age_years=int(ages[i]),
            height_m=float(heights[i]),
            weight_kg=float(weights[i]),
            location=str(locations[i]),
            acq_date=start + timedelta(days=int(day_offsets[i])),
        )
        truth[sid] = SynthTruth(
            flipped=bool(flipped[i]),
            sex=str(sexes[i]),
            age_years=int(ages[i]),
            height_m=float(heights[i]),
            weight_kg=float(weights[i]),
            location=str(locations[i]),
        )

    loc_index = {loc: k for k, loc in enumerate(spec.locations)}
    records = []
    rec_no = 0
    for i, sid in enumerate(ids):
        sex_sign = 1.0 if sexes[i] == "male" else -1.0
        z_age = (ages[i] - 46.0) / 15.0
        z_weight = (weights[i] - 74.0) / 14.0
        z_height = (heights[i] - 1.715) / 0.09
        for region in Region:
            sub = np.random.default_rng([spec.seed, 0x5EC, rec_no])
            vec = sub.normal(0.0, spec.noise_std, size=spec.dim)
            vec[SEX_AXIS] += sex_sign * spec.separation / 2.0 * spec.noise_std
            vec[AGE_AXIS] += z_age * spec.continuous_scale
            vec[WEIGHT_AXIS] += z_weight * spec.continuous_scale
            vec[HEIGHT_AXIS] += z_height * spec.continuous_scale
            vec[REGION_AXIS] += int(region) * spec.region_offset
            if spec.location_offset:
                vec[LOCATION_AXIS0 + loc_index[str(locations[i])]] += spec.location_offset
            if flipped[i]:
                vec[SEX_AXIS] = -vec[SEX_AXIS]
            records.append(EmbeddingRecord(sid, region, vec.astype(np.float32)))
            rec_no += 1

    ds = Dataset(dim=spec.dim, records=records, metadata=metadata)
    return ds, truth


# ---------------------------------------------------------------------------
# Neck-curve images
# ---------------------------------------------------------------------------

IMAGE_SIZE = 256


@dataclass(frozen=True)
class SynthImageSpec:
    """Images of a bright body whose right boundary follows a known curve."""

    count: int
    amplitude: float = 30.0
    curvature: float = 20.0
    base_col: float = 160.0
    vertical_shift: int = 0  # positive moves content toward larger rows
    noise_std: float = 0.0  # on the [-1, 1] pixel scale
    tissue_level: float = 0.7
    background_level: float = -0.9
    seed: int = 0

    def __post_init__(self):
        if self.count < 1:
            raise ValidationError("count must be >= 1")
        if abs(self.vertical_shift) >= IMAGE_SIZE:
            raise ValidationError(
                f"vertical_shift must stay within image bounds (|v| < {IMAGE_SIZE})"
            )
        if self.noise_std < 0:
            raise ValidationError("noise_std must be >= 0")


def curve_columns(spec: SynthImageSpec) -> np.ndarray:
    """Ground-truth rightmost tissue column per row; -1 where shifted out."""
    rows = np.arange(IMAGE_SIZE)
    src = rows - spec.vertical_shift
    in_fov = (src >= 0) & (src < IMAGE_SIZE)
    # non-periodic mix of a sine and a parabola: unique under translation
    cols = (
        spec.base_col
        + spec.amplitude * np.sin(2.0 * np.pi * src / 97.0)
        + spec.curvature * ((src - 128.0) / 128.0) ** 2
    )
    cols = np.clip(np.rint(cols), 0, IMAGE_SIZE - 1).astype(np.int64)
    cols[~in_fov] = -1
    return cols


def generate_neck_images(spec: SynthImageSpec):
    """Build (images, ground-truth curve) for one synthetic cluster.

    All images share the curve; only the per-image Gaussian noise differs.
    Pixels are clipped to [-1, 1] after adding noise.
    """
    curve = curve_columns(spec)
    base = np.full((IMAGE_SIZE, IMAGE_SIZE), spec.background_level)
    cols = np.arange(IMAGE_SIZE)
    for r in range(IMAGE_SIZE):
        if curve[r] >= 0:
            base[r, cols <= curve[r]] = spec.tissue_level
    images = []
    for k in range(spec.count):
        if spec.noise_std > 0:
            sub = np.random.default_rng([spec.seed, 0x1A6, k])
            pixels = base + sub.normal(0.0, spec.noise_std, size=base.shape)
            pixels = np.clip(pixels, -1.0, 1.0)
        else:
            pixels = base.copy()
        images.append(Image(pixels=pixels))
    return images, curve
