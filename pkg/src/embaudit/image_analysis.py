"""Framing-anomaly detection from 2-D grayscale images.

Images are normalized to [-1, 1] and center-cropped to 256x256.  The framing
signal is the per-row rightmost tissue column ("edge profile"); cluster mean
profiles are compared by normalized cross-correlation to estimate vertical
shifts between acquisition setups.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import FormatError, ValidationError

CROP_SIZE = 256


@dataclass(frozen=True)
class Image:
    """Grayscale image, row-major pixels in [-1, 1]."""

    pixels: np.ndarray

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=np.float64)
        if px.ndim != 2:
            raise ValidationError("image pixels must be a 2-D array")
        if not np.all(np.isfinite(px)):
            raise ValidationError("image contains non-finite pixels")
        if px.size and (px.min() < -1.0 or px.max() > 1.0):
            raise ValidationError("image pixels must lie in [-1, 1]")
        object.__setattr__(self, "pixels", px)

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]


@dataclass(frozen=True)
class EdgeProfile:
    """Per-row rightmost tissue column; -1 marks rows with no tissue."""

    values: np.ndarray  # int64, length = image height
    tau: float  # threshold on the [0, 1] intensity scale

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=np.int64)
        object.__setattr__(self, "values", vals)


# ---------------------------------------------------------------------------
# Loading and normalization
# ---------------------------------------------------------------------------

def load_and_normalize(path) -> Image:
    """Load a P5 PGM or RAWF32 image, rescale to [-1, 1], center-crop 256x256.

    Rescaling divides by the image's max value (linear from [0, max]), then
    maps [0, 1] to [-1, 1].  Crop offsets are floor((dim - 256) / 2).
    """
    path = Path(path)
    sidecar = Path(str(path) + ".json")
    if path.suffix.lower() == ".pgm":
        raw = _read_pgm(path)
    elif sidecar.exists():
        raw = _read_rawf32(path, sidecar)
    else:
        raise FormatError(
            f"{path}: not a .pgm file and no RAWF32 sidecar {sidecar.name} found"
        )
    h, w = raw.shape
    if h < CROP_SIZE or w < CROP_SIZE:
        raise ValidationError(
            f"{path}: image is {w}x{h}, both dimensions must be >= {CROP_SIZE}"
        )
    if raw.min() < 0:
        raise FormatError(f"{path}: negative pixel values cannot be rescaled from [0, max]")
    max_val = raw.max()
    if max_val == 0:
        raise ValidationError(f"{path}: max-value 0, rescaling undefined")
    scaled = raw / max_val * 2.0 - 1.0
    top = (h - CROP_SIZE) // 2
    left = (w - CROP_SIZE) // 2
    cropped = scaled[top : top + CROP_SIZE, left : left + CROP_SIZE]
    return Image(pixels=cropped)


def _read_pgm(path: Path) -> np.ndarray:
    data = path.read_bytes()
    if data[:2] != b"P5":
        raise FormatError(f"{path}: not a binary PGM (P5) file")
    # Header: P5, width, height, maxval as whitespace-separated tokens,
    # comments (#...) allowed between them.
    pos = 2
    fields = []
    while len(fields) < 3:
        m = re.compile(rb"\s*(?:#[^\n]*\n\s*)*(\d+)").match(data, pos)
        if not m:
            raise FormatError(f"{path}: malformed PGM header")
        fields.append(int(m.group(1)))
        pos = m.end()
    width, height, maxval = fields
    if not (0 < maxval <= 65535):
        raise FormatError(f"{path}: PGM maxval must be in 1..65535, got {maxval}")
    pos += 1  # single whitespace byte after maxval
    dtype = ">u2" if maxval > 255 else "u1"
    count = width * height
    pixels = np.frombuffer(data, dtype=dtype, count=count, offset=pos)
    if pixels.size != count:
        raise FormatError(f"{path}: truncated PGM pixel data")
    return pixels.reshape(height, width).astype(np.float64)


def _read_rawf32(path: Path, sidecar: Path) -> np.ndarray:
    try:
        meta = json.loads(sidecar.read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{sidecar}: malformed JSON sidecar: {exc}") from None
    try:
        width, height, dtype = meta["width"], meta["height"], meta["dtype"]
    except (KeyError, TypeError):
        raise FormatError(f"{sidecar}: sidecar needs width, height, dtype") from None
    if dtype != "f32le":
        raise FormatError(f"{sidecar}: unsupported dtype {dtype!r}")
    buf = path.read_bytes()
    count = width * height
    if len(buf) != 4 * count:
        raise FormatError(
            f"{path}: expected {4 * count} bytes for {width}x{height} f32, got {len(buf)}"
        )
    pixels = np.frombuffer(buf, dtype="<f4").astype(np.float64)
    if not np.all(np.isfinite(pixels)):
        raise FormatError(f"{path}: non-finite pixel values")
    return pixels.reshape(height, width)


def write_pgm(img: Image, dest, maxval: int = 65535) -> None:
    """Export an image as binary PGM, mapping [-1, 1] onto [0, maxval]."""
    if not (0 < maxval <= 65535):
        raise ValidationError(f"maxval must be in 1..65535, got {maxval}")
    v01 = (img.pixels + 1.0) / 2.0
    quant = np.rint(v01 * maxval)
    dtype = ">u2" if maxval > 255 else "u1"
    header = f"P5\n{img.width} {img.height}\n{maxval}\n".encode("ascii")
    body = quant.astype(dtype).tobytes()
    if hasattr(dest, "write"):
        dest.write(header)
        dest.write(body)
    else:
        with open(dest, "wb") as fh:
            fh.write(header)
            fh.write(body)


def write_rawf32(pixels: np.ndarray, path) -> None:
    """Write a raw little-endian f32 image plus its JSON sidecar."""
    px = np.asarray(pixels, dtype=np.float64)
    path = Path(path)
    path.write_bytes(px.astype("<f4").tobytes())
    sidecar = Path(str(path) + ".json")
    sidecar.write_text(
        json.dumps({"width": px.shape[1], "height": px.shape[0], "dtype": "f32le"})
    )


# ---------------------------------------------------------------------------
# Profiles and shift estimation
# ---------------------------------------------------------------------------

def edge_profile(img: Image, tau: float = 0.1) -> EdgeProfile:
    """Rightmost column per row whose [0, 1]-rescaled intensity is >= tau."""
    if not (0.0 < tau <= 1.0):
        raise ValidationError(f"tau must be in (0, 1], got {tau}")
    # pixels live in [-1, 1]; (p + 1) / 2 >= tau, computed on the pixel scale
    above = img.pixels >= 2.0 * tau - 1.0
    values = np.full(img.height, -1, dtype=np.int64)
    any_row = above.any(axis=1)
    # argmax of reversed row gives the rightmost True
    rev_idx = np.argmax(above[:, ::-1], axis=1)
    values[any_row] = img.width - 1 - rev_idx[any_row]
    return EdgeProfile(values=values, tau=tau)


def mean_image(images: Sequence[Image]) -> Image:
    """Pixelwise arithmetic mean of same-shape images, in fixed input order."""
    if not images:
        raise ValidationError("mean_image needs at least one image")
    shape = images[0].pixels.shape
    for img in images:
        if img.pixels.shape != shape:
            raise ValidationError(
                f"shape mismatch: {img.pixels.shape} vs {shape}"
            )
    acc = np.zeros(shape, dtype=np.float64)
    for img in images:
        acc += img.pixels
    return Image(pixels=acc / len(images))


def aggregate_profiles(profiles: Sequence) -> np.ndarray:
    """Sentinel-aware mean profile.

    Each row averages the non-sentinel entries across profiles; a row is -1
    only if every input is -1 there.  Accepts EdgeProfile objects or arrays.
    """
    if not len(profiles):
        raise ValidationError("aggregate_profiles needs at least one profile")
    arrays = [
        np.asarray(p.values if isinstance(p, EdgeProfile) else p, dtype=np.float64)
        for p in profiles
    ]
    length = arrays[0].shape
    for a in arrays:
        if a.shape != length:
            raise ValidationError("profiles must have equal lengths")
    stack = np.stack(arrays)
    valid = stack != -1
    counts = valid.sum(axis=0)
    sums = np.where(valid, stack, 0.0).sum(axis=0)
    out = np.full(arrays[0].shape, -1.0)
    nonzero = counts > 0
    out[nonzero] = sums[nonzero] / counts[nonzero]
    return out


@dataclass(frozen=True)
class ShiftResult:
    shift: int
    score: float


MIN_OVERLAP = 8


def estimate_shift(profile_a, profile_b, max_shift: int = 128) -> ShiftResult:
    """Vertical shift of profile_a that best aligns it with profile_b.

    Positive shift means profile_b looks like profile_a moved toward larger
    row indices.  The score is the Pearson correlation of the overlapping
    non-sentinel rows at the chosen shift; ties prefer the smallest |shift|,
    then the smaller shift.  Requires >= 8 overlapping rows at some shift.
    """
    a = np.asarray(
        profile_a.values if isinstance(profile_a, EdgeProfile) else profile_a,
        dtype=np.float64,
    )
    b = np.asarray(
        profile_b.values if isinstance(profile_b, EdgeProfile) else profile_b,
        dtype=np.float64,
    )
    if a.shape != b.shape:
        raise ValidationError("profiles must have equal lengths")
    n = a.size
    best_shift = None
    best_score = -np.inf
    # ordering implements the tie rule: |s| ascending, negative before none
    for s in sorted(range(-max_shift, max_shift + 1), key=lambda s: (abs(s), s)):
        # rows i of a matched against rows i + s of b
        i_lo = max(0, -s)
        i_hi = min(n, n - s)
        if i_hi - i_lo < MIN_OVERLAP:
            continue
        seg_a = a[i_lo:i_hi]
        seg_b = b[i_lo + s : i_hi + s]
        valid = (seg_a != -1) & (seg_b != -1)
        if valid.sum() < MIN_OVERLAP:
            continue
        score = _correlation(seg_a[valid], seg_b[valid])
        if score is None:
            continue
        if score > best_score:
            best_score = score
            best_shift = s
    if best_shift is None:
        raise ValidationError(
            f"insufficient overlap (< {MIN_OVERLAP} rows) at every shift"
        )
    return ShiftResult(shift=best_shift, score=float(best_score))


def _correlation(x: np.ndarray, y: np.ndarray):
    """Pearson correlation; constant segments count only as exact matches."""
    xc = x - x.mean()
    yc = y - y.mean()
    denom = np.sqrt((xc * xc).sum() * (yc * yc).sum())
    if denom == 0.0:
        return 1.0 if np.array_equal(x, y) else None
    return float((xc * yc).sum() / denom)


def profile_to_csv(profile, dest) -> None:
    """Write a profile as CSV rows `row,edge_col` (sentinel rows included)."""
    values = np.asarray(
        profile.values if isinstance(profile, EdgeProfile) else profile
    )
    close = False
    if isinstance(dest, (str, Path)):
        dest = open(dest, "w", newline="")
        close = True
    try:
        dest.write("row,edge_col\n")
        for r, v in enumerate(values):
            if float(v) == int(v):
                dest.write(f"{r},{int(v)}\n")
            else:
                dest.write(f"{r},{v!r}\n")
    finally:
        if close:
            dest.close()
