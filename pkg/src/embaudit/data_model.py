"""Canonical dataset representation and ingestion.

An embedding dataset is a set of per-(subject, region) vectors of one shared
dimension plus per-subject metadata.  Sources are either the EMB1 binary
format or CSV; metadata always comes from CSV.  Subject-level train/val/test
splits keep all regions of one subject on the same side.
"""

from __future__ import annotations

import csv
import io
import struct
from dataclasses import dataclass, field
from datetime import date
from enum import IntEnum
from pathlib import Path
from typing import BinaryIO, Iterable, Mapping, Optional, Sequence

import numpy as np

from .errors import FormatError, ValidationError

EMB1_MAGIC = b"EMB1"

METADATA_HEADER = [
    "subject_id",
    "sex",
    "age_years",
    "height_m",
    "weight_kg",
    "location",
    "acq_date",
]

# Observed ranges from the study population; exceeding them is suspicious,
# not invalid.
AGE_RANGE = (20, 72)
HEIGHT_RANGE = (1.25, 2.05)
WEIGHT_RANGE = (38.0, 192.0)


class Region(IntEnum):
    """Spine region of one embedding; values are the EMB1 wire codes."""

    cervical = 0
    thoracic = 1
    lumbar = 2

    @classmethod
    def from_name(cls, name: str) -> "Region":
        try:
            return cls[name.strip().lower()]
        except KeyError:
            raise FormatError(f"unknown region code: {name!r}") from None


@dataclass(frozen=True)
class EmbeddingRecord:
    """One subject-region embedding vector."""

    subject_id: str
    region: Region
    vector: np.ndarray  # float32, length = dataset dim

    def __post_init__(self):
        vec = np.asarray(self.vector, dtype=np.float32)
        if vec.ndim != 1:
            raise ValidationError("embedding vector must be 1-D")
        if not np.all(np.isfinite(vec)):
            raise ValidationError(
                f"non-finite component in embedding for {self.subject_id!r}"
            )
        object.__setattr__(self, "vector", vec)


@dataclass(frozen=True)
class SubjectMetadata:
    """Protected and nuisance variables for one subject.

    Any field other than subject_id may be None, meaning missing; missing
    values are excluded per task downstream, never imputed.
    """

    subject_id: str
    sex: Optional[str] = None  # "male" | "female"
    age_years: Optional[int] = None
    height_m: Optional[float] = None
    weight_kg: Optional[float] = None
    location: Optional[str] = None
    acq_date: Optional[date] = None

    def __post_init__(self):
        if self.sex is not None and self.sex not in ("male", "female"):
            raise ValidationError(f"sex must be 'male' or 'female', got {self.sex!r}")


@dataclass(frozen=True)
class SplitAssignment:
    """Subject-level train/val/test assignment, reproducible from seed."""

    assignment: Mapping[str, str]  # subject_id -> "train" | "val" | "test"
    seed: int

    def subjects(self, part: str) -> list[str]:
        return sorted(s for s, p in self.assignment.items() if p == part)


@dataclass
class Dataset:
    """Immutable-after-ingest collection of embeddings plus metadata."""

    dim: int
    records: list[EmbeddingRecord]
    metadata: dict[str, SubjectMetadata]
    split: Optional[SplitAssignment] = None

    def __post_init__(self):
        seen = set()
        for rec in self.records:
            if len(rec.vector) != self.dim:
                raise ValidationError(
                    f"record {rec.subject_id!r}/{rec.region.name} has dim "
                    f"{len(rec.vector)}, dataset dim is {self.dim}"
                )
            key = (rec.subject_id, rec.region)
            if key in seen:
                raise ValidationError(f"duplicate record {key}")
            seen.add(key)
            if rec.subject_id not in self.metadata:
                raise ValidationError(
                    f"record {rec.subject_id!r} has no metadata entry"
                )

    @property
    def n_records(self) -> int:
        return len(self.records)

    def subject_ids(self) -> list[str]:
        return sorted({rec.subject_id for rec in self.records})

    def matrix(self) -> np.ndarray:
        """All vectors stacked into an (n_records, dim) float32 array."""
        if not self.records:
            return np.zeros((0, self.dim), dtype=np.float32)
        return np.stack([rec.vector for rec in self.records])


@dataclass
class IngestResult:
    """Dataset built from a source pair plus the rejection report."""

    dataset: Dataset
    rejected_subjects: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.rejected_subjects


# ---------------------------------------------------------------------------
# EMB1 binary format
# ---------------------------------------------------------------------------

def write_emb1(records: Sequence[EmbeddingRecord], dim: int, dest) -> None:
    """Write records in the EMB1 binary format (little-endian throughout)."""
    close = False
    if isinstance(dest, (str, Path)):
        dest = open(dest, "wb")
        close = True
    try:
        dest.write(EMB1_MAGIC)
        dest.write(struct.pack("<II", len(records), dim))
        for rec in records:
            if len(rec.vector) != dim:
                raise ValidationError(
                    f"record {rec.subject_id!r} has dim {len(rec.vector)}, "
                    f"stream declares {dim}"
                )
            sid = rec.subject_id.encode("utf-8")
            dest.write(struct.pack("<I", len(sid)))
            dest.write(sid)
            dest.write(struct.pack("<B", int(rec.region)))
            dest.write(rec.vector.astype("<f4").tobytes())
    finally:
        if close:
            dest.close()


def read_emb1(source) -> tuple[list[EmbeddingRecord], int]:
    """Read an EMB1 stream; returns (records, declared dimension)."""
    close = False
    if isinstance(source, (str, Path)):
        source = open(source, "rb")
        close = True
    elif isinstance(source, (bytes, bytearray)):
        source = io.BytesIO(source)
    try:
        return _read_emb1_stream(source)
    finally:
        if close:
            source.close()


def _read_emb1_stream(fh: BinaryIO) -> tuple[list[EmbeddingRecord], int]:
    magic = fh.read(4)
    if magic != EMB1_MAGIC:
        raise FormatError(f"bad EMB1 magic: {magic!r}")
    head = fh.read(8)
    if len(head) != 8:
        raise FormatError("truncated EMB1 header")
    n, dim = struct.unpack("<II", head)
    records = []
    seen = set()
    for k in range(n):
        raw = fh.read(4)
        if len(raw) != 4:
            raise FormatError(f"truncated EMB1 record {k}")
        (id_len,) = struct.unpack("<I", raw)
        sid_bytes = fh.read(id_len)
        if len(sid_bytes) != id_len:
            raise FormatError(f"truncated subject id in record {k}")
        sid = sid_bytes.decode("utf-8")
        raw = fh.read(1)
        if not raw:
            raise FormatError(f"truncated region byte in record {k}")
        region_code = raw[0]
        try:
            region = Region(region_code)
        except ValueError:
            raise FormatError(
                f"unknown region code {region_code} in record {k}"
            ) from None
        vec_bytes = fh.read(4 * dim)
        if len(vec_bytes) != 4 * dim:
            raise FormatError(
                f"record {k} ({sid!r}): expected {dim} f32 values, stream ended"
            )
        vector = np.frombuffer(vec_bytes, dtype="<f4").copy()
        key = (sid, region)
        if key in seen:
            raise FormatError(f"duplicate (subject_id, region) pair {key}")
        seen.add(key)
        records.append(EmbeddingRecord(sid, region, vector))
    return records, dim


# ---------------------------------------------------------------------------
# CSV formats
# ---------------------------------------------------------------------------

def read_embedding_csv(source) -> tuple[list[EmbeddingRecord], int]:
    """Read the CSV alternative: header subject_id,region,e0,...,e{d-1}."""
    close = False
    if isinstance(source, (str, Path)):
        source = open(source, newline="")
        close = True
    elif isinstance(source, (bytes, bytearray)):
        source = io.StringIO(source.decode("utf-8"))
    try:
        reader = csv.reader(source)
        try:
            header = next(reader)
        except StopIteration:
            raise FormatError("empty embedding CSV") from None
        if header[:2] != ["subject_id", "region"]:
            raise FormatError(
                "embedding CSV header must start with subject_id,region"
            )
        dim = len(header) - 2
        expected = [f"e{i}" for i in range(dim)]
        if header[2:] != expected:
            raise FormatError("embedding CSV columns must be e0,...,e{d-1}")
        records = []
        seen = set()
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != dim + 2:
                raise FormatError(
                    f"line {line_no}: expected {dim + 2} fields, got {len(row)}"
                )
            sid = row[0]
            region = Region.from_name(row[1])
            try:
                vector = np.array([float(v) for v in row[2:]], dtype=np.float32)
            except ValueError:
                raise FormatError(
                    f"line {line_no}: malformed numeric field"
                ) from None
            key = (sid, region)
            if key in seen:
                raise FormatError(f"duplicate (subject_id, region) pair {key}")
            seen.add(key)
            records.append(EmbeddingRecord(sid, region, vector))
        return records, dim
    finally:
        if close:
            source.close()


def write_embedding_csv(records: Sequence[EmbeddingRecord], dim: int, dest) -> None:
    close = False
    if isinstance(dest, (str, Path)):
        dest = open(dest, "w", newline="")
        close = True
    try:
        writer = csv.writer(dest)
        writer.writerow(["subject_id", "region"] + [f"e{i}" for i in range(dim)])
        for rec in records:
            writer.writerow(
                [rec.subject_id, rec.region.name] + [repr(float(v)) for v in rec.vector]
            )
    finally:
        if close:
            dest.close()


_SEX_CODES = {"M": "male", "F": "female"}


def read_metadata_csv(source) -> dict[str, SubjectMetadata]:
    """Read the metadata CSV; empty cells mean missing, never defaulted."""
    close = False
    if isinstance(source, (str, Path)):
        source = open(source, newline="")
        close = True
    elif isinstance(source, (bytes, bytearray)):
        source = io.StringIO(source.decode("utf-8"))
    try:
        reader = csv.reader(source)
        try:
            header = next(reader)
        except StopIteration:
            raise FormatError("empty metadata CSV") from None
        if header != METADATA_HEADER:
            raise FormatError(
                f"metadata CSV header must be {','.join(METADATA_HEADER)}"
            )
        meta: dict[str, SubjectMetadata] = {}
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(METADATA_HEADER):
                raise FormatError(
                    f"line {line_no}: expected {len(METADATA_HEADER)} fields"
                )
            sid, sex_raw, age_raw, height_raw, weight_raw, loc, date_raw = row
            if sid in meta:
                raise FormatError(f"line {line_no}: duplicate subject_id {sid!r}")
            try:
                sex = _SEX_CODES[sex_raw] if sex_raw else None
            except KeyError:
                raise FormatError(
                    f"line {line_no}: sex must be M or F, got {sex_raw!r}"
                ) from None
            try:
                age = int(age_raw) if age_raw else None
                height = float(height_raw) if height_raw else None
                weight = float(weight_raw) if weight_raw else None
            except ValueError:
                raise FormatError(
                    f"line {line_no}: malformed numeric field"
                ) from None
            try:
                acq = date.fromisoformat(date_raw) if date_raw else None
            except ValueError:
                raise FormatError(
                    f"line {line_no}: acq_date must be YYYY-MM-DD, got {date_raw!r}"
                ) from None
            meta[sid] = SubjectMetadata(
                subject_id=sid,
                sex=sex,
                age_years=age,
                height_m=height,
                weight_kg=weight,
                location=loc or None,
                acq_date=acq,
            )
        return meta
    finally:
        if close:
            source.close()


def write_metadata_csv(meta: Mapping[str, SubjectMetadata], dest) -> None:
    close = False
    if isinstance(dest, (str, Path)):
        dest = open(dest, "w", newline="")
        close = True
    try:
        writer = csv.writer(dest)
        writer.writerow(METADATA_HEADER)
        for sid in sorted(meta):
            m = meta[sid]
            writer.writerow(
                [
                    m.subject_id,
                    {"male": "M", "female": "F"}.get(m.sex, "") if m.sex else "",
                    "" if m.age_years is None else str(m.age_years),
                    "" if m.height_m is None else repr(float(m.height_m)),
                    "" if m.weight_kg is None else repr(float(m.weight_kg)),
                    m.location or "",
                    m.acq_date.isoformat() if m.acq_date else "",
                ]
            )
    finally:
        if close:
            dest.close()


# ---------------------------------------------------------------------------
# Operations
# ---------------------------------------------------------------------------

def ingest_embeddings(embedding_source, metadata_source) -> IngestResult:
    """Join an embedding source with a metadata CSV into a Dataset.

    The embedding source may be an EMB1 file/bytes (detected by magic) or a
    CSV.  Records whose subject_id is absent from the metadata are rejected
    and reported; everything else is ingested.
    """
    records, dim = _read_embeddings_any(embedding_source)
    meta = read_metadata_csv(metadata_source)

    kept = []
    rejected = set()
    for rec in records:
        if rec.subject_id in meta:
            kept.append(rec)
        else:
            rejected.add(rec.subject_id)
    used_meta = {rec.subject_id: meta[rec.subject_id] for rec in kept}
    ds = Dataset(dim=dim, records=kept, metadata=used_meta)
    return IngestResult(dataset=ds, rejected_subjects=sorted(rejected))


def _read_embeddings_any(source) -> tuple[list[EmbeddingRecord], int]:
    if isinstance(source, (bytes, bytearray)):
        if source[:4] == EMB1_MAGIC:
            return read_emb1(source)
        return read_embedding_csv(source)
    path = Path(source)
    with open(path, "rb") as fh:
        magic = fh.read(4)
    if magic == EMB1_MAGIC:
        return read_emb1(path)
    return read_embedding_csv(path)


def concat_slices(per_slice: Sequence[np.ndarray]) -> np.ndarray:
    """Concatenate exactly 12 equal-length slice vectors, slice 0 first."""
    if len(per_slice) != 12:
        raise ValidationError(f"expected 12 slices, got {len(per_slice)}")
    arrays = [np.asarray(s, dtype=np.float32) for s in per_slice]
    lengths = {a.shape for a in arrays}
    if len(lengths) != 1 or arrays[0].ndim != 1:
        raise ValidationError("slices must be 1-D vectors of equal length")
    return np.concatenate(arrays)


def split_slices(vector: np.ndarray) -> list[np.ndarray]:
    """Inverse of concat_slices for vectors whose length is divisible by 12."""
    vec = np.asarray(vector)
    if vec.ndim != 1 or vec.size % 12 != 0:
        raise ValidationError("vector length must be divisible by 12")
    return list(vec.reshape(12, -1))


def split_dataset(
    ds: Dataset,
    ratios: tuple[float, float, float] = (0.80, 0.05, 0.15),
    seed: int = 0,
) -> SplitAssignment:
    """Assign each subject to train/val/test.

    Sizes follow the floor rule: |train| = floor(r0*n), |val| = floor(r1*n),
    test takes the remainder.  Subjects are shuffled by a seeded permutation
    of the sorted subject ids, so the assignment is deterministic.
    """
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ValidationError(f"ratios must sum to 1, got {ratios}")
    subjects = ds.subject_ids()
    n = len(subjects)
    if n < 3:
        raise ValidationError(f"need at least 3 subjects to split, got {n}")
    rng = np.random.default_rng(seed)
    order = rng.permutation(n)
    shuffled = [subjects[i] for i in order]
    n_train = int(np.floor(ratios[0] * n))
    n_val = int(np.floor(ratios[1] * n))
    assignment = {}
    for i, sid in enumerate(shuffled):
        if i < n_train:
            assignment[sid] = "train"
        elif i < n_train + n_val:
            assignment[sid] = "val"
        else:
            assignment[sid] = "test"
    return SplitAssignment(assignment=assignment, seed=seed)


def validate_metadata(meta: SubjectMetadata) -> list[str]:
    """Warn (never fail) about values outside the observed study ranges."""
    warnings = []
    if meta.age_years is not None:
        if meta.age_years < AGE_RANGE[0]:
            warnings.append(f"{meta.subject_id}: age below observed range")
        elif meta.age_years > AGE_RANGE[1]:
            warnings.append(f"{meta.subject_id}: age above observed range")
    if meta.height_m is not None:
        if meta.height_m < HEIGHT_RANGE[0]:
            warnings.append(f"{meta.subject_id}: height below observed range")
        elif meta.height_m > HEIGHT_RANGE[1]:
            warnings.append(f"{meta.subject_id}: height above observed range")
    if meta.weight_kg is not None:
        if meta.weight_kg < WEIGHT_RANGE[0]:
            warnings.append(f"{meta.subject_id}: weight below observed range")
        elif meta.weight_kg > WEIGHT_RANGE[1]:
            warnings.append(f"{meta.subject_id}: weight above observed range")
    return warnings


def metadata_value(meta: SubjectMetadata, field_name: str):
    """Fetch a metadata field by probe-target name; acq_year derives from acq_date."""
    if field_name == "acq_year":
        return None if meta.acq_date is None else meta.acq_date.year
    if field_name not in (
        "sex",
        "age_years",
        "height_m",
        "weight_kg",
        "location",
        "acq_date",
    ):
        raise ValidationError(f"unknown metadata field {field_name!r}")
    return getattr(meta, field_name)
