"""Cluster delineation on 2-D layouts and cluster-level bias statistics.

A human draws polygons over the layout; points get the label of the first
polygon containing them, everything else is "rest".  Downstream statistics
compare per-region misclassification consistency against what independent
errors would produce.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from itertools import combinations
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .data_model import Region, SubjectMetadata
from .errors import ValidationError

REST_LABEL = "rest"


@dataclass(frozen=True)
class Polygon:
    """A labeled lasso polygon in layout coordinates."""

    label: str
    vertices: tuple

    def __post_init__(self):
        verts = tuple((float(x), float(y)) for x, y in self.vertices)
        if len(verts) < 3:
            raise ValidationError(
                f"polygon {self.label!r} needs >= 3 vertices, got {len(verts)}"
            )
        if not self.label or self.label == REST_LABEL:
            raise ValidationError(
                f"polygon label must be non-empty and not {REST_LABEL!r}"
            )
        object.__setattr__(self, "vertices", verts)


@dataclass
class ClusterLabeling:
    """Polygon set plus the induced point -> label assignment."""

    polygons: list[Polygon]
    assignment: dict  # (subject_id, Region) -> label, default "rest"

    def labels(self) -> list[str]:
        """All cluster labels: polygon labels in order, then "rest"."""
        return [p.label for p in self.polygons] + [REST_LABEL]

    def members(self, label: str) -> list:
        return sorted(k for k, v in self.assignment.items() if v == label)


def point_in_polygon(pt, poly) -> bool:
    """Even-odd ray-casting test; points exactly on an edge count as inside."""
    vertices = poly.vertices if isinstance(poly, Polygon) else [
        (float(x), float(y)) for x, y in poly
    ]
    if len(vertices) < 3:
        raise ValidationError("polygon needs >= 3 vertices")
    x, y = float(pt[0]), float(pt[1])
    inside = False
    n = len(vertices)
    for i in range(n):
        x1, y1 = vertices[i]
        x2, y2 = vertices[(i + 1) % n]
        if _on_segment(x, y, x1, y1, x2, y2):
            return True
        # half-open span rule avoids double-counting vertices on the ray
        if (y1 > y) != (y2 > y):
            x_cross = x1 + (y - y1) * (x2 - x1) / (y2 - y1)
            if x < x_cross:
                inside = not inside
    return inside


def _on_segment(x, y, x1, y1, x2, y2) -> bool:
    cross = (x2 - x1) * (y - y1) - (y2 - y1) * (x - x1)
    if cross != 0.0:
        return False
    return min(x1, x2) <= x <= max(x1, x2) and min(y1, y2) <= y <= max(y1, y2)


def assign_clusters(layout: Sequence, polygons: Sequence[Polygon]) -> ClusterLabeling:
    """Label layout points by polygon membership, first match wins.

    Points in no polygon get the "rest" label.  Polygon labels must be
    unique.  The result depends only on point coordinates, not their order.
    """
    labels_seen = set()
    for poly in polygons:
        if poly.label in labels_seen:
            raise ValidationError(f"duplicate polygon label {poly.label!r}")
        labels_seen.add(poly.label)
    assignment = {}
    for point in layout:
        key = (point.subject_id, point.region)
        label = REST_LABEL
        for poly in polygons:
            if point_in_polygon((point.x, point.y), poly):
                label = poly.label
                break
        assignment[key] = label
    return ClusterLabeling(polygons=list(polygons), assignment=assignment)


# ---------------------------------------------------------------------------
# Composition tables
# ---------------------------------------------------------------------------

COMPOSITION_FIELDS = ("sex", "location", "region", "acq_year")


@dataclass
class CompositionTable:
    """Contingency table cluster x category with per-cluster rates."""

    field: str
    clusters: list[str]
    categories: list
    counts: np.ndarray  # int, shape (n_clusters, n_categories)
    rates: np.ndarray  # float, rows of empty clusters are NaN

    def row(self, cluster: str) -> dict:
        i = self.clusters.index(cluster)
        return {c: int(self.counts[i, j]) for j, c in enumerate(self.categories)}

    def dominant(self, threshold: float = 0.9) -> dict:
        """Clusters where one category holds at least `threshold` of the mass."""
        out = {}
        for i, cluster in enumerate(self.clusters):
            if np.isnan(self.rates[i]).any():
                continue
            j = int(np.argmax(self.rates[i]))
            if self.rates[i, j] >= threshold:
                out[cluster] = self.categories[j]
        return out

    def flags(self, threshold: float = 0.9) -> dict:
        """Audit flags; location-dominated clusters are marked site-specific."""
        if self.field != "location":
            return {}
        return {cluster: "site-specific" for cluster in self.dominant(threshold)}


def cluster_composition(
    labeling: ClusterLabeling,
    metadata: Mapping[str, SubjectMetadata],
    field_name: str,
) -> CompositionTable:
    """Count categorical field values per cluster.

    Points whose field value is missing are excluded from their cluster's
    row (counts and rates).  Empty clusters keep a zero row with NaN rates.
    """
    if field_name not in COMPOSITION_FIELDS:
        raise ValidationError(
            f"field must be one of {COMPOSITION_FIELDS}, got {field_name!r}"
        )
    clusters = labeling.labels()
    values = {}
    for (sid, region), label in labeling.assignment.items():
        if field_name == "region":
            value = region.name
        else:
            meta = metadata.get(sid)
            if meta is None:
                continue
            if field_name == "acq_year":
                value = None if meta.acq_date is None else meta.acq_date.year
            else:
                value = getattr(meta, field_name)
        if value is None:
            continue
        values[(sid, region)] = (label, value)

    categories = sorted({v for _, v in values.values()}, key=str)
    cat_index = {c: j for j, c in enumerate(categories)}
    counts = np.zeros((len(clusters), len(categories)), dtype=np.int64)
    cluster_index = {c: i for i, c in enumerate(clusters)}
    for label, value in values.values():
        counts[cluster_index[label], cat_index[value]] += 1

    totals = counts.sum(axis=1, keepdims=True)
    rates = np.full(counts.shape, np.nan)
    nonzero = totals[:, 0] > 0
    rates[nonzero] = counts[nonzero] / totals[nonzero]
    return CompositionTable(
        field=field_name,
        clusters=clusters,
        categories=categories,
        counts=counts,
        rates=rates,
    )


# ---------------------------------------------------------------------------
# Cross-region consistency vs independence
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RegionErrors:
    count: int
    rate: float
    n: int  # subjects with a prediction for this region


@dataclass
class ConsistencyCounts:
    """Per-region misclassification and exactly-k consistency histogram.

    exactly_k covers only subjects with predictions for all three regions;
    partial subjects enter the per-region rates and are counted separately.
    """

    per_region: dict  # Region -> RegionErrors
    exactly_k: dict  # k in {0,1,2,3} -> count
    n_subjects: int  # complete (3-region) subjects
    n_partial: int = 0
    partial_subjects: list = field(default_factory=list)


def cross_region_consistency(per_region_predictions: Mapping) -> ConsistencyCounts:
    """Tally per-region sex misclassifications and their per-subject overlap.

    Input maps (subject_id, Region) to (predicted, true) labels.  A subject
    with contradictory true labels across regions is an error.
    """
    by_subject = {}
    for (sid, region), (pred, true) in per_region_predictions.items():
        region = Region(region)
        entry = by_subject.setdefault(sid, {})
        if region in entry:
            raise ValidationError(f"duplicate prediction for ({sid!r}, {region.name})")
        entry[region] = (pred, true)
    for sid, entry in by_subject.items():
        trues = {t for _, t in entry.values()}
        if len(trues) > 1:
            raise ValidationError(
                f"contradictory true labels for subject {sid!r}: {sorted(map(str, trues))}"
            )

    region_counts = {r: 0 for r in Region}
    region_n = {r: 0 for r in Region}
    exactly_k = {0: 0, 1: 0, 2: 0, 3: 0}
    n_complete = 0
    partial = []
    for sid, entry in sorted(by_subject.items()):
        mismatches = 0
        for region, (pred, true) in entry.items():
            region_n[region] += 1
            if pred != true:
                region_counts[region] += 1
                mismatches += 1
        if len(entry) == len(Region):
            n_complete += 1
            exactly_k[mismatches] += 1
        else:
            partial.append(sid)

    per_region = {
        r: RegionErrors(
            count=region_counts[r],
            rate=(region_counts[r] / region_n[r]) if region_n[r] else 0.0,
            n=region_n[r],
        )
        for r in Region
    }
    return ConsistencyCounts(
        per_region=per_region,
        exactly_k=exactly_k,
        n_subjects=n_complete,
        n_partial=len(partial),
        partial_subjects=partial,
    )


def independence_expectation(rates, n_subjects: int) -> dict:
    """Expected exactly-k counts if per-region errors were independent.

    E_k = N * sum over region subsets S of size k of
          prod_{i in S} p_i * prod_{j not in S} (1 - p_j).
    """
    p = [float(r) for r in rates]
    if len(p) != 3:
        raise ValidationError(f"expected 3 per-region rates, got {len(p)}")
    for r in p:
        if not (0.0 <= r <= 1.0):
            raise ValidationError(f"rates must lie in [0, 1], got {r}")
    if n_subjects < 0:
        raise ValidationError("n_subjects must be non-negative")
    expected = {}
    idx = range(3)
    for k in range(4):
        total = 0.0
        for subset in combinations(idx, k):
            term = 1.0
            for i in idx:
                term *= p[i] if i in subset else (1.0 - p[i])
            total += term
        expected[k] = n_subjects * total
    return expected


# ---------------------------------------------------------------------------
# Persistence
# ---------------------------------------------------------------------------

def polygons_to_json(polygons: Sequence[Polygon]) -> str:
    return json.dumps(
        [
            {"label": p.label, "vertices": [[x, y] for x, y in p.vertices]}
            for p in polygons
        ]
    )


def polygons_from_json(text) -> list[Polygon]:
    if isinstance(text, (str, bytes)):
        data = json.loads(text)
    elif isinstance(text, Path):
        data = json.loads(text.read_text())
    else:
        data = text
    if not isinstance(data, list):
        raise ValidationError("polygon JSON must be a list")
    polygons = []
    for item in data:
        try:
            polygons.append(Polygon(label=item["label"], vertices=item["vertices"]))
        except (KeyError, TypeError):
            raise ValidationError(
                "each polygon needs a label and a vertices list"
            ) from None
    return polygons
