"""End-to-end audit flows shared by the HTTP service and the CLI.

A probe run follows the study protocol: subject-level 80/5/15 split,
rebalanced training data, SVM for categorical targets and the linear
epsilon-insensitive regressor for continuous ones, metrics on the held-out
test subjects.  Predictions are kept per record so the cross-region
consistency analysis can run downstream.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np

from .cluster_tools import ClusterLabeling, ConsistencyCounts, cross_region_consistency
from .data_model import Dataset, Region, metadata_value, split_dataset
from .errors import ValidationError
from .image_analysis import (
    Image,
    aggregate_profiles,
    edge_profile,
    estimate_shift,
    mean_image,
)
from .probes import (
    LagReport,
    Metrics,
    evaluate_metrics,
    predict_svm,
    rebalance_classification,
    rebalance_regression,
    train_lag_curves,
    train_regressor,
    train_svm,
)

CLASSIFICATION_TARGETS = ("sex", "region", "location")
REGRESSION_TARGETS = ("age", "height", "weight")
TARGET_FIELDS = {
    "sex": "sex",
    "location": "location",
    "age": "age_years",
    "height": "height_m",
    "weight": "weight_kg",
}


@dataclass
class ProbeResult:
    target: str
    task: str
    metrics: Metrics
    n_train: int
    # (subject_id, Region) -> (predicted, true); classification targets only
    predictions: Optional[dict] = None
    converged: bool = True
    warnings: list = field(default_factory=list)


def _record_targets(ds: Dataset, target: str):
    """Per-record target values; None marks missing metadata."""
    if target == "region":
        return [rec.region.name for rec in ds.records]
    field_name = TARGET_FIELDS.get(target)
    if field_name is None:
        raise ValidationError(
            f"target must be one of {CLASSIFICATION_TARGETS + REGRESSION_TARGETS}, "
            f"got {target!r}"
        )
    return [metadata_value(ds.metadata[rec.subject_id], field_name) for rec in ds.records]


def run_probe(
    ds: Dataset,
    target: str,
    kernel: str = "linear",
    C: float = 1.0,
    gamma: Optional[float] = None,
    balance: bool = True,
    seed: int = 0,
    bins: int = 10,
    labeling: Optional[ClusterLabeling] = None,
    svm_tol: float = 1e-3,
) -> ProbeResult:
    """Train a probe for one target and evaluate it on held-out subjects."""
    if target in CLASSIFICATION_TARGETS:
        task = "classification"
    elif target in REGRESSION_TARGETS:
        task = "regression"
    else:
        raise ValidationError(f"unknown probe target {target!r}")

    split = ds.split or split_dataset(ds, seed=seed)
    values = _record_targets(ds, target)
    X = ds.matrix().astype(np.float64)

    usable = [i for i, v in enumerate(values) if v is not None]
    if not usable:
        raise ValidationError(f"no records with a {target!r} value")
    train_idx = [
        i for i in usable
        if split.assignment[ds.records[i].subject_id] == "train"
    ]
    test_idx = [
        i for i in usable
        if split.assignment[ds.records[i].subject_id] == "test"
    ]
    if not train_idx or not test_idx:
        raise ValidationError("empty train or test partition for this target")

    warnings: list = []
    if task == "classification":
        y_train = [values[i] for i in train_idx]
        if balance:
            keep = rebalance_classification(y_train, seed=seed)
            train_sel = [train_idx[j] for j in keep]
        else:
            train_sel = train_idx
        model = train_svm(
            X[train_sel],
            [values[i] for i in train_sel],
            kernel=kernel,
            C=C,
            gamma=gamma,
            tol=svm_tol,
            seed=seed,
        )
        if not model.converged:
            warnings.append("SMO hit its iteration cap before converging")
        test_pred, _ = predict_svm(model, X[test_idx])
        groups = _cluster_groups(ds, labeling, test_idx)
        metrics = evaluate_metrics(
            test_pred, [values[i] for i in test_idx], "classification", groups
        )
        all_pred, _ = predict_svm(model, X[usable])
        predictions = {
            (ds.records[i].subject_id, ds.records[i].region): (pred, values[i])
            for i, pred in zip(usable, all_pred)
        }
        return ProbeResult(
            target=target,
            task=task,
            metrics=metrics,
            n_train=len(train_sel),
            predictions=predictions,
            converged=model.converged,
            warnings=warnings,
        )

    t_train = [float(values[i]) for i in train_idx]
    if balance:
        keep = rebalance_regression(t_train, bins=bins, seed=seed)
        train_sel = [train_idx[j] for j in keep]
    else:
        train_sel = train_idx
    model = train_regressor(
        X[train_sel], [float(values[i]) for i in train_sel], seed=seed
    )
    test_pred = model.predict(X[test_idx])
    groups = _cluster_groups(ds, labeling, test_idx)
    metrics = evaluate_metrics(
        test_pred, [float(values[i]) for i in test_idx], "regression", groups
    )
    return ProbeResult(
        target=target,
        task=task,
        metrics=metrics,
        n_train=len(train_sel),
        warnings=warnings,
    )


def _cluster_groups(ds, labeling, idx):
    if labeling is None:
        return None
    return [
        labeling.assignment.get((ds.records[i].subject_id, ds.records[i].region), "rest")
        for i in idx
    ]


def probe_metric_rows(result: ProbeResult, probe_label: str) -> list[dict]:
    """Flatten a probe result into report rows (overall plus per group)."""
    rows = [
        {
            "probe": probe_label,
            "target": result.target,
            "task": result.task,
            "accuracy": result.metrics.accuracy,
            "mae": result.metrics.mae,
            "n_eval": result.metrics.n_eval,
            "group": "",
        }
    ]
    if result.metrics.per_group:
        for group, m in sorted(result.metrics.per_group.items(), key=lambda kv: str(kv[0])):
            rows.append(
                {
                    "probe": probe_label,
                    "target": result.target,
                    "task": result.task,
                    "accuracy": m.accuracy,
                    "mae": m.mae,
                    "n_eval": m.n_eval,
                    "group": group,
                }
            )
    return rows


# ---------------------------------------------------------------------------
# Lag curves from a dataset
# ---------------------------------------------------------------------------

def run_lag(
    ds: Dataset,
    subgroup,
    epochs: int = 50,
    lr: float = 0.1,
    seed: int = 0,
) -> LagReport:
    """Train sex lag curves with the subgroup given as subject ids or
    (subject_id, region) pairs."""
    subgroup = set(subgroup)
    values = _record_targets(ds, "sex")
    usable = [i for i, v in enumerate(values) if v is not None]
    if not usable:
        raise ValidationError("no records with a sex value")
    X = ds.matrix().astype(np.float64)[usable]
    y = [values[i] for i in usable]
    mask = np.array(
        [
            ds.records[i].subject_id in subgroup
            or (ds.records[i].subject_id, ds.records[i].region) in subgroup
            for i in usable
        ]
    )
    ids = [
        (ds.records[i].subject_id, ds.records[i].region.name)
        for i in np.array(usable)[mask]
    ]
    return train_lag_curves(
        X, y, mask, epochs=epochs, lr=lr, seed=seed, subgroup_ids=ids
    )


def lag_report_csv(report: LagReport) -> str:
    lines = [
        "epoch,overall_train_acc,subgroup_train_acc,rest_train_acc,"
        "overall_val_acc,subgroup_val_acc"
    ]
    for e in report.entries:
        lines.append(
            f"{e.epoch},{e.overall_train_acc!r},{e.subgroup_train_acc!r},"
            f"{e.rest_train_acc!r},{e.overall_val_acc!r},{e.subgroup_val_acc!r}"
        )
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Cross-region bias from probe predictions
# ---------------------------------------------------------------------------

def run_bias_regions(predictions: Mapping) -> ConsistencyCounts:
    if not predictions:
        raise ValidationError("no per-region predictions supplied")
    return cross_region_consistency(predictions)


def predictions_to_csv(predictions: Mapping) -> str:
    lines = ["subject_id,region,predicted,true"]
    for (sid, region) in sorted(predictions, key=lambda k: (k[0], int(k[1]))):
        pred, true = predictions[(sid, region)]
        lines.append(f"{sid},{Region(region).name},{pred},{true}")
    return "\n".join(lines) + "\n"


def predictions_from_csv(text: str) -> dict:
    lines = text.strip().splitlines()
    if not lines or lines[0] != "subject_id,region,predicted,true":
        raise ValidationError(
            "predictions CSV header must be subject_id,region,predicted,true"
        )
    out = {}
    for line in lines[1:]:
        if not line:
            continue
        parts = line.split(",")
        if len(parts) != 4:
            raise ValidationError(f"malformed predictions row: {line!r}")
        sid, region, pred, true = parts
        out[(sid, Region.from_name(region))] = (pred, true)
    return out


# ---------------------------------------------------------------------------
# Edge / framing report from labeled images
# ---------------------------------------------------------------------------

@dataclass
class EdgeReport:
    labels: list
    mean_profiles: dict  # label -> float profile array
    mean_images: dict  # label -> Image
    shifts: list  # dicts {a, b, shift, score}
    tau: float
    n_images: dict


def edge_report(
    labeled_images: Sequence,
    tau: float = 0.1,
    clusters: Optional[Sequence[str]] = None,
    max_shift: int = 128,
) -> EdgeReport:
    """Mean profiles, mean images, and pairwise shifts per image cluster.

    `labeled_images` holds (label, Image) pairs.  Mean profiles average the
    per-image edge profiles (sentinel-aware).
    """
    by_label: dict[str, list[Image]] = {}
    for label, img in labeled_images:
        by_label.setdefault(label, []).append(img)
    labels = sorted(by_label)
    if clusters is not None:
        missing = [c for c in clusters if c not in by_label]
        if missing:
            raise ValidationError(f"unknown cluster labels: {missing}")
        labels = list(clusters)
    if not labels:
        raise ValidationError("no labeled images")

    mean_profiles = {}
    mean_images = {}
    n_images = {}
    for label in labels:
        images = by_label[label]
        profiles = [edge_profile(img, tau=tau) for img in images]
        mean_profiles[label] = aggregate_profiles(profiles)
        mean_images[label] = mean_image(images)
        n_images[label] = len(images)

    shifts = []
    for i, a in enumerate(labels):
        for b in labels[i + 1 :]:
            res = estimate_shift(mean_profiles[a], mean_profiles[b], max_shift=max_shift)
            shifts.append({"a": a, "b": b, "shift": res.shift, "score": res.score})
    return EdgeReport(
        labels=labels,
        mean_profiles=mean_profiles,
        mean_images=mean_images,
        shifts=shifts,
        tau=tau,
        n_images=n_images,
    )
