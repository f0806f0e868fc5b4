import numpy as np
import pytest

from embaudit import pipeline, reports
from embaudit.cluster_tools import Polygon, assign_clusters, cross_region_consistency
from embaudit.data_model import Region
from embaudit.errors import ValidationError
from embaudit.synth import (
    SynthEmbeddingSpec,
    SynthImageSpec,
    generate_embeddings,
    generate_neck_images,
)
from embaudit.tsne import LayoutPoint


@pytest.fixture(scope="module")
def planted_dataset():
    spec = SynthEmbeddingSpec(
        n_subjects=80, dim=12, separation=10.0, flipped_fraction=0.05, seed=11
    )
    return generate_embeddings(spec)


def test_run_probe_sex_classification(planted_dataset):
    ds, truth = planted_dataset
    result = pipeline.run_probe(ds, "sex", seed=0)
    assert result.task == "classification"
    assert result.metrics.accuracy >= 0.9
    assert result.predictions is not None
    assert len(result.predictions) == ds.n_records
    # every prediction pairs with the metadata truth
    for (sid, region), (pred, true) in result.predictions.items():
        assert true == ds.metadata[sid].sex


def test_run_probe_region_target(planted_dataset):
    ds, _ = planted_dataset
    result = pipeline.run_probe(ds, "region", seed=0)
    # the middle region cluster is not linearly separable one-vs-rest,
    # so perfect accuracy is not expected on collinear clusters
    assert result.metrics.accuracy >= 0.9


def test_run_probe_age_regression(planted_dataset):
    ds, _ = planted_dataset
    result = pipeline.run_probe(ds, "age", seed=0)
    assert result.task == "regression"
    assert result.metrics.mae < 16.0  # age range spans 52 years
    assert result.predictions is None


def test_run_probe_unknown_target(planted_dataset):
    ds, _ = planted_dataset
    with pytest.raises(ValidationError, match="target"):
        pipeline.run_probe(ds, "shoe_size")


def test_run_probe_per_cluster_breakdown(planted_dataset):
    ds, _ = planted_dataset
    points = [
        LayoutPoint(subject_id=r.subject_id, region=r.region,
                    x=float(r.vector[0]), y=float(r.vector[1]))
        for r in ds.records
    ]
    # lasso around the negative sex-axis side
    poly = Polygon("neg", [(-1e3, -1e3), (0.0, -1e3), (0.0, 1e3), (-1e3, 1e3)])
    labeling = assign_clusters(points, [poly])
    result = pipeline.run_probe(ds, "sex", seed=0, labeling=labeling)
    assert result.metrics.per_group
    assert set(result.metrics.per_group) <= {"neg", "rest"}


def test_probe_metric_rows_shape(planted_dataset):
    ds, _ = planted_dataset
    result = pipeline.run_probe(ds, "sex", seed=0)
    rows = pipeline.probe_metric_rows(result, "demo")
    assert rows[0]["probe"] == "demo"
    assert rows[0]["target"] == "sex"
    assert rows[0]["group"] == ""


def test_predictions_csv_round_trip(planted_dataset):
    ds, _ = planted_dataset
    result = pipeline.run_probe(ds, "sex", seed=0)
    text = pipeline.predictions_to_csv(result.predictions)
    parsed = pipeline.predictions_from_csv(text)
    assert parsed == {
        k: (str(p), str(t)) for k, (p, t) in result.predictions.items()
    }


def test_run_lag_flipped_group(planted_dataset):
    ds, truth = planted_dataset
    flipped = {sid for sid, t in truth.items() if t.flipped}
    report = pipeline.run_lag(ds, flipped, epochs=10, lr=0.5, seed=0)
    assert len(report.entries) == 10
    assert all(
        e.subgroup_train_acc < e.overall_train_acc for e in report.entries
    )
    csv_text = pipeline.lag_report_csv(report)
    assert csv_text.splitlines()[0].startswith("epoch,overall_train_acc")


def test_run_bias_regions_pipeline(planted_dataset):
    ds, truth = planted_dataset
    result = pipeline.run_probe(ds, "sex", seed=0)
    counts = pipeline.run_bias_regions(result.predictions)
    n_flipped = sum(t.flipped for t in truth.values())
    assert counts.exactly_k[3] >= n_flipped - 1
    assert counts.n_subjects == 80


def test_edge_report_pairwise_shifts():
    base, _ = generate_neck_images(SynthImageSpec(count=5, seed=0))
    moved, _ = generate_neck_images(SynthImageSpec(count=5, vertical_shift=30, seed=2))
    report = pipeline.edge_report(
        [("base", img) for img in base] + [("moved", img) for img in moved]
    )
    assert report.labels == ["base", "moved"]
    assert report.n_images == {"base": 5, "moved": 5}
    assert report.shifts == [
        {"a": "base", "b": "moved", "shift": 30,
         "score": report.shifts[0]["score"]}
    ]
    assert report.shifts[0]["score"] > 0.99


def test_edge_report_cluster_filter():
    base, _ = generate_neck_images(SynthImageSpec(count=3, seed=0))
    report = pipeline.edge_report([("only", img) for img in base], clusters=["only"])
    assert report.labels == ["only"]
    with pytest.raises(ValidationError, match="unknown cluster"):
        pipeline.edge_report([("only", img) for img in base], clusters=["nope"])


# ---------------------------------------------------------------------------
# report formatting
# ---------------------------------------------------------------------------

def test_table1_grid_pivots_targets():
    rows = [
        {"probe": "emb", "target": "sex", "task": "classification",
         "accuracy": 0.988, "mae": None, "n_eval": 100, "group": ""},
        {"probe": "emb", "target": "age", "task": "regression",
         "accuracy": None, "mae": 3.84, "n_eval": 100, "group": ""},
        {"probe": "emb", "target": "region", "task": "classification",
         "accuracy": 1.0, "mae": None, "n_eval": 100, "group": ""},
    ]
    grid = reports.probe_grid_rows(rows)
    assert len(grid) == 1
    row = grid[0]
    assert row["sex_accuracy"] == 0.988
    assert row["age_l1_years"] == 3.84
    assert row["region_accuracy"] == 1.0
    md = reports.table1_markdown(grid)
    assert "| emb |" in md
    assert md.splitlines()[0].count("|") == 7  # 6 columns have 7 pipes


def test_metrics_csv_round_trip():
    rows = [
        {"probe": "p", "target": "sex", "task": "classification",
         "accuracy": 0.5, "mae": None, "n_eval": 10, "group": ""},
        {"probe": "p", "target": "height", "task": "regression",
         "accuracy": None, "mae": 0.05, "n_eval": 10, "group": "cluster-a"},
    ]
    text = reports.metrics_rows_to_csv(rows)
    parsed = reports.metrics_rows_from_csv(text)
    assert parsed == rows


def test_consistency_report_contains_ratios():
    preds = {}
    for i in range(100):
        sid = f"S{i:03d}"
        for region in Region:
            wrong = i < 5 if region == Region.thoracic else i < 2
            preds[(sid, region)] = ("f" if wrong else "m", "m")
    counts = cross_region_consistency(preds)
    report = reports.consistency_report_rows(counts)
    assert report["per_region"]["thoracic"]["count"] == 5
    # subjects 0-1 fail everywhere, subjects 2-4 only in thoracic
    assert report["exactly_k"][3]["observed"] == 2
    assert report["exactly_k"][1]["observed"] == 3
    csv_text = reports.consistency_csv(counts)
    assert csv_text.splitlines()[0] == "section,key,observed,expected,ratio,rate,n"
    md = reports.consistency_markdown(counts)
    assert "exactly 2" in md


def test_composition_report_formats():
    from datetime import date

    from embaudit.cluster_tools import cluster_composition
    from embaudit.data_model import SubjectMetadata

    meta = {
        "S0": SubjectMetadata("S0", "male", location="Essen"),
        "S1": SubjectMetadata("S1", "male", location="Essen"),
    }
    points = [
        LayoutPoint(subject_id="S0", region=Region.cervical, x=0.5, y=0.5),
        LayoutPoint(subject_id="S1", region=Region.cervical, x=0.4, y=0.4),
    ]
    labeling = assign_clusters(
        points, [Polygon("c", [(0, 0), (1, 0), (1, 1), (0, 1)])]
    )
    table = cluster_composition(labeling, meta, "location")
    csv_text = reports.composition_csv(table)
    assert "site-specific" in csv_text
    md = reports.composition_markdown(table)
    assert "| c |" in md
