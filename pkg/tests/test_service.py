import io
import time

import numpy as np
import pytest
from fastapi.testclient import TestClient

from embaudit.data_model import write_emb1, write_metadata_csv
from embaudit.image_analysis import write_pgm
from embaudit.service import create_app
from embaudit.synth import (
    SynthEmbeddingSpec,
    SynthImageSpec,
    generate_embeddings,
    generate_neck_images,
)


@pytest.fixture(scope="module")
def fixture_files():
    spec = SynthEmbeddingSpec(
        n_subjects=60, dim=12, separation=10.0, flipped_fraction=0.05, seed=3
    )
    ds, truth = generate_embeddings(spec)
    emb = io.BytesIO()
    write_emb1(ds.records, ds.dim, emb)
    meta = io.StringIO()
    write_metadata_csv(ds.metadata, meta)
    return emb.getvalue(), meta.getvalue().encode(), truth


@pytest.fixture()
def client():
    app = create_app(max_concurrent_jobs=2)
    with TestClient(app) as c:
        yield c


def upload(client, fixture_files):
    emb, meta, _ = fixture_files
    resp = client.post(
        "/datasets",
        files={
            "embeddings": ("embeddings.emb1", emb),
            "metadata": ("metadata.csv", meta),
        },
    )
    assert resp.status_code == 201, resp.text
    return resp.json()["dataset_id"]


def wait_for(client, job_id, timeout=60.0):
    deadline = time.time() + timeout
    while time.time() < deadline:
        body = client.get(f"/jobs/{job_id}").json()
        if body["state"] in ("done", "failed", "canceled"):
            return body
        time.sleep(0.05)
    raise TimeoutError(f"job {job_id} did not finish")


def submit_layout(client, dataset_id, iterations=120, seed=1):
    resp = client.post(
        f"/datasets/{dataset_id}/jobs/tsne",
        json={"perplexity": 10.0, "iterations": iterations, "seed": seed},
    )
    assert resp.status_code == 202, resp.text
    return resp.json()["job_id"]


def test_upload_and_summary(client, fixture_files):
    dataset_id = upload(client, fixture_files)
    body = client.get(f"/datasets/{dataset_id}").json()
    assert body["n_records"] == 180
    assert body["dim"] == 12
    assert body["n_subjects"] == 60
    assert body["metadata_coverage"]["sex"] == 1.0
    assert body["rejected_subjects"] == []


def test_unknown_dataset_404(client):
    assert client.get("/datasets/nope").status_code == 404


def test_malformed_upload_422(client):
    resp = client.post(
        "/datasets",
        files={
            "embeddings": ("e.csv", b"not,a,header\n"),
            "metadata": ("m.csv", b"subject_id\n"),
        },
    )
    assert resp.status_code == 422


def test_tsne_job_lifecycle(client, fixture_files):
    dataset_id = upload(client, fixture_files)
    job_id = submit_layout(client, dataset_id)
    body = client.get(f"/jobs/{job_id}").json()
    assert body["state"] in ("queued", "running", "done")
    body = wait_for(client, job_id)
    assert body["state"] == "done"
    assert body["progress"]["current"] == 120
    assert "kl" in body["progress"]

    layout = client.get(f"/jobs/{job_id}/layout").json()
    assert len(layout["points"]) == 180
    assert len(layout["kl_trace"]) == 120
    csv_text = client.get(f"/jobs/{job_id}/layout", params={"format": "csv"}).text
    assert csv_text.splitlines()[0] == "subject_id,region,x,y"

    # identical params -> same job, no recompute
    again = client.post(
        f"/datasets/{dataset_id}/jobs/tsne",
        json={"perplexity": 10.0, "iterations": 120, "seed": 1},
    )
    assert again.json()["job_id"] == job_id


def test_tsne_param_validation_rejected_before_queue(client, fixture_files):
    dataset_id = upload(client, fixture_files)
    resp = client.post(
        f"/datasets/{dataset_id}/jobs/tsne",
        json={"perplexity": 100000.0, "iterations": 10, "seed": 0},
    )
    assert resp.status_code == 422
    assert "perplexity" in resp.json()["detail"]


def test_cancel_running_job(client, fixture_files):
    dataset_id = upload(client, fixture_files)
    job_id = submit_layout(client, dataset_id, iterations=5000, seed=9)
    # let it start, then cancel
    time.sleep(0.2)
    resp = client.delete(f"/jobs/{job_id}")
    assert resp.status_code == 200
    body = wait_for(client, job_id)
    assert body["state"] == "canceled"
    assert client.get(f"/jobs/{job_id}/layout").status_code == 409


def test_unknown_job_404(client):
    assert client.get("/jobs/nope").status_code == 404


def test_cluster_versioning(client, fixture_files):
    dataset_id = upload(client, fixture_files)
    job_id = submit_layout(client, dataset_id)
    wait_for(client, job_id)

    poly = {
        "label": "blob",
        "vertices": [[-1000.0, -1000.0], [1000.0, -1000.0], [1000.0, 1000.0], [-1000.0, 1000.0]],
    }
    resp = client.put(
        f"/datasets/{dataset_id}/clusters",
        json={"version": 0, "polygons": [poly]},
    )
    assert resp.status_code == 200, resp.text
    body = resp.json()
    assert body["version"] == 1
    assert body["counts"]["blob"] + body["counts"]["rest"] == 180

    stale = client.put(
        f"/datasets/{dataset_id}/clusters",
        json={"version": 0, "polygons": [poly]},
    )
    assert stale.status_code == 409

    got = client.get(f"/datasets/{dataset_id}/clusters").json()
    assert got["version"] == 1
    assert got["polygons"][0]["label"] == "blob"


def test_cluster_membership_matches_backend_rule(client, fixture_files):
    from embaudit.cluster_tools import point_in_polygon

    dataset_id = upload(client, fixture_files)
    job_id = submit_layout(client, dataset_id)
    wait_for(client, job_id)
    layout = client.get(f"/jobs/{job_id}/layout").json()["points"]
    xs = [p["x"] for p in layout]
    x_mid = float(np.median(xs))
    poly = {
        "label": "left",
        "vertices": [[-1e6, -1e6], [x_mid, -1e6], [x_mid, 1e6], [-1e6, 1e6]],
    }
    resp = client.put(
        f"/datasets/{dataset_id}/clusters",
        json={"version": 0, "polygons": [poly]},
    )
    assignment = {
        (row["subject_id"], row["region"]): row["label"]
        for row in resp.json()["assignment"]
    }
    verts = [tuple(v) for v in poly["vertices"]]
    for p in layout:
        expected = "left" if point_in_polygon((p["x"], p["y"]), verts) else "rest"
        assert assignment[(p["subject_id"], p["region"])] == expected


def test_probe_job_and_bias_regions(client, fixture_files):
    _, _, truth = fixture_files
    dataset_id = upload(client, fixture_files)
    resp = client.post(
        f"/datasets/{dataset_id}/jobs/probe",
        json={"target": "sex", "kernel": "linear", "C": 1.0, "seed": 0},
    )
    assert resp.status_code == 202
    job_id = resp.json()["job_id"]
    body = wait_for(client, job_id)
    assert body["state"] == "done"
    result = body["result"]
    assert result["task"] == "classification"
    assert result["metrics"]["accuracy"] >= 0.9

    bias = client.get(
        f"/datasets/{dataset_id}/bias/regions", params={"probe_job": job_id}
    )
    assert bias.status_code == 200
    report = bias.json()
    assert report["n_subjects"] == 60
    total = sum(row["observed"] for row in report["exactly_k"].values())
    assert total == 60
    # flipped subjects misclassify consistently in all three regions
    n_flipped = sum(t.flipped for t in truth.values())
    assert report["exactly_k"]["3"]["observed"] >= n_flipped - 1


def test_probe_invalid_params_rejected(client, fixture_files):
    dataset_id = upload(client, fixture_files)
    assert (
        client.post(
            f"/datasets/{dataset_id}/jobs/probe", json={"target": "shoe_size"}
        ).status_code
        == 422
    )
    assert (
        client.post(
            f"/datasets/{dataset_id}/jobs/probe", json={"target": "sex", "C": -1.0}
        ).status_code
        == 422
    )


def test_lag_job_with_id_list(client, fixture_files):
    _, _, truth = fixture_files
    dataset_id = upload(client, fixture_files)
    flipped = [sid for sid, t in truth.items() if t.flipped]
    resp = client.post(
        f"/datasets/{dataset_id}/jobs/lag",
        json={"subgroup": flipped, "epochs": 12, "lr": 0.5, "seed": 0},
    )
    assert resp.status_code == 202
    body = wait_for(client, resp.json()["job_id"])
    assert body["state"] == "done"
    entries = body["result"]["entries"]
    assert len(entries) == 12
    for e in entries:
        assert e["subgroup_train_acc"] < e["overall_train_acc"]


def test_lag_from_cluster_label(client, fixture_files):
    dataset_id = upload(client, fixture_files)
    job_id = submit_layout(client, dataset_id)
    wait_for(client, job_id)
    poly = {
        "label": "blob",
        "vertices": [[-1e6, -1e6], [0.0, -1e6], [0.0, 1e6], [-1e6, 1e6]],
    }
    client.put(
        f"/datasets/{dataset_id}/clusters", json={"version": 0, "polygons": [poly]}
    )
    resp = client.post(
        f"/datasets/{dataset_id}/jobs/lag",
        json={"subgroup": "blob", "epochs": 5, "seed": 0},
    )
    assert resp.status_code == 202
    body = wait_for(client, resp.json()["job_id"])
    assert body["state"] == "done"
    assert len(body["result"]["entries"]) == 5


def test_dataset_unchanged_after_failed_job(client, fixture_files):
    dataset_id = upload(client, fixture_files)
    before = client.get(f"/datasets/{dataset_id}").json()
    # location probe fails: synthetic locations collide with a single class
    resp = client.post(
        f"/datasets/{dataset_id}/jobs/probe",
        json={"target": "sex", "kernel": "rbf"},  # rbf without gamma fails in-run
    )
    if resp.status_code == 202:
        wait_for(client, resp.json()["job_id"])
    after = client.get(f"/datasets/{dataset_id}").json()
    assert before == after


def test_imageset_edge_report(client):
    base, _ = generate_neck_images(SynthImageSpec(count=8, seed=0))
    moved, _ = generate_neck_images(SynthImageSpec(count=8, vertical_shift=50, seed=1))
    files = []
    labels_lines = ["filename,label"]
    for i, img in enumerate(base):
        buf = io.BytesIO()
        write_pgm(img, buf)
        files.append(("images", (f"a_{i}.pgm", buf.getvalue())))
        labels_lines.append(f"a_{i}.pgm,base")
    for i, img in enumerate(moved):
        buf = io.BytesIO()
        write_pgm(img, buf)
        files.append(("images", (f"b_{i}.pgm", buf.getvalue())))
        labels_lines.append(f"b_{i}.pgm,moved")
    resp = client.post(
        "/imagesets", files=files, data={"labels": "\n".join(labels_lines)}
    )
    assert resp.status_code == 201, resp.text
    imageset_id = resp.json()["imageset_id"]

    report = client.get(f"/imagesets/{imageset_id}/edge-report").json()
    assert set(report["labels"]) == {"base", "moved"}
    shift_rows = {(r["a"], r["b"]): r["shift"] for r in report["shifts"]}
    assert shift_rows[("base", "moved")] == 50

    png = client.get(
        f"/imagesets/{imageset_id}/mean-image", params={"cluster": "base"}
    )
    assert png.status_code == 200
    assert png.content.startswith(b"P5")
