"""HTTP facade over datasets, layout jobs, cluster labeling, and reports.

Long computations run as cancelable jobs on a bounded worker pool and are
polled via /jobs/{id}.  Results are content-addressed by (dataset id,
params hash): resubmitting identical params returns the existing job.
Label edits are versioned per dataset; a stale version is rejected.
"""

from __future__ import annotations

import hashlib
import json
import threading
import uuid
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

from fastapi import FastAPI, HTTPException, Request, Response, UploadFile
from starlette.datastructures import UploadFile as FormUploadFile
from pydantic import BaseModel

from . import pipeline
from .cluster_tools import Polygon, assign_clusters
from .data_model import Dataset, ingest_embeddings
from .errors import JobCancelled, ValidationError
from .image_analysis import load_and_normalize, mean_image, write_pgm
from .reports import consistency_report_rows
from .tsne import TsneParams, tsne_layout

import io
import tempfile
from pathlib import Path


@dataclass
class Job:
    id: str
    kind: str  # tsne | probe | lag
    state: str = "queued"  # queued | running | done | failed | canceled
    progress: tuple = (0, 0)
    current_kl: Optional[float] = None
    result: object = None
    error: str = ""
    cancel_event: threading.Event = field(default_factory=threading.Event)
    params_key: str = ""

    def snapshot(self) -> dict:
        body = {
            "id": self.id,
            "kind": self.kind,
            "state": self.state,
            "progress": {"current": self.progress[0], "total": self.progress[1]},
            "error": self.error,
            "result_ready": self.state == "done",
        }
        if self.current_kl is not None:
            body["progress"]["kl"] = self.current_kl
        return body


class Store:
    """In-memory state; one instance per app."""

    def __init__(self, max_concurrent_jobs: int = 2):
        self.lock = threading.RLock()
        self.datasets: dict[str, Dataset] = {}
        self.dataset_info: dict[str, dict] = {}
        self.labelings: dict[str, dict] = {}  # dataset_id -> {version, polygons, labeling, layout_job}
        self.jobs: dict[str, Job] = {}
        self.imagesets: dict[str, list] = {}  # id -> [(label, Image, name)]
        self.cache: dict[tuple, str] = {}  # (dataset_id, kind, params_hash) -> job_id
        self.executor = ThreadPoolExecutor(max_workers=max_concurrent_jobs)

    def new_id(self) -> str:
        return uuid.uuid4().hex[:12]

    def submit(self, dataset_id: str, kind: str, params: dict, runner) -> Job:
        """Queue `runner(job)` unless an identical submission already exists."""
        key = _params_hash(params)
        with self.lock:
            cached = self.cache.get((dataset_id, kind, key))
            if cached is not None:
                job = self.jobs[cached]
                if job.state in ("queued", "running", "done"):
                    return job
            job = Job(id=self.new_id(), kind=kind, params_key=key)
            self.jobs[job.id] = job
            self.cache[(dataset_id, kind, key)] = job.id

        def _run():
            with self.lock:
                if job.cancel_event.is_set():
                    job.state = "canceled"
                    return
                job.state = "running"
            try:
                result = runner(job)
            except JobCancelled:
                with self.lock:
                    job.state = "canceled"
                    job.result = None
            except Exception as exc:  # surfaced verbatim to the client
                with self.lock:
                    job.state = "failed"
                    job.error = str(exc)
            else:
                with self.lock:
                    job.state = "done"
                    job.result = result

        self.executor.submit(_run)
        return job


def _params_hash(params: dict) -> str:
    canon = json.dumps(params, sort_keys=True, default=str)
    return hashlib.sha256(canon.encode()).hexdigest()


# ---------------------------------------------------------------------------
# Request bodies
# ---------------------------------------------------------------------------

class TsneRequest(BaseModel):
    perplexity: float = 50.0
    iterations: int = 1000
    seed: int = 0
    theta: float = 0.5
    exact_threshold: int = 5000
    n_workers: int = 1
    learning_rate: Optional[float] = None


class PolygonBody(BaseModel):
    label: str
    vertices: list


class ClustersRequest(BaseModel):
    version: int
    polygons: list[PolygonBody]
    layout_job: Optional[str] = None


class ProbeRequest(BaseModel):
    target: str
    kernel: str = "linear"
    C: float = 1.0
    gamma: Optional[float] = None
    balance: bool = True
    seed: int = 0


class LagRequest(BaseModel):
    subgroup: object  # cluster label (str) or list of subject ids
    epochs: int = 50
    lr: float = 0.1
    seed: int = 0


def create_app(max_concurrent_jobs: int = 2) -> FastAPI:
    app = FastAPI(title="embaudit")
    # the browser UI may be served from any static host
    from fastapi.middleware.cors import CORSMiddleware

    app.add_middleware(
        CORSMiddleware,
        allow_origins=["*"],
        allow_methods=["*"],
        allow_headers=["*"],
    )
    store = Store(max_concurrent_jobs=max_concurrent_jobs)
    app.state.store = store

    def _dataset(dataset_id: str) -> Dataset:
        ds = store.datasets.get(dataset_id)
        if ds is None:
            raise HTTPException(404, f"unknown dataset {dataset_id!r}")
        return ds

    def _job(job_id: str) -> Job:
        job = store.jobs.get(job_id)
        if job is None:
            raise HTTPException(404, f"unknown job {job_id!r}")
        return job

    # -- datasets ----------------------------------------------------------

    @app.post("/datasets", status_code=201)
    async def upload_dataset(embeddings: UploadFile, metadata: UploadFile):
        emb_bytes = await embeddings.read()
        meta_bytes = await metadata.read()
        try:
            result = ingest_embeddings(emb_bytes, meta_bytes)
        except ValidationError as exc:
            raise HTTPException(422, str(exc))
        dataset_id = store.new_id()
        with store.lock:
            store.datasets[dataset_id] = result.dataset
            store.dataset_info[dataset_id] = {
                "rejected_subjects": result.rejected_subjects
            }
            store.labelings[dataset_id] = {
                "version": 0,
                "polygons": [],
                "labeling": None,
                "layout_job": None,
            }
        return {
            "dataset_id": dataset_id,
            "n_records": result.dataset.n_records,
            "dim": result.dataset.dim,
            "rejected_subjects": result.rejected_subjects,
        }

    @app.get("/datasets/{dataset_id}")
    def dataset_summary(dataset_id: str):
        ds = _dataset(dataset_id)
        fields = ("sex", "age_years", "height_m", "weight_kg", "location", "acq_date")
        n_subjects = len(ds.metadata)
        coverage = {
            f: (
                sum(1 for m in ds.metadata.values() if getattr(m, f) is not None)
                / n_subjects
                if n_subjects
                else 0.0
            )
            for f in fields
        }
        return {
            "dataset_id": dataset_id,
            "n_records": ds.n_records,
            "dim": ds.dim,
            "n_subjects": n_subjects,
            "metadata_coverage": coverage,
            "rejected_subjects": store.dataset_info[dataset_id]["rejected_subjects"],
        }

    # -- jobs --------------------------------------------------------------

    @app.post("/datasets/{dataset_id}/jobs/tsne", status_code=202)
    def submit_tsne(dataset_id: str, req: TsneRequest):
        ds = _dataset(dataset_id)
        params = TsneParams(
            perplexity=req.perplexity,
            iterations=req.iterations,
            seed=req.seed,
            theta=req.theta,
            exact_threshold=req.exact_threshold,
            n_workers=req.n_workers,
            learning_rate=req.learning_rate,
        )
        try:
            params.validate(ds.n_records)
        except ValidationError as exc:
            raise HTTPException(422, str(exc))

        def runner(job: Job):
            def progress(it, kl):
                job.progress = (it + 1, req.iterations)
                job.current_kl = kl

            return tsne_layout(
                ds, params, progress=progress, cancel=job.cancel_event.is_set
            )

        job = store.submit(dataset_id, "tsne", req.model_dump(), runner)
        with store.lock:
            job.progress = (job.progress[0], req.iterations)
        return {"job_id": job.id}

    @app.get("/jobs/{job_id}")
    def job_status(job_id: str):
        job = _job(job_id)
        body = job.snapshot()
        if job.state == "done" and job.kind == "probe":
            body["result"] = _probe_result_body(job.result)
        if job.state == "done" and job.kind == "lag":
            body["result"] = _lag_result_body(job.result)
        return body

    @app.delete("/jobs/{job_id}")
    def cancel_job(job_id: str):
        job = _job(job_id)
        with store.lock:
            job.cancel_event.set()
            if job.state == "queued":
                job.state = "canceled"
        return {"job_id": job.id, "state": job.state}

    @app.get("/jobs/{job_id}/layout")
    def job_layout(job_id: str, format: str = "json"):
        job = _job(job_id)
        if job.kind != "tsne":
            raise HTTPException(422, f"job {job_id!r} is not a layout job")
        if job.state != "done":
            raise HTTPException(409, f"job {job_id!r} is {job.state}")
        result = job.result
        if format == "csv":
            out = io.StringIO()
            from .tsne import layout_to_csv

            layout_to_csv(result.points, out)
            return Response(out.getvalue(), media_type="text/csv")
        return {
            "points": [
                {
                    "subject_id": p.subject_id,
                    "region": p.region.name if p.region is not None else None,
                    "x": p.x,
                    "y": p.y,
                }
                for p in result.points
            ],
            "kl_trace": result.kl_trace,
        }

    # -- cluster labeling ---------------------------------------------------

    @app.put("/datasets/{dataset_id}/clusters")
    def put_clusters(dataset_id: str, req: ClustersRequest):
        _dataset(dataset_id)
        with store.lock:
            entry = store.labelings[dataset_id]
            if req.version != entry["version"]:
                raise HTTPException(
                    409,
                    f"stale version {req.version}, current is {entry['version']}",
                )
            layout_job_id = req.layout_job or entry["layout_job"] or _latest_layout(
                store, dataset_id
            )
            if layout_job_id is None:
                raise HTTPException(422, "no completed layout job for this dataset")
            job = store.jobs.get(layout_job_id)
            if job is None or job.kind != "tsne" or job.state != "done":
                raise HTTPException(422, f"layout job {layout_job_id!r} not usable")
            try:
                polygons = [
                    Polygon(label=p.label, vertices=[tuple(v) for v in p.vertices])
                    for p in req.polygons
                ]
                labeling = assign_clusters(job.result.points, polygons)
            except ValidationError as exc:
                raise HTTPException(422, str(exc))
            entry["version"] += 1
            entry["polygons"] = polygons
            entry["labeling"] = labeling
            entry["layout_job"] = layout_job_id
            counts = {
                label: sum(1 for v in labeling.assignment.values() if v == label)
                for label in labeling.labels()
            }
            return {
                "version": entry["version"],
                "layout_job": layout_job_id,
                "counts": counts,
                "assignment": [
                    {"subject_id": sid, "region": region.name, "label": label}
                    for (sid, region), label in sorted(
                        labeling.assignment.items(), key=lambda kv: (kv[0][0], int(kv[0][1]))
                    )
                ],
            }

    @app.get("/datasets/{dataset_id}/clusters")
    def get_clusters(dataset_id: str):
        _dataset(dataset_id)
        with store.lock:
            entry = store.labelings[dataset_id]
            body = {
                "version": entry["version"],
                "layout_job": entry["layout_job"],
                "polygons": [
                    {"label": p.label, "vertices": [list(v) for v in p.vertices]}
                    for p in entry["polygons"]
                ],
            }
            if entry["labeling"] is not None:
                body["counts"] = {
                    label: sum(
                        1 for v in entry["labeling"].assignment.values() if v == label
                    )
                    for label in entry["labeling"].labels()
                }
            return body

    # -- probes and lag curves ----------------------------------------------

    @app.post("/datasets/{dataset_id}/jobs/probe", status_code=202)
    def submit_probe(dataset_id: str, req: ProbeRequest):
        ds = _dataset(dataset_id)
        if req.target not in pipeline.CLASSIFICATION_TARGETS + pipeline.REGRESSION_TARGETS:
            raise HTTPException(422, f"unknown probe target {req.target!r}")
        if req.C <= 0:
            raise HTTPException(422, f"C must be positive, got {req.C}")

        def runner(job: Job):
            labeling = store.labelings[dataset_id]["labeling"]
            return pipeline.run_probe(
                ds,
                req.target,
                kernel=req.kernel,
                C=req.C,
                gamma=req.gamma,
                balance=req.balance,
                seed=req.seed,
                labeling=labeling,
            )

        job = store.submit(dataset_id, "probe", req.model_dump(), runner)
        return {"job_id": job.id}

    @app.post("/datasets/{dataset_id}/jobs/lag", status_code=202)
    def submit_lag(dataset_id: str, req: LagRequest):
        ds = _dataset(dataset_id)
        if isinstance(req.subgroup, str):
            with store.lock:
                labeling = store.labelings[dataset_id]["labeling"]
            if labeling is None:
                raise HTTPException(422, "no cluster labeling for this dataset")
            members = labeling.members(req.subgroup)
            if not members:
                raise HTTPException(422, f"cluster {req.subgroup!r} is empty or unknown")
            subgroup = set(members)
        elif isinstance(req.subgroup, list):
            subgroup = {
                tuple(s) if isinstance(s, (list, tuple)) else s for s in req.subgroup
            }
            if not subgroup:
                raise HTTPException(422, "subgroup id list is empty")
        else:
            raise HTTPException(422, "subgroup must be a cluster label or an id list")

        def runner(job: Job):
            return pipeline.run_lag(
                ds, subgroup, epochs=req.epochs, lr=req.lr, seed=req.seed
            )

        job = store.submit(
            dataset_id,
            "lag",
            {"subgroup": sorted(map(str, subgroup)), "epochs": req.epochs,
             "lr": req.lr, "seed": req.seed},
            runner,
        )
        return {"job_id": job.id}

    # -- bias reports --------------------------------------------------------

    @app.get("/datasets/{dataset_id}/bias/regions")
    def bias_regions(dataset_id: str, probe_job: str):
        _dataset(dataset_id)
        job = _job(probe_job)
        if job.kind != "probe" or job.state != "done":
            raise HTTPException(409, f"probe job {probe_job!r} not finished")
        result = job.result
        if result.predictions is None:
            raise HTTPException(422, "probe job has no per-region predictions")
        counts = pipeline.run_bias_regions(result.predictions)
        return consistency_report_rows(counts)

    # -- image sets -----------------------------------------------------------

    @app.post("/imagesets", status_code=201)
    async def upload_imageset(request: Request):
        form = await request.form()
        labels_map = {}
        if "labels" in form and isinstance(form["labels"], str):
            for line in form["labels"].splitlines():
                line = line.strip()
                if not line or line.startswith("filename,"):
                    continue
                name, _, label = line.partition(",")
                labels_map[name.strip()] = label.strip() or "all"
        images = []
        with tempfile.TemporaryDirectory() as tmp:
            uploads = [v for v in form.getlist("images")]
            sidecars = {}
            for up in uploads:
                if not isinstance(up, FormUploadFile):
                    continue
                if up.filename.endswith(".json"):
                    sidecars[up.filename] = await up.read()
            for up in uploads:
                if not isinstance(up, FormUploadFile) or up.filename.endswith(".json"):
                    continue
                dest = Path(tmp) / Path(up.filename).name
                dest.write_bytes(await up.read())
                sidecar = sidecars.get(up.filename + ".json")
                if sidecar is not None:
                    (Path(tmp) / (Path(up.filename).name + ".json")).write_bytes(sidecar)
                try:
                    img = load_and_normalize(dest)
                except (ValidationError, OSError) as exc:
                    raise HTTPException(422, f"{up.filename}: {exc}")
                label = labels_map.get(Path(up.filename).name, "all")
                images.append((label, img, Path(up.filename).name))
        if not images:
            raise HTTPException(422, "no images uploaded")
        imageset_id = store.new_id()
        with store.lock:
            store.imagesets[imageset_id] = images
        return {"imageset_id": imageset_id, "n_images": len(images)}

    @app.get("/imagesets/{imageset_id}/edge-report")
    def imageset_edge_report(
        imageset_id: str, clusters: Optional[str] = None, tau: float = 0.1
    ):
        entries = store.imagesets.get(imageset_id)
        if entries is None:
            raise HTTPException(404, f"unknown imageset {imageset_id!r}")
        wanted = clusters.split(",") if clusters else None
        try:
            report = pipeline.edge_report(
                [(label, img) for label, img, _ in entries], tau=tau, clusters=wanted
            )
        except ValidationError as exc:
            raise HTTPException(422, str(exc))
        return {
            "labels": report.labels,
            "n_images": report.n_images,
            "tau": report.tau,
            "mean_profiles": {
                label: list(map(float, prof))
                for label, prof in report.mean_profiles.items()
            },
            "shifts": report.shifts,
            "mean_image_refs": {
                label: f"/imagesets/{imageset_id}/mean-image?cluster={label}"
                for label in report.labels
            },
        }

    @app.get("/imagesets/{imageset_id}/mean-image")
    def imageset_mean_image(imageset_id: str, cluster: str):
        entries = store.imagesets.get(imageset_id)
        if entries is None:
            raise HTTPException(404, f"unknown imageset {imageset_id!r}")
        images = [img for label, img, _ in entries if label == cluster]
        if not images:
            raise HTTPException(404, f"no images labeled {cluster!r}")
        mean = mean_image(images)
        buf = io.BytesIO()
        write_pgm(mean, buf)
        return Response(buf.getvalue(), media_type="image/x-portable-graymap")

    return app


def _latest_layout(store: Store, dataset_id: str) -> Optional[str]:
    done = [
        job_id
        for (ds_id, kind, _), job_id in store.cache.items()
        if ds_id == dataset_id and kind == "tsne"
        and store.jobs[job_id].state == "done"
    ]
    return done[-1] if done else None


def _probe_result_body(result) -> dict:
    body = {
        "target": result.target,
        "task": result.task,
        "n_train": result.n_train,
        "converged": result.converged,
        "warnings": result.warnings,
        "metrics": _metrics_body(result.metrics),
    }
    if result.predictions is not None:
        body["n_predictions"] = len(result.predictions)
    return body


def _metrics_body(m) -> dict:
    body = {"n_eval": m.n_eval, "accuracy": m.accuracy, "mae": m.mae}
    if m.per_group:
        body["per_group"] = {
            str(g): {"n_eval": gm.n_eval, "accuracy": gm.accuracy, "mae": gm.mae}
            for g, gm in m.per_group.items()
        }
    return body


def _lag_result_body(report) -> dict:
    return {
        "subgroup_ids": [list(i) if isinstance(i, tuple) else i for i in report.subgroup_ids],
        "entries": [
            {
                "epoch": e.epoch,
                "overall_train_acc": e.overall_train_acc,
                "subgroup_train_acc": e.subgroup_train_acc,
                "rest_train_acc": e.rest_train_acc,
                "overall_val_acc": _nan_null(e.overall_val_acc),
                "subgroup_val_acc": _nan_null(e.subgroup_val_acc),
            }
            for e in report.entries
        ],
    }


def _nan_null(x: float):
    return None if x != x else x
