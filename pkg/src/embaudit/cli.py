"""Batch front door: ingest, layouts, probes, reports, fixtures, serving.

Every subcommand takes a --seed where randomness is involved and writes its
artifacts into -o/--out (default EMBAUDIT_DATA_DIR, else the working
directory).  Exit codes: 0 success, 1 validation error, 2 IO error.
A --config file of KEY=VALUE lines supplies flag defaults (keys are the
long flag names with dashes replaced by underscores).
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

import numpy as np

from . import pipeline, reports
from .cluster_tools import assign_clusters, polygons_from_json
from .data_model import (
    Region,
    ingest_embeddings,
    split_dataset,
    validate_metadata,
    write_emb1,
    write_embedding_csv,
    write_metadata_csv,
)
from .errors import ValidationError
from .image_analysis import load_and_normalize, profile_to_csv, write_pgm
from .synth import SynthEmbeddingSpec, SynthImageSpec, generate_embeddings, generate_neck_images
from .tsne import LayoutPoint, TsneParams, kl_trace_to_csv, layout_to_csv, tsne_layout


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(f"{self.prog}: {message}\n{self.format_usage()}")


def _out_dir(args) -> Path:
    out = args.out or os.environ.get("EMBAUDIT_DATA_DIR") or "."
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _load_dataset(args):
    result = ingest_embeddings(args.embeddings, args.metadata)
    if result.rejected_subjects:
        print(
            f"rejected {len(result.rejected_subjects)} subjects without metadata: "
            + ", ".join(result.rejected_subjects),
            file=sys.stderr,
        )
    return result.dataset


def build_parser() -> _Parser:
    parser = _Parser(prog="embaudit", description=__doc__)
    parser.add_argument("--config", help="KEY=VALUE file with flag defaults")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="ingest embeddings + metadata, report problems")
    p.add_argument("--embeddings", required=True, help="EMB1 or CSV embedding file")
    p.add_argument("--metadata", required=True, help="metadata CSV")
    p.add_argument("-o", "--out", help="output directory")
    p.add_argument("--emit", choices=["emb1", "csv"], default="emb1",
                   help="re-emit validated embeddings in this format")
    p.add_argument("--split-seed", type=int, default=0)

    p = sub.add_parser("tsne", help="2-D layout with KL trace")
    p.add_argument("--embeddings", required=True)
    p.add_argument("--metadata", required=True)
    p.add_argument("--perplexity", type=float, default=50.0)
    p.add_argument("--iterations", type=int, default=1000)
    p.add_argument("--theta", type=float, default=0.5)
    p.add_argument("--exact-threshold", type=int, default=5000)
    p.add_argument("--learning-rate", type=float, default=None)
    p.add_argument("--threads", type=int, default=1,
                   help="worker count (never changes results)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-o", "--out", help="output directory")

    p = sub.add_parser("probe", help="train and evaluate one probe target")
    p.add_argument("--embeddings", required=True)
    p.add_argument("--metadata", required=True)
    p.add_argument("--target", required=True,
                   choices=list(pipeline.CLASSIFICATION_TARGETS + pipeline.REGRESSION_TARGETS))
    p.add_argument("--kernel", choices=["linear", "rbf"], default="linear")
    p.add_argument("--gamma", type=float, default=None)
    p.add_argument("--C", type=float, default=1.0)
    p.add_argument("--no-balance", action="store_true")
    p.add_argument("--bins", type=int, default=10)
    p.add_argument("--label", default=None, help="probe label in reports")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-o", "--out", help="output directory")

    p = sub.add_parser("lag", help="subgroup learning-lag curves (sex classifier)")
    p.add_argument("--embeddings", required=True)
    p.add_argument("--metadata", required=True)
    p.add_argument("--subgroup-file", help="file with one subject id per line")
    p.add_argument("--clusters", help="clusters CSV from `clusters assign`")
    p.add_argument("--subgroup-label", help="cluster label defining the subgroup")
    p.add_argument("--epochs", type=int, default=50)
    p.add_argument("--lr", type=float, default=0.1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-o", "--out", help="output directory")

    p = sub.add_parser("clusters", help="cluster labeling tools")
    csub = p.add_subparsers(dest="clusters_command", required=True)
    pc = csub.add_parser("assign", help="label layout points by polygons")
    pc.add_argument("--layout", required=True, help="layout CSV from `tsne`")
    pc.add_argument("--polygons", required=True, help="polygon JSON")
    pc.add_argument("-o", "--out", help="output directory")

    p = sub.add_parser("bias", help="bias statistics")
    bsub = p.add_subparsers(dest="bias_command", required=True)
    pb = bsub.add_parser("regions", help="cross-region consistency vs independence")
    pb.add_argument("--predictions", required=True,
                    help="predictions CSV from `probe` (classification)")
    pb.add_argument("-o", "--out", help="output directory")

    p = sub.add_parser("edges", help="framing analysis from images")
    esub = p.add_subparsers(dest="edges_command", required=True)
    pe = esub.add_parser("report", help="mean profiles, mean images, pairwise shifts")
    pe.add_argument("--images", required=True, help="directory of PGM/RAWF32 images")
    pe.add_argument("--labels", help="CSV filename,label (default: one cluster)")
    pe.add_argument("--tau", type=float, default=0.1)
    pe.add_argument("--max-shift", type=int, default=128)
    pe.add_argument("-o", "--out", help="output directory")

    p = sub.add_parser("synth", help="synthetic fixtures with planted structure")
    ssub = p.add_subparsers(dest="synth_command", required=True)
    ps = ssub.add_parser("embeddings", help="embedding dataset with planted bias")
    ps.add_argument("--n", type=int, required=True, help="number of subjects")
    ps.add_argument("--dim", type=int, required=True)
    ps.add_argument("--flip", type=float, default=0.0,
                    help="fraction of subjects with inverted sex component")
    ps.add_argument("--separation", type=float, default=10.0)
    ps.add_argument("--location-offset", type=float, default=0.0)
    ps.add_argument("--emit", choices=["emb1", "csv"], default="emb1")
    ps.add_argument("--seed", type=int, default=0)
    ps.add_argument("-o", "--out", help="output directory")
    pi = ssub.add_parser("images", help="neck-curve image cluster")
    pi.add_argument("--count", type=int, required=True)
    pi.add_argument("--shift", type=int, default=0)
    pi.add_argument("--noise", type=float, default=0.0)
    pi.add_argument("--amplitude", type=float, default=30.0)
    pi.add_argument("--curvature", type=float, default=20.0)
    pi.add_argument("--cluster", default="all", help="cluster label for these images")
    pi.add_argument("--seed", type=int, default=0)
    pi.add_argument("-o", "--out", help="output directory")

    p = sub.add_parser("report", help="aggregate reports")
    rsub = p.add_subparsers(dest="report_command", required=True)
    pr = rsub.add_parser("table1", help="probe metric grid (markdown + CSV)")
    pr.add_argument("--metrics", nargs="+", required=True,
                    help="metrics CSV files from `probe` runs")
    pr.add_argument("-o", "--out", help="output directory")

    p = sub.add_parser("serve", help="run the HTTP service")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.add_argument("--max-jobs", type=int, default=2)

    return parser


# ---------------------------------------------------------------------------
# Command implementations
# ---------------------------------------------------------------------------

def _cmd_ingest(args) -> int:
    out = _out_dir(args)
    ds = _load_dataset(args)
    warnings = []
    for meta in ds.metadata.values():
        warnings.extend(validate_metadata(meta))
    split = split_dataset(ds, seed=args.split_seed)
    if args.emit == "emb1":
        write_emb1(ds.records, ds.dim, out / "embeddings.emb1")
    else:
        write_embedding_csv(ds.records, ds.dim, out / "embeddings.csv")
    write_metadata_csv(ds.metadata, out / "metadata.csv")
    with open(out / "split.csv", "w") as fh:
        fh.write("subject_id,split\n")
        for sid in sorted(split.assignment):
            fh.write(f"{sid},{split.assignment[sid]}\n")
    with open(out / "ingest_report.txt", "w") as fh:
        fh.write(f"records: {ds.n_records}\ndim: {ds.dim}\n")
        fh.write(f"subjects: {len(ds.metadata)}\n")
        for w in warnings:
            fh.write(f"warning: {w}\n")
    print(f"ingested {ds.n_records} records (dim {ds.dim}) -> {out}")
    return 0


def _cmd_tsne(args) -> int:
    out = _out_dir(args)
    ds = _load_dataset(args)
    params = TsneParams(
        perplexity=args.perplexity,
        iterations=args.iterations,
        theta=args.theta,
        exact_threshold=args.exact_threshold,
        learning_rate=args.learning_rate,
        seed=args.seed,
        n_workers=args.threads,
    )
    result = tsne_layout(ds, params)
    layout_to_csv(result.points, out / "layout.csv")
    kl_trace_to_csv(result.kl_trace, out / "kl_trace.csv")
    for w in result.warnings:
        print(f"warning: {w}", file=sys.stderr)
    final = result.kl_trace[-1] if result.kl_trace else float("nan")
    print(f"layout of {len(result.points)} points, final KL {final:.4f} -> {out}")
    return 0


def _cmd_probe(args) -> int:
    out = _out_dir(args)
    ds = _load_dataset(args)
    label = args.label or f"{args.kernel}-C{args.C}"
    result = pipeline.run_probe(
        ds,
        args.target,
        kernel=args.kernel,
        C=args.C,
        gamma=args.gamma,
        balance=not args.no_balance,
        seed=args.seed,
        bins=args.bins,
    )
    rows = pipeline.probe_metric_rows(result, label)
    (out / "metrics.csv").write_text(reports.metrics_rows_to_csv(rows))
    if result.predictions is not None:
        (out / "predictions.csv").write_text(
            pipeline.predictions_to_csv(result.predictions)
        )
    for w in result.warnings:
        print(f"warning: {w}", file=sys.stderr)
    m = result.metrics
    shown = f"accuracy {m.accuracy:.4f}" if m.accuracy is not None else f"mae {m.mae:.4f}"
    print(f"probe {args.target}: {shown} on {m.n_eval} held-out records -> {out}")
    return 0


def _cmd_lag(args) -> int:
    out = _out_dir(args)
    ds = _load_dataset(args)
    if args.subgroup_file:
        ids = [
            line.strip()
            for line in Path(args.subgroup_file).read_text().splitlines()
            if line.strip()
        ]
        subgroup = set(ids)
    elif args.clusters and args.subgroup_label:
        subgroup = set()
        for line in Path(args.clusters).read_text().splitlines()[1:]:
            if not line.strip():
                continue
            sid, region, label = line.split(",")
            if label == args.subgroup_label:
                subgroup.add((sid, Region.from_name(region)))
        if not subgroup:
            raise ValidationError(
                f"cluster {args.subgroup_label!r} has no members in {args.clusters}"
            )
    else:
        raise ValidationError(
            "need --subgroup-file or --clusters with --subgroup-label"
        )
    report = pipeline.run_lag(
        ds, subgroup, epochs=args.epochs, lr=args.lr, seed=args.seed
    )
    (out / "lag.csv").write_text(pipeline.lag_report_csv(report))
    if report.entries:
        last = report.entries[-1]
        print(
            f"lag curves over {len(report.entries)} epochs: final overall "
            f"{last.overall_train_acc:.3f}, subgroup {last.subgroup_train_acc:.3f} -> {out}"
        )
    else:
        print(f"lag curves: empty schedule -> {out}")
    return 0


def _cmd_clusters_assign(args) -> int:
    out = _out_dir(args)
    points = _layout_from_csv(Path(args.layout))
    polygons = polygons_from_json(Path(args.polygons))
    labeling = assign_clusters(points, polygons)
    with open(out / "clusters.csv", "w") as fh:
        fh.write("subject_id,region,label\n")
        for (sid, region), label in sorted(
            labeling.assignment.items(), key=lambda kv: (kv[0][0], int(kv[0][1]))
        ):
            fh.write(f"{sid},{region.name},{label}\n")
    counts = {
        label: sum(1 for v in labeling.assignment.values() if v == label)
        for label in labeling.labels()
    }
    print("cluster sizes: " + ", ".join(f"{k}={v}" for k, v in counts.items()))
    return 0


def _layout_from_csv(path: Path) -> list[LayoutPoint]:
    lines = path.read_text().splitlines()
    if not lines or lines[0] != "subject_id,region,x,y":
        raise ValidationError("layout CSV header must be subject_id,region,x,y")
    points = []
    for line in lines[1:]:
        if not line.strip():
            continue
        sid, region, x, y = line.split(",")
        points.append(
            LayoutPoint(
                subject_id=sid,
                region=Region.from_name(region) if region else None,
                x=float(x),
                y=float(y),
            )
        )
    return points


def _cmd_bias_regions(args) -> int:
    out = _out_dir(args)
    preds = pipeline.predictions_from_csv(Path(args.predictions).read_text())
    counts = pipeline.run_bias_regions(preds)
    (out / "consistency.csv").write_text(reports.consistency_csv(counts))
    (out / "consistency.md").write_text(reports.consistency_markdown(counts))
    obs = counts.exactly_k
    print(
        f"consistency over {counts.n_subjects} complete subjects: "
        f"exactly 1/2/3 regions = {obs[1]}/{obs[2]}/{obs[3]} -> {out}"
    )
    return 0


def _cmd_edges_report(args) -> int:
    out = _out_dir(args)
    image_dir = Path(args.images)
    if not image_dir.is_dir():
        raise ValidationError(f"{image_dir} is not a directory")
    labels_map = {}
    if args.labels:
        for line in Path(args.labels).read_text().splitlines():
            line = line.strip()
            if not line or line.startswith("filename,"):
                continue
            name, _, label = line.partition(",")
            labels_map[name.strip()] = label.strip()
    labeled = []
    for path in sorted(image_dir.iterdir()):
        if path.suffix == ".json" or not path.is_file():
            continue
        if path.suffix.lower() != ".pgm" and not Path(str(path) + ".json").exists():
            continue
        img = load_and_normalize(path)
        labeled.append((labels_map.get(path.name, "all"), img))
    report = pipeline.edge_report(labeled, tau=args.tau, max_shift=args.max_shift)
    for label in report.labels:
        profile_to_csv(report.mean_profiles[label], out / f"profile_{label}.csv")
        write_pgm(report.mean_images[label], out / f"mean_{label}.pgm")
    with open(out / "shifts.csv", "w") as fh:
        fh.write("cluster_a,cluster_b,shift,score\n")
        for row in report.shifts:
            fh.write(f"{row['a']},{row['b']},{row['shift']},{row['score']!r}\n")
    print(
        f"edge report over clusters {', '.join(report.labels)} "
        f"({sum(report.n_images.values())} images) -> {out}"
    )
    return 0


def _cmd_synth_embeddings(args) -> int:
    out = _out_dir(args)
    spec = SynthEmbeddingSpec(
        n_subjects=args.n,
        dim=args.dim,
        flipped_fraction=args.flip,
        separation=args.separation,
        location_offset=args.location_offset,
        seed=args.seed,
    )
    ds, truth = generate_embeddings(spec)
    if args.emit == "emb1":
        write_emb1(ds.records, ds.dim, out / "embeddings.emb1")
    else:
        write_embedding_csv(ds.records, ds.dim, out / "embeddings.csv")
    write_metadata_csv(ds.metadata, out / "metadata.csv")
    with open(out / "truth.csv", "w") as fh:
        fh.write("subject_id,flipped\n")
        for sid in sorted(truth):
            fh.write(f"{sid},{int(truth[sid].flipped)}\n")
    n_flipped = sum(t.flipped for t in truth.values())
    print(
        f"synthetic dataset: {ds.n_records} records, dim {ds.dim}, "
        f"{n_flipped} flipped subjects -> {out}"
    )
    return 0


def _cmd_synth_images(args) -> int:
    out = _out_dir(args)
    spec = SynthImageSpec(
        count=args.count,
        vertical_shift=args.shift,
        noise_std=args.noise,
        amplitude=args.amplitude,
        curvature=args.curvature,
        seed=args.seed,
    )
    images, curve = generate_neck_images(spec)
    img_dir = out / "images"
    img_dir.mkdir(exist_ok=True)
    labels_path = out / "labels.csv"
    new_labels = not labels_path.exists()
    with open(labels_path, "a") as lf:
        if new_labels:
            lf.write("filename,label\n")
        for k, img in enumerate(images):
            name = f"{args.cluster}_{k:05d}.pgm"
            write_pgm(img, img_dir / name)
            lf.write(f"{name},{args.cluster}\n")
    profile_to_csv(curve, out / f"truth_curve_{args.cluster}.csv")
    print(f"{len(images)} images for cluster {args.cluster!r} -> {img_dir}")
    return 0


def _cmd_report_table1(args) -> int:
    out = _out_dir(args)
    rows = []
    for path in args.metrics:
        rows.extend(reports.metrics_rows_from_csv(Path(path).read_text()))
    overall = [r for r in rows if not r["group"]]
    grid = reports.probe_grid_rows(overall)
    (out / "table1.csv").write_text(reports.table1_csv(grid))
    (out / "table1.md").write_text(reports.table1_markdown(grid))
    print(f"metric grid with {len(grid)} probe rows -> {out}")
    return 0


def _cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app

    app = create_app(max_concurrent_jobs=args.max_jobs)
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return 0


_COMMANDS = {
    "ingest": _cmd_ingest,
    "tsne": _cmd_tsne,
    "probe": _cmd_probe,
    "lag": _cmd_lag,
    "serve": _cmd_serve,
}


def _dispatch(args) -> int:
    if args.command == "clusters":
        return _cmd_clusters_assign(args)
    if args.command == "bias":
        return _cmd_bias_regions(args)
    if args.command == "edges":
        return _cmd_edges_report(args)
    if args.command == "synth":
        if args.synth_command == "embeddings":
            return _cmd_synth_embeddings(args)
        return _cmd_synth_images(args)
    if args.command == "report":
        return _cmd_report_table1(args)
    return _COMMANDS[args.command](args)


def _apply_config(parser: _Parser, argv: list[str]) -> list[str]:
    """Load --config KEY=VALUE defaults before the real parse."""
    if "--config" not in argv:
        return argv
    idx = argv.index("--config")
    if idx + 1 >= len(argv):
        raise _UsageError("embaudit: --config needs a file argument")
    path = Path(argv[idx + 1])
    defaults = {}
    for line in path.read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, _, value = line.partition("=")
        defaults[key.strip().replace("-", "_")] = _coerce(value.strip())
    _set_defaults_everywhere(parser, defaults)
    return argv[:idx] + argv[idx + 2 :]


def _set_defaults_everywhere(parser, defaults):
    # subparsers re-apply their own defaults, so push config into each one
    parser.set_defaults(**defaults)
    for action in parser._actions:
        if isinstance(action, argparse._SubParsersAction):
            for sub in action.choices.values():
                _set_defaults_everywhere(sub, defaults)


def _coerce(value: str):
    if value.lower() in ("true", "false"):
        return value.lower() == "true"
    for cast in (int, float):
        try:
            return cast(value)
        except ValueError:
            continue
    return value


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        argv = _apply_config(parser, argv)
        args = parser.parse_args(argv)
        return _dispatch(args)
    except _UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return 2


# contract-level alias: argv in, exit code out
run_command = main


if __name__ == "__main__":
    sys.exit(main())
