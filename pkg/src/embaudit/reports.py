"""Report formatting: probe metric grids, consistency and composition tables.

Every report exists twice: machine-readable CSV for downstream tooling and
a markdown table for humans.  Tooling never parses the markdown.
"""

from __future__ import annotations

import csv
import io
from typing import Mapping, Optional, Sequence

from .cluster_tools import CompositionTable, ConsistencyCounts, independence_expectation
from .data_model import Region
from .errors import ValidationError

TABLE1_COLUMNS = [
    ("region_accuracy", "Body Region accuracy"),
    ("sex_accuracy", "Sex accuracy"),
    ("weight_l1_kg", "Weight l1 kg"),
    ("height_l1_m", "Height l1 m"),
    ("age_l1_years", "Age l1 years"),
]

PROBE_METRIC_KEYS = {
    "region": "region_accuracy",
    "sex": "sex_accuracy",
    "weight": "weight_l1_kg",
    "height": "height_l1_m",
    "age": "age_l1_years",
}


def probe_grid_rows(metric_rows: Sequence[Mapping]) -> list[dict]:
    """Pivot per-(probe, target) metric rows into one grid row per probe.

    Input rows need: probe (label), target, task, and accuracy or mae.
    """
    grid: dict[str, dict] = {}
    for row in metric_rows:
        probe = row["probe"]
        target = row["target"]
        key = PROBE_METRIC_KEYS.get(target)
        if key is None:
            continue  # location/acq_year probes have no Table-1 column
        value = row.get("accuracy") if key.endswith("accuracy") else row.get("mae")
        grid.setdefault(probe, {"probe": probe})[key] = value
    return [grid[p] for p in sorted(grid)]


def table1_csv(rows: Sequence[Mapping]) -> str:
    out = io.StringIO()
    writer = csv.writer(out)
    writer.writerow(["probe"] + [key for key, _ in TABLE1_COLUMNS])
    for row in rows:
        writer.writerow(
            [row.get("probe", "")]
            + [_fmt_csv(row.get(key)) for key, _ in TABLE1_COLUMNS]
        )
    return out.getvalue()


def table1_markdown(rows: Sequence[Mapping]) -> str:
    headers = ["Probe"] + [title for _, title in TABLE1_COLUMNS]
    lines = [
        "| " + " | ".join(headers) + " |",
        "|" + "|".join("---" for _ in headers) + "|",
    ]
    for row in rows:
        cells = [str(row.get("probe", ""))]
        for key, _ in TABLE1_COLUMNS:
            cells.append(_fmt_md(row.get(key)))
        lines.append("| " + " | ".join(cells) + " |")
    return "\n".join(lines) + "\n"


def _fmt_csv(value) -> str:
    return "" if value is None else repr(float(value))


def _fmt_md(value) -> str:
    return "" if value is None else f"{float(value):.3f}"


# ---------------------------------------------------------------------------
# Probe metrics CSV (one row per probe x target)
# ---------------------------------------------------------------------------

METRICS_HEADER = ["probe", "target", "task", "accuracy", "mae", "n_eval", "group"]


def metrics_rows_to_csv(rows: Sequence[Mapping]) -> str:
    out = io.StringIO()
    writer = csv.writer(out)
    writer.writerow(METRICS_HEADER)
    for row in rows:
        writer.writerow(
            [
                row.get("probe", ""),
                row.get("target", ""),
                row.get("task", ""),
                _fmt_csv(row.get("accuracy")),
                _fmt_csv(row.get("mae")),
                row.get("n_eval", ""),
                row.get("group", ""),
            ]
        )
    return out.getvalue()


def metrics_rows_from_csv(text: str) -> list[dict]:
    reader = csv.reader(io.StringIO(text))
    header = next(reader, None)
    if header != METRICS_HEADER:
        raise ValidationError(
            f"metrics CSV header must be {','.join(METRICS_HEADER)}"
        )
    rows = []
    for raw in reader:
        if not raw:
            continue
        rows.append(
            {
                "probe": raw[0],
                "target": raw[1],
                "task": raw[2],
                "accuracy": float(raw[3]) if raw[3] else None,
                "mae": float(raw[4]) if raw[4] else None,
                "n_eval": int(raw[5]) if raw[5] else None,
                "group": raw[6],
            }
        )
    return rows


# ---------------------------------------------------------------------------
# Consistency report
# ---------------------------------------------------------------------------

def consistency_report_rows(counts: ConsistencyCounts) -> dict:
    """Observed counts next to the independence expectations and ratios."""
    rates = tuple(counts.per_region[r].rate for r in Region)
    expected = independence_expectation(rates, counts.n_subjects)
    exactly = {
        k: {
            "observed": counts.exactly_k[k],
            "expected": expected[k],
            "ratio": (counts.exactly_k[k] / expected[k]) if expected[k] > 0 else None,
        }
        for k in range(4)
    }
    return {
        "per_region": {
            r.name: {
                "count": counts.per_region[r].count,
                "rate": counts.per_region[r].rate,
                "n": counts.per_region[r].n,
            }
            for r in Region
        },
        "exactly_k": exactly,
        "n_subjects": counts.n_subjects,
        "n_partial": counts.n_partial,
    }


def consistency_csv(counts: ConsistencyCounts) -> str:
    report = consistency_report_rows(counts)
    out = io.StringIO()
    writer = csv.writer(out)
    writer.writerow(["section", "key", "observed", "expected", "ratio", "rate", "n"])
    for name, row in report["per_region"].items():
        writer.writerow(
            ["region", name, row["count"], "", "", repr(row["rate"]), row["n"]]
        )
    for k, row in report["exactly_k"].items():
        writer.writerow(
            [
                "exactly_k",
                k,
                row["observed"],
                repr(row["expected"]),
                "" if row["ratio"] is None else repr(row["ratio"]),
                "",
                report["n_subjects"],
            ]
        )
    writer.writerow(["partial", "excluded_subjects", report["n_partial"], "", "", "", ""])
    return out.getvalue()


def consistency_markdown(counts: ConsistencyCounts) -> str:
    report = consistency_report_rows(counts)
    lines = [
        "| Region | Misclassified | Rate | N |",
        "|---|---|---|---|",
    ]
    for name, row in report["per_region"].items():
        lines.append(
            f"| {name} | {row['count']} | {row['rate']:.4f} | {row['n']} |"
        )
    lines += [
        "",
        "| Regions misclassified | Observed | Expected (independent) | Ratio |",
        "|---|---|---|---|",
    ]
    for k, row in report["exactly_k"].items():
        ratio = "" if row["ratio"] is None else f"{row['ratio']:.1f}x"
        lines.append(
            f"| exactly {k} | {row['observed']} | {row['expected']:.2f} | {ratio} |"
        )
    lines.append("")
    lines.append(
        f"Complete subjects: {report['n_subjects']}; "
        f"excluded partial subjects: {report['n_partial']}."
    )
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Composition report
# ---------------------------------------------------------------------------

def composition_csv(table: CompositionTable) -> str:
    out = io.StringIO()
    writer = csv.writer(out)
    writer.writerow(["cluster", "category", "count", "rate", "flag"])
    flags = table.flags()
    for i, cluster in enumerate(table.clusters):
        for j, cat in enumerate(table.categories):
            rate = table.rates[i, j]
            writer.writerow(
                [
                    cluster,
                    cat,
                    int(table.counts[i, j]),
                    "" if rate != rate else repr(float(rate)),
                    flags.get(cluster, ""),
                ]
            )
    return out.getvalue()


def composition_markdown(table: CompositionTable) -> str:
    headers = ["Cluster"] + [str(c) for c in table.categories] + ["Flag"]
    lines = [
        "| " + " | ".join(headers) + " |",
        "|" + "|".join("---" for _ in headers) + "|",
    ]
    flags = table.flags()
    for i, cluster in enumerate(table.clusters):
        cells = [cluster]
        for j in range(len(table.categories)):
            rate = table.rates[i, j]
            shown = "n/a" if rate != rate else f"{rate:.2f}"
            cells.append(f"{int(table.counts[i, j])} ({shown})")
        cells.append(flags.get(cluster, ""))
        lines.append("| " + " | ".join(cells) + " |")
    return "\n".join(lines) + "\n"
