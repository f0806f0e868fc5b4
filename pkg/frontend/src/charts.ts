/**
 * Chart and table models for the report views.  Models are pure data
 * (pixel-space polylines, rows) so tests can assert on them; drawing is a
 * thin pass over a 2D context.
 */

import { Canvas2D } from "./scatter.js";
import {
  ConsistencyReportDto,
  LagEpochDto,
  MetricsDto,
} from "./api.js";

export interface ChartPoint {
  x: number;
  y: number;
}

export interface LagSeries {
  name: string;
  color: string;
  points: ChartPoint[];
}

export interface LagChartModel {
  width: number;
  height: number;
  series: LagSeries[];
  yTicks: { value: number; y: number }[];
}

const LAG_SERIES: [keyof LagEpochDto, string, string][] = [
  ["overall_train_acc", "overall (train)", "#4e79a7"],
  ["subgroup_train_acc", "subgroup (train)", "#e15759"],
  ["overall_val_acc", "overall (val)", "#a0cbe8"],
  ["subgroup_val_acc", "subgroup (val)", "#ff9d9a"],
];

/**
 * Accuracy in [0, 1] maps onto pixel y with 1.0 at the top, so a lagging
 * subgroup literally draws below the overall line.
 */
export function lagChartModel(
  entries: LagEpochDto[],
  width = 480,
  height = 240,
  pad = 24,
): LagChartModel {
  const innerW = width - 2 * pad;
  const innerH = height - 2 * pad;
  const n = Math.max(entries.length - 1, 1);
  const toX = (epochIdx: number) => pad + (epochIdx / n) * innerW;
  const toY = (acc: number) => pad + (1 - acc) * innerH;
  const series: LagSeries[] = [];
  for (const [key, name, color] of LAG_SERIES) {
    const points: ChartPoint[] = [];
    entries.forEach((e, i) => {
      const v = e[key];
      if (typeof v === "number" && Number.isFinite(v)) {
        points.push({ x: toX(i), y: toY(v) });
      }
    });
    if (points.length) {
      series.push({ name, color, points });
    }
  }
  const yTicks = [0, 0.25, 0.5, 0.75, 1].map((value) => ({ value, y: toY(value) }));
  return { width, height, series, yTicks };
}

export function drawLagChart(ctx: Canvas2D, model: LagChartModel): void {
  ctx.clearRect(0, 0, model.width, model.height);
  ctx.strokeStyle = "#dddddd";
  ctx.lineWidth = 1;
  for (const tick of model.yTicks) {
    ctx.beginPath();
    ctx.moveTo(0, tick.y);
    ctx.lineTo(model.width, tick.y);
    ctx.stroke();
  }
  for (const s of model.series) {
    ctx.strokeStyle = s.color;
    ctx.lineWidth = 2;
    ctx.beginPath();
    s.points.forEach((p, i) => (i === 0 ? ctx.moveTo(p.x, p.y) : ctx.lineTo(p.x, p.y)));
    ctx.stroke();
  }
}

// ---------------------------------------------------------------------------
// Tables
// ---------------------------------------------------------------------------

export interface ConsistencyRow {
  k: number;
  observed: number;
  expected: number;
  ratio: number | null;
}

export function consistencyRows(report: ConsistencyReportDto): ConsistencyRow[] {
  return Object.entries(report.exactly_k)
    .map(([k, row]) => ({
      k: Number(k),
      observed: row.observed,
      expected: row.expected,
      ratio: row.ratio,
    }))
    .sort((a, b) => a.k - b.k);
}

export interface MetricsGridRow {
  probe: string;
  cells: (string | null)[];
}

export const METRICS_GRID_HEADER = [
  "Body Region accuracy",
  "Sex accuracy",
  "Weight l1 kg",
  "Height l1 m",
  "Age l1 years",
];

const TARGET_COLUMN: Record<string, number> = {
  region: 0,
  sex: 1,
  weight: 2,
  height: 3,
  age: 4,
};

/** Pivot per-target probe metrics into one grid row per probe label. */
export function metricsGrid(
  results: { probe: string; target: string; metrics: MetricsDto }[],
): MetricsGridRow[] {
  const byProbe = new Map<string, (string | null)[]>();
  for (const r of results) {
    const col = TARGET_COLUMN[r.target];
    if (col === undefined) continue;
    let cells = byProbe.get(r.probe);
    if (!cells) {
      cells = [null, null, null, null, null];
      byProbe.set(r.probe, cells);
    }
    const value = col <= 1 ? r.metrics.accuracy : r.metrics.mae;
    cells[col] = value === null || value === undefined ? null : value.toFixed(3);
  }
  return [...byProbe.entries()]
    .sort(([a], [b]) => a.localeCompare(b))
    .map(([probe, cells]) => ({ probe, cells }));
}

export interface CompositionBar {
  cluster: string;
  segments: { label: string; fraction: number; color: string }[];
  total: number;
}

export function compositionBars(
  counts: Record<string, Record<string, number>>,
  palette: (label: string) => string,
): CompositionBar[] {
  return Object.entries(counts)
    .sort(([a], [b]) => a.localeCompare(b))
    .map(([cluster, byCat]) => {
      const total = Object.values(byCat).reduce((a, b) => a + b, 0);
      const segments = Object.entries(byCat)
        .sort(([a], [b]) => a.localeCompare(b))
        .map(([label, count]) => ({
          label,
          fraction: total > 0 ? count / total : 0,
          color: palette(label),
        }));
      return { cluster, segments, total };
    });
}
