import { describe, expect, it } from "vitest";

import { buildColoring, gradientColor } from "../src/colors.js";
import {
  LassoDraft,
  buildScene,
  fitTransform,
  panBy,
  screenToWorld,
  worldToScreen,
  zoomAt,
} from "../src/scatter.js";
import {
  METRICS_GRID_HEADER,
  compositionBars,
  consistencyRows,
  lagChartModel,
  metricsGrid,
} from "../src/charts.js";
import { Vec2, boundsOf } from "../src/geometry.js";

describe("coloring", () => {
  it("categorical fields get one legend entry per category", () => {
    const coloring = buildColoring("sex", ["male", "female", "male", null]);
    expect(coloring.legend.kind).toBe("categorical");
    if (coloring.legend.kind === "categorical") {
      expect(coloring.legend.entries.map((e) => e.label)).toEqual(["female", "male"]);
    }
    expect(coloring.colors[0]).toBe(coloring.colors[2]);
    expect(coloring.colors[3]).toBe("#c8c8c8");
  });

  it("cluster coloring before any polygon is a single rest class", () => {
    const coloring = buildColoring("cluster", ["rest", "rest", "rest"]);
    expect(coloring.legend.kind).toBe("categorical");
    if (coloring.legend.kind === "categorical") {
      expect(coloring.legend.entries).toHaveLength(1);
      expect(coloring.legend.entries[0].label).toBe("rest");
    }
  });

  it("continuous fields get a gradient spanning the observed range", () => {
    const coloring = buildColoring("age", [20, 46, 72, null]);
    expect(coloring.legend.kind).toBe("gradient");
    if (coloring.legend.kind === "gradient") {
      expect(coloring.legend.min).toBe(20);
      expect(coloring.legend.max).toBe(72);
    }
    expect(coloring.colors[0]).toBe(gradientColor(0));
    expect(coloring.colors[2]).toBe(gradientColor(1));
  });
});

describe("view transform", () => {
  it("round-trips world and screen coordinates", () => {
    const t = fitTransform({ x0: -5, y0: -5, x1: 5, y1: 5 }, 800, 600);
    const world: Vec2 = [1.25, -3.5];
    const [sx, sy] = worldToScreen(t, world);
    const [wx, wy] = screenToWorld(t, [sx, sy]);
    expect(wx).toBeCloseTo(world[0], 12);
    expect(wy).toBeCloseTo(world[1], 12);
  });

  it("fit centers the bounds and keeps aspect", () => {
    const t = fitTransform({ x0: 0, y0: 0, x1: 10, y1: 10 }, 400, 400, 20);
    expect(worldToScreen(t, [5, 5])).toEqual([200, 200]);
    const [x0] = worldToScreen(t, [0, 5]);
    const [x1] = worldToScreen(t, [10, 5]);
    expect(x1 - x0).toBeCloseTo(360, 9);
  });

  it("zoomAt keeps the cursor's world point fixed", () => {
    const t = fitTransform({ x0: 0, y0: 0, x1: 10, y1: 10 }, 400, 400);
    const cursor: Vec2 = [150, 250];
    const before = screenToWorld(t, cursor);
    const zoomed = zoomAt(t, cursor, 1.7);
    const after = screenToWorld(zoomed, cursor);
    expect(after[0]).toBeCloseTo(before[0], 9);
    expect(after[1]).toBeCloseTo(before[1], 9);
  });

  it("panBy shifts the view linearly", () => {
    const t = { scale: 2, offsetX: 10, offsetY: 20 };
    const p = panBy(t, 5, -3);
    expect(worldToScreen(p, [0, 0])).toEqual([15, 17]);
  });

  it("buildScene maps every point", () => {
    const points: Vec2[] = [[0, 0], [1, 1], [2, 0]];
    const t = fitTransform(boundsOf(points), 100, 100);
    const scene = buildScene(points, ["a", "b", "c"], t);
    expect(scene.xs).toHaveLength(3);
    // higher world y is further up the screen (smaller pixel y)
    expect(scene.ys[1]).toBeLessThan(scene.ys[0]);
  });
});

describe("lasso draft", () => {
  it("gates submission on three vertices", () => {
    const draft = new LassoDraft();
    draft.addVertex([0, 0]);
    draft.addVertex([1, 0]);
    expect(draft.canSubmit).toBe(false);
    draft.addVertex([1, 1]);
    expect(draft.canSubmit).toBe(true);
    draft.clear();
    expect(draft.vertices).toHaveLength(0);
  });
});

describe("charts", () => {
  const entries = [
    { epoch: 1, overall_train_acc: 0.9, subgroup_train_acc: 0.2,
      rest_train_acc: 0.95, overall_val_acc: 0.88, subgroup_val_acc: 0.25 },
    { epoch: 2, overall_train_acc: 0.95, subgroup_train_acc: 0.4,
      rest_train_acc: 0.98, overall_val_acc: 0.9, subgroup_val_acc: 0.35 },
  ];

  it("lag chart draws the subgroup line below the overall line", () => {
    const model = lagChartModel(entries, 480, 240);
    const overall = model.series.find((s) => s.name === "overall (train)")!;
    const subgroup = model.series.find((s) => s.name === "subgroup (train)")!;
    overall.points.forEach((p, i) => {
      expect(subgroup.points[i].y).toBeGreaterThan(p.y);
    });
  });

  it("lag chart inverts accuracy onto pixel y", () => {
    const model = lagChartModel(entries, 480, 240, 24);
    const top = model.yTicks.find((t) => t.value === 1)!;
    const bottom = model.yTicks.find((t) => t.value === 0)!;
    expect(top.y).toBeLessThan(bottom.y);
  });

  it("lag chart skips null validation slices", () => {
    const sparse = [{ ...entries[0], overall_val_acc: null, subgroup_val_acc: null }];
    const model = lagChartModel(sparse, 480, 240);
    expect(model.series.map((s) => s.name)).toEqual([
      "overall (train)", "subgroup (train)",
    ]);
  });

  it("consistency rows sort by k", () => {
    const rows = consistencyRows({
      per_region: {},
      exactly_k: {
        "2": { observed: 141, expected: 26.3, ratio: 5.36 },
        "0": { observed: 10000, expected: 10400, ratio: 0.96 },
        "3": { observed: 34, expected: 0.24, ratio: 141.7 },
        "1": { observed: 585, expected: 700, ratio: 0.84 },
      },
      n_subjects: 11186,
      n_partial: 0,
    });
    expect(rows.map((r) => r.k)).toEqual([0, 1, 2, 3]);
    expect(rows[3].observed).toBe(34);
  });

  it("metrics grid pivots targets into the five report columns", () => {
    expect(METRICS_GRID_HEADER).toHaveLength(5);
    const rows = metricsGrid([
      { probe: "ui", target: "sex",
        metrics: { n_eval: 10, accuracy: 0.988, mae: null } },
      { probe: "ui", target: "age",
        metrics: { n_eval: 10, accuracy: null, mae: 3.84 } },
    ]);
    expect(rows).toHaveLength(1);
    expect(rows[0].cells[1]).toBe("0.988");
    expect(rows[0].cells[4]).toBe("3.840");
    expect(rows[0].cells[0]).toBeNull();
  });

  it("composition bars normalize per cluster", () => {
    const bars = compositionBars(
      { a: { male: 3, female: 1 }, rest: { male: 2, female: 2 } },
      () => "#000",
    );
    expect(bars[0].cluster).toBe("a");
    expect(bars[0].segments.find((s) => s.label === "male")!.fraction).toBeCloseTo(0.75);
    expect(bars[1].segments.every((s) => s.fraction === 0.5)).toBe(true);
  });
});

describe("scale", () => {
  it("builds a 30k-point scene fast enough for interactive redraws", () => {
    const points: Vec2[] = [];
    for (let i = 0; i < 30000; i++) {
      points.push([Math.sin(i * 0.37) * 50, Math.cos(i * 0.59) * 50]);
    }
    const colors = points.map((_, i) => (i % 2 ? "#112233" : "#445566"));
    const t = fitTransform(boundsOf(points), 800, 600);
    const start = performance.now();
    const scene = buildScene(points, colors, t);
    const elapsed = performance.now() - start;
    expect(scene.xs).toHaveLength(30000);
    expect(elapsed).toBeLessThan(200);
  });
});
