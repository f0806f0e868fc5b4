import { describe, expect, it } from "vitest";

import { SpatialGrid, boundsOf, pointInPolygon, Vec2 } from "../src/geometry.js";

const UNIT_SQUARE: Vec2[] = [[0, 0], [1, 0], [1, 1], [0, 1]];

describe("pointInPolygon", () => {
  it("accepts interior points", () => {
    expect(pointInPolygon([0.5, 0.5], UNIT_SQUARE)).toBe(true);
  });

  it("rejects exterior points", () => {
    expect(pointInPolygon([2, 2], UNIT_SQUARE)).toBe(false);
  });

  it("counts edge points as inside", () => {
    expect(pointInPolygon([1, 0.5], UNIT_SQUARE)).toBe(true);
    expect(pointInPolygon([0.5, 0], UNIT_SQUARE)).toBe(true);
  });

  it("counts vertices as inside", () => {
    expect(pointInPolygon([0, 0], UNIT_SQUARE)).toBe(true);
  });

  it("handles concave polygons", () => {
    const arrow: Vec2[] = [[0, 0], [4, 0], [4, 4], [2, 1], [0, 4]];
    expect(pointInPolygon([1, 0.5], arrow)).toBe(true);
    expect(pointInPolygon([2, 3], arrow)).toBe(false);
  });

  it("degenerate polygons contain only their edge points", () => {
    const line: Vec2[] = [[0, 0], [2, 0], [1, 0]];
    expect(pointInPolygon([1, 1], line)).toBe(false);
    expect(pointInPolygon([0.5, 0], line)).toBe(true);
  });

  it("requires at least 3 vertices", () => {
    expect(() => pointInPolygon([0, 0], [[0, 0], [1, 1]] as Vec2[])).toThrow();
  });
});

describe("boundsOf", () => {
  it("covers all points and pads zero-width spans", () => {
    const b = boundsOf([[1, 5], [3, 5]] as Vec2[]);
    expect(b.x0).toBe(1);
    expect(b.x1).toBe(3);
    expect(b.y1).toBeGreaterThan(b.y0);
  });
});

describe("SpatialGrid", () => {
  it("finds the nearest point within the radius", () => {
    const points: Vec2[] = [];
    for (let i = 0; i < 100; i++) {
      points.push([i % 10, Math.floor(i / 10)]);
    }
    const grid = new SpatialGrid(points);
    expect(grid.nearest(3.1, 4.1, 0.5)).toBe(43);
    expect(grid.nearest(3.1, 4.1, 0.05)).toBe(-1);
  });

  it("matches a brute-force scan on random data", () => {
    const points: Vec2[] = [];
    let seedState = 12345;
    const rand = () => {
      // deterministic LCG so the test never flakes
      seedState = (seedState * 1103515245 + 12345) % 2147483648;
      return seedState / 2147483648;
    };
    for (let i = 0; i < 500; i++) {
      points.push([rand() * 20 - 10, rand() * 20 - 10]);
    }
    const grid = new SpatialGrid(points);
    for (let q = 0; q < 50; q++) {
      const x = rand() * 22 - 11;
      const y = rand() * 22 - 11;
      const radius = 1.5;
      let best = -1;
      let bestD2 = radius * radius;
      points.forEach(([px, py], i) => {
        const d2 = (px - x) ** 2 + (py - y) ** 2;
        if (d2 <= bestD2) {
          bestD2 = d2;
          best = i;
        }
      });
      expect(grid.nearest(x, y, radius)).toBe(best);
    }
  });
});
