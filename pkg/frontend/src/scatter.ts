/**
 * Canvas scatter view: pan/zoom view transform, scene construction, lasso
 * draft.  Scene computation is pure so tests can assert on it without a
 * real canvas; rendering only needs a minimal 2D-context surface.
 */

import { Bounds, SpatialGrid, Vec2, boundsOf } from "./geometry.js";

export interface Canvas2D {
  clearRect(x: number, y: number, w: number, h: number): void;
  beginPath(): void;
  moveTo(x: number, y: number): void;
  lineTo(x: number, y: number): void;
  closePath(): void;
  stroke(): void;
  fill(): void;
  rect(x: number, y: number, w: number, h: number): void;
  arc(x: number, y: number, r: number, a0: number, a1: number): void;
  fillStyle: string | CanvasGradient | CanvasPattern;
  strokeStyle: string | CanvasGradient | CanvasPattern;
  lineWidth: number;
  globalAlpha: number;
}

export interface ViewTransform {
  scale: number;
  offsetX: number;
  offsetY: number;
}

export function fitTransform(
  bounds: Bounds, width: number, height: number, pad = 20,
): ViewTransform {
  const sx = (width - 2 * pad) / (bounds.x1 - bounds.x0);
  const sy = (height - 2 * pad) / (bounds.y1 - bounds.y0);
  const scale = Math.min(sx, sy);
  const cx = (bounds.x0 + bounds.x1) / 2;
  const cy = (bounds.y0 + bounds.y1) / 2;
  return {
    scale,
    offsetX: width / 2 - cx * scale,
    offsetY: height / 2 + cy * scale,
  };
}

/** Layout y grows upward; screen y grows downward. */
export function worldToScreen(t: ViewTransform, p: Vec2): Vec2 {
  return [p[0] * t.scale + t.offsetX, -p[1] * t.scale + t.offsetY];
}

export function screenToWorld(t: ViewTransform, p: Vec2): Vec2 {
  return [(p[0] - t.offsetX) / t.scale, -(p[1] - t.offsetY) / t.scale];
}

export function zoomAt(
  t: ViewTransform, screenPt: Vec2, factor: number,
): ViewTransform {
  // keep the world point under the cursor fixed
  const scale = t.scale * factor;
  return {
    scale,
    offsetX: screenPt[0] - (screenPt[0] - t.offsetX) * factor,
    offsetY: screenPt[1] - (screenPt[1] - t.offsetY) * factor,
  };
}

export function panBy(t: ViewTransform, dx: number, dy: number): ViewTransform {
  return { scale: t.scale, offsetX: t.offsetX + dx, offsetY: t.offsetY + dy };
}

export interface Scene {
  xs: Float64Array;
  ys: Float64Array;
  colors: string[];
  pointSize: number;
}

export function buildScene(
  points: Vec2[], colors: string[], t: ViewTransform, pointSize = 2,
): Scene {
  const xs = new Float64Array(points.length);
  const ys = new Float64Array(points.length);
  for (let i = 0; i < points.length; i++) {
    const [sx, sy] = worldToScreen(t, points[i]);
    xs[i] = sx;
    ys[i] = sy;
  }
  return { xs, ys, colors, pointSize };
}

export class LassoDraft {
  vertices: Vec2[] = [];

  addVertex(worldPt: Vec2): void {
    this.vertices.push(worldPt);
  }

  get canSubmit(): boolean {
    return this.vertices.length >= 3;
  }

  clear(): void {
    this.vertices = [];
  }
}

export class ScatterPlot {
  transform: ViewTransform = { scale: 1, offsetX: 0, offsetY: 0 };
  draft = new LassoDraft();
  private grid: SpatialGrid | null = null;
  private points: Vec2[] = [];
  private colors: string[] = [];

  constructor(
    readonly width: number,
    readonly height: number,
    private readonly pointSize = 2,
  ) {}

  setPoints(points: Vec2[], colors: string[]): void {
    this.points = points;
    this.colors = colors;
    this.grid = new SpatialGrid(points);
    this.transform = fitTransform(boundsOf(points), this.width, this.height);
  }

  setColors(colors: string[]): void {
    this.colors = colors;
  }

  /** Point index under the cursor (within `radiusPx`), or -1. */
  pick(screenPt: Vec2, radiusPx = 6): number {
    if (!this.grid || this.transform.scale === 0) return -1;
    const [wx, wy] = screenToWorld(this.transform, screenPt);
    return this.grid.nearest(wx, wy, radiusPx / this.transform.scale);
  }

  render(ctx: Canvas2D, finalizedPolygons: { label: string; vertices: Vec2[] }[] = []): void {
    ctx.clearRect(0, 0, this.width, this.height);
    const scene = buildScene(this.points, this.colors, this.transform, this.pointSize);
    const s = scene.pointSize;
    ctx.globalAlpha = 0.85;
    for (let i = 0; i < scene.xs.length; i++) {
      const x = scene.xs[i];
      const y = scene.ys[i];
      if (x < -s || y < -s || x > this.width + s || y > this.height + s) continue;
      ctx.fillStyle = scene.colors[i];
      ctx.beginPath();
      ctx.rect(x - s / 2, y - s / 2, s, s);
      ctx.fill();
    }
    ctx.globalAlpha = 1.0;
    for (const poly of finalizedPolygons) {
      this.strokePolygon(ctx, poly.vertices, "#333333", false);
    }
    if (this.draft.vertices.length >= 2) {
      this.strokePolygon(ctx, this.draft.vertices, "#d62728", true);
    }
  }

  private strokePolygon(ctx: Canvas2D, vertices: Vec2[], color: string, open: boolean): void {
    ctx.strokeStyle = color;
    ctx.lineWidth = 1.5;
    ctx.beginPath();
    const [x0, y0] = worldToScreen(this.transform, vertices[0]);
    ctx.moveTo(x0, y0);
    for (let i = 1; i < vertices.length; i++) {
      const [x, y] = worldToScreen(this.transform, vertices[i]);
      ctx.lineTo(x, y);
    }
    if (!open) ctx.closePath();
    ctx.stroke();
  }
}
