/**
 * Layout-space geometry: point-in-polygon and a grid index for hover picking.
 *
 * pointInPolygon mirrors the backend rule bit for bit (even-odd ray casting,
 * points exactly on an edge count as inside) so that a lasso preview always
 * matches the server's assignment for the same polygon.
 */

export type Vec2 = [number, number];

export interface Bounds {
  x0: number;
  y0: number;
  x1: number;
  y1: number;
}

export function pointInPolygon(pt: Vec2, vertices: Vec2[]): boolean {
  if (vertices.length < 3) {
    throw new Error(`polygon needs >= 3 vertices, got ${vertices.length}`);
  }
  const [x, y] = pt;
  let inside = false;
  const n = vertices.length;
  for (let i = 0; i < n; i++) {
    const [x1, y1] = vertices[i];
    const [x2, y2] = vertices[(i + 1) % n];
    if (onSegment(x, y, x1, y1, x2, y2)) {
      return true;
    }
    // half-open span rule avoids double-counting vertices on the ray
    if ((y1 > y) !== (y2 > y)) {
      const xCross = x1 + ((y - y1) * (x2 - x1)) / (y2 - y1);
      if (x < xCross) {
        inside = !inside;
      }
    }
  }
  return inside;
}

function onSegment(
  x: number, y: number, x1: number, y1: number, x2: number, y2: number,
): boolean {
  const cross = (x2 - x1) * (y - y1) - (y2 - y1) * (x - x1);
  if (cross !== 0) {
    return false;
  }
  return (
    Math.min(x1, x2) <= x && x <= Math.max(x1, x2) &&
    Math.min(y1, y2) <= y && y <= Math.max(y1, y2)
  );
}

export function boundsOf(points: ArrayLike<Vec2>): Bounds {
  if (points.length === 0) {
    return { x0: 0, y0: 0, x1: 1, y1: 1 };
  }
  let x0 = Infinity, y0 = Infinity, x1 = -Infinity, y1 = -Infinity;
  for (let i = 0; i < points.length; i++) {
    const [x, y] = points[i];
    if (x < x0) x0 = x;
    if (y < y0) y0 = y;
    if (x > x1) x1 = x;
    if (y > y1) y1 = y;
  }
  if (x0 === x1) { x0 -= 0.5; x1 += 0.5; }
  if (y0 === y1) { y0 -= 0.5; y1 += 0.5; }
  return { x0, y0, x1, y1 };
}

/**
 * Uniform grid over the layout bounds; buckets point indices per cell so
 * hover picking over tens of thousands of points never scans them all.
 */
export class SpatialGrid {
  private cells = new Map<number, number[]>();
  private readonly nx: number;
  private readonly ny: number;
  private readonly bounds: Bounds;
  private readonly points: Vec2[];

  constructor(points: Vec2[], cellsPerAxis = 64) {
    this.points = points;
    this.bounds = boundsOf(points);
    this.nx = cellsPerAxis;
    this.ny = cellsPerAxis;
    for (let i = 0; i < points.length; i++) {
      const key = this.cellKey(points[i][0], points[i][1]);
      const bucket = this.cells.get(key);
      if (bucket) {
        bucket.push(i);
      } else {
        this.cells.set(key, [i]);
      }
    }
  }

  private cellCoords(x: number, y: number): [number, number] {
    const { x0, y0, x1, y1 } = this.bounds;
    let cx = Math.floor(((x - x0) / (x1 - x0)) * this.nx);
    let cy = Math.floor(((y - y0) / (y1 - y0)) * this.ny);
    cx = Math.max(0, Math.min(this.nx - 1, cx));
    cy = Math.max(0, Math.min(this.ny - 1, cy));
    return [cx, cy];
  }

  private cellKey(x: number, y: number): number {
    const [cx, cy] = this.cellCoords(x, y);
    return cy * this.nx + cx;
  }

  /** Index of the nearest point within `radius` of (x, y), or -1. */
  nearest(x: number, y: number, radius: number): number {
    const { x0, y0, x1, y1 } = this.bounds;
    const cw = (x1 - x0) / this.nx;
    const ch = (y1 - y0) / this.ny;
    const reach = Math.max(1, Math.ceil(radius / Math.min(cw, ch)));
    const [cx, cy] = this.cellCoords(x, y);
    let best = -1;
    let bestD2 = radius * radius;
    for (let dy = -reach; dy <= reach; dy++) {
      for (let dx = -reach; dx <= reach; dx++) {
        const gx = cx + dx;
        const gy = cy + dy;
        if (gx < 0 || gy < 0 || gx >= this.nx || gy >= this.ny) continue;
        const bucket = this.cells.get(gy * this.nx + gx);
        if (!bucket) continue;
        for (const i of bucket) {
          const px = this.points[i][0] - x;
          const py = this.points[i][1] - y;
          const d2 = px * px + py * py;
          if (d2 <= bestD2) {
            bestD2 = d2;
            best = i;
          }
        }
      }
    }
    return best;
  }
}
