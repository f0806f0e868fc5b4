/**
 * End-to-end fidelity against the live backend: three scripted lasso
 * polygons over a 2k-point synthetic layout must produce exactly the same
 * membership client-side (preview rule) and server-side (authoritative
 * assignment), and the lag chart must draw the planted subgroup strictly
 * below the overall curve.
 */

import { spawn, spawnSync, ChildProcess } from "node:child_process";
import { mkdtempSync, readFileSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";
import { afterAll, beforeAll, describe, expect, it } from "vitest";

import { ApiClient, LagResultDto, LayoutPointDto, PolygonDto } from "../src/api.js";
import { pointInPolygon, Vec2 } from "../src/geometry.js";
import { lagChartModel } from "../src/charts.js";
import {
  applyAssignment,
  initialViewState,
  pointKey,
  submitLasso,
} from "../src/state.js";

const PORT = 18400 + (process.pid % 1000);
const BASE = `http://127.0.0.1:${PORT}`;
const E2E_TIMEOUT = 240_000;

let server: ChildProcess | null = null;
let fixtureDir = "";

async function waitForServer(): Promise<void> {
  const deadline = Date.now() + 60_000;
  while (Date.now() < deadline) {
    try {
      const resp = await fetch(`${BASE}/datasets/nope`);
      if (resp.status === 404) return;
    } catch {
      // not up yet
    }
    await new Promise((r) => setTimeout(r, 250));
  }
  throw new Error("backend did not come up");
}

beforeAll(async () => {
  fixtureDir = mkdtempSync(join(tmpdir(), "embaudit-e2e-"));
  const synth = spawnSync(
    "python3",
    ["-m", "embaudit.cli", "synth", "embeddings", "--n", "667", "--dim", "16",
     "--flip", "0.05", "--seed", "21", "-o", fixtureDir],
    { encoding: "utf-8" },
  );
  if (synth.status !== 0) {
    throw new Error(`fixture generation failed: ${synth.stderr}`);
  }
  server = spawn(
    "python3",
    ["-m", "embaudit.cli", "serve", "--host", "127.0.0.1", "--port", String(PORT)],
    { stdio: "ignore" },
  );
  await waitForServer();
}, 120_000);

afterAll(() => {
  server?.kill("SIGTERM");
});

function scriptedPolygons(points: LayoutPointDto[]): PolygonDto[] {
  const xs = points.map((p) => p.x).sort((a, b) => a - b);
  const ys = points.map((p) => p.y).sort((a, b) => a - b);
  const q = (arr: number[], f: number) => arr[Math.floor(f * (arr.length - 1))];
  const [x0, x1] = [q(xs, 0), q(xs, 1)];
  const [y0, y1] = [q(ys, 0), q(ys, 1)];
  const xMid = q(xs, 0.5);
  const yMid = q(ys, 0.5);
  // left half, upper-right box, and a big center triangle that overlaps both
  return [
    { label: "left", vertices: [[x0 - 1, y0 - 1], [xMid, y0 - 1], [xMid, y1 + 1], [x0 - 1, y1 + 1]] },
    { label: "upper-right", vertices: [[xMid, yMid], [x1 + 1, yMid], [x1 + 1, y1 + 1], [xMid, y1 + 1]] },
    { label: "wedge", vertices: [[x0, y0], [x1, y0], [xMid, y1]] },
  ];
}

function clientMembership(points: LayoutPointDto[], polygons: PolygonDto[]): string[] {
  return points.map((p) => {
    for (const poly of polygons) {
      if (pointInPolygon([p.x, p.y], poly.vertices as Vec2[])) {
        return poly.label;
      }
    }
    return "rest";
  });
}

describe("live backend fidelity", () => {
  const api = new ApiClient(BASE);
  const state = initialViewState();
  let points: LayoutPointDto[] = [];

  it("uploads the 2k-point fixture and lays it out", async () => {
    const emb = new Blob([readFileSync(join(fixtureDir, "embeddings.emb1"))]);
    const meta = new Blob([readFileSync(join(fixtureDir, "metadata.csv"))]);
    const uploaded = await api.uploadDataset(emb, meta);
    expect(uploaded.n_records).toBe(2001);
    state.datasetId = uploaded.dataset_id;

    const jobId = await api.submitTsne(uploaded.dataset_id, {
      perplexity: 30, iterations: 30, seed: 21,
    });
    const deadline = Date.now() + E2E_TIMEOUT;
    for (;;) {
      const status = await api.jobStatus(jobId);
      if (status.state === "done") break;
      if (status.state === "failed" || status.state === "canceled") {
        throw new Error(`layout job ${status.state}: ${status.error}`);
      }
      if (Date.now() > deadline) throw new Error("layout timed out");
      await new Promise((r) => setTimeout(r, 500));
    }
    const layout = await api.layout(jobId);
    points = layout.points;
    state.layoutJobId = jobId;
    expect(points.length).toBe(2001);
  }, E2E_TIMEOUT);

  it("client lasso membership matches the backend for 100% of points", async () => {
    const polygons = scriptedPolygons(points);
    // submit incrementally, as the UI does, checking parity after each lasso
    for (let k = 1; k <= polygons.length; k++) {
      const submitted = polygons.slice(0, k);
      const resp = await api.putClusters(
        state.datasetId!, state.clustersVersion, submitted, state.layoutJobId!,
      );
      state.clustersVersion = resp.version;
      applyAssignment(state, resp.assignment);

      const mine = clientMembership(points, submitted);
      let mismatches = 0;
      points.forEach((p, i) => {
        const server = state.clusterLabels.get(pointKey(p));
        if (server !== mine[i]) mismatches++;
      });
      expect(mismatches).toBe(0);
      // each polygon captured something
      expect(new Set(mine).size).toBeGreaterThan(k === 1 ? 1 : k);
    }
  }, E2E_TIMEOUT);

  it("rejects stale label versions instead of merging", async () => {
    const result = await submitLasso(
      api,
      { ...state, clustersVersion: 0, polygons: [] },
      "stale-attempt",
      [[0, 0], [1, 0], [1, 1]],
    );
    expect(result).toBeNull();
  });

  it("lag chart draws the planted subgroup strictly below overall", async () => {
    const truth = readFileSync(join(fixtureDir, "truth.csv"), "utf-8");
    const flipped = truth
      .trim()
      .split("\n")
      .slice(1)
      .filter((line) => line.endsWith(",1"))
      .map((line) => line.split(",")[0]);
    expect(flipped.length).toBeGreaterThan(10);

    const jobId = await api.submitLag(state.datasetId!, {
      subgroup: flipped, epochs: 20, lr: 0.5, seed: 21,
    });
    const deadline = Date.now() + E2E_TIMEOUT;
    let result: LagResultDto;
    for (;;) {
      const status = await api.jobStatus(jobId);
      if (status.state === "done") {
        result = status.result as LagResultDto;
        break;
      }
      if (status.state === "failed") throw new Error(status.error);
      if (Date.now() > deadline) throw new Error("lag job timed out");
      await new Promise((r) => setTimeout(r, 500));
    }
    expect(result.entries.length).toBe(20);

    const model = lagChartModel(result.entries, 480, 240);
    const overall = model.series.find((s) => s.name === "overall (train)")!;
    const subgroup = model.series.find((s) => s.name === "subgroup (train)")!;
    overall.points.forEach((p, i) => {
      // larger pixel y = lower on screen = worse accuracy
      expect(subgroup.points[i].y).toBeGreaterThan(p.y);
    });
  }, E2E_TIMEOUT);
});
