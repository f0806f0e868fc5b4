/**
 * View state and job polling.  The server is authoritative: label edits are
 * never applied optimistically, and a stale-version rejection surfaces as a
 * reload prompt instead of a merge.
 */

import {
  ApiClient,
  AssignmentRow,
  ClustersResponse,
  JobStatusDto,
  LayoutPointDto,
  PolygonDto,
  StaleVersionError,
} from "./api.js";
import { ColorField } from "./colors.js";
import { Vec2 } from "./geometry.js";

export const POLL_INTERVAL_MS = 1000;

export interface JobUpdate {
  status: JobStatusDto;
  done: boolean;
}

/** Polls a job at 1 Hz until it reaches a terminal state. */
export class JobPoller {
  private timer: ReturnType<typeof setInterval> | null = null;

  constructor(
    private readonly api: ApiClient,
    private readonly jobId: string,
    private readonly onUpdate: (update: JobUpdate) => void,
    private readonly intervalMs = POLL_INTERVAL_MS,
  ) {}

  start(): void {
    const tick = async () => {
      let status: JobStatusDto;
      try {
        status = await this.api.jobStatus(this.jobId);
      } catch {
        return; // transient fetch problem; next tick retries
      }
      const done = ["done", "failed", "canceled"].includes(status.state);
      if (done) this.stop();
      this.onUpdate({ status, done });
    };
    void tick();
    this.timer = setInterval(tick, this.intervalMs);
  }

  stop(): void {
    if (this.timer !== null) {
      clearInterval(this.timer);
      this.timer = null;
    }
  }
}

export interface ViewState {
  datasetId: string | null;
  layoutJobId: string | null;
  layoutPoints: LayoutPointDto[];
  colorField: ColorField;
  clustersVersion: number;
  clusterLabels: Map<string, string>; // "subject_id/region" -> label
  polygons: PolygonDto[];
  selectedClusters: Set<string>;
  staleConflict: boolean;
}

export function initialViewState(): ViewState {
  return {
    datasetId: null,
    layoutJobId: null,
    layoutPoints: [],
    colorField: "sex",
    clustersVersion: 0,
    clusterLabels: new Map(),
    polygons: [],
    selectedClusters: new Set(),
    staleConflict: false,
  };
}

export function pointKey(p: { subject_id: string; region: string | null }): string {
  return `${p.subject_id}/${p.region ?? ""}`;
}

export function layoutCoords(points: LayoutPointDto[]): Vec2[] {
  return points.map((p) => [p.x, p.y] as Vec2);
}

/** Cluster label per layout point; "rest" before any polygon is submitted. */
export function clusterValues(state: ViewState): string[] {
  return state.layoutPoints.map(
    (p) => state.clusterLabels.get(pointKey(p)) ?? "rest",
  );
}

export function applyAssignment(state: ViewState, rows: AssignmentRow[]): void {
  state.clusterLabels = new Map(
    rows.map((r) => [`${r.subject_id}/${r.region}`, r.label]),
  );
}

/**
 * Submit a lasso polygon.  The new labeling shown afterwards comes entirely
 * from the server response; a version conflict flips `staleConflict` so the
 * UI can prompt for a reload.
 */
export async function submitLasso(
  api: ApiClient,
  state: ViewState,
  label: string,
  draftVertices: Vec2[],
): Promise<ClustersResponse | null> {
  if (!state.datasetId || !state.layoutJobId) {
    throw new Error("no dataset or layout loaded");
  }
  if (draftVertices.length < 3) {
    throw new Error("a lasso polygon needs at least 3 vertices");
  }
  if (!label) {
    throw new Error("a lasso polygon needs a non-empty label");
  }
  const polygons: PolygonDto[] = [
    ...state.polygons,
    { label, vertices: draftVertices.map((v) => [v[0], v[1]]) },
  ];
  try {
    const resp = await api.putClusters(
      state.datasetId,
      state.clustersVersion,
      polygons,
      state.layoutJobId,
    );
    state.clustersVersion = resp.version;
    state.polygons = polygons;
    applyAssignment(state, resp.assignment);
    state.staleConflict = false;
    return resp;
  } catch (err) {
    if (err instanceof StaleVersionError) {
      state.staleConflict = true;
      return null;
    }
    throw err;
  }
}
