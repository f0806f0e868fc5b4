/**
 * Typed client for the audit service.  The UI is a pure consumer of this
 * API: every displayed number is fetched, never recomputed client-side.
 */

export interface LayoutPointDto {
  subject_id: string;
  region: string | null;
  x: number;
  y: number;
}

export interface JobProgress {
  current: number;
  total: number;
  kl?: number;
}

export interface JobStatusDto {
  id: string;
  kind: "tsne" | "probe" | "lag";
  state: "queued" | "running" | "done" | "failed" | "canceled";
  progress: JobProgress;
  error: string;
  result_ready: boolean;
  result?: unknown;
}

export interface PolygonDto {
  label: string;
  vertices: [number, number][];
}

export interface AssignmentRow {
  subject_id: string;
  region: string;
  label: string;
}

export interface ClustersResponse {
  version: number;
  layout_job: string;
  counts: Record<string, number>;
  assignment: AssignmentRow[];
}

export interface MetricsDto {
  n_eval: number;
  accuracy: number | null;
  mae: number | null;
  per_group?: Record<string, { n_eval: number; accuracy: number | null; mae: number | null }>;
}

export interface ProbeResultDto {
  target: string;
  task: "classification" | "regression";
  n_train: number;
  converged: boolean;
  warnings: string[];
  metrics: MetricsDto;
}

export interface LagEpochDto {
  epoch: number;
  overall_train_acc: number;
  subgroup_train_acc: number;
  rest_train_acc: number;
  overall_val_acc: number | null;
  subgroup_val_acc: number | null;
}

export interface LagResultDto {
  subgroup_ids: unknown[];
  entries: LagEpochDto[];
}

export interface ConsistencyReportDto {
  per_region: Record<string, { count: number; rate: number; n: number }>;
  exactly_k: Record<string, { observed: number; expected: number; ratio: number | null }>;
  n_subjects: number;
  n_partial: number;
}

export class ApiError extends Error {
  constructor(public status: number, detail: string) {
    super(detail);
  }
}

/** The server rejected a label edit based on an outdated version. */
export class StaleVersionError extends ApiError {}

export class ApiClient {
  constructor(
    private readonly baseUrl: string,
    private readonly fetchFn: typeof fetch = fetch,
  ) {}

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    const resp = await this.fetchFn(`${this.baseUrl}${path}`, init);
    if (!resp.ok) {
      const detail = await resp.text();
      if (resp.status === 409 && detail.includes("stale version")) {
        throw new StaleVersionError(resp.status, detail);
      }
      throw new ApiError(resp.status, detail);
    }
    return (await resp.json()) as T;
  }

  async uploadDataset(embeddings: Blob, metadata: Blob): Promise<{
    dataset_id: string;
    n_records: number;
    dim: number;
    rejected_subjects: string[];
  }> {
    const form = new FormData();
    form.append("embeddings", embeddings, "embeddings.emb1");
    form.append("metadata", metadata, "metadata.csv");
    return this.request("/datasets", { method: "POST", body: form });
  }

  async datasetSummary(datasetId: string): Promise<{
    dataset_id: string;
    n_records: number;
    dim: number;
    n_subjects: number;
    metadata_coverage: Record<string, number>;
  }> {
    return this.request(`/datasets/${datasetId}`);
  }

  async submitTsne(
    datasetId: string,
    params: { perplexity?: number; iterations?: number; seed?: number },
  ): Promise<string> {
    const body = await this.request<{ job_id: string }>(
      `/datasets/${datasetId}/jobs/tsne`,
      {
        method: "POST",
        headers: { "content-type": "application/json" },
        body: JSON.stringify(params),
      },
    );
    return body.job_id;
  }

  async jobStatus(jobId: string): Promise<JobStatusDto> {
    return this.request(`/jobs/${jobId}`);
  }

  async cancelJob(jobId: string): Promise<void> {
    await this.request(`/jobs/${jobId}`, { method: "DELETE" });
  }

  async layout(jobId: string): Promise<{ points: LayoutPointDto[]; kl_trace: number[] }> {
    return this.request(`/jobs/${jobId}/layout`);
  }

  async putClusters(
    datasetId: string,
    version: number,
    polygons: PolygonDto[],
    layoutJob?: string,
  ): Promise<ClustersResponse> {
    return this.request(`/datasets/${datasetId}/clusters`, {
      method: "PUT",
      headers: { "content-type": "application/json" },
      body: JSON.stringify({ version, polygons, layout_job: layoutJob ?? null }),
    });
  }

  async getClusters(datasetId: string): Promise<{
    version: number;
    layout_job: string | null;
    polygons: PolygonDto[];
    counts?: Record<string, number>;
  }> {
    return this.request(`/datasets/${datasetId}/clusters`);
  }

  async submitProbe(
    datasetId: string,
    params: { target: string; kernel?: string; C?: number; balance?: boolean; seed?: number },
  ): Promise<string> {
    const body = await this.request<{ job_id: string }>(
      `/datasets/${datasetId}/jobs/probe`,
      {
        method: "POST",
        headers: { "content-type": "application/json" },
        body: JSON.stringify(params),
      },
    );
    return body.job_id;
  }

  async submitLag(
    datasetId: string,
    params: { subgroup: string | string[]; epochs?: number; lr?: number; seed?: number },
  ): Promise<string> {
    const body = await this.request<{ job_id: string }>(
      `/datasets/${datasetId}/jobs/lag`,
      {
        method: "POST",
        headers: { "content-type": "application/json" },
        body: JSON.stringify(params),
      },
    );
    return body.job_id;
  }

  async biasRegions(datasetId: string, probeJob: string): Promise<ConsistencyReportDto> {
    return this.request(
      `/datasets/${datasetId}/bias/regions?probe_job=${encodeURIComponent(probeJob)}`,
    );
  }
}
