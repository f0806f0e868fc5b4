/**
 * Browser entry point: wires the scatter view, lasso, color-by selector,
 * probe/lag panels, and the bias report against the HTTP service.
 */

import { ApiClient, LagResultDto, LayoutPointDto, ProbeResultDto } from "./api.js";
import { COLOR_FIELDS, ColorField, buildColoring, Legend } from "./colors.js";
import { Vec2 } from "./geometry.js";
import { ScatterPlot, screenToWorld } from "./scatter.js";
import {
  JobPoller,
  ViewState,
  clusterValues,
  initialViewState,
  layoutCoords,
  submitLasso,
} from "./state.js";
import {
  consistencyRows,
  drawLagChart,
  lagChartModel,
  metricsGrid,
} from "./charts.js";

const API_BASE =
  new URLSearchParams(window.location.search).get("api") ?? "http://127.0.0.1:8000";

const api = new ApiClient(API_BASE);
const state: ViewState = initialViewState();
const probeResults: { probe: string; target: string; metrics: ProbeResultDto["metrics"] }[] = [];
let lastProbeJob: string | null = null;

const canvas = document.getElementById("scatter") as HTMLCanvasElement;
const ctx = canvas.getContext("2d")!;
const plot = new ScatterPlot(canvas.width, canvas.height);
const statusEl = document.getElementById("status")!;
const legendEl = document.getElementById("legend")!;
const reportEl = document.getElementById("report")!;
const lagCanvas = document.getElementById("lag-chart") as HTMLCanvasElement;

function setStatus(text: string): void {
  statusEl.textContent = text;
}

function fieldValues(field: ColorField): (string | number | null)[] {
  if (field === "cluster") {
    return clusterValues(state);
  }
  return state.layoutPoints.map((p) => {
    const meta = metadataBydId.get(p.subject_id);
    if (!meta) return null;
    switch (field) {
      case "sex": return meta.sex;
      case "age": return meta.age_years;
      case "weight": return meta.weight_kg;
      case "height": return meta.height_m;
      case "location": return meta.location;
      case "acq_year": return meta.acq_date ? Number(meta.acq_date.slice(0, 4)) : null;
      case "region": return p.region;
      default: return null;
    }
  });
}

interface MetaRow {
  sex: string | null;
  age_years: number | null;
  height_m: number | null;
  weight_kg: number | null;
  location: string | null;
  acq_date: string | null;
}

const metadataBydId = new Map<string, MetaRow>();

function parseMetadataCsv(text: string): void {
  metadataBydId.clear();
  const lines = text.trim().split("\n");
  for (const line of lines.slice(1)) {
    const [sid, sex, age, height, weight, location, acq] = line.split(",");
    metadataBydId.set(sid, {
      sex: sex === "M" ? "male" : sex === "F" ? "female" : null,
      age_years: age ? Number(age) : null,
      height_m: height ? Number(height) : null,
      weight_kg: weight ? Number(weight) : null,
      location: location || null,
      acq_date: acq || null,
    });
  }
}

function renderLegend(legend: Legend): void {
  legendEl.innerHTML = "";
  if (legend.kind === "categorical") {
    for (const entry of legend.entries) {
      const row = document.createElement("div");
      row.innerHTML = `<span class="swatch" style="background:${entry.color}"></span>${entry.label}`;
      legendEl.appendChild(row);
    }
  } else {
    const bar = document.createElement("div");
    bar.className = "gradient-bar";
    bar.style.background = `linear-gradient(to right, ${legend.stops.join(",")})`;
    legendEl.appendChild(bar);
    const labels = document.createElement("div");
    labels.className = "gradient-labels";
    labels.textContent = `${legend.min.toFixed(1)} - ${legend.max.toFixed(1)}`;
    legendEl.appendChild(labels);
  }
}

function redraw(): void {
  const coloring = buildColoring(state.colorField, fieldValues(state.colorField));
  plot.setColors(coloring.colors);
  renderLegend(coloring.legend);
  const polys = state.polygons.map((p) => ({
    label: p.label,
    vertices: p.vertices.map((v) => [v[0], v[1]] as Vec2),
  }));
  plot.render(ctx as never, polys);
}

async function loadLayout(jobId: string): Promise<void> {
  const layout = await api.layout(jobId);
  state.layoutJobId = jobId;
  state.layoutPoints = layout.points as LayoutPointDto[];
  plot.setPoints(layoutCoords(state.layoutPoints), []);
  redraw();
  setStatus(`layout ready: ${state.layoutPoints.length} points`);
}

// -- dataset upload ----------------------------------------------------------

(document.getElementById("upload-btn") as HTMLButtonElement).onclick = async () => {
  const embInput = document.getElementById("emb-file") as HTMLInputElement;
  const metaInput = document.getElementById("meta-file") as HTMLInputElement;
  if (!embInput.files?.length || !metaInput.files?.length) {
    setStatus("choose an embedding file and a metadata CSV first");
    return;
  }
  parseMetadataCsv(await metaInput.files[0].text());
  const resp = await api.uploadDataset(embInput.files[0], metaInput.files[0]);
  state.datasetId = resp.dataset_id;
  setStatus(
    `dataset ${resp.dataset_id}: ${resp.n_records} records, dim ${resp.dim}` +
    (resp.rejected_subjects.length
      ? `, rejected ${resp.rejected_subjects.length} subjects`
      : ""),
  );
};

// -- layout job ----------------------------------------------------------------

(document.getElementById("tsne-btn") as HTMLButtonElement).onclick = async () => {
  if (!state.datasetId) return setStatus("upload a dataset first");
  const perplexity = Number((document.getElementById("perplexity") as HTMLInputElement).value);
  const iterations = Number((document.getElementById("iterations") as HTMLInputElement).value);
  const jobId = await api.submitTsne(state.datasetId, { perplexity, iterations, seed: 0 });
  new JobPoller(api, jobId, async ({ status, done }) => {
    if (status.state === "running" || status.state === "queued") {
      const kl = status.progress.kl !== undefined ? `, KL ${status.progress.kl.toFixed(3)}` : "";
      setStatus(`layout ${status.state}: iteration ${status.progress.current}/${status.progress.total}${kl}`);
    }
    if (done && status.state === "done") await loadLayout(jobId);
    if (done && status.state !== "done") setStatus(`layout ${status.state}: ${status.error}`);
  }).start();
};

// -- color-by -------------------------------------------------------------------

const colorSelect = document.getElementById("color-by") as HTMLSelectElement;
for (const field of COLOR_FIELDS) {
  const opt = document.createElement("option");
  opt.value = field;
  opt.textContent = field;
  colorSelect.appendChild(opt);
}
colorSelect.onchange = () => {
  state.colorField = colorSelect.value as ColorField;
  redraw();
};

// -- lasso -----------------------------------------------------------------------

canvas.addEventListener("click", (ev) => {
  const rect = canvas.getBoundingClientRect();
  const screen: Vec2 = [ev.clientX - rect.left, ev.clientY - rect.top];
  plot.draft.addVertex(screenToWorld(plot.transform, screen));
  (document.getElementById("lasso-submit") as HTMLButtonElement).disabled =
    !plot.draft.canSubmit;
  redraw();
});

(document.getElementById("lasso-submit") as HTMLButtonElement).onclick = async () => {
  const label = (document.getElementById("lasso-label") as HTMLInputElement).value;
  const resp = await submitLasso(api, state, label, plot.draft.vertices);
  if (resp === null) {
    setStatus("label version conflict: another session edited clusters; reload to continue");
    return;
  }
  plot.draft.clear();
  state.colorField = "cluster";
  colorSelect.value = "cluster";
  redraw();
  setStatus(
    `cluster sizes: ` +
    Object.entries(resp.counts).map(([k, v]) => `${k}=${v}`).join(", "),
  );
};

(document.getElementById("lasso-clear") as HTMLButtonElement).onclick = () => {
  plot.draft.clear();
  redraw();
};

// -- probes and reports ------------------------------------------------------------

(document.getElementById("probe-btn") as HTMLButtonElement).onclick = async () => {
  if (!state.datasetId) return setStatus("upload a dataset first");
  const target = (document.getElementById("probe-target") as HTMLSelectElement).value;
  const C = Number((document.getElementById("probe-c") as HTMLInputElement).value);
  if (!(C > 0)) return setStatus("C must be positive");
  const jobId = await api.submitProbe(state.datasetId, { target, C, seed: 0 });
  new JobPoller(api, jobId, ({ status, done }) => {
    if (!done) return setStatus(`probe ${target}: ${status.state}`);
    if (status.state !== "done") return setStatus(`probe failed: ${status.error}`);
    const result = status.result as ProbeResultDto;
    probeResults.push({ probe: "ui", target, metrics: result.metrics });
    if (target === "sex") lastProbeJob = jobId;
    renderReport();
    setStatus(`probe ${target} done`);
  }).start();
};

(document.getElementById("lag-btn") as HTMLButtonElement).onclick = async () => {
  if (!state.datasetId) return setStatus("upload a dataset first");
  const label = (document.getElementById("lag-cluster") as HTMLInputElement).value;
  if (!label) return setStatus("name the cluster to track");
  const jobId = await api.submitLag(state.datasetId, { subgroup: label, epochs: 40, seed: 0 });
  new JobPoller(api, jobId, ({ status, done }) => {
    if (!done) return setStatus(`lag job: ${status.state}`);
    if (status.state !== "done") return setStatus(`lag job failed: ${status.error}`);
    const result = status.result as LagResultDto;
    const model = lagChartModel(result.entries, lagCanvas.width, lagCanvas.height);
    drawLagChart(lagCanvas.getContext("2d") as never, model);
    setStatus(`lag curves over ${result.entries.length} epochs`);
  }).start();
};

(document.getElementById("bias-btn") as HTMLButtonElement).onclick = async () => {
  if (!state.datasetId || !lastProbeJob) {
    return setStatus("run a sex probe first");
  }
  const report = await api.biasRegions(state.datasetId, lastProbeJob);
  const rows = consistencyRows(report);
  const html = [
    "<table><tr><th>regions misclassified</th><th>observed</th><th>expected</th><th>ratio</th></tr>",
    ...rows.map(
      (r) =>
        `<tr><td>exactly ${r.k}</td><td>${r.observed}</td>` +
        `<td>${r.expected.toFixed(2)}</td>` +
        `<td>${r.ratio === null ? "" : r.ratio.toFixed(1) + "x"}</td></tr>`,
    ),
    "</table>",
  ].join("");
  document.getElementById("bias-report")!.innerHTML = html;
};

function renderReport(): void {
  const rows = metricsGrid(probeResults);
  const header =
    "<tr><th>Probe</th><th>Body Region accuracy</th><th>Sex accuracy</th>" +
    "<th>Weight l1 kg</th><th>Height l1 m</th><th>Age l1 years</th></tr>";
  const body = rows
    .map(
      (r) =>
        `<tr><td>${r.probe}</td>` +
        r.cells.map((c) => `<td>${c ?? ""}</td>`).join("") +
        "</tr>",
    )
    .join("");
  reportEl.innerHTML = `<table>${header}${body}</table>`;
}

setStatus(`ready; API at ${API_BASE}`);
