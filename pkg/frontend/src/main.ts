/**
 * App wiring: DOM, event handlers, and the probe interaction loop.
 *
 * Concurrency rules: single UI thread, at most one probe request in flight
 * (a newer request aborts the older one), and every response passes through
 * the request-id gate in state.ts before it may touch the panel.
 */

import { ApiClient, ApiError } from "./api.js";
import type { FieldSlice } from "./api.js";
import {
  applyProbeError,
  applyProbeResponse,
  beginProbe,
  createViewState,
  currentRanking,
  loadDataset,
  probeInFlight,
  selectToken,
  setBaseline,
  setBaselineNote,
  setMetricTab,
  setSliceAxis,
  setSliceIndex,
  sliceCount,
  toggleClusterColors,
} from "./state.js";
import type { MetricTab, SliceAxis, ViewState } from "./state.js";
import {
  attachOrbitControls,
  createCamera,
  drawRose,
  drawScene,
} from "./render.js";
import {
  directionCaption,
  rankingRows,
  wordCloudEntries,
} from "./table.js";

const PROBE_SEED = 0; // pinned: repeating a click must repeat the panel
const PROBE_TIMEOUT_MS = 120_000;
const HIT_RADIUS_PX = 9;

const api = new ApiClient("/api/v1");
const state: ViewState = createViewState();
const camera = createCamera();

let probeAbort: AbortController | null = null;
let sliceCache: FieldSlice | null = null;
let sliceFetchKey = "";
let tokenHits: { id: number; x: number; y: number }[] = [];

// ─── DOM handles ─────────────────────────────────────────────────────────────

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing #${id}`);
  return node as T;
}

const sceneCanvas = el<HTMLCanvasElement>("scene");
const roseCanvas = el<HTMLCanvasElement>("rose");
const banner = el<HTMLDivElement>("banner");
const spinner = el<HTMLDivElement>("spinner");
const searchInput = el<HTMLInputElement>("token-search");
const searchList = el<HTMLDataListElement>("token-options");
const detailPanel = el<HTMLDivElement>("detail");
const rankingBody = el<HTMLTableSectionElement>("ranking-body");
const cloudPanel = el<HTMLDivElement>("wordcloud");
const roseCaption = el<HTMLDivElement>("rose-caption");
const axisSelect = el<HTMLSelectElement>("slice-axis");
const sliceSlider = el<HTMLInputElement>("slice-index");
const sliceLabel = el<HTMLSpanElement>("slice-label");
const clusterToggle = el<HTMLInputElement>("cluster-toggle");
const tabButtons = Array.from(
  document.querySelectorAll<HTMLButtonElement>("[data-metric]"),
);

// ─── Rendering ───────────────────────────────────────────────────────────────

function renderScene(): void {
  drawScene(sceneCanvas, state, {
    slice: sliceCache,
    camera,
    onHitTest: (hits) => {
      tokenHits = hits;
    },
  });
}

function renderBanner(): void {
  banner.textContent = state.error ?? "";
  banner.style.display = state.error ? "block" : "none";
}

function renderSpinner(): void {
  spinner.style.display = probeInFlight(state) ? "flex" : "none";
}

function renderTabs(): void {
  for (const btn of tabButtons) {
    btn.classList.toggle("active", btn.dataset.metric === state.metricTab);
  }
}

function renderRankingTable(): void {
  rankingBody.replaceChildren();
  const ranking = currentRanking(state);
  if (ranking === null) {
    const note = state.baselineNotes[state.metricTab];
    const tr = document.createElement("tr");
    const td = document.createElement("td");
    td.colSpan = 3;
    td.className = "placeholder";
    td.textContent =
      note ?? (state.metricTab === "mcpm" ? "run a probe first" : "loading…");
    tr.appendChild(td);
    rankingBody.appendChild(tr);
    return;
  }
  for (const row of rankingRows(ranking)) {
    const tr = document.createElement("tr");
    const rank = document.createElement("td");
    rank.textContent = String(row.rank);
    const surface = document.createElement("td");
    const link = document.createElement("a");
    link.href = "#";
    link.textContent = row.surface;
    link.addEventListener("click", (ev) => {
      ev.preventDefault();
      onTokenChosen(row.surface); // ranked tokens re-seed the loop
    });
    surface.appendChild(link);
    const score = document.createElement("td");
    score.textContent = row.display;
    score.title = String(row.score);
    tr.append(rank, surface, score);
    rankingBody.appendChild(tr);
  }
}

function renderWordCloud(): void {
  cloudPanel.replaceChildren();
  const ranking = state.probe?.ranking ?? [];
  for (const entry of wordCloudEntries(ranking)) {
    const span = document.createElement("span");
    span.textContent = entry.surface;
    span.style.fontSize = `${entry.fontPx.toFixed(1)}px`;
    span.title = String(entry.score);
    span.addEventListener("click", () => onTokenChosen(entry.surface));
    cloudPanel.appendChild(span);
  }
}

function renderRose(): void {
  const stats = state.probe?.direction_stats ?? null;
  drawRose(roseCanvas, stats);
  roseCaption.textContent = stats ? directionCaption(stats) : "";
}

function renderDetail(): void {
  detailPanel.replaceChildren();
  const tok = state.selected;
  if (!tok) {
    detailPanel.textContent = "select a token";
    return;
  }
  const title = document.createElement("h3");
  title.textContent = tok.surface;
  detailPanel.appendChild(title);
  const pos = document.createElement("div");
  pos.className = "muted";
  pos.textContent = `#${tok.id} · (${tok.pos.map((v) => v.toFixed(3)).join(", ")})`;
  detailPanel.appendChild(pos);
  // contextual datasets carry the source sentence in token meta
  for (const [key, value] of Object.entries(tok.meta ?? {})) {
    const row = document.createElement("div");
    const k = document.createElement("b");
    k.textContent = `${key}: `;
    row.appendChild(k);
    row.appendChild(document.createTextNode(value));
    detailPanel.appendChild(row);
  }
}

function renderSliceControls(): void {
  const n = sliceCount(state);
  sliceSlider.min = "0";
  sliceSlider.max = String(Math.max(n - 1, 0));
  sliceSlider.value = String(state.sliceIndex);
  sliceLabel.textContent = n > 0 ? `${state.sliceIndex} / ${n - 1}` : "–";
}

function renderAll(): void {
  renderBanner();
  renderSpinner();
  renderTabs();
  renderRankingTable();
  renderWordCloud();
  renderRose();
  renderDetail();
  renderSliceControls();
  renderScene();
}

// ─── Data flows ──────────────────────────────────────────────────────────────

async function refreshSlice(): Promise<void> {
  if (!state.meta) return;
  const key = `${state.sliceAxis}:${state.sliceIndex}`;
  if (key === sliceFetchKey) return;
  sliceFetchKey = key;
  try {
    const slice = await api.fieldSlice(state.sliceAxis, state.sliceIndex);
    // drop if the controls moved on while this was in flight
    if (sliceFetchKey === key) {
      sliceCache = slice;
      renderScene();
    }
  } catch (err) {
    if (sliceFetchKey === key) {
      state.error = errorText(err);
      renderBanner();
    }
  }
}

async function loadBaseline(tab: MetricTab): Promise<void> {
  if (tab === "mcpm") return;
  const query = state.probe?.query.token;
  if (!query) {
    setBaselineNote(state, tab, "run a probe first");
    renderRankingTable();
    return;
  }
  try {
    const res = await api.rankings(query, tab);
    setBaseline(state, tab, res.ranking);
  } catch (err) {
    // cosine without stored embedding vectors answers 409
    setBaselineNote(
      state,
      tab,
      err instanceof ApiError && err.status === 409
        ? "not available: fit has no embedding vectors"
        : errorText(err),
    );
  }
  renderRankingTable();
}

/** The probe interaction: select → POST /probe → panel update. */
async function onTokenChosen(ref: string | number): Promise<void> {
  const tok = selectToken(state, ref);
  renderBanner();
  renderDetail();
  if (!tok) return;

  probeAbort?.abort(); // at most one in-flight request
  const abort = new AbortController();
  probeAbort = abort;
  const requestId = beginProbe(state);
  renderSpinner();

  const timeout = setTimeout(() => abort.abort(), PROBE_TIMEOUT_MS);
  try {
    const response = await api.probe(
      { token: tok.surface, seed: PROBE_SEED },
      abort.signal,
    );
    if (applyProbeResponse(state, requestId, response)) {
      void loadBaseline(state.metricTab);
    }
  } catch (err) {
    // cancellation keeps the previous panel and raises no banner
    const cancelled = err instanceof DOMException && err.name === "AbortError";
    applyProbeError(state, requestId, cancelled ? null : errorText(err));
  } finally {
    clearTimeout(timeout);
  }
  renderAll();
}

function errorText(err: unknown): string {
  return err instanceof Error ? err.message : String(err);
}

// ─── Event handlers ──────────────────────────────────────────────────────────

function wireEvents(): void {
  attachOrbitControls(sceneCanvas, camera, renderScene);

  sceneCanvas.addEventListener("click", (ev) => {
    const rect = sceneCanvas.getBoundingClientRect();
    const x = ((ev.clientX - rect.left) / rect.width) * sceneCanvas.width;
    const y = ((ev.clientY - rect.top) / rect.height) * sceneCanvas.height;
    let best: { id: number; d: number } | null = null;
    for (const hit of tokenHits) {
      const d = Math.hypot(hit.x - x, hit.y - y);
      if (d <= HIT_RADIUS_PX && (!best || d < best.d)) best = { id: hit.id, d };
    }
    if (best) void onTokenChosen(best.id);
  });

  searchInput.addEventListener("change", () => {
    const surface = searchInput.value.trim();
    if (surface) void onTokenChosen(surface);
  });

  axisSelect.addEventListener("change", () => {
    setSliceAxis(state, axisSelect.value as SliceAxis);
    renderSliceControls();
    void refreshSlice();
  });

  sliceSlider.addEventListener("input", () => {
    setSliceIndex(state, Number(sliceSlider.value));
    renderSliceControls();
    void refreshSlice();
  });

  clusterToggle.addEventListener("change", () => {
    toggleClusterColors(state);
    renderScene();
  });

  for (const btn of tabButtons) {
    btn.addEventListener("click", () => {
      setMetricTab(state, btn.dataset.metric as MetricTab);
      renderTabs();
      renderRankingTable();
      if (currentRanking(state) === null) void loadBaseline(state.metricTab);
    });
  }

  el<HTMLButtonElement>("probe-cancel").addEventListener("click", () => {
    probeAbort?.abort();
  });
}

// ─── Boot ────────────────────────────────────────────────────────────────────

async function boot(): Promise<void> {
  wireEvents();
  try {
    const [meta, tokens] = await Promise.all([api.fieldMeta(), api.allTokens()]);
    let clusters = null;
    try {
      clusters = await api.clusters();
    } catch {
      clusters = null; // clustering not run yet: toggle just shows data-green
    }
    loadDataset(state, meta, tokens, clusters);
    for (const tok of tokens.slice(0, 2000)) {
      const opt = document.createElement("option");
      opt.value = tok.surface;
      searchList.appendChild(opt);
    }
    state.sliceIndex = Math.floor(sliceCount(state) / 2);
    await refreshSlice();
  } catch (err) {
    state.error = errorText(err);
  }
  renderAll();
}

void boot();
