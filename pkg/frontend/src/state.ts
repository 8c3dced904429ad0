/**
 * View state and its transitions.
 *
 * Kept framework-free and side-effect-free so the invariants are directly
 * testable: the probe panel always reflects the latest *completed* request,
 * out-of-order responses never overwrite newer state, and a failed or
 * cancelled request leaves the previous panel intact.
 */

import type {
  ClusterSummary,
  FieldMeta,
  ProbeResponse,
  RankingRow,
  TokenRecord,
} from "./api.js";

export type SliceAxis = "x" | "y" | "z";
export type MetricTab = "mcpm" | "euclidean" | "cosine";

export interface ViewState {
  meta: FieldMeta | null;
  tokens: TokenRecord[]; // the active dataset's vocabulary listing
  selected: TokenRecord | null;
  // Probe bookkeeping. nextRequestId is the monotone issue counter;
  // shownRequestId is the id of the response currently on the panel.
  probe: ProbeResponse | null;
  nextRequestId: number;
  shownRequestId: number;
  pendingRequestId: number | null;
  sliceAxis: SliceAxis;
  sliceIndex: number;
  clusterColors: boolean;
  clusters: ClusterSummary | null;
  metricTab: MetricTab;
  baselines: Partial<Record<MetricTab, RankingRow[]>>;
  baselineNotes: Partial<Record<MetricTab, string>>;
  error: string | null;
}

export function createViewState(): ViewState {
  return {
    meta: null,
    tokens: [],
    selected: null,
    probe: null,
    nextRequestId: 0,
    shownRequestId: -1,
    pendingRequestId: null,
    sliceAxis: "z",
    sliceIndex: 0,
    clusterColors: false,
    clusters: null,
    metricTab: "mcpm",
    baselines: {},
    baselineNotes: {},
    error: null,
  };
}

export function loadDataset(
  state: ViewState,
  meta: FieldMeta,
  tokens: TokenRecord[],
  clusters: ClusterSummary | null,
): void {
  state.meta = meta;
  state.tokens = tokens;
  state.clusters = clusters;
  state.sliceIndex = clampSliceIndex(state, state.sliceIndex);
  state.error = null;
}

/** Message for an empty scene; null when there is something to draw. */
export function sceneMessage(state: ViewState): string | null {
  if (!state.meta) return "no dataset loaded";
  if (state.tokens.length === 0) return "dataset has no tokens";
  return null;
}

// ─── Token selection ─────────────────────────────────────────────────────────

/**
 * Select a token by surface or id. Selection must resolve against the
 * dataset listing; anything else is rejected without touching the current
 * selection.
 */
export function selectToken(
  state: ViewState,
  ref: string | number,
): TokenRecord | null {
  const hit =
    typeof ref === "number"
      ? state.tokens.find((t) => t.id === ref)
      : state.tokens.find((t) => t.surface === ref);
  if (!hit) {
    state.error = `unknown token: ${ref}`;
    return null;
  }
  state.selected = hit;
  state.error = null;
  return hit;
}

// ─── Probe request lifecycle ─────────────────────────────────────────────────

/** Issue a new probe request id. Supersedes any request still in flight. */
export function beginProbe(state: ViewState): number {
  const id = state.nextRequestId++;
  state.pendingRequestId = id;
  state.error = null;
  return id;
}

/**
 * Install a completed probe response. Returns true if the panel changed.
 * A response older than what the panel already shows is stale and dropped.
 */
export function applyProbeResponse(
  state: ViewState,
  requestId: number,
  response: ProbeResponse,
): boolean {
  if (requestId <= state.shownRequestId) return false;
  state.probe = response;
  state.shownRequestId = requestId;
  if (state.pendingRequestId === requestId) state.pendingRequestId = null;
  // A new query invalidates cached baseline tabs.
  state.baselines = {};
  state.baselineNotes = {};
  return true;
}

/**
 * Record a failed or cancelled probe. The previous panel is retained; the
 * banner is raised only if the failure belongs to the newest request.
 */
export function applyProbeError(
  state: ViewState,
  requestId: number,
  message: string | null,
): void {
  if (state.pendingRequestId === requestId) {
    state.pendingRequestId = null;
    if (message !== null) state.error = message;
  }
}

export function probeInFlight(state: ViewState): boolean {
  return state.pendingRequestId !== null;
}

// ─── Slice / tabs / toggles ──────────────────────────────────────────────────

/** Number of slices along the current axis, 0 when no meta is loaded. */
export function sliceCount(state: ViewState): number {
  if (!state.meta) return 0;
  const [nx, ny, nz] = state.meta.dims;
  return state.sliceAxis === "x" ? nx : state.sliceAxis === "y" ? ny : nz;
}

function clampSliceIndex(state: ViewState, index: number): number {
  const n = sliceCount(state);
  if (n === 0) return 0;
  return Math.min(Math.max(Math.trunc(index), 0), n - 1);
}

export function setSliceAxis(state: ViewState, axis: SliceAxis): void {
  state.sliceAxis = axis;
  state.sliceIndex = clampSliceIndex(state, state.sliceIndex);
}

export function setSliceIndex(state: ViewState, index: number): void {
  state.sliceIndex = clampSliceIndex(state, index);
}

export function setMetricTab(state: ViewState, tab: MetricTab): void {
  state.metricTab = tab;
}

export function toggleClusterColors(state: ViewState): void {
  state.clusterColors = !state.clusterColors;
}

export function setBaseline(
  state: ViewState,
  tab: MetricTab,
  rows: RankingRow[],
): void {
  state.baselines[tab] = rows;
  delete state.baselineNotes[tab];
}

export function setBaselineNote(
  state: ViewState,
  tab: MetricTab,
  note: string,
): void {
  state.baselineNotes[tab] = note;
  delete state.baselines[tab];
}

// ─── Derived views ───────────────────────────────────────────────────────────

/** Rows for the active metric tab; null when that tab has nothing yet. */
export function currentRanking(state: ViewState): RankingRow[] | null {
  if (state.metricTab === "mcpm") return state.probe?.ranking ?? null;
  return state.baselines[state.metricTab] ?? null;
}

/** Ids drawn highlighted: tokens discovered by the shown probe response. */
export function highlightedIds(state: ViewState): Set<number> {
  return new Set(state.probe?.discovered ?? []);
}
