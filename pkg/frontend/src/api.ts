/**
 * Typed client for the tracenet REST API.
 *
 * The UI is read-only over the fitted artifacts: every number it displays
 * comes out of one of these payloads. The only POST is /probe, which runs a
 * seeded computation server-side and returns the results.
 */

export interface TokenRecord {
  id: number;
  surface: string;
  pos: [number, number, number];
  meta: Record<string, string>;
}

export interface TokenPage {
  total: number;
  offset: number;
  tokens: TokenRecord[];
}

export interface FieldMeta {
  dims: [number, number, number]; // nx, ny, nz
  order: string;
  dtype: string;
  extent: [number, number, number][];
  tokens: number;
  stats: { min: number; max: number; mean: number };
}

export interface RankingRow {
  rank: number;
  id: number;
  surface: string;
  score: number;
}

export interface DirectionStats {
  histogram: number[];
  bimodality: number;
  circular_variance: number;
  n_modes: number;
}

export interface ProbeResponse {
  query: { token: string | null; id: number; pos: number[] | null };
  seed: number;
  ranking: RankingRow[];
  discovered: number[];
  trajectories: number[][][]; // decimated polylines, [vertex][xyz]
  direction_stats: DirectionStats;
}

export interface ProbeRequest {
  token?: string;
  pos?: [number, number, number];
  seed: number;
  repeats?: number;
  params?: Record<string, number | boolean>;
}

export interface RankingsResponse {
  query: string;
  metric: string;
  ranking: RankingRow[];
}

export interface ClusterSummary {
  n_components: number;
  tau: number;
  component_mass: Record<string, number>;
  token_labels: Record<string, number>;
}

export interface FieldSlice {
  axis: string;
  index: number;
  width: number; // fastest-varying in-plane dimension
  height: number;
  values: Float32Array;
}

export class ApiError extends Error {
  constructor(
    public readonly status: number,
    public readonly body: unknown,
    message: string,
  ) {
    super(message);
    this.name = "ApiError";
  }
}

type FetchFn = typeof fetch;

export class ApiClient {
  private readonly fetchFn: FetchFn;

  constructor(
    public readonly baseUrl: string = "/api/v1",
    fetchFn?: FetchFn,
  ) {
    this.fetchFn = fetchFn ?? globalThis.fetch.bind(globalThis);
  }

  private async request(path: string, init?: RequestInit): Promise<Response> {
    const res = await this.fetchFn(`${this.baseUrl}${path}`, init);
    if (!res.ok) {
      let body: unknown = null;
      try {
        body = await res.json();
      } catch {
        /* non-JSON error body */
      }
      const detail =
        body && typeof body === "object" && "detail" in body
          ? JSON.stringify((body as { detail: unknown }).detail)
          : res.statusText;
      throw new ApiError(res.status, body, `API ${res.status}: ${detail}`);
    }
    return res;
  }

  private async getJson<T>(path: string, signal?: AbortSignal): Promise<T> {
    const res = await this.request(path, { signal });
    return res.json() as Promise<T>;
  }

  tokens(
    opts: { limit?: number; offset?: number; q?: string } = {},
    signal?: AbortSignal,
  ): Promise<TokenPage> {
    const params = new URLSearchParams();
    if (opts.limit !== undefined) params.set("limit", String(opts.limit));
    if (opts.offset !== undefined) params.set("offset", String(opts.offset));
    if (opts.q) params.set("q", opts.q);
    const qs = params.toString();
    return this.getJson(`/tokens${qs ? `?${qs}` : ""}`, signal);
  }

  /** Page through /tokens until the whole vocabulary is local. */
  async allTokens(signal?: AbortSignal): Promise<TokenRecord[]> {
    const out: TokenRecord[] = [];
    let offset = 0;
    for (;;) {
      const page = await this.tokens({ limit: 1000, offset }, signal);
      out.push(...page.tokens);
      offset += page.tokens.length;
      if (offset >= page.total || page.tokens.length === 0) break;
    }
    return out;
  }

  token(id: number, signal?: AbortSignal): Promise<TokenRecord> {
    return this.getJson(`/token/${id}`, signal);
  }

  fieldMeta(signal?: AbortSignal): Promise<FieldMeta> {
    return this.getJson(`/field/meta`, signal);
  }

  async fieldSlice(
    axis: "x" | "y" | "z",
    index: number,
    signal?: AbortSignal,
  ): Promise<FieldSlice> {
    const res = await this.request(`/field/slice?axis=${axis}&index=${index}`, {
      signal,
    });
    const dims = (res.headers.get("x-dims") ?? "").split(",").map(Number);
    if (dims.length !== 2 || dims.some((d) => !Number.isFinite(d) || d <= 0)) {
      throw new ApiError(res.status, null, "slice response missing X-Dims");
    }
    const buf = await res.arrayBuffer();
    return {
      axis,
      index,
      width: dims[0],
      height: dims[1],
      values: new Float32Array(buf),
    };
  }

  rankings(
    token: string,
    metric: "mcpm" | "euclidean" | "cosine",
    seed = 0,
    signal?: AbortSignal,
  ): Promise<RankingsResponse> {
    const params = new URLSearchParams({ token, metric, seed: String(seed) });
    return this.getJson(`/rankings?${params}`, signal);
  }

  async probe(req: ProbeRequest, signal?: AbortSignal): Promise<ProbeResponse> {
    const res = await this.request(`/probe`, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(req),
      signal,
    });
    return res.json() as Promise<ProbeResponse>;
  }

  clusters(signal?: AbortSignal): Promise<ClusterSummary> {
    return this.getJson(`/clusters`, signal);
  }
}
