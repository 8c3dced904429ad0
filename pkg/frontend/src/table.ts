/**
 * Pure presenters for the panels.
 *
 * The UI computes no similarity of its own: every rank, surface, and score
 * below is carried through verbatim from an API payload. The only arithmetic
 * here is presentation (font sizing, rose-plot geometry).
 */

import type { DirectionStats, RankingRow } from "./api.js";

export interface TableRow {
  rank: number;
  surface: string;
  score: number; // raw payload value
  display: string; // formatted for the cell
}

export const TOP_N = 30;

/** Ranking table rows, straight off the payload. */
export function rankingRows(ranking: RankingRow[]): TableRow[] {
  return ranking.map((r) => ({
    rank: r.rank,
    surface: r.surface,
    score: r.score,
    display: formatScore(r.score),
  }));
}

export function formatScore(score: number): string {
  if (score === 0) return "0";
  // fixed notation for the usual normalized-count range, scientific otherwise
  return score >= 1e-4 && score < 1e4
    ? score.toPrecision(6)
    : score.toExponential(4);
}

// ─── Word cloud ──────────────────────────────────────────────────────────────

export interface CloudEntry {
  surface: string;
  score: number;
  fontPx: number;
}

export const CLOUD_MIN_PX = 12;
export const CLOUD_MAX_PX = 34;

/**
 * Top-30 as a size-scaled token list. Sizes interpolate linearly between the
 * smallest and largest score in the window; a flat window renders mid-size.
 */
export function wordCloudEntries(ranking: RankingRow[]): CloudEntry[] {
  const top = ranking.slice(0, TOP_N);
  if (top.length === 0) return [];
  const scores = top.map((r) => r.score);
  const lo = Math.min(...scores);
  const hi = Math.max(...scores);
  const span = hi - lo;
  return top.map((r) => ({
    surface: r.surface,
    score: r.score,
    fontPx:
      span === 0
        ? (CLOUD_MIN_PX + CLOUD_MAX_PX) / 2
        : CLOUD_MIN_PX +
          ((r.score - lo) / span) * (CLOUD_MAX_PX - CLOUD_MIN_PX),
  }));
}

// ─── Direction rose ──────────────────────────────────────────────────────────

export interface RoseSegment {
  startAngle: number; // radians, bin start
  endAngle: number;
  radius: number; // [0, 1], normalized to the fullest bin
}

/** Geometry for the rose plot; one segment per histogram bin. */
export function roseSegments(stats: DirectionStats): RoseSegment[] {
  const bins = stats.histogram.length;
  if (bins === 0) return [];
  const peak = Math.max(...stats.histogram);
  const width = (2 * Math.PI) / bins;
  return stats.histogram.map((v, i) => ({
    startAngle: i * width,
    endAngle: (i + 1) * width,
    radius: peak > 0 ? v / peak : 0,
  }));
}

/** One-line characterization under the rose, numbers verbatim. */
export function directionCaption(stats: DirectionStats): string {
  const shape =
    stats.n_modes === 2
      ? "bimodal (filament-like)"
      : stats.n_modes > 2
        ? `${stats.n_modes}-modal (knot-like)`
        : "unimodal";
  return (
    `${shape} · bimodality ${stats.bimodality.toFixed(3)}` +
    ` · circular variance ${stats.circular_variance.toFixed(3)}`
  );
}
