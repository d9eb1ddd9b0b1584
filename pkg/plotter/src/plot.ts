/**
 * Figure construction and SVG rendering for benchmark sweep results.
 *
 * One curve per group (default: per method), points pooled across any
 * remaining columns at the same x, error bars of one standard error
 * (nmse_std / sqrt(n_trials)), and a log-scale error axis by default.
 * Rendering is pure string generation: same records + same spec in,
 * byte-identical SVG out.
 */

import { SchemaError, SweepRecord } from "./schema.js";

export type XAxis = "snr_db" | "rho";
export type GroupColumn = "method" | "rho" | "m1" | "m2";

export const GROUP_COLUMNS: readonly GroupColumn[] = ["method", "rho", "m1", "m2"];

/** Everything needed to render one figure. */
export interface PlotSpec {
  input: string;
  output: string;
  xAxis: XAxis;
  groupBy: GroupColumn[];
  logY: boolean;
}

export const DEFAULT_GROUP_BY: GroupColumn[] = ["method"];

export interface CurvePoint {
  x: number;
  /** pooled mean error across records sharing (group, x) */
  y: number;
  /** one standard error of the pooled mean */
  half: number;
}

export interface Curve {
  label: string;
  points: CurvePoint[];
}

function groupLabel(column: GroupColumn, value: string | number): string {
  switch (column) {
    case "method":
      return String(value);
    case "rho":
      return `ρ=${value}`;
    case "m1":
      return `M1=${value}`;
    case "m2":
      return `M2=${value}`;
  }
}

/**
 * Fold records into curves: one per distinct group-by tuple, one point per
 * distinct x, pooling multiple records at the same (group, x) by trial-count
 * weight. Pooled variance follows from independence of the cells.
 */
export function buildCurves(
  records: SweepRecord[],
  xAxis: XAxis,
  groupBy: GroupColumn[],
): Curve[] {
  interface Accumulator {
    trials: number;
    weightedMean: number;
    weightedVar: number; // sum of n_i * s_i^2
  }
  const groups = new Map<string, Map<number, Accumulator>>();
  for (const record of records) {
    const key = groupBy.map((c) => groupLabel(c, record[c])).join(", ") || "all";
    const x = record[xAxis];
    let byX = groups.get(key);
    if (!byX) {
      byX = new Map();
      groups.set(key, byX);
    }
    const acc = byX.get(x) ?? { trials: 0, weightedMean: 0, weightedVar: 0 };
    acc.trials += record.n_trials;
    acc.weightedMean += record.n_trials * record.nmse_mean;
    acc.weightedVar += record.n_trials * record.nmse_std ** 2;
    byX.set(x, acc);
  }
  const labels = [...groups.keys()].sort();
  return labels.map((label) => {
    const byX = groups.get(label)!;
    const points = [...byX.entries()]
      .map(([x, acc]) => ({
        x,
        y: acc.weightedMean / acc.trials,
        half: Math.sqrt(acc.weightedVar) / acc.trials,
      }))
      .sort((a, b) => a.x - b.x);
    return { label, points };
  });
}

// --- scales -----------------------------------------------------------

interface Scale {
  (value: number): number;
  ticks: number[];
}

function linearScale(lo: number, hi: number, pxLo: number, pxHi: number, ticks: number[]): Scale {
  const span = hi - lo || 1;
  const scale = ((value: number) =>
    pxLo + ((value - lo) / span) * (pxHi - pxLo)) as Scale;
  scale.ticks = ticks;
  return scale;
}

function logScale(lo: number, hi: number, pxLo: number, pxHi: number): Scale {
  const llo = Math.log10(lo);
  const lhi = Math.log10(hi);
  const span = lhi - llo || 1;
  const scale = ((value: number) =>
    pxLo + ((Math.log10(value) - llo) / span) * (pxHi - pxLo)) as Scale;
  const ticks: number[] = [];
  for (let d = Math.ceil(llo); d <= Math.floor(lhi); d += 1) {
    ticks.push(10 ** d);
  }
  scale.ticks = ticks.length > 0 ? ticks : [lo, hi];
  return scale;
}

/** Round pixel coordinates so output strings are stable across platforms. */
function px(value: number): string {
  return value.toFixed(2);
}

function tickLabel(value: number): string {
  if (value !== 0 && (Math.abs(value) < 1e-3 || Math.abs(value) >= 1e4)) {
    return value.toExponential(0).replace("e-", "e-").replace("e+", "e");
  }
  return String(Number(value.toPrecision(6)));
}

const PALETTE = [
  "#1f77b4",
  "#d62728",
  "#2ca02c",
  "#9467bd",
  "#ff7f0e",
  "#8c564b",
  "#17becf",
  "#e377c2",
];

const MARKERS = ["circle", "square", "diamond", "triangle"] as const;

function markerShape(kind: (typeof MARKERS)[number], cx: number, cy: number, color: string): string {
  const r = 3.5;
  switch (kind) {
    case "circle":
      return `<circle cx="${px(cx)}" cy="${px(cy)}" r="${r}" fill="${color}"/>`;
    case "square":
      return `<rect x="${px(cx - r)}" y="${px(cy - r)}" width="${2 * r}" height="${2 * r}" fill="${color}"/>`;
    case "diamond":
      return `<path d="M ${px(cx)} ${px(cy - r - 1)} L ${px(cx + r + 1)} ${px(cy)} L ${px(cx)} ${px(cy + r + 1)} L ${px(cx - r - 1)} ${px(cy)} Z" fill="${color}"/>`;
    case "triangle":
      return `<path d="M ${px(cx)} ${px(cy - r - 1)} L ${px(cx + r + 1)} ${px(cy + r)} L ${px(cx - r - 1)} ${px(cy + r)} Z" fill="${color}"/>`;
  }
}

const WIDTH = 760;
const HEIGHT = 520;
const MARGIN = { left: 78, right: 24, top: 24, bottom: 64 };

function xAxisTitle(xAxis: XAxis): string {
  return xAxis === "snr_db" ? "SNR (dB)" : "mask ratio ρ";
}

/** Render curves to a complete standalone SVG document. */
export function renderSvg(curves: Curve[], xAxis: XAxis, logY: boolean): string {
  if (curves.length === 0 || curves.every((c) => c.points.length === 0)) {
    throw new SchemaError("no data rows in CSV");
  }
  const points = curves.flatMap((c) => c.points);
  const xs = points.map((p) => p.x);
  const xLo = Math.min(...xs);
  const xHi = Math.max(...xs);
  const pad = xLo === xHi ? 1 : (xHi - xLo) * 0.05;
  const distinctX = [...new Set(xs)].sort((a, b) => a - b);
  const xTicks = distinctX.length <= 8 ? distinctX : undefined;
  const xScale = linearScale(
    xLo - pad,
    xHi + pad,
    MARGIN.left,
    WIDTH - MARGIN.right,
    xTicks ?? defaultLinearTicks(xLo, xHi),
  );

  let yScale: Scale;
  if (logY) {
    const positive = points.map((p) => Math.max(p.y - p.half, p.y * 0.1, 1e-12));
    const tops = points.map((p) => p.y + p.half);
    const lo = 10 ** Math.floor(Math.log10(Math.min(...positive)));
    const hi = 10 ** Math.ceil(Math.log10(Math.max(...tops)));
    yScale = logScale(lo, hi === lo ? lo * 10 : hi, HEIGHT - MARGIN.bottom, MARGIN.top);
  } else {
    const lows = points.map((p) => p.y - p.half);
    const highs = points.map((p) => p.y + p.half);
    const lo = Math.min(0, ...lows);
    const hi = Math.max(...highs) * 1.05 || 1;
    yScale = linearScale(lo, hi, HEIGHT - MARGIN.bottom, MARGIN.top, defaultLinearTicks(lo, hi));
  }
  const yFloor = logY ? 10 ** Math.log10(yScale.ticks[0] ?? 1e-12) : -Infinity;

  const parts: string[] = [];
  parts.push(
    `<svg xmlns="http://www.w3.org/2000/svg" width="${WIDTH}" height="${HEIGHT}" viewBox="0 0 ${WIDTH} ${HEIGHT}" font-family="Helvetica, Arial, sans-serif">`,
  );
  parts.push(`<rect width="${WIDTH}" height="${HEIGHT}" fill="white"/>`);

  // gridlines + y ticks
  for (const tick of yScale.ticks) {
    const y = yScale(tick);
    parts.push(
      `<line x1="${MARGIN.left}" y1="${px(y)}" x2="${WIDTH - MARGIN.right}" y2="${px(y)}" stroke="#dddddd" stroke-width="1"/>`,
    );
    parts.push(
      `<text x="${MARGIN.left - 8}" y="${px(y + 4)}" text-anchor="end" font-size="12">${tickLabel(tick)}</text>`,
    );
  }
  // x ticks
  for (const tick of xScale.ticks) {
    const x = xScale(tick);
    parts.push(
      `<line x1="${px(x)}" y1="${HEIGHT - MARGIN.bottom}" x2="${px(x)}" y2="${HEIGHT - MARGIN.bottom + 6}" stroke="#333333" stroke-width="1"/>`,
    );
    parts.push(
      `<text x="${px(x)}" y="${HEIGHT - MARGIN.bottom + 22}" text-anchor="middle" font-size="12">${tickLabel(tick)}</text>`,
    );
  }
  // axes
  parts.push(
    `<line x1="${MARGIN.left}" y1="${MARGIN.top}" x2="${MARGIN.left}" y2="${HEIGHT - MARGIN.bottom}" stroke="#333333" stroke-width="1"/>`,
  );
  parts.push(
    `<line x1="${MARGIN.left}" y1="${HEIGHT - MARGIN.bottom}" x2="${WIDTH - MARGIN.right}" y2="${HEIGHT - MARGIN.bottom}" stroke="#333333" stroke-width="1"/>`,
  );
  parts.push(
    `<text x="${(MARGIN.left + WIDTH - MARGIN.right) / 2}" y="${HEIGHT - 18}" text-anchor="middle" font-size="14">${xAxisTitle(xAxis)}</text>`,
  );
  parts.push(
    `<text x="20" y="${(MARGIN.top + HEIGHT - MARGIN.bottom) / 2}" text-anchor="middle" font-size="14" transform="rotate(-90 20 ${(MARGIN.top + HEIGHT - MARGIN.bottom) / 2})">NMSE</text>`,
  );

  // curves
  curves.forEach((curve, index) => {
    const color = PALETTE[index % PALETTE.length];
    const marker = MARKERS[index % MARKERS.length];
    const coords = curve.points.map((p) => ({
      x: xScale(p.x),
      y: yScale(Math.max(p.y, yFloor)),
      lo: yScale(Math.max(p.y - p.half, yFloor)),
      hi: yScale(Math.max(p.y + p.half, yFloor)),
    }));
    const path = coords
      .map((c, i) => `${i === 0 ? "M" : "L"} ${px(c.x)} ${px(c.y)}`)
      .join(" ");
    parts.push(`<g class="curve" data-label="${escapeXml(curve.label)}">`);
    parts.push(
      `<path d="${path}" fill="none" stroke="${color}" stroke-width="1.8"/>`,
    );
    for (const c of coords) {
      parts.push(
        `<line class="errorbar" x1="${px(c.x)}" y1="${px(c.lo)}" x2="${px(c.x)}" y2="${px(c.hi)}" stroke="${color}" stroke-width="1.2"/>`,
      );
      parts.push(
        `<line x1="${px(c.x - 3)}" y1="${px(c.lo)}" x2="${px(c.x + 3)}" y2="${px(c.lo)}" stroke="${color}" stroke-width="1.2"/>`,
      );
      parts.push(
        `<line x1="${px(c.x - 3)}" y1="${px(c.hi)}" x2="${px(c.x + 3)}" y2="${px(c.hi)}" stroke="${color}" stroke-width="1.2"/>`,
      );
      parts.push(markerShape(marker, c.x, c.y, color));
    }
    parts.push("</g>");
  });

  // legend (top right, stacked)
  const legendX = WIDTH - MARGIN.right - 190;
  curves.forEach((curve, index) => {
    const color = PALETTE[index % PALETTE.length];
    const y = MARGIN.top + 10 + index * 20;
    parts.push(
      `<line x1="${legendX}" y1="${px(y)}" x2="${legendX + 26}" y2="${px(y)}" stroke="${color}" stroke-width="2"/>`,
    );
    parts.push(markerShape(MARKERS[index % MARKERS.length], legendX + 13, y, color));
    parts.push(
      `<text x="${legendX + 34}" y="${px(y + 4)}" font-size="12">${escapeXml(curve.label)}</text>`,
    );
  });

  parts.push("</svg>");
  return parts.join("\n") + "\n";
}

function defaultLinearTicks(lo: number, hi: number): number[] {
  const span = hi - lo || 1;
  const step = 10 ** Math.floor(Math.log10(span / 5));
  const mult = span / step > 25 ? 5 : span / step > 12 ? 2.5 : 1;
  const s = step * mult;
  const first = Math.ceil(lo / s) * s;
  const ticks: number[] = [];
  for (let v = first; v <= hi + 1e-12; v += s) {
    ticks.push(Number(v.toPrecision(12)));
  }
  return ticks;
}

function escapeXml(text: string): string {
  return text
    .replace(/&/g, "&amp;")
    .replace(/</g, "&lt;")
    .replace(/>/g, "&gt;")
    .replace(/"/g, "&quot;");
}
