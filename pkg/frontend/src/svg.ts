/**
 * Minimal deterministic SVG scatter/line plot builder.
 *
 * Rendering is a pure function of its inputs: coordinates are formatted
 * with a fixed precision and elements are emitted in input order, so the
 * same data always yields a byte-identical file.
 */

export interface Margins {
  left: number;
  right: number;
  top: number;
  bottom: number;
}

export const STYLE = {
  width: 600,
  height: 440,
  margins: { left: 70, right: 24, top: 24, bottom: 56 } as Margins,
  fontFamily: "Helvetica, Arial, sans-serif",
  fontSize: 12,
  titleSize: 14,
  colors: ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"],
  guideColor: "#555555",
  overlayColor: "#222222",
  markerRadius: 3.5,
};

export function fmt(x: number): string {
  // fixed decimal places keep output byte-stable across runs
  return x.toFixed(3);
}

/** Log-scale axis map from data range to pixel range (may be reversed). */
export class LogScale {
  constructor(
    readonly dataMin: number,
    readonly dataMax: number,
    readonly pixelA: number,
    readonly pixelB: number,
  ) {
    if (!(dataMin > 0) || !(dataMax > 0)) {
      throw new Error("log scale requires positive data");
    }
  }

  map(x: number): number {
    const lo = Math.log10(this.dataMin);
    const hi = Math.log10(this.dataMax);
    const t = hi === lo ? 0.5 : (Math.log10(x) - lo) / (hi - lo);
    return this.pixelA + t * (this.pixelB - this.pixelA);
  }

  /** Powers of ten covering the data range (at most 12 ticks). */
  ticks(): number[] {
    const lo = Math.floor(Math.log10(this.dataMin));
    const hi = Math.ceil(Math.log10(this.dataMax));
    const out: number[] = [];
    const stride = Math.max(1, Math.ceil((hi - lo) / 12));
    for (let e = lo; e <= hi; e += stride) out.push(Math.pow(10, e));
    return out;
  }
}

function escapeXml(s: string): string {
  return s
    .replace(/&/g, "&amp;")
    .replace(/</g, "&lt;")
    .replace(/>/g, "&gt;")
    .replace(/"/g, "&quot;");
}

function tickLabel(v: number): string {
  const e = Math.round(Math.log10(v));
  if (Math.abs(Math.pow(10, e) - v) / v < 1e-9) return `1e${e}`;
  return v.toPrecision(3);
}

export interface SeriesPoint {
  x: number;
  y: number;
  yErr: number | null;
  hollow: boolean;
}

export interface Series {
  label: string;
  points: SeriesPoint[];
  color: string;
  dashed?: boolean;
  markers?: boolean;
}

export interface PlotSpec {
  title: string;
  xLabel: string;
  yLabel: string;
  series: Series[];
  /** optional horizontal guide line at this y value */
  guideY?: number;
  /** reverse the x axis (large values on the left) */
  xDescending?: boolean;
}

function dataExtent(values: number[]): [number, number] {
  let lo = Infinity;
  let hi = -Infinity;
  for (const v of values) {
    if (v > 0 && Number.isFinite(v)) {
      lo = Math.min(lo, v);
      hi = Math.max(hi, v);
    }
  }
  if (!Number.isFinite(lo)) throw new Error("no positive finite data to plot");
  return [lo / 1.25, hi * 1.25];
}

/** Render a log-log plot as a complete standalone SVG document. */
export function renderPlot(spec: PlotSpec): string {
  const { width, height, margins } = STYLE;
  const xs = spec.series.flatMap((s) => s.points.map((p) => p.x));
  const ys = spec.series.flatMap((s) =>
    s.points.flatMap((p) =>
      p.yErr !== null ? [p.y, p.y + p.yErr, Math.max(p.y - p.yErr, p.y / 4)] : [p.y],
    ),
  );
  if (spec.guideY !== undefined) ys.push(spec.guideY);
  const [xLo, xHi] = dataExtent(xs);
  const [yLo, yHi] = dataExtent(ys);
  const xScale = spec.xDescending
    ? new LogScale(xLo, xHi, width - margins.right, margins.left)
    : new LogScale(xLo, xHi, margins.left, width - margins.right);
  const yScale = new LogScale(yLo, yHi, height - margins.bottom, margins.top);

  const parts: string[] = [];
  parts.push(
    `<svg xmlns="http://www.w3.org/2000/svg" width="${width}" height="${height}" ` +
      `viewBox="0 0 ${width} ${height}" font-family="${STYLE.fontFamily}" ` +
      `font-size="${STYLE.fontSize}">`,
  );
  parts.push(`<rect width="${width}" height="${height}" fill="white"/>`);

  // axes frame
  const x0 = margins.left;
  const x1 = width - margins.right;
  const y0 = height - margins.bottom;
  const y1 = margins.top;
  parts.push(
    `<rect x="${x0}" y="${y1}" width="${x1 - x0}" height="${y0 - y1}" ` +
      `fill="none" stroke="#000000"/>`,
  );

  for (const t of xScale.ticks()) {
    const px = xScale.map(t);
    if (px < Math.min(x0, x1) - 0.5 || px > Math.max(x0, x1) + 0.5) continue;
    parts.push(
      `<line x1="${fmt(px)}" y1="${y0}" x2="${fmt(px)}" y2="${y0 + 5}" stroke="#000000"/>`,
    );
    parts.push(
      `<text x="${fmt(px)}" y="${y0 + 18}" text-anchor="middle">${tickLabel(t)}</text>`,
    );
  }
  for (const t of yScale.ticks()) {
    const py = yScale.map(t);
    if (py < y1 - 0.5 || py > y0 + 0.5) continue;
    parts.push(
      `<line x1="${x0 - 5}" y1="${fmt(py)}" x2="${x0}" y2="${fmt(py)}" stroke="#000000"/>`,
    );
    parts.push(
      `<text x="${x0 - 8}" y="${fmt(py + 4)}" text-anchor="end">${tickLabel(t)}</text>`,
    );
  }

  parts.push(
    `<text x="${fmt((x0 + x1) / 2)}" y="${height - 12}" text-anchor="middle">` +
      `${escapeXml(spec.xLabel)}</text>`,
  );
  parts.push(
    `<text x="16" y="${fmt((y0 + y1) / 2)}" text-anchor="middle" ` +
      `transform="rotate(-90 16 ${fmt((y0 + y1) / 2)})">${escapeXml(spec.yLabel)}</text>`,
  );
  parts.push(
    `<text x="${fmt((x0 + x1) / 2)}" y="16" text-anchor="middle" ` +
      `font-size="${STYLE.titleSize}">${escapeXml(spec.title)}</text>`,
  );

  if (spec.guideY !== undefined) {
    const py = yScale.map(spec.guideY);
    parts.push(
      `<line class="guide" x1="${x0}" y1="${fmt(py)}" x2="${x1}" y2="${fmt(py)}" ` +
        `stroke="${STYLE.guideColor}" stroke-dasharray="2 3"/>`,
    );
  }

  spec.series.forEach((s, idx) => {
    const pts = s.points;
    if (pts.length > 1) {
      const d = pts
        .map((p, i) => `${i === 0 ? "M" : "L"}${fmt(xScale.map(p.x))} ${fmt(yScale.map(p.y))}`)
        .join(" ");
      parts.push(
        `<path class="series-line" d="${d}" fill="none" stroke="${s.color}"` +
          (s.dashed ? ` stroke-dasharray="6 4"` : "") +
          `/>`,
      );
    }
    if (s.markers !== false) {
      for (const p of pts) {
        const cx = fmt(xScale.map(p.x));
        const cy = fmt(yScale.map(p.y));
        if (p.yErr !== null && p.yErr > 0) {
          // clamp the lower end so bars crossing zero stay on the log scale
          const lower = Math.max(p.y - p.yErr, p.y / 4);
          parts.push(
            `<line class="errorbar" x1="${cx}" y1="${fmt(yScale.map(lower))}" ` +
              `x2="${cx}" y2="${fmt(yScale.map(p.y + p.yErr))}" stroke="${s.color}"/>`,
          );
        }
        parts.push(
          `<circle class="marker" cx="${cx}" cy="${cy}" r="${STYLE.markerRadius}" ` +
            `stroke="${s.color}" fill="${p.hollow ? "none" : s.color}"/>`,
        );
      }
    }
    // legend entry
    const ly = y1 + 16 + 16 * idx;
    parts.push(
      `<line x1="${x1 - 130}" y1="${fmt(ly - 4)}" x2="${x1 - 106}" y2="${fmt(ly - 4)}" ` +
        `stroke="${s.color}"${s.dashed ? ` stroke-dasharray="6 4"` : ""}/>`,
    );
    parts.push(`<text x="${x1 - 100}" y="${fmt(ly)}">${escapeXml(s.label)}</text>`);
  });

  parts.push(`</svg>`);
  return parts.join("\n") + "\n";
}
