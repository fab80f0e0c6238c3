/**
 * Figure builders over harness CSV rows.
 *
 * Three figure types: bias vs step size with an optional predicted
 * first-order overlay, multi-algorithm sampling-error comparison, and the
 * SVRG/mini-batch ratio table with its y = 1 guide line. Magnitudes are
 * drawn on log-log axes; rows flagged unreliable get hollow markers. No
 * statistics are computed here — slopes, fits and coefficients all come
 * from the CSV.
 */

import { readFileSync } from "node:fs";
import { HarnessRow, parseHarnessCsv } from "./csv.js";
import { PlotSpec, STYLE, Series, SeriesPoint, renderPlot } from "./svg.js";

export class EmptySelectionError extends Error {
  constructor(message: string) {
    super(message);
    this.name = "EmptySelectionError";
  }
}

export class MissingSeriesError extends Error {
  constructor(message: string) {
    super(message);
    this.name = "MissingSeriesError";
  }
}

export interface OverlaySpec {
  /** leading-order bias coefficient C0 */
  c0: number;
  /** velocity-scale constant; overlay value is C0 h / (2 M2^2) / p */
  m2?: number;
  /** batch size divisor for mini-batch noise (1 for Gaussian noise) */
  p?: number;
}

export interface FigureSpec {
  type: "bias" | "compare" | "ratio";
  csv: string | string[];
  out: string;
  /** restrict to one model id (required when the CSV mixes models) */
  model?: string;
  /** bias: the single algorithm; compare: the algorithms to draw */
  algorithms?: string[];
  /** ratio: batch sizes to draw, one curve per p */
  batchSizes?: number[];
  overlay?: OverlaySpec;
  title?: string;
}

export function loadRows(spec: FigureSpec): HarnessRow[] {
  const paths = Array.isArray(spec.csv) ? spec.csv : [spec.csv];
  const rows = paths.flatMap((p) => parseHarnessCsv(readFileSync(p, "utf8"), p));
  return spec.model ? rows.filter((r) => r.model === spec.model) : rows;
}

function toPoints(rows: HarnessRow[]): SeriesPoint[] {
  return rows
    .slice()
    .sort((a, b) => a.h - b.h)
    .map((r) => ({
      x: r.h,
      y: Math.abs(r.value),
      yErr: r.stderr,
      hollow: r.unreliable,
    }));
}

/** overlay value C0 h / (2 M2^2) / p at one step size */
export function overlayValue(overlay: OverlaySpec, h: number): number {
  const m2 = overlay.m2 ?? 1;
  const p = overlay.p ?? 1;
  return Math.abs((overlay.c0 * h) / (2 * m2 * m2) / p);
}

export interface FigureGeometry {
  plot: PlotSpec;
  /** the exact (h, value) pairs the overlay line passes through, if any */
  overlayPoints: Array<{ h: number; value: number }>;
}

export function buildBiasFigure(rows: HarnessRow[], spec: FigureSpec): FigureGeometry {
  const algorithms =
    spec.algorithms ??
    [...new Set(rows.filter((r) => r.statistic === "bias").map((r) => r.algorithm))];
  if (algorithms.length === 0) {
    throw new EmptySelectionError("no bias rows in the selection");
  }
  const series: Series[] = [];
  const overlayPoints: Array<{ h: number; value: number }> = [];
  algorithms.forEach((algo, i) => {
    const biasRows = rows.filter(
      (r) => r.statistic === "bias" && r.algorithm === algo,
    );
    if (biasRows.length === 0) {
      throw new MissingSeriesError(`no bias rows for algorithm ${algo}`);
    }
    series.push({
      label: algo,
      points: toPoints(biasRows),
      color: STYLE.colors[i % STYLE.colors.length],
    });
  });
  if (spec.overlay) {
    const hs = [...new Set(series.flatMap((s) => s.points.map((p) => p.x)))].sort(
      (a, b) => a - b,
    );
    for (const h of hs) overlayPoints.push({ h, value: overlayValue(spec.overlay, h) });
    series.push({
      label: "predicted",
      points: overlayPoints.map((q) => ({ x: q.h, y: q.value, yErr: null, hollow: false })),
      color: STYLE.overlayColor,
      dashed: true,
      markers: false,
    });
  }
  return {
    plot: {
      title: spec.title ?? "numerical bias vs step size",
      xLabel: "step size h",
      yLabel: "|bias|",
      series,
    },
    overlayPoints,
  };
}

export function buildCompareFigure(rows: HarnessRow[], spec: FigureSpec): FigureGeometry {
  const algorithms =
    spec.algorithms ??
    [...new Set(rows.filter((r) => r.statistic === "error").map((r) => r.algorithm))];
  if (algorithms.length === 0) {
    throw new EmptySelectionError("no error rows in the selection");
  }
  const series = algorithms.map((algo, i) => {
    const cells = rows.filter((r) => r.statistic === "error" && r.algorithm === algo);
    if (cells.length === 0) {
      throw new MissingSeriesError(`no error rows for algorithm ${algo}`);
    }
    return {
      label: algo,
      points: toPoints(cells),
      color: STYLE.colors[i % STYLE.colors.length],
    };
  });
  return {
    plot: {
      title: spec.title ?? "sampling error vs step size",
      xLabel: "step size h",
      yLabel: "sampling error",
      series,
    },
    overlayPoints: [],
  };
}

export function buildRatioFigure(rows: HarnessRow[], spec: FigureSpec): FigureGeometry {
  const ratioRows = rows.filter((r) => r.statistic === "ratio");
  const batchSizes =
    spec.batchSizes ?? [...new Set(ratioRows.map((r) => r.batchSize))].sort((a, b) => a - b);
  if (batchSizes.length === 0) {
    throw new EmptySelectionError("no ratio rows in the selection");
  }
  const series = batchSizes.map((p, i) => {
    const cells = ratioRows.filter((r) => r.batchSize === p);
    if (cells.length === 0) {
      throw new MissingSeriesError(`no ratio rows for batch size ${p}`);
    }
    return {
      label: `p = ${p}`,
      points: toPoints(cells),
      color: STYLE.colors[i % STYLE.colors.length],
    };
  });
  return {
    plot: {
      title: spec.title ?? "SVRG / mini-batch error ratio",
      xLabel: "step size h",
      yLabel: "R(p, h)",
      series,
      guideY: 1,
      xDescending: true,
    },
    overlayPoints: [],
  };
}

export function renderFigure(spec: FigureSpec): string {
  const rows = loadRows(spec);
  let geometry: FigureGeometry;
  switch (spec.type) {
    case "bias":
      geometry = buildBiasFigure(rows, spec);
      break;
    case "compare":
      geometry = buildCompareFigure(rows, spec);
      break;
    case "ratio":
      geometry = buildRatioFigure(rows, spec);
      break;
    default:
      throw new EmptySelectionError(`unknown figure type ${(spec as FigureSpec).type}`);
  }
  return renderPlot(geometry.plot);
}
