/**
 * Reader for the sampling-harness CSV format (schema version 1).
 *
 * The harness writes plain comma-separated values with no quoting; empty
 * cells stand for "not applicable". All statistics are computed upstream —
 * this package only selects rows and draws them.
 */

export const EXPECTED_SCHEMA_VERSION = 1;

export const CSV_COLUMNS = [
  "schema_version",
  "model",
  "algorithm",
  "n_components",
  "batch_size",
  "h",
  "total_time",
  "steps",
  "replicas",
  "seed",
  "statistic",
  "value",
  "stderr",
  "reference",
  "reference_error",
  "work_units",
  "wall_time",
  "unreliable",
  "diverged",
] as const;

export type Statistic =
  | "bias"
  | "error"
  | "slope"
  | "ratio"
  | "coefficient"
  | "predicted_bias";

export interface HarnessRow {
  schemaVersion: number;
  model: string;
  algorithm: string;
  nComponents: number;
  batchSize: number;
  h: number;
  totalTime: number;
  steps: number;
  replicas: number;
  seed: number;
  statistic: Statistic;
  value: number;
  stderr: number | null;
  reference: number | null;
  referenceError: number | null;
  workUnits: number;
  wallTime: number;
  unreliable: boolean;
  diverged: number;
}

export class SchemaMismatchError extends Error {
  readonly expected: number;
  readonly found: string;

  constructor(expected: number, found: string, source: string) {
    super(
      `schema mismatch in ${source}: expected schema_version ${expected}, found ${found}`,
    );
    this.name = "SchemaMismatchError";
    this.expected = expected;
    this.found = found;
  }
}

export class MalformedCsvError extends Error {
  constructor(message: string) {
    super(message);
    this.name = "MalformedCsvError";
  }
}

function optionalNumber(cell: string): number | null {
  if (cell === "") return null;
  const v = Number(cell);
  if (Number.isNaN(v) && cell !== "nan") {
    throw new MalformedCsvError(`not a number: ${JSON.stringify(cell)}`);
  }
  return v;
}

function requiredNumber(cell: string, column: string): number {
  const v = optionalNumber(cell);
  if (v === null) {
    throw new MalformedCsvError(`empty cell in required column ${column}`);
  }
  return v;
}

/** Parse one harness CSV document; `source` names it in error messages. */
export function parseHarnessCsv(text: string, source: string): HarnessRow[] {
  const lines = text.split(/\r?\n/).filter((l) => l.length > 0);
  if (lines.length === 0) {
    throw new MalformedCsvError(`${source} is empty`);
  }
  const header = lines[0].split(",");
  if (header.join(",") !== CSV_COLUMNS.join(",")) {
    throw new MalformedCsvError(
      `${source} header does not match the harness schema: ${lines[0]}`,
    );
  }
  const rows: HarnessRow[] = [];
  for (const line of lines.slice(1)) {
    const cells = line.split(",");
    if (cells.length !== CSV_COLUMNS.length) {
      throw new MalformedCsvError(
        `${source}: expected ${CSV_COLUMNS.length} cells, found ${cells.length} in: ${line}`,
      );
    }
    if (cells[0] !== String(EXPECTED_SCHEMA_VERSION)) {
      throw new SchemaMismatchError(EXPECTED_SCHEMA_VERSION, cells[0], source);
    }
    rows.push({
      schemaVersion: Number(cells[0]),
      model: cells[1],
      algorithm: cells[2],
      nComponents: requiredNumber(cells[3], "n_components"),
      batchSize: requiredNumber(cells[4], "batch_size"),
      h: requiredNumber(cells[5], "h"),
      totalTime: requiredNumber(cells[6], "total_time"),
      steps: requiredNumber(cells[7], "steps"),
      replicas: requiredNumber(cells[8], "replicas"),
      seed: requiredNumber(cells[9], "seed"),
      statistic: cells[10] as Statistic,
      value: requiredNumber(cells[11], "value"),
      stderr: optionalNumber(cells[12]),
      reference: optionalNumber(cells[13]),
      referenceError: optionalNumber(cells[14]),
      workUnits: requiredNumber(cells[15], "work_units"),
      wallTime: requiredNumber(cells[16], "wall_time"),
      unreliable: cells[17] === "1",
      diverged: requiredNumber(cells[18], "diverged"),
    });
  }
  return rows;
}
