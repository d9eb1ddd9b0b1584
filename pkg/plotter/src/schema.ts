/**
 * Sweep-CSV schema: column names, record type, and a strict parser.
 *
 * The CSV is the only interface between the benchmark harness and this
 * plotter, so violations are reported as typed errors naming the exact
 * column at fault rather than producing a half-drawn figure.
 */

import Papa from "papaparse";

/** Column order produced by the benchmark sweep. */
export const CSV_COLUMNS = [
  "method",
  "snr_db",
  "rho",
  "n",
  "m1",
  "m2",
  "lambda2",
  "n_trials",
  "nmse_mean",
  "nmse_std",
  "seed",
] as const;

export type CsvColumn = (typeof CSV_COLUMNS)[number];

const NUMERIC_COLUMNS: readonly CsvColumn[] = [
  "snr_db",
  "rho",
  "n",
  "m1",
  "m2",
  "lambda2",
  "n_trials",
  "nmse_mean",
  "nmse_std",
  "seed",
];

/** One measured sweep cell. */
export interface SweepRecord {
  method: string;
  snr_db: number;
  rho: number;
  n: number;
  m1: number;
  m2: number;
  lambda2: number;
  n_trials: number;
  nmse_mean: number;
  nmse_std: number;
  seed: number;
}

/** Raised for malformed input; `column` is set when one column is at fault. */
export class SchemaError extends Error {
  readonly column?: string;

  constructor(message: string, column?: string) {
    super(message);
    this.name = "SchemaError";
    this.column = column;
  }
}

/**
 * Parse sweep CSV text into records.
 *
 * Throws SchemaError when a required column is missing (naming it), when a
 * numeric field fails to parse, or when the file holds a header but no data
 * rows ("no data").
 */
export function parseSweepCsv(text: string): SweepRecord[] {
  const parsed = Papa.parse<Record<string, string>>(text, {
    header: true,
    skipEmptyLines: true,
  });
  const fields = parsed.meta.fields ?? [];
  for (const column of CSV_COLUMNS) {
    if (!fields.includes(column)) {
      throw new SchemaError(`missing column: ${column}`, column);
    }
  }
  if (parsed.data.length === 0) {
    throw new SchemaError("no data rows in CSV");
  }
  return parsed.data.map((row, index) => {
    const record: Record<string, string | number> = { method: row.method ?? "" };
    if (record.method === "") {
      throw new SchemaError(`row ${index + 1}: empty method`, "method");
    }
    for (const column of NUMERIC_COLUMNS) {
      const raw = row[column];
      const value = Number(raw);
      if (raw === undefined || raw === "" || Number.isNaN(value)) {
        throw new SchemaError(
          `row ${index + 1}: column ${column} is not numeric: ${JSON.stringify(raw)}`,
          column,
        );
      }
      record[column] = value;
    }
    return record as unknown as SweepRecord;
  });
}
