#!/usr/bin/env node
/**
 * Command-line entry: read a sweep CSV, write an SVG figure.
 *
 * Usage:
 *   sweep-plotter --input results.csv --out figure.svg \
 *                 [--x snr_db|rho] [--group-by method,rho] [--linear-y]
 *
 * Exit codes: 0 success; 2 bad arguments, schema violation, or empty
 * input; 3 filesystem error. The input CSV is only ever read.
 */

import { readFile, writeFile } from "fs/promises";
import { pathToFileURL } from "url";
import yargs from "yargs";

import {
  buildCurves,
  DEFAULT_GROUP_BY,
  GROUP_COLUMNS,
  GroupColumn,
  PlotSpec,
  renderSvg,
  XAxis,
} from "./plot.js";
import { parseSweepCsv, SchemaError } from "./schema.js";

export function parseArgs(argv: string[]): PlotSpec {
  const parsed = yargs(argv)
    .option("input", { type: "string", demandOption: true, describe: "sweep CSV path" })
    .option("out", { type: "string", demandOption: true, describe: "output SVG path" })
    .option("x", {
      type: "string",
      default: "snr_db",
      choices: ["snr_db", "rho"] as const,
      describe: "x-axis column",
    })
    .option("group-by", {
      type: "string",
      default: DEFAULT_GROUP_BY.join(","),
      describe: `comma-separated grouping columns (${GROUP_COLUMNS.join(", ")})`,
    })
    .option("linear-y", {
      type: "boolean",
      default: false,
      describe: "use a linear error axis instead of the default log scale",
    })
    .exitProcess(false)
    .fail((msg) => {
      throw new SchemaError(msg);
    })
    .strict()
    .parseSync();

  const groupBy = String(parsed["group-by"])
    .split(",")
    .map((c) => c.trim())
    .filter((c) => c.length > 0);
  for (const column of groupBy) {
    if (!(GROUP_COLUMNS as readonly string[]).includes(column)) {
      throw new SchemaError(`unsupported group-by column: ${column}`, column);
    }
  }
  return {
    input: parsed.input,
    output: parsed.out,
    xAxis: parsed.x as XAxis,
    groupBy: groupBy as GroupColumn[],
    logY: !parsed["linear-y"],
  };
}

/** Run the full pipeline; returns a process exit code instead of exiting. */
export async function runCli(argv: string[]): Promise<number> {
  let spec: PlotSpec;
  try {
    spec = parseArgs(argv);
  } catch (error) {
    console.error(`error: ${(error as Error).message}`);
    return 2;
  }
  let text: string;
  try {
    text = await readFile(spec.input, "utf8");
  } catch (error) {
    console.error(`error: cannot read ${spec.input}: ${(error as Error).message}`);
    return 3;
  }
  let svg: string;
  try {
    const records = parseSweepCsv(text);
    svg = renderSvg(buildCurves(records, spec.xAxis, spec.groupBy), spec.xAxis, spec.logY);
  } catch (error) {
    if (error instanceof SchemaError) {
      console.error(`error: ${error.message}`);
      return 2;
    }
    throw error;
  }
  try {
    await writeFile(spec.output, svg, "utf8");
  } catch (error) {
    console.error(`error: cannot write ${spec.output}: ${(error as Error).message}`);
    return 3;
  }
  return 0;
}

const isMain =
  typeof process.argv[1] === "string" &&
  import.meta.url === pathToFileURL(process.argv[1]).href;

if (isMain) {
  runCli(process.argv.slice(2)).then((code) => {
    process.exitCode = code;
  });
}
