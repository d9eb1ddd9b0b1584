export { CSV_COLUMNS, parseSweepCsv, SchemaError } from "./schema.js";
export type { CsvColumn, SweepRecord } from "./schema.js";
export {
  buildCurves,
  DEFAULT_GROUP_BY,
  GROUP_COLUMNS,
  renderSvg,
} from "./plot.js";
export type { Curve, CurvePoint, GroupColumn, PlotSpec, XAxis } from "./plot.js";
export { parseArgs, runCli } from "./cli.js";
