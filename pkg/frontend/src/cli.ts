#!/usr/bin/env node
/**
 * Figure renderer for sampling-harness CSVs.
 *
 * Usage: ubu-figures render --spec <figure.json>
 *
 * The JSON figure spec names the input CSV(s), the figure type
 * (bias | compare | ratio), series selectors, an optional predicted-bias
 * overlay and the output SVG path.
 */

import { readFileSync, writeFileSync } from "node:fs";
import { FigureSpec, renderFigure } from "./figures.js";

export function main(argv: string[]): number {
  if (argv[0] !== "render") {
    process.stderr.write("usage: ubu-figures render --spec <figure.json>\n");
    return 2;
  }
  const flag = argv.indexOf("--spec");
  if (flag === -1 || flag + 1 >= argv.length) {
    process.stderr.write("render requires --spec <figure.json>\n");
    return 2;
  }
  let spec: FigureSpec;
  try {
    spec = JSON.parse(readFileSync(argv[flag + 1], "utf8")) as FigureSpec;
  } catch (err) {
    process.stderr.write(`spec error: ${(err as Error).message}\n`);
    return 2;
  }
  if (!spec.out) {
    process.stderr.write("figure spec must set 'out'\n");
    return 2;
  }
  try {
    writeFileSync(spec.out, renderFigure(spec));
  } catch (err) {
    process.stderr.write(`${(err as Error).name}: ${(err as Error).message}\n`);
    return 1;
  }
  process.stdout.write(`wrote ${spec.out}\n`);
  return 0;
}

const invokedDirectly = process.argv[1] !== undefined &&
  import.meta.url === new URL(`file://${process.argv[1]}`).href;
if (invokedDirectly) {
  process.exit(main(process.argv.slice(2)));
}
