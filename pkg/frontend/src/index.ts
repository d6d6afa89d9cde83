#!/usr/bin/env node
/**
 * Figure renderer for simulation artifacts.
 *
 * Usage:
 *   dephasim-plot <recipe.json>
 *
 * The recipe names the input CSV/JSON artifacts, the figure kind, and
 * the output SVG path. Rendering is pure: byte-identical inputs give
 * byte-identical SVG output.
 */

import { readFileSync, writeFileSync } from "fs";
import path from "path";

import { renderFloquet } from "./plot_floquet.js";
import { renderSweep } from "./plot_sweep.js";
import { NamedCsv, renderTraces } from "./plot_traces.js";
import { FigureRecipe, loadRecipe } from "./recipe.js";

// ---------------------------------------------------------------------------
// Rendering dispatch
// ---------------------------------------------------------------------------

export function renderRecipe(recipe: FigureRecipe): string {
  if (recipe.kind === "sweep") {
    return renderSweep(readFileSync(recipe.sweep, "utf-8"), recipe.title);
  }
  if (recipe.kind === "traces") {
    const inputs: NamedCsv[] = recipe.traces.map((p, i) => ({
      name: recipe.labels?.[i] ?? path.basename(p, ".csv"),
      text: readFileSync(p, "utf-8"),
    }));
    return renderTraces(inputs, recipe.title);
  }
  return renderFloquet(
    readFileSync(recipe.scan, "utf-8"),
    recipe.sweetSpot !== undefined
      ? readFileSync(recipe.sweetSpot, "utf-8") : null,
    recipe.quasiVsAmplitude !== undefined
      ? readFileSync(recipe.quasiVsAmplitude, "utf-8") : null,
    recipe.splittingVsOffset !== undefined
      ? readFileSync(recipe.splittingVsOffset, "utf-8") : null,
    recipe.title);
}

/** Load a recipe file, render it, and write the SVG it names. */
export function runRecipe(recipePath: string): string {
  const recipe = loadRecipe(recipePath);
  const svg = renderRecipe(recipe);
  writeFileSync(recipe.output, svg);
  return recipe.output;
}

// ---------------------------------------------------------------------------
// CLI
// ---------------------------------------------------------------------------

function main(): void {
  const args = process.argv.slice(2);
  if (args[0] === "plot") args.shift();
  if (args.length !== 1) {
    console.error("usage: dephasim-plot <recipe.json>");
    process.exit(2);
  }
  const out = runRecipe(args[0]!);
  console.log(`SVG -> ${out}`);
}

const invokedDirectly = process.argv[1] !== undefined
  && import.meta.url === new URL(`file://${path.resolve(process.argv[1])}`)
    .href;
if (invokedDirectly) {
  try {
    main();
  } catch (err) {
    console.error("Fatal:", (err as Error).message ?? err);
    process.exit(1);
  }
}
