/**
 * Figure recipes: which artifacts to read, how to label the panels,
 * where to write the image. Recipes never carry physics, only plumbing.
 */

import { readFileSync } from "fs";
import path from "path";

// ---------------------------------------------------------------------------
// Types
// ---------------------------------------------------------------------------

export interface SweepRecipe {
  kind: "sweep";
  /** Sweep CSV path (rate/frequency vs control offset). */
  sweep: string;
  title?: string;
  output: string;
}

export interface TracesRecipe {
  kind: "traces";
  /** Coherence series CSV paths, overlaid on the first file's grid. */
  traces: string[];
  labels?: string[];
  title?: string;
  output: string;
}

export interface FloquetRecipe {
  kind: "floquet";
  /** Derivative-scan heat map CSV. */
  scan: string;
  /** Search report JSON (marker + annotations); optional. */
  sweetSpot?: string;
  /** Quasi-energy vs drive amplitude CSV; optional side panel. */
  quasiVsAmplitude?: string;
  /** Quasi-energy vs offset CSV; optional side panel. */
  splittingVsOffset?: string;
  title?: string;
  output: string;
}

export type FigureRecipe = SweepRecipe | TracesRecipe | FloquetRecipe;

// ---------------------------------------------------------------------------
// Loading
// ---------------------------------------------------------------------------

function fail(msg: string): never {
  throw new Error(`recipe: ${msg}`);
}

function asString(obj: Record<string, unknown>, key: string): string {
  const v = obj[key];
  if (typeof v !== "string" || v === "") {
    fail(`'${key}' must be a non-empty string`);
  }
  return v;
}

function optString(obj: Record<string, unknown>,
                   key: string): string | undefined {
  if (!(key in obj)) return undefined;
  return asString(obj, key);
}

/** Parse and validate a recipe; paths resolve against the recipe file. */
export function loadRecipe(recipePath: string): FigureRecipe {
  let raw: unknown;
  try {
    raw = JSON.parse(readFileSync(recipePath, "utf-8"));
  } catch (err) {
    fail(`cannot read ${recipePath}: ${(err as Error).message}`);
  }
  if (typeof raw !== "object" || raw === null || Array.isArray(raw)) {
    fail("top level must be an object");
  }
  const obj = raw as Record<string, unknown>;
  const dir = path.dirname(path.resolve(recipePath));
  const resolve = (p: string) => path.resolve(dir, p);
  const kind = asString(obj, "kind");
  const output = resolve(asString(obj, "output"));
  const title = optString(obj, "title");

  if (kind === "sweep") {
    return { kind, sweep: resolve(asString(obj, "sweep")), title, output };
  }
  if (kind === "traces") {
    const t = obj["traces"];
    if (!Array.isArray(t) || t.length === 0
        || !t.every((x) => typeof x === "string")) {
      fail("'traces' must be a non-empty array of paths");
    }
    let labels: string[] | undefined;
    if ("labels" in obj) {
      const l = obj["labels"];
      if (!Array.isArray(l) || !l.every((x) => typeof x === "string")
          || l.length !== t.length) {
        fail("'labels' must match 'traces' in length");
      }
      labels = l as string[];
    }
    return { kind, traces: (t as string[]).map(resolve), labels, title,
             output };
  }
  if (kind === "floquet") {
    return {
      kind,
      scan: resolve(asString(obj, "scan")),
      sweetSpot: optString(obj, "sweet_spot") !== undefined
        ? resolve(asString(obj, "sweet_spot")) : undefined,
      quasiVsAmplitude: optString(obj, "quasi_vs_amplitude") !== undefined
        ? resolve(asString(obj, "quasi_vs_amplitude")) : undefined,
      splittingVsOffset: optString(obj, "splitting_vs_offset") !== undefined
        ? resolve(asString(obj, "splitting_vs_offset")) : undefined,
      title,
      output,
    };
  }
  fail(`unknown kind '${kind}' (expected sweep, traces, or floquet)`);
}
