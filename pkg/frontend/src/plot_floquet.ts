/**
 * Drive-landscape figure: derivative-product heat map with the two
 * vanishing-derivative curves, the found operating point, and optional
 * quasi-energy side panels (vs amplitude and vs offset).
 */

import {
  columnIndices, numberColumn, numberColumnAllowNaN, parseCsv,
} from "./csv.js";
import {
  axes, diamondMarker, esc, fmtNum, linearScale, padRange, polyline,
  rampColor, svgOpen,
} from "./svg.js";

const COL_CURVE_D2 = "#ffffff";
const COL_CURVE_DA = "#ffd166";
const COL_POINT = "#e63946";
const COL_PANEL = "#4361ee";

export interface SweetSpotReport {
  found: boolean;
  amplitude_rad?: number;
  omega_d_rad_per_ns?: number;
  splitting_rad_per_ns?: number;
  message?: string;
}

interface SidePanel {
  xs: number[];
  ys: number[];
  rawYs: string[];
  xLabel: string;
  title: string;
  anchorZero: boolean;
}

function uniqueSorted(values: number[]): number[] {
  return Array.from(new Set(values)).sort((a, b) => a - b);
}

function readPanel(csvText: string, xName: string, xLabel: string,
                   title: string, anchorZero: boolean): SidePanel {
  const table = parseCsv(csvText);
  const [, yIdx] = columnIndices(table, [xName, "splitting_rad_per_ns"]);
  const xs = numberColumn(table, xName);
  const ys = numberColumn(table, "splitting_rad_per_ns");
  const rawYs = table.records.map((r) => r[yIdx!]!);
  if (xs.length === 0) {
    throw new Error(`${title}: no data rows`);
  }
  return { xs, ys, rawYs, xLabel, title, anchorZero };
}

function drawPanel(p: SidePanel, x0: number, y0: number, w: number,
                   h: number): string {
  const xOf = linearScale(p.xs[0]!, p.xs[p.xs.length - 1]!, x0, x0 + w);
  const [yMin, yMax] = padRange(p.ys, 0.1);
  const yOf = linearScale(yMin, yMax, y0 + h, y0);
  let s = `<text x="${x0}" y="${y0 - 4}" font-size="7" font-weight="600" `
    + `fill="#222">${esc(p.title)}</text>\n`;
  s += axes({ x0, y0, w, h, xScale: xOf, yScale: yOf, xLabel: p.xLabel,
              yLabel: "", fontSize: 5.5 });
  s += polyline(p.xs.map((x, i) =>
    [xOf(x), yOf(p.ys[i]!)] as [number, number]), COL_PANEL, 1.1);
  for (let i = 0; i < p.xs.length; i++) {
    s += `<circle cx="${xOf(p.xs[i]!).toFixed(1)}" `
      + `cy="${yOf(p.ys[i]!).toFixed(1)}" r="1.4" fill="${COL_PANEL}"/>\n`;
  }
  if (p.anchorZero) {
    const i0 = p.xs.findIndex((v) => v === 0);
    if (i0 >= 0) {
      const x = xOf(p.xs[i0]!);
      const y = yOf(p.ys[i0]!);
      s += `<g id="a0-anchor" data-splitting="${esc(p.rawYs[i0]!)}">`
        + `<circle cx="${x.toFixed(1)}" cy="${y.toFixed(1)}" r="2.6" `
        + `fill="none" stroke="#e63946" stroke-width="0.8"/>`
        + `<text x="${(x + 4).toFixed(1)}" y="${(y - 3).toFixed(1)}" `
        + `font-size="5.5" fill="#e63946">undriven `
        + `${esc(fmtNum(p.ys[i0]!))}</text></g>\n`;
    }
  }
  return s;
}

export function renderFloquet(scanText: string,
                              sweetSpotJson: string | null,
                              quasiVsAmpText: string | null,
                              splitVsOffsetText: string | null,
                              title?: string): string {
  const table = parseCsv(scanText);
  columnIndices(table, ["a_rad", "omega_d_rad_per_ns", "abs_d2",
                        "abs_de_da", "product"]);
  if (table.records.length === 0) {
    throw new Error("scan CSV has no data rows");
  }
  const aCol = numberColumn(table, "a_rad");
  const wCol = numberColumn(table, "omega_d_rad_per_ns");
  const d2Col = numberColumnAllowNaN(table, "abs_d2");
  const daCol = numberColumnAllowNaN(table, "abs_de_da");
  const prodCol = numberColumnAllowNaN(table, "product");

  const aVals = uniqueSorted(aCol);
  const wVals = uniqueSorted(wCol);
  const cell = new Map<string, number>();
  const d2 = new Map<string, number>();
  const da = new Map<string, number>();
  for (let i = 0; i < aCol.length; i++) {
    const key = `${aCol[i]}|${wCol[i]}`;
    cell.set(key, prodCol[i]!);
    d2.set(key, d2Col[i]!);
    da.set(key, daCol[i]!);
  }

  const logs = prodCol.filter((v) => Number.isFinite(v) && v > 0)
    .map((v) => Math.log10(v));
  if (logs.length === 0) {
    throw new Error("scan CSV has no finite positive product cells");
  }
  const lMin = Math.min(...logs);
  const lMax = Math.max(...logs);

  const hasPanels = quasiVsAmpText !== null || splitVsOffsetText !== null;
  const W = hasPanels ? 780 : 560;
  const H = 320;
  const ml = 66;
  const mt = 34;
  const hw = 380;
  const hh = 230;

  const aStep = aVals.length > 1 ? aVals[1]! - aVals[0]! : 1;
  const wStep = wVals.length > 1 ? wVals[1]! - wVals[0]! : 1;
  const xOf = linearScale(wVals[0]! - wStep / 2,
                          wVals[wVals.length - 1]! + wStep / 2, ml, ml + hw);
  const yOf = linearScale(aVals[0]! - aStep / 2,
                          aVals[aVals.length - 1]! + aStep / 2,
                          mt + hh, mt);

  let s = svgOpen(W, H);
  if (title) {
    s += `<text x="${ml}" y="${mt - 16}" font-size="10" font-weight="600" `
      + `fill="#222">${esc(title)}</text>\n`;
  }

  for (const a of aVals) {
    for (const w of wVals) {
      const v = cell.get(`${a}|${w}`);
      const color = v !== undefined && Number.isFinite(v) && v > 0
        ? rampColor((Math.log10(v) - lMin) / (lMax - lMin || 1))
        : "#cccccc";
      const x = xOf(w - wStep / 2);
      const y = yOf(a + aStep / 2);
      const cw = xOf(w + wStep / 2) - x;
      const ch = yOf(a - aStep / 2) - y;
      s += `<rect x="${x.toFixed(2)}" y="${y.toFixed(2)}" `
        + `width="${cw.toFixed(2)}" height="${ch.toFixed(2)}" `
        + `fill="${color}"/>\n`;
    }
  }

  // The two vanishing-derivative curves: per drive frequency, the
  // amplitude minimizing |D2| and the one minimizing |dE/dA|.
  const argminCurve = (grid: Map<string, number>) => {
    const pts: Array<[number, number]> = [];
    for (const w of wVals) {
      let best = Infinity;
      let bestA: number | null = null;
      for (const a of aVals) {
        const v = grid.get(`${a}|${w}`);
        if (v !== undefined && Number.isFinite(v) && v < best) {
          best = v;
          bestA = a;
        }
      }
      if (bestA !== null) pts.push([xOf(w), yOf(bestA)]);
    }
    return pts;
  };
  s += `<g id="curve-d2">`
    + polyline(argminCurve(d2), COL_CURVE_D2, 1.2) + `</g>\n`;
  s += `<g id="curve-de-da">`
    + polyline(argminCurve(da), COL_CURVE_DA, 1.2, "4,3") + `</g>\n`;

  // Axes on top of the cells.
  s += axes({ x0: ml, y0: mt, w: hw, h: hh, xScale: xOf, yScale: yOf,
              xLabel: "omega_d (rad/ns)", yLabel: "A (rad/ns)",
              grid: false });

  // Color bar.
  const cbX = ml + hw + 14;
  for (let k = 0; k < 40; k++) {
    const y = mt + hh - ((k + 1) / 40) * hh;
    s += `<rect x="${cbX}" y="${y.toFixed(2)}" width="10" `
      + `height="${(hh / 40).toFixed(2)}" fill="${rampColor(k / 39)}"/>\n`;
  }
  s += `<text x="${cbX + 14}" y="${mt + hh}" font-size="5.5" fill="#444">`
    + `${esc(fmtNum(Math.pow(10, lMin)))}</text>\n`;
  s += `<text x="${cbX + 14}" y="${mt + 6}" font-size="5.5" fill="#444">`
    + `${esc(fmtNum(Math.pow(10, lMax)))}</text>\n`;
  s += `<text x="${cbX + 5}" y="${mt - 6}" font-size="5.5" fill="#444" `
    + `text-anchor="middle">|D2|*|dE/dA|</text>\n`;

  // Found operating point.
  if (sweetSpotJson !== null) {
    const report = JSON.parse(sweetSpotJson) as SweetSpotReport;
    if (report.found && report.amplitude_rad !== undefined
        && report.omega_d_rad_per_ns !== undefined) {
      const x = xOf(report.omega_d_rad_per_ns);
      const y = yOf(report.amplitude_rad);
      s += `<g id="sweet-spot">`
        + diamondMarker(x, y, 5.5, COL_POINT) + `</g>\n`;
      s += `<text x="${ml}" y="${mt + hh + 34}" font-size="6.5" `
        + `fill="#444">protected point: A = `
        + `${esc(fmtNum(report.amplitude_rad))} rad/ns, omega_d = `
        + `${esc(fmtNum(report.omega_d_rad_per_ns))} rad/ns`
        + (report.splitting_rad_per_ns !== undefined
          ? `, splitting = ${esc(fmtNum(report.splitting_rad_per_ns))}`
            + ` rad/ns` : "")
        + `</text>\n`;
    } else {
      s += `<text x="${ml}" y="${mt + hh + 34}" font-size="6.5" `
        + `fill="#a33">no protected point in this window`
        + (report.message ? `: ${esc(report.message)}` : "") + `</text>\n`;
    }
  }

  // Legend for the curves.
  const lx = ml + 6;
  s += `<line x1="${lx}" y1="${mt + 8}" x2="${lx + 14}" y2="${mt + 8}" `
    + `stroke="${COL_CURVE_D2}" stroke-width="1.2"/>\n`;
  s += `<text x="${lx + 18}" y="${mt + 10.5}" font-size="6" fill="#fff">`
    + `min |D2|</text>\n`;
  s += `<line x1="${lx}" y1="${mt + 18}" x2="${lx + 14}" y2="${mt + 18}" `
    + `stroke="${COL_CURVE_DA}" stroke-width="1.2" `
    + `stroke-dasharray="4,3"/>\n`;
  s += `<text x="${lx + 18}" y="${mt + 20.5}" font-size="6" fill="#fff">`
    + `min |dE/dA|</text>\n`;

  // Side panels.
  if (hasPanels) {
    const px = ml + hw + 70;
    const pwndw = W - px - 20;
    if (quasiVsAmpText !== null) {
      s += drawPanel(readPanel(quasiVsAmpText, "a_rad", "A (rad/ns)",
                               "quasi-energy splitting vs amplitude", true),
                     px, mt + 8, pwndw, 92);
    }
    if (splitVsOffsetText !== null) {
      s += drawPanel(readPanel(splitVsOffsetText, "lambda_rad",
                               "lambda (rad)",
                               "quasi-energy splitting vs offset", false),
                     px, mt + 146, pwndw, 92);
    }
  }

  s += `</svg>\n`;
  return s;
}
