/**
 * Dual-axis rate/frequency panel from a sweep CSV.
 *
 * Left axis: fitted dephasing rate vs control offset, with the analytic
 * prediction dashed. Right axis: fitted oscillation frequency with its
 * prediction. The rate and frequency minima of the measured columns get
 * star and diamond markers; echo sweeps also show the saturation level.
 */

import { columnIndices, numberColumn, parseCsv } from "./csv.js";
import {
  axes, diamondMarker, esc, fmtNum, linearScale, padRange, polyline,
  rightAxis, starMarker, svgOpen,
} from "./svg.js";

const COL_RATE = "#4361ee";
const COL_FREQ = "#e63946";
const COL_SAT = "#2d6a4f";

export function renderSweep(csvText: string, title?: string): string {
  const table = parseCsv(csvText);
  columnIndices(table, ["lambda_over_2pi_kHz", "gamma2_per_ns",
                        "omega_fit_rad_per_ns"]);
  if (table.records.length === 0) {
    throw new Error("sweep CSV has no data rows");
  }
  const lam = numberColumn(table, "lambda_over_2pi_kHz");
  const rate = numberColumn(table, "gamma2_per_ns");
  const freq = numberColumn(table, "omega_fit_rad_per_ns");
  const hasPred = table.header.includes("gamma2_pred_per_ns")
    && table.header.includes("omega_pred_rad_per_ns");
  const ratePred = hasPred ? numberColumn(table, "gamma2_pred_per_ns") : [];
  const freqPred = hasPred ? numberColumn(table, "omega_pred_rad_per_ns")
    : [];
  const hasSat = table.header.includes("saturation_rate_per_ns");
  const sat = hasSat ? numberColumn(table, "saturation_rate_per_ns")[0]! : 0;

  const W = 700;
  const H = 300;
  const ml = 64;
  const mr = 64;
  const mt = 30;
  const mb = 46;
  const pw = W - ml - mr;
  const ph = H - mt - mb;

  const [xMin, xMax] = padRange(lam, 0.04);
  const xOf = linearScale(xMin, xMax, ml, ml + pw);
  const rateVals = hasSat ? [...rate, ...ratePred, sat]
    : [...rate, ...ratePred];
  const [rMin, rMax] = padRange(rateVals);
  const yOf = linearScale(rMin, rMax, mt + ph, mt);
  const [fMin, fMax] = padRange([...freq, ...freqPred]);
  const y2Of = linearScale(fMin, fMax, mt + ph, mt);

  let s = svgOpen(W, H);
  if (title) {
    s += `<text x="${ml}" y="${mt - 12}" font-size="10" font-weight="600" `
      + `fill="#222">${esc(title)}</text>\n`;
  }
  s += axes({ x0: ml, y0: mt, w: pw, h: ph, xScale: xOf, yScale: yOf,
              xLabel: "lambda / 2pi (kHz)", yLabel: "gamma2 (1/ns)",
              yColor: COL_RATE });
  s += rightAxis(ml + pw, mt, ph, y2Of, "omega_fit (rad/ns)", COL_FREQ);

  if (hasSat) {
    const y = yOf(sat);
    s += `<line x1="${ml}" y1="${y.toFixed(1)}" x2="${ml + pw}" `
      + `y2="${y.toFixed(1)}" stroke="${COL_SAT}" stroke-width="1" `
      + `stroke-dasharray="6,3"/>\n`;
    s += `<text x="${ml + 4}" y="${(y - 3).toFixed(1)}" font-size="6.5" `
      + `fill="${COL_SAT}">saturation ${esc(fmtNum(sat))} 1/ns</text>\n`;
  }

  const pts = (xs: number[], ys: number[], sc: (v: number) => number) =>
    xs.map((x, i) => [xOf(x), sc(ys[i]!)] as [number, number]);
  if (hasPred) {
    s += polyline(pts(lam, ratePred, yOf), COL_RATE, 1, "5,3", 0.8);
    s += polyline(pts(lam, freqPred, y2Of), COL_FREQ, 1, "5,3", 0.8);
  }
  s += polyline(pts(lam, rate, yOf), COL_RATE, 1.3);
  s += polyline(pts(lam, freq, y2Of), COL_FREQ, 1.3);
  for (let i = 0; i < lam.length; i++) {
    s += `<circle cx="${xOf(lam[i]!).toFixed(1)}" `
      + `cy="${yOf(rate[i]!).toFixed(1)}" r="1.6" fill="${COL_RATE}"/>\n`;
    s += `<rect x="${(xOf(lam[i]!) - 1.5).toFixed(1)}" `
      + `y="${(y2Of(freq[i]!) - 1.5).toFixed(1)}" width="3" height="3" `
      + `fill="${COL_FREQ}"/>\n`;
  }

  // Annotated minima of the measured columns.
  const iRate = rate.indexOf(Math.min(...rate));
  const iFreq = freq.indexOf(Math.min(...freq));
  s += `<g id="rate-min">`
    + starMarker(xOf(lam[iRate]!), yOf(rate[iRate]!), 6, COL_RATE)
    + `</g>\n`;
  s += `<g id="freq-min">`
    + diamondMarker(xOf(lam[iFreq]!), y2Of(freq[iFreq]!), 5, COL_FREQ)
    + `</g>\n`;
  s += `<text x="${ml + 4}" y="${mt + 10}" font-size="6.5" fill="#444">`
    + `rate min at ${esc(fmtNum(lam[iRate]!))} kHz, `
    + `freq min at ${esc(fmtNum(lam[iFreq]!))} kHz`
    + (hasPred ? " (dashed: analytic prediction)" : "") + `</text>\n`;
  s += `</svg>\n`;
  return s;
}
