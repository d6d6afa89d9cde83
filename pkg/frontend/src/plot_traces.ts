/**
 * Overlaid coherence signals from series CSVs.
 *
 * Each file contributes Re(rho_eg) vs time plus its magnitude envelope
 * (dashed, mirrored). All traces share the first file's time grid; a
 * trace on a different grid is linearly resampled with a warning.
 */

import { numberColumn, parseCsv } from "./csv.js";
import { axes, esc, linearScale, padRange, polyline, svgOpen } from "./svg.js";

const PALETTE = ["#4361ee", "#e63946", "#2d6a4f", "#9d4edd", "#f77f00",
                 "#118ab2"];

export interface NamedCsv {
  name: string;
  text: string;
}

interface Trace {
  name: string;
  re: number[];
  envelope: number[];
}

function interpolate(xNew: number[], x: number[], y: number[]): number[] {
  return xNew.map((t) => {
    if (t <= x[0]!) return y[0]!;
    if (t >= x[x.length - 1]!) return y[y.length - 1]!;
    let k = 1;
    while (x[k]! < t) k++;
    const u = (t - x[k - 1]!) / (x[k]! - x[k - 1]!);
    return y[k - 1]! + u * (y[k]! - y[k - 1]!);
  });
}

export function renderTraces(inputs: NamedCsv[], title?: string,
                             warn: (msg: string) => void
                             = (m) => console.warn(m)): string {
  if (inputs.length === 0) {
    throw new Error("no trace CSVs given");
  }
  let grid: number[] | null = null;
  const traces: Trace[] = [];
  for (const input of inputs) {
    const table = parseCsv(input.text);
    const t = numberColumn(table, "time_ns");
    let re = numberColumn(table, "re");
    let im = numberColumn(table, "im");
    if (t.length === 0) {
      throw new Error(`${input.name}: no data rows`);
    }
    if (grid === null) {
      grid = t;
    } else if (t.length !== grid.length
               || t.some((v, i) => v !== grid![i])) {
      warn(`${input.name}: time grid differs from ${inputs[0]!.name}; `
        + `resampling onto the first grid`);
      re = interpolate(grid, t, re);
      im = interpolate(grid, t, im);
    }
    traces.push({
      name: input.name,
      re,
      envelope: re.map((v, i) => Math.hypot(v, im[i]!)),
    });
  }
  const times = grid!.map((v) => v * 1e-3);

  const W = 700;
  const H = 300;
  const ml = 58;
  const mr = 16;
  const mt = 30;
  const mb = 46;
  const pw = W - ml - mr;
  const ph = H - mt - mb;

  const xOf = linearScale(times[0]!, times[times.length - 1]!, ml, ml + pw);
  const all = traces.flatMap((tr) => [...tr.envelope.map((v) => -v),
                                      ...tr.envelope]);
  const [yMin, yMax] = padRange(all);
  const yOf = linearScale(yMin, yMax, mt + ph, mt);

  let s = svgOpen(W, H);
  if (title) {
    s += `<text x="${ml}" y="${mt - 12}" font-size="10" font-weight="600" `
      + `fill="#222">${esc(title)}</text>\n`;
  }
  s += axes({ x0: ml, y0: mt, w: pw, h: ph, xScale: xOf, yScale: yOf,
              xLabel: "time (us)", yLabel: "Re rho_eg" });

  const zero = yOf(0);
  s += `<line x1="${ml}" y1="${zero.toFixed(1)}" x2="${ml + pw}" `
    + `y2="${zero.toFixed(1)}" stroke="#bbb" stroke-width="0.5"/>\n`;

  traces.forEach((tr, k) => {
    const color = PALETTE[k % PALETTE.length]!;
    const pts = (ys: number[]) =>
      times.map((t, i) => [xOf(t), yOf(ys[i]!)] as [number, number]);
    s += polyline(pts(tr.envelope), color, 0.8, "4,3", 0.65);
    s += polyline(pts(tr.envelope.map((v) => -v)), color, 0.8, "4,3", 0.65);
    s += polyline(pts(tr.re), color, 1.2);
  });

  // Legend
  const ly = mt + 8;
  traces.forEach((tr, k) => {
    const color = PALETTE[k % PALETTE.length]!;
    const y = ly + k * 10;
    s += `<line x1="${ml + pw - 150}" y1="${y}" x2="${ml + pw - 136}" `
      + `y2="${y}" stroke="${color}" stroke-width="1.2"/>\n`;
    s += `<text x="${ml + pw - 132}" y="${y + 2.5}" font-size="6.5" `
      + `fill="#444">${esc(tr.name)}</text>\n`;
  });

  s += `</svg>\n`;
  return s;
}
