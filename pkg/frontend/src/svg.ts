/**
 * Deterministic SVG building blocks shared by the figure renderers.
 *
 * Everything here is a pure function of its inputs (fixed precision, no
 * clock, no randomness), so byte-identical inputs render byte-identical
 * SVG and therefore pixel-identical images.
 */

// ---------------------------------------------------------------------------
// Text and numbers
// ---------------------------------------------------------------------------

export function esc(s: string): string {
  return s.replace(/&/g, "&amp;").replace(/</g, "&lt;").replace(/>/g, "&gt;");
}

/** Compact tick label: plain in mid range, exponential outside. */
export function fmtNum(v: number): string {
  if (v === 0) return "0";
  const a = Math.abs(v);
  if (a >= 1e-3 && a < 1e4) {
    const s = v.toPrecision(4);
    return s.includes(".") ? s.replace(/\.?0+$/, "") : s;
  }
  return v.toExponential(2).replace(/\.?0+e/, "e");
}

export function niceTicks(min: number, max: number, count: number): number[] {
  const range = max - min || 1;
  const rough = range / count;
  const mag = Math.pow(10, Math.floor(Math.log10(rough)));
  const nice = [1, 2, 5, 10].map((m) => m * mag);
  const step = nice.find((n) => n >= rough) ?? rough;
  const start = Math.ceil(min / step) * step;
  const ticks: number[] = [];
  for (let v = start; v <= max + step * 0.01; v += step) ticks.push(v);
  return ticks;
}

// ---------------------------------------------------------------------------
// Linear scales
// ---------------------------------------------------------------------------

export interface Scale {
  (v: number): number;
  min: number;
  max: number;
}

export function linearScale(min: number, max: number, lo: number,
                            hi: number): Scale {
  const span = max - min || 1;
  const f = ((v: number) => lo + ((v - min) / span) * (hi - lo)) as Scale;
  f.min = min;
  f.max = max;
  return f;
}

export function padRange(values: number[], frac = 0.06): [number, number] {
  const finite = values.filter((v) => Number.isFinite(v));
  if (finite.length === 0) {
    throw new Error("no finite values to scale");
  }
  const min = Math.min(...finite);
  const max = Math.max(...finite);
  const pad = (max - min || Math.abs(max) || 1) * frac;
  return [min - pad, max + pad];
}

// ---------------------------------------------------------------------------
// Shapes
// ---------------------------------------------------------------------------

export function polyline(points: Array<[number, number]>, color: string,
                         width: number, dash?: string,
                         opacity?: number): string {
  const pts = points.map(([x, y]) => `${x.toFixed(1)},${y.toFixed(1)}`)
    .join(" ");
  const dashAttr = dash ? ` stroke-dasharray="${dash}"` : "";
  const opAttr = opacity !== undefined ? ` opacity="${opacity}"` : "";
  return `<polyline fill="none" stroke="${color}" stroke-width="${width}"`
    + `${dashAttr}${opAttr} points="${pts}"/>\n`;
}

/** Four-pointed star marker (rate minimum). */
export function starMarker(x: number, y: number, r: number,
                           color: string): string {
  const p: string[] = [];
  for (let k = 0; k < 8; k++) {
    const ang = (Math.PI / 4) * k - Math.PI / 2;
    const rad = k % 2 === 0 ? r : r * 0.42;
    p.push(`${(x + rad * Math.cos(ang)).toFixed(1)},`
      + `${(y + rad * Math.sin(ang)).toFixed(1)}`);
  }
  return `<polygon fill="${color}" stroke="#fff" stroke-width="0.6" `
    + `points="${p.join(" ")}"/>\n`;
}

/** Diamond marker (frequency minimum / sweet spot). */
export function diamondMarker(x: number, y: number, r: number,
                              color: string): string {
  const p = [
    `${x.toFixed(1)},${(y - r).toFixed(1)}`,
    `${(x + r).toFixed(1)},${y.toFixed(1)}`,
    `${x.toFixed(1)},${(y + r).toFixed(1)}`,
    `${(x - r).toFixed(1)},${y.toFixed(1)}`,
  ];
  return `<polygon fill="${color}" stroke="#fff" stroke-width="0.6" `
    + `points="${p.join(" ")}"/>\n`;
}

// ---------------------------------------------------------------------------
// Axes
// ---------------------------------------------------------------------------

export interface AxesOpts {
  x0: number;
  y0: number;
  w: number;
  h: number;
  xScale: Scale;
  yScale: Scale;
  xLabel: string;
  yLabel: string;
  yColor?: string;
  grid?: boolean;
  fontSize?: number;
}

/** Frame, ticks, and labels for a left-axis panel. */
export function axes(o: AxesOpts): string {
  const fs = o.fontSize ?? 6.5;
  const yc = o.yColor ?? "#333";
  let s = "";
  const yTicks = niceTicks(o.yScale.min, o.yScale.max, 5);
  if (o.grid !== false) {
    for (const v of yTicks) {
      const y = o.yScale(v);
      s += `<line x1="${o.x0}" y1="${y.toFixed(1)}" x2="${o.x0 + o.w}" `
        + `y2="${y.toFixed(1)}" stroke="#eee" stroke-width="0.5"/>\n`;
    }
  }
  s += `<line x1="${o.x0}" y1="${o.y0}" x2="${o.x0}" `
    + `y2="${o.y0 + o.h}" stroke="#333" stroke-width="0.7"/>\n`;
  s += `<line x1="${o.x0}" y1="${o.y0 + o.h}" x2="${o.x0 + o.w}" `
    + `y2="${o.y0 + o.h}" stroke="#333" stroke-width="0.7"/>\n`;
  for (const v of niceTicks(o.xScale.min, o.xScale.max, 6)) {
    const x = o.xScale(v);
    if (x < o.x0 - 0.5 || x > o.x0 + o.w + 0.5) continue;
    s += `<line x1="${x.toFixed(1)}" y1="${o.y0 + o.h}" `
      + `x2="${x.toFixed(1)}" y2="${o.y0 + o.h + 3}" stroke="#333" `
      + `stroke-width="0.5"/>\n`;
    s += `<text x="${x.toFixed(1)}" y="${o.y0 + o.h + 11}" `
      + `text-anchor="middle" font-size="${fs}" fill="#666">`
      + `${esc(fmtNum(v))}</text>\n`;
  }
  for (const v of yTicks) {
    const y = o.yScale(v);
    s += `<line x1="${o.x0 - 3}" y1="${y.toFixed(1)}" x2="${o.x0}" `
      + `y2="${y.toFixed(1)}" stroke="#333" stroke-width="0.5"/>\n`;
    s += `<text x="${o.x0 - 5}" y="${(y + 2.5).toFixed(1)}" `
      + `text-anchor="end" font-size="${fs}" fill="${yc}">`
      + `${esc(fmtNum(v))}</text>\n`;
  }
  s += `<text x="${o.x0 + o.w / 2}" y="${o.y0 + o.h + 22}" `
    + `text-anchor="middle" font-size="${fs + 1.5}" fill="#444">`
    + `${esc(o.xLabel)}</text>\n`;
  const ly = o.y0 + o.h / 2;
  s += `<text x="${o.x0 - 40}" y="${ly}" text-anchor="middle" `
    + `font-size="${fs + 1.5}" fill="${yc}" `
    + `transform="rotate(-90,${o.x0 - 40},${ly})">${esc(o.yLabel)}</text>\n`;
  return s;
}

/** Ticks and label for a right-hand second axis. */
export function rightAxis(x: number, y0: number, h: number, yScale: Scale,
                          label: string, color: string): string {
  let s = `<line x1="${x}" y1="${y0}" x2="${x}" y2="${y0 + h}" `
    + `stroke="#333" stroke-width="0.7"/>\n`;
  for (const v of niceTicks(yScale.min, yScale.max, 5)) {
    const y = yScale(v);
    s += `<line x1="${x}" y1="${y.toFixed(1)}" x2="${x + 3}" `
      + `y2="${y.toFixed(1)}" stroke="#333" stroke-width="0.5"/>\n`;
    s += `<text x="${x + 5}" y="${(y + 2.5).toFixed(1)}" `
      + `text-anchor="start" font-size="6.5" fill="${color}">`
      + `${esc(fmtNum(v))}</text>\n`;
  }
  const ly = y0 + h / 2;
  s += `<text x="${x + 40}" y="${ly}" text-anchor="middle" font-size="8" `
    + `fill="${color}" transform="rotate(90,${x + 40},${ly})">`
    + `${esc(label)}</text>\n`;
  return s;
}

// ---------------------------------------------------------------------------
// Color map (dark-at-low five-stop ramp)
// ---------------------------------------------------------------------------

const STOPS: Array<[number, [number, number, number]]> = [
  [0.0, [68, 1, 84]],
  [0.25, [59, 82, 139]],
  [0.5, [33, 145, 140]],
  [0.75, [94, 201, 98]],
  [1.0, [253, 231, 37]],
];

/** Map t in [0, 1] to a hex color along the ramp. */
export function rampColor(t: number): string {
  const x = Math.min(1, Math.max(0, t));
  for (let k = 0; k < STOPS.length - 1; k++) {
    const [t0, c0] = STOPS[k]!;
    const [t1, c1] = STOPS[k + 1]!;
    if (x <= t1) {
      const u = (x - t0) / (t1 - t0);
      const rgb = c0.map((a, j) => Math.round(a + u * (c1[j]! - a)));
      return "#" + rgb.map((v) => v.toString(16).padStart(2, "0")).join("");
    }
  }
  return "#fde725";
}

export function svgOpen(w: number, h: number): string {
  return `<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 ${w} ${h}" `
    + `font-family="Helvetica, Arial, sans-serif">\n`
    + `<rect width="${w}" height="${h}" fill="#fff"/>\n`;
}
