/**
 * RFC-4180 CSV reader for simulation artifacts.
 *
 * The artifact CSVs use CRLF line endings, a header row, '.' decimals,
 * and no embedded physics: this module only parses and column-checks.
 */

// ---------------------------------------------------------------------------
// Types
// ---------------------------------------------------------------------------

export interface Table {
  header: string[];
  records: string[][];
}

// ---------------------------------------------------------------------------
// Parsing
// ---------------------------------------------------------------------------

/** Parse RFC-4180 text (CRLF or LF, quoted fields, "" escapes). */
export function parseCsv(text: string): Table {
  if (text.trim() === "") {
    throw new Error("empty CSV: no header row");
  }
  const rows: string[][] = [];
  let field = "";
  let row: string[] = [];
  let inQuotes = false;
  let i = 0;
  const push = () => {
    row.push(field);
    field = "";
  };
  const endRow = () => {
    push();
    rows.push(row);
    row = [];
  };
  while (i < text.length) {
    const c = text[i];
    if (inQuotes) {
      if (c === '"') {
        if (text[i + 1] === '"') {
          field += '"';
          i += 2;
          continue;
        }
        inQuotes = false;
        i++;
        continue;
      }
      field += c;
      i++;
      continue;
    }
    if (c === '"') {
      inQuotes = true;
      i++;
      continue;
    }
    if (c === ",") {
      push();
      i++;
      continue;
    }
    if (c === "\r" && text[i + 1] === "\n") {
      endRow();
      i += 2;
      continue;
    }
    if (c === "\n") {
      endRow();
      i++;
      continue;
    }
    field += c;
    i++;
  }
  if (inQuotes) {
    throw new Error("unterminated quoted field");
  }
  if (field !== "" || row.length > 0) {
    endRow();
  }
  // Trailing blank line from a final CRLF.
  if (rows.length > 0 && rows[rows.length - 1]!.length === 1
      && rows[rows.length - 1]![0] === "") {
    rows.pop();
  }
  if (rows.length === 0) {
    throw new Error("empty CSV: no header row");
  }
  const header = rows[0]!;
  const records = rows.slice(1);
  records.forEach((r, k) => {
    if (r.length !== header.length) {
      throw new Error(
        `row ${k + 2}: expected ${header.length} fields, got ${r.length}`);
    }
  });
  return { header, records };
}

// ---------------------------------------------------------------------------
// Column access
// ---------------------------------------------------------------------------

/** Indices of the named columns; throws listing every missing name. */
export function columnIndices(table: Table, names: string[]): number[] {
  const missing = names.filter((n) => !table.header.includes(n));
  if (missing.length > 0) {
    throw new Error(
      `missing columns: ${missing.join(", ")} `
      + `(have: ${table.header.join(", ")})`);
  }
  return names.map((n) => table.header.indexOf(n));
}

/** Numeric column by name; throws on non-numeric cells. */
export function numberColumn(table: Table, name: string): number[] {
  const [idx] = columnIndices(table, [name]);
  return table.records.map((r, k) => {
    const raw = r[idx!]!;
    const v = Number(raw);
    if (raw.trim() === "" || Number.isNaN(v)) {
      throw new Error(`row ${k + 2}, column ${name}: not a number: ${raw}`);
    }
    return v;
  });
}

/** Like numberColumn but keeps NaN cells (masked grid values). */
export function numberColumnAllowNaN(table: Table, name: string): number[] {
  const [idx] = columnIndices(table, [name]);
  return table.records.map((r) => Number(r[idx!]!));
}
