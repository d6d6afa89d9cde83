import { describe, expect, it } from "vitest";

import { columnIndices, numberColumn, parseCsv } from "../src/csv";

describe("parseCsv", () => {
  it("parses CRLF rows with quoted fields and escaped quotes", () => {
    const text = 'a,b,c\r\n1,"x,y",3\r\n4,"he said ""hi""",6\r\n';
    const t = parseCsv(text);
    expect(t.header).toEqual(["a", "b", "c"]);
    expect(t.records).toEqual([
      ["1", "x,y", "3"],
      ["4", 'he said "hi"', "6"],
    ]);
  });

  it("accepts LF line endings and no trailing newline", () => {
    const t = parseCsv("a,b\n1,2\n3,4");
    expect(t.records).toEqual([["1", "2"], ["3", "4"]]);
  });

  it("keeps a header-only file as zero records", () => {
    const t = parseCsv("time_ns,re,im\r\n");
    expect(t.header).toEqual(["time_ns", "re", "im"]);
    expect(t.records).toEqual([]);
  });

  it("rejects empty input", () => {
    expect(() => parseCsv("")).toThrow(/empty CSV/);
    expect(() => parseCsv("   \n")).toThrow(/empty CSV/);
  });

  it("rejects ragged rows with the row number", () => {
    expect(() => parseCsv("a,b\r\n1,2\r\n3\r\n")).toThrow(/row 3/);
  });

  it("rejects an unterminated quote", () => {
    expect(() => parseCsv('a\r\n"oops\r\n')).toThrow(/unterminated/);
  });
});

describe("column access", () => {
  const table = parseCsv("x,y\r\n1.5,2\r\n-3e-4,junk\r\n");

  it("lists every missing column by name", () => {
    expect(() => columnIndices(table, ["x", "zz", "ww"]))
      .toThrow(/missing columns: zz, ww/);
  });

  it("parses numeric columns", () => {
    expect(numberColumn(table, "x")).toEqual([1.5, -3e-4]);
  });

  it("names the offending cell on non-numeric data", () => {
    expect(() => numberColumn(table, "y"))
      .toThrow(/row 3, column y: not a number: junk/);
  });
});
