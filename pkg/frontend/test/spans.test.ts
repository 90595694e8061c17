import { describe, expect, it } from "vitest";

import {
  addSpan,
  diffSpanSets,
  overlapsAny,
  sameSpanSets,
  selectionToRange,
  spanAtToken,
} from "../src/spans.js";
import type { Span } from "../src/types.js";

describe("selection to span", () => {
  it("drag over chips 6..7 yields the half-open span {6,8}", () => {
    expect(selectionToRange({ anchor: 6, head: 7 })).toEqual({ start: 6, end: 8 });
    // Dragging backwards gives the same range.
    expect(selectionToRange({ anchor: 7, head: 6 })).toEqual({ start: 6, end: 8 });
  });

  it("single click yields a length-1 span", () => {
    expect(selectionToRange({ anchor: 3, head: 3 })).toEqual({ start: 3, end: 4 });
  });
});

describe("overlap guard", () => {
  const spans = [
    { start: 0, end: 2, objectId: 1, isTarget: true },
    { start: 5, end: 7, objectId: 2, isTarget: false },
  ];

  it("rejects overlapping additions without changing state", () => {
    const result = addSpan(spans, { anchor: 1, head: 3 }, 10);
    expect(result.ok).toBe(false);
    expect(spans).toHaveLength(2); // untouched
  });

  it("accepts adjacent spans (half-open boundaries touch)", () => {
    const result = addSpan(spans, { anchor: 2, head: 4 }, 10);
    expect(result.ok).toBe(true);
    if (result.ok) expect(result.spans).toHaveLength(3);
  });

  it("rejects out-of-bounds selections", () => {
    expect(addSpan(spans, { anchor: 9, head: 10 }, 10).ok).toBe(false);
  });

  it("overlapsAny matches interval arithmetic", () => {
    expect(overlapsAny(spans, 6, 9)).toBe(true);
    expect(overlapsAny(spans, 2, 5)).toBe(false);
  });

  it("spanAtToken finds the covering span", () => {
    expect(spanAtToken(spans, 1)).toBe(0);
    expect(spanAtToken(spans, 4)).toBeNull();
  });
});

describe("span-set agreement", () => {
  const a: Span[] = [
    { start: 0, end: 2, object_id: 3, is_target: true },
    { start: 5, end: 7, object_id: 1, is_target: false },
  ];

  it("diff is empty exactly when the records are identical", () => {
    const same = [...a].reverse();
    expect(sameSpanSets(a, same)).toBe(true);
    const diff = diffSpanSets(a, same);
    expect(diff.onlyA).toHaveLength(0);
    expect(diff.onlyB).toHaveLength(0);
    expect(diff.common).toHaveLength(2);
  });

  it("one differing object id breaks agreement", () => {
    const b = a.map((s) => ({ ...s }));
    b[1].object_id = 4;
    expect(sameSpanSets(a, b)).toBe(false);
    const diff = diffSpanSets(a, b);
    expect(diff.onlyA).toHaveLength(1);
    expect(diff.onlyB).toHaveLength(1);
    expect(diff.common).toHaveLength(1);
  });
});
