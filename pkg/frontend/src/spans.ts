/**
 * Token-chip span selection. A drag over chips i..j becomes the half-open
 * span [min, max+1); selections that touch an existing span are rejected
 * without mutating state.
 */

import type { Span } from "./types.js";

export interface DraftSpan {
  start: number;
  end: number; // exclusive
  objectId: number | null;
  isTarget: boolean;
}

export interface Selection {
  anchor: number;
  head: number;
}

export function selectionToRange(sel: Selection): { start: number; end: number } {
  return {
    start: Math.min(sel.anchor, sel.head),
    end: Math.max(sel.anchor, sel.head) + 1,
  };
}

export function overlapsAny(
  spans: readonly DraftSpan[],
  start: number,
  end: number,
): boolean {
  return spans.some((s) => start < s.end && s.start < end);
}

export type AddResult =
  | { ok: true; spans: DraftSpan[] }
  | { ok: false; reason: "overlap" | "bounds" };

export function addSpan(
  spans: readonly DraftSpan[],
  sel: Selection,
  tokenCount: number,
): AddResult {
  const { start, end } = selectionToRange(sel);
  if (start < 0 || end > tokenCount || start >= end) {
    return { ok: false, reason: "bounds" };
  }
  if (overlapsAny(spans, start, end)) {
    return { ok: false, reason: "overlap" };
  }
  const next = [...spans, { start, end, objectId: null, isTarget: false }];
  next.sort((a, b) => a.start - b.start);
  return { ok: true, spans: next };
}

export function removeSpan(
  spans: readonly DraftSpan[],
  index: number,
): DraftSpan[] {
  return spans.filter((_, i) => i !== index);
}

export function spanAtToken(
  spans: readonly DraftSpan[],
  token: number,
): number | null {
  const i = spans.findIndex((s) => s.start <= token && token < s.end);
  return i >= 0 ? i : null;
}

/** Exact span-set equality, the backend's verification rule. */
export function sameSpanSets(a: readonly Span[], b: readonly Span[]): boolean {
  if (a.length !== b.length) return false;
  const key = (s: Span) => `${s.start}:${s.end}:${s.object_id}:${s.is_target}`;
  const setA = new Set(a.map(key));
  return b.every((s) => setA.has(key(s)));
}

export interface SpanDiff {
  common: Span[];
  onlyA: Span[];
  onlyB: Span[];
}

export function diffSpanSets(a: readonly Span[], b: readonly Span[]): SpanDiff {
  const key = (s: Span) => `${s.start}:${s.end}:${s.object_id}:${s.is_target}`;
  const mapA = new Map(a.map((s) => [key(s), s]));
  const mapB = new Map(b.map((s) => [key(s), s]));
  const common: Span[] = [];
  const onlyA: Span[] = [];
  const onlyB: Span[] = [];
  for (const [k, s] of mapA) (mapB.has(k) ? common : onlyA).push(s);
  for (const [k, s] of mapB) if (!mapA.has(k)) onlyB.push(s);
  return { common, onlyA, onlyB };
}
