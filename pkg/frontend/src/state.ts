/**
 * Draft state for one annotation task. Drafts live entirely client-side and
 * touch the server only on submit, so reloading reconstructs everything from
 * GET endpoints.
 */

import type { AnnotationRecord, Span } from "./types.js";
import { addSpan, DraftSpan, removeSpan, Selection } from "./spans.js";

export interface Draft {
  sampleId: string;
  tokens: string[];
  spans: DraftSpan[];
  selectedObject: number | null;
  unsure: boolean;
  pendingSpan: number | null; // index awaiting an object link
  message: string;
}

export function newDraft(sampleId: string, tokens: string[]): Draft {
  return {
    sampleId,
    tokens,
    spans: [],
    selectedObject: null,
    unsure: false,
    pendingSpan: null,
    message: "",
  };
}

export function commitSelection(draft: Draft, sel: Selection): Draft {
  const result = addSpan(draft.spans, sel, draft.tokens.length);
  if (!result.ok) {
    return { ...draft, message: `selection rejected: ${result.reason}` };
  }
  const index = result.spans.findIndex(
    (s) => s.start === Math.min(sel.anchor, sel.head),
  );
  return { ...draft, spans: result.spans, pendingSpan: index, message: "" };
}

export function deleteSpan(draft: Draft, index: number): Draft {
  return {
    ...draft,
    spans: removeSpan(draft.spans, index),
    pendingSpan: null,
  };
}

/** Clicking an object selects it, and links the pending span when one exists. */
export function selectObject(draft: Draft, objectId: number): Draft {
  const spans = draft.spans.slice();
  let pending = draft.pendingSpan;
  if (pending !== null && spans[pending]) {
    spans[pending] = { ...spans[pending], objectId };
    pending = null;
  }
  return { ...draft, spans, selectedObject: objectId, pendingSpan: pending };
}

export function markTarget(draft: Draft, index: number): Draft {
  const spans = draft.spans.map((s, i) => ({ ...s, isTarget: i === index }));
  return { ...draft, spans };
}

export function setUnsure(draft: Draft, unsure: boolean): Draft {
  return { ...draft, unsure };
}

export interface Readiness {
  ready: boolean;
  reason: string;
}

export function submitReadiness(draft: Draft): Readiness {
  if (draft.unsure && draft.spans.length === 0) {
    return { ready: true, reason: "submitting as unsure with no spans" };
  }
  if (draft.spans.length === 0) {
    return { ready: false, reason: "select at least one span" };
  }
  if (draft.spans.some((s) => s.objectId === null)) {
    return { ready: false, reason: "every span needs an object link" };
  }
  const targets = draft.spans.filter((s) => s.isTarget).length;
  if (targets !== 1) {
    return { ready: false, reason: "mark exactly one span as the target" };
  }
  return { ready: true, reason: "" };
}

export function toRecord(draft: Draft, annotator: string): AnnotationRecord {
  const spans: Span[] = draft.spans.map((s) => ({
    start: s.start,
    end: s.end,
    object_id: s.objectId ?? -1,
    is_target: s.isTarget,
  }));
  return {
    sample_id: draft.sampleId,
    annotator_id: annotator,
    spans,
    unsure: draft.unsure,
  };
}
