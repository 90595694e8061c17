/**
 * Page wiring: task loading, token chips, canvas interaction, submit and
 * peer verification. All state changes round-trip through the HTTP API, so a
 * reload rebuilds the page from GETs alone.
 */

import { ApiClient, ApiError } from "./api.js";
import { fitRoom, hitTest, pan, Viewport, zoomAt } from "./geometry.js";
import { drawScene } from "./render.js";
import { diffSpanSets, Selection } from "./spans.js";
import {
  commitSelection,
  deleteSpan,
  Draft,
  markTarget,
  newDraft,
  selectObject,
  setUnsure,
  submitReadiness,
  toRecord,
} from "./state.js";
import type { Scene, Task } from "./types.js";

const api = new ApiClient("");

interface App {
  annotator: string;
  task: Task | null;
  scene: Scene | null;
  draft: Draft | null;
  viewport: Viewport | null;
  selection: Selection | null;
  dragging: boolean;
  panning: { x: number; y: number } | null;
}

const app: App = {
  annotator: "",
  task: null,
  scene: null,
  draft: null,
  viewport: null,
  selection: null,
  dragging: false,
  panning: null,
};

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

function setStatus(text: string, isError = false): void {
  const bar = el<HTMLDivElement>("status");
  bar.textContent = text;
  bar.className = isError ? "status error" : "status";
}

async function loadNextTask(): Promise<void> {
  const task = await api.nextTask(app.annotator);
  app.task = task;
  if (!task.sample_id) {
    setStatus("all samples annotated — nothing left in the queue");
    app.scene = null;
    app.draft = null;
    renderAll();
    return;
  }
  app.scene = await api.getScene(task.scene_id!);
  app.draft = newDraft(task.sample_id, task.tokens!);
  const canvas = el<HTMLCanvasElement>("scene");
  app.viewport = fitRoom(app.scene.room, canvas.width, canvas.height);
  setStatus(task.redo ? "disputed sample — please re-annotate" : "new sample loaded");
  renderAll();
  void renderVerification();
}

function renderTokens(): void {
  const host = el<HTMLDivElement>("tokens");
  host.innerHTML = "";
  if (!app.draft) return;
  const draft = app.draft;
  draft.tokens.forEach((tok, i) => {
    const chip = document.createElement("span");
    chip.className = "chip";
    chip.textContent = tok;
    chip.dataset.index = String(i);
    const spanIndex = draft.spans.findIndex((s) => s.start <= i && i < s.end);
    if (spanIndex >= 0) {
      chip.classList.add("in-span");
      if (draft.spans[spanIndex].isTarget) chip.classList.add("target");
      if (draft.spans[spanIndex].objectId === null) chip.classList.add("unlinked");
    }
    if (
      app.selection &&
      i >= Math.min(app.selection.anchor, app.selection.head) &&
      i <= Math.max(app.selection.anchor, app.selection.head)
    ) {
      chip.classList.add("selecting");
    }
    chip.onmousedown = (ev) => {
      ev.preventDefault();
      app.selection = { anchor: i, head: i };
      app.dragging = true;
      renderTokens();
    };
    chip.onmouseenter = () => {
      if (app.dragging && app.selection) {
        app.selection = { ...app.selection, head: i };
        renderTokens();
      }
    };
    host.appendChild(chip);
  });
}

function renderSpanList(): void {
  const host = el<HTMLUListElement>("span-list");
  host.innerHTML = "";
  if (!app.draft || !app.scene) return;
  const draft = app.draft;
  draft.spans.forEach((s, i) => {
    const item = document.createElement("li");
    const phrase = draft.tokens.slice(s.start, s.end).join(" ");
    const link =
      s.objectId === null
        ? "unlinked — click an object"
        : `#${s.objectId} ${app.scene!.objects[s.objectId].label}`;
    const label = document.createElement("span");
    label.textContent = `"${phrase}" [${s.start},${s.end}) -> ${link}`;
    if (i === draft.pendingSpan) label.className = "pending";
    item.appendChild(label);

    const target = document.createElement("button");
    target.textContent = s.isTarget ? "target ✓" : "mark target";
    target.onclick = () => {
      app.draft = markTarget(draft, i);
      renderAll();
    };
    item.appendChild(target);

    const del = document.createElement("button");
    del.textContent = "delete";
    del.onclick = () => {
      app.draft = deleteSpan(draft, i);
      renderAll();
    };
    item.appendChild(del);
    host.appendChild(item);
  });
  const readiness = submitReadiness(draft);
  el<HTMLButtonElement>("submit").disabled = !readiness.ready;
  el<HTMLDivElement>("readiness").textContent = readiness.reason;
  if (draft.message) setStatus(draft.message, true);
}

function renderCanvas(): void {
  const canvas = el<HTMLCanvasElement>("scene");
  const ctx = canvas.getContext("2d");
  if (!ctx || !app.scene || !app.viewport) {
    ctx?.clearRect(0, 0, canvas.width, canvas.height);
    return;
  }
  const linked = new Set<number>();
  app.draft?.spans.forEach((s) => {
    if (s.objectId !== null) linked.add(s.objectId);
  });
  drawScene(ctx, app.scene, app.viewport, app.draft?.selectedObject ?? null, linked);
}

async function renderVerification(): Promise<void> {
  const host = el<HTMLDivElement>("verify");
  host.innerHTML = "";
  if (!app.task?.sample_id) return;
  const res = await api.getAnnotations(app.task.sample_id);
  const others = res.records.filter((r) => r.annotator_id !== app.annotator);
  const mine = res.records.find((r) => r.annotator_id === app.annotator);
  const head = document.createElement("div");
  head.textContent = `peer records: ${others.length}; status: ${res.status.status}`;
  host.appendChild(head);
  if (!mine || others.length === 0) return;
  for (const other of others) {
    const diff = diffSpanSets(mine.spans, other.spans);
    const block = document.createElement("pre");
    block.textContent =
      `vs ${other.annotator_id}: ${diff.common.length} agree, ` +
      `${diff.onlyA.length} only-mine, ${diff.onlyB.length} only-theirs` +
      (diff.onlyA.length + diff.onlyB.length === 0 ? " — identical" : "");
    host.appendChild(block);
    const approve = document.createElement("button");
    approve.textContent = `approve ${other.annotator_id}'s annotation`;
    approve.onclick = async () => {
      const status = await api.verify({
        sample_id: app.task!.sample_id!,
        annotator_id: app.annotator,
        approve: true,
      });
      setStatus(`verification: ${status.status}`);
      if (status.status === "verified") void loadNextTask();
    };
    host.appendChild(approve);
    const reject = document.createElement("button");
    reject.textContent = "reject (dispute)";
    reject.onclick = async () => {
      const status = await api.verify({
        sample_id: app.task!.sample_id!,
        annotator_id: app.annotator,
        approve: false,
      });
      setStatus(`verification: ${status.status}`);
    };
    host.appendChild(reject);
  }
}

function renderAll(): void {
  renderTokens();
  renderSpanList();
  renderCanvas();
}

function bindEvents(): void {
  const canvas = el<HTMLCanvasElement>("scene");
  canvas.onmousedown = (ev) => {
    if (ev.shiftKey) {
      app.panning = { x: ev.offsetX, y: ev.offsetY };
      return;
    }
    if (!app.scene || !app.viewport || !app.draft) return;
    const hit = hitTest(app.scene, app.viewport, ev.offsetX, ev.offsetY);
    if (hit !== null) {
      app.draft = selectObject(app.draft, hit);
      renderAll();
    }
  };
  canvas.onmousemove = (ev) => {
    if (app.panning && app.viewport) {
      app.viewport = pan(
        app.viewport,
        ev.offsetX - app.panning.x,
        ev.offsetY - app.panning.y,
      );
      app.panning = { x: ev.offsetX, y: ev.offsetY };
      renderCanvas();
    }
  };
  canvas.onmouseup = () => (app.panning = null);
  canvas.onwheel = (ev) => {
    ev.preventDefault();
    if (!app.viewport) return;
    const factor = ev.deltaY < 0 ? 1.15 : 1 / 1.15;
    app.viewport = zoomAt(app.viewport, factor, ev.offsetX, ev.offsetY);
    renderCanvas();
  };

  document.onmouseup = () => {
    if (app.dragging && app.selection && app.draft) {
      app.draft = commitSelection(app.draft, app.selection);
      app.selection = null;
      app.dragging = false;
      renderAll();
    }
  };

  el<HTMLInputElement>("unsure").onchange = (ev) => {
    if (app.draft) {
      app.draft = setUnsure(app.draft, (ev.target as HTMLInputElement).checked);
      renderSpanList();
    }
  };

  el<HTMLButtonElement>("submit").onclick = async () => {
    if (!app.draft) return;
    try {
      const res = await api.submitAnnotation(toRecord(app.draft, app.annotator));
      setStatus(`submitted; status ${res.status.status}`);
      await renderVerification();
      await loadNextTask();
    } catch (err) {
      if (err instanceof ApiError) setStatus(`rejected: ${err.detail}`, true);
      else setStatus(String(err), true);
    }
  };

  el<HTMLButtonElement>("start").onclick = async () => {
    app.annotator = el<HTMLInputElement>("annotator").value.trim();
    if (!app.annotator) {
      setStatus("enter an annotator id first", true);
      return;
    }
    try {
      await loadNextTask();
    } catch (err) {
      setStatus(`cannot reach backend: ${String(err)} — retry`, true);
    }
  };
}

bindEvents();
setStatus("enter an annotator id and press start");
