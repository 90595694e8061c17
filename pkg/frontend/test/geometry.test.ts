import { describe, expect, it } from "vitest";

import {
  boxRect,
  fitRoom,
  hitTest,
  pan,
  screenToWorld,
  worldToScreen,
  zoomAt,
} from "../src/geometry.js";
import type { Scene } from "../src/types.js";

const scene: Scene = {
  scene_id: "s",
  room: [10, 8, 3],
  objects: [
    {
      id: 0,
      label: "chair",
      center: [2, 3, 0.25],
      size: [1, 0.5, 0.5],
      color: "red",
      point_seed: 1,
    },
    {
      id: 1,
      label: "door",
      center: [6, 1, 1],
      size: [0.8, 0.2, 2],
      color: "brown",
      point_seed: 2,
    },
  ],
};

describe("viewport transforms", () => {
  it("round-trips world<->screen", () => {
    const vp = fitRoom(scene.room, 620, 520);
    const p = worldToScreen(vp, 3.25, 4.5);
    const back = screenToWorld(vp, p.x, p.y);
    expect(back.x).toBeCloseTo(3.25, 6);
    expect(back.y).toBeCloseTo(4.5, 6);
  });

  it("renders box centers within 1 px of the scene JSON at zoom 1", () => {
    // zoom 1: one pixel per meter, origin at bottom-left of a 10x8 canvas.
    const vp = { scale: 1, offsetX: 0, offsetY: 8 };
    for (const obj of scene.objects) {
      const r = boxRect(vp, obj);
      const cx = r.x + r.w / 2;
      const cy = r.y + r.h / 2;
      const expected = worldToScreen(vp, obj.center[0], obj.center[1]);
      expect(Math.abs(cx - expected.x)).toBeLessThanOrEqual(1);
      expect(Math.abs(cy - expected.y)).toBeLessThanOrEqual(1);
    }
  });

  it("fits the room inside the canvas with margins", () => {
    const vp = fitRoom(scene.room, 620, 520, 20);
    const corners = [
      worldToScreen(vp, 0, 0),
      worldToScreen(vp, 10, 8),
    ];
    for (const c of corners) {
      expect(c.x).toBeGreaterThanOrEqual(0);
      expect(c.x).toBeLessThanOrEqual(620);
      expect(c.y).toBeGreaterThanOrEqual(0);
      expect(c.y).toBeLessThanOrEqual(520);
    }
  });

  it("zoomAt keeps the anchor point fixed", () => {
    const vp = fitRoom(scene.room, 620, 520);
    const anchorWorld = screenToWorld(vp, 300, 250);
    const zoomed = zoomAt(vp, 1.5, 300, 250);
    const after = worldToScreen(zoomed, anchorWorld.x, anchorWorld.y);
    expect(after.x).toBeCloseTo(300, 6);
    expect(after.y).toBeCloseTo(250, 6);
  });

  it("pan shifts uniformly", () => {
    const vp = fitRoom(scene.room, 620, 520);
    const before = worldToScreen(vp, 1, 1);
    const after = worldToScreen(pan(vp, 15, -7), 1, 1);
    expect(after.x - before.x).toBeCloseTo(15);
    expect(after.y - before.y).toBeCloseTo(-7);
  });
});

describe("hit testing", () => {
  const vp = fitRoom(scene.room, 620, 520);

  it("finds the object under the cursor", () => {
    const p = worldToScreen(vp, 2, 3);
    expect(hitTest(scene, vp, p.x, p.y)).toBe(0);
    const q = worldToScreen(vp, 6, 1);
    expect(hitTest(scene, vp, q.x, q.y)).toBe(1);
  });

  it("returns null on empty floor", () => {
    const p = worldToScreen(vp, 9.5, 7.5);
    expect(hitTest(scene, vp, p.x, p.y)).toBeNull();
  });
});
