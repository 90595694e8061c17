/**
 * Top-down view transforms. World coordinates are room meters with +y going
 * away from the entrance; screen y grows downward, so the room is drawn with
 * the entrance at the bottom edge.
 */

import type { Scene, SceneObject } from "./types.js";

export interface Viewport {
  scale: number; // pixels per meter
  offsetX: number; // screen x of world origin
  offsetY: number; // screen y of world origin
}

export interface ScreenRect {
  x: number;
  y: number;
  w: number;
  h: number;
}

export function worldToScreen(
  vp: Viewport,
  wx: number,
  wy: number,
): { x: number; y: number } {
  return { x: vp.offsetX + wx * vp.scale, y: vp.offsetY - wy * vp.scale };
}

export function screenToWorld(
  vp: Viewport,
  sx: number,
  sy: number,
): { x: number; y: number } {
  return { x: (sx - vp.offsetX) / vp.scale, y: (vp.offsetY - sy) / vp.scale };
}

/** Fit the whole room into the canvas with a uniform margin. */
export function fitRoom(
  room: [number, number, number],
  canvasW: number,
  canvasH: number,
  margin = 20,
): Viewport {
  const scale = Math.min(
    (canvasW - 2 * margin) / room[0],
    (canvasH - 2 * margin) / room[1],
  );
  const offsetX = (canvasW - room[0] * scale) / 2;
  const offsetY = canvasH - (canvasH - room[1] * scale) / 2;
  return { scale, offsetX, offsetY };
}

/** Screen-space rectangle of an object's footprint (top-left anchored). */
export function boxRect(vp: Viewport, obj: SceneObject): ScreenRect {
  const topLeft = worldToScreen(
    vp,
    obj.center[0] - obj.size[0] / 2,
    obj.center[1] + obj.size[1] / 2,
  );
  return {
    x: topLeft.x,
    y: topLeft.y,
    w: obj.size[0] * vp.scale,
    h: obj.size[1] * vp.scale,
  };
}

export function pan(vp: Viewport, dx: number, dy: number): Viewport {
  return { ...vp, offsetX: vp.offsetX + dx, offsetY: vp.offsetY + dy };
}

/** Zoom by `factor`, keeping the screen point (cx, cy) fixed. */
export function zoomAt(
  vp: Viewport,
  factor: number,
  cx: number,
  cy: number,
): Viewport {
  const scale = vp.scale * factor;
  return {
    scale,
    offsetX: cx - (cx - vp.offsetX) * factor,
    offsetY: cy - (cy - vp.offsetY) * factor,
  };
}

/** Topmost object whose footprint contains the screen point, else null. */
export function hitTest(
  scene: Scene,
  vp: Viewport,
  sx: number,
  sy: number,
): number | null {
  for (let i = scene.objects.length - 1; i >= 0; i--) {
    const r = boxRect(vp, scene.objects[i]);
    if (sx >= r.x && sx <= r.x + r.w && sy >= r.y && sy <= r.y + r.h) {
      return scene.objects[i].id;
    }
  }
  return null;
}
