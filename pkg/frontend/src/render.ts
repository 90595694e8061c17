/** Canvas rendering of the top-down scene with highlight/fade selection. */

import { boxRect, Viewport, worldToScreen } from "./geometry.js";
import type { Scene } from "./types.js";

const PALETTE: Record<string, string> = {
  red: "#d94444",
  green: "#3faa52",
  blue: "#3f57d9",
  yellow: "#d9c13f",
  white: "#e8e8e8",
  black: "#333333",
  brown: "#8a5a2b",
  gray: "#8c8c8c",
};

export function drawScene(
  ctx: CanvasRenderingContext2D,
  scene: Scene,
  vp: Viewport,
  selected: number | null,
  linked: Set<number>,
): void {
  const canvas = ctx.canvas;
  ctx.clearRect(0, 0, canvas.width, canvas.height);

  // Room outline; the entrance (canonical viewpoint) is the bottom edge.
  const tl = worldToScreen(vp, 0, scene.room[1]);
  ctx.strokeStyle = "#666";
  ctx.lineWidth = 2;
  ctx.strokeRect(tl.x, tl.y, scene.room[0] * vp.scale, scene.room[1] * vp.scale);
  const entrance = worldToScreen(vp, scene.room[0] / 2, 0);
  ctx.fillStyle = "#666";
  ctx.beginPath();
  ctx.moveTo(entrance.x - 8, entrance.y + 14);
  ctx.lineTo(entrance.x + 8, entrance.y + 14);
  ctx.lineTo(entrance.x, entrance.y + 2);
  ctx.fill();

  for (const obj of scene.objects) {
    const r = boxRect(vp, obj);
    const isSelected = selected === obj.id;
    const faded = selected !== null && !isSelected;
    ctx.globalAlpha = faded ? 0.25 : 1.0;
    ctx.fillStyle = PALETTE[obj.color] ?? "#999";
    ctx.fillRect(r.x, r.y, r.w, r.h);
    ctx.lineWidth = isSelected ? 3 : 1;
    ctx.strokeStyle = isSelected ? "#ff8800" : linked.has(obj.id) ? "#222" : "#555";
    ctx.strokeRect(r.x, r.y, r.w, r.h);
    ctx.globalAlpha = faded ? 0.4 : 1.0;
    ctx.fillStyle = "#111";
    ctx.font = "12px sans-serif";
    ctx.textAlign = "center";
    ctx.fillText(`${obj.label} #${obj.id}`, r.x + r.w / 2, r.y + r.h / 2 + 4);
  }
  ctx.globalAlpha = 1.0;
}
