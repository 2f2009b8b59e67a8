// Box geometry for the canvas overlay: normalized center-format boxes to
// canvas pixel rectangles, and letterboxing the reported stream resolution
// into whatever size the canvas actually has.

import type { DetectionMessage } from "./protocol.js";

export interface Rect {
  x: number;
  y: number;
  w: number;
  h: number;
}

// car = green, tank = red; further classes cycle.
export const CLASS_COLORS = ["#3cc83c", "#dc3c3c", "#3c3cdc", "#dcb428"];

/** Denormalize one detection onto a canvas of the given pixel size. */
export function boxToCanvasRect(det: DetectionMessage, canvasW: number, canvasH: number): Rect {
  return {
    x: (det.cx - det.w / 2) * canvasW,
    y: (det.cy - det.h / 2) * canvasH,
    w: det.w * canvasW,
    h: det.h * canvasH,
  };
}

/** Largest rect of the stream's aspect ratio centered in the viewport. */
export function letterbox(streamW: number, streamH: number, viewW: number, viewH: number): Rect {
  if (streamW <= 0 || streamH <= 0) return { x: 0, y: 0, w: viewW, h: viewH };
  const scale = Math.min(viewW / streamW, viewH / streamH);
  const w = streamW * scale;
  const h = streamH * scale;
  return { x: (viewW - w) / 2, y: (viewH - h) / 2, w, h };
}

export function classColor(classId: number): string {
  return CLASS_COLORS[((classId % CLASS_COLORS.length) + CLASS_COLORS.length) % CLASS_COLORS.length];
}

export function classLabel(classId: number, classNames: string[]): string {
  return classNames[classId] ?? `class${classId}`;
}

/** Draw detection rectangles with class + confidence tags into the frame
 * area (metadata-only mode: neutral background, boxes on top). */
export function drawOverlay(
  ctx: CanvasRenderingContext2D,
  detections: DetectionMessage[],
  classNames: string[],
  frame: Rect,
): void {
  ctx.clearRect(0, 0, ctx.canvas.width, ctx.canvas.height);
  ctx.fillStyle = "#1c1f24";
  ctx.fillRect(frame.x, frame.y, frame.w, frame.h);
  ctx.lineWidth = 2;
  ctx.font = "13px sans-serif";
  for (const det of detections) {
    const r = boxToCanvasRect(det, frame.w, frame.h);
    const x = frame.x + r.x;
    const y = frame.y + r.y;
    const color = classColor(det.class);
    ctx.strokeStyle = color;
    ctx.strokeRect(x, y, r.w, r.h);
    const tag = `${classLabel(det.class, classNames)} ${(det.conf * 100).toFixed(0)}%`;
    const tw = ctx.measureText(tag).width + 8;
    ctx.fillStyle = color;
    ctx.fillRect(x, Math.max(y - 16, frame.y), tw, 16);
    ctx.fillStyle = "#111";
    ctx.fillText(tag, x + 4, Math.max(y - 4, frame.y + 12));
  }
}
