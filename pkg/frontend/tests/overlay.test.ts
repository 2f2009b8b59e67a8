import { describe, expect, it } from "vitest";

import { boxToCanvasRect, classColor, classLabel, letterbox } from "../src/overlay.js";

describe("boxToCanvasRect", () => {
  it("denormalizes the reference fixture: (0.5,0.5,0.2,0.2) on 800x600", () => {
    const rect = boxToCanvasRect(
      { class: 0, cx: 0.5, cy: 0.5, w: 0.2, h: 0.2, conf: 0.9 },
      800,
      600,
    );
    expect(rect).toEqual({ x: 320, y: 240, w: 160, h: 120 });
  });

  it("maps a full-frame box to the full canvas", () => {
    const rect = boxToCanvasRect({ class: 0, cx: 0.5, cy: 0.5, w: 1, h: 1, conf: 1 }, 640, 480);
    expect(rect).toEqual({ x: 0, y: 0, w: 640, h: 480 });
  });
});

describe("letterbox", () => {
  it("pads top/bottom for a wider stream", () => {
    const frame = letterbox(320, 120, 800, 600);
    expect(frame.w).toBe(800);
    expect(frame.h).toBe(300);
    expect(frame.x).toBe(0);
    expect(frame.y).toBe(150);
  });

  it("pads left/right for a taller stream", () => {
    const frame = letterbox(120, 240, 800, 600);
    expect(frame.h).toBe(600);
    expect(frame.w).toBe(300);
    expect(frame.x).toBe(250);
    expect(frame.y).toBe(0);
  });

  it("falls back to the viewport when resolution is unknown", () => {
    expect(letterbox(0, 0, 800, 600)).toEqual({ x: 0, y: 0, w: 800, h: 600 });
  });
});

describe("class styling", () => {
  it("uses green for cars (class 0) and red for tanks (class 1)", () => {
    expect(classColor(0)).toBe("#3cc83c");
    expect(classColor(1)).toBe("#dc3c3c");
  });

  it("labels by name when known, id otherwise", () => {
    expect(classLabel(1, ["car", "tank"])).toBe("tank");
    expect(classLabel(7, ["car", "tank"])).toBe("class7");
  });
});
