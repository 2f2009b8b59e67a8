import { describe, expect, it } from "vitest";

import { encodeCommand, parseServerMessage } from "../src/protocol.js";

describe("parseServerMessage", () => {
  it("accepts a well-formed frame", () => {
    const m = parseServerMessage(
      JSON.stringify({
        type: "frame",
        frame_id: 4,
        detections: [{ class: 1, cx: 0.5, cy: 0.5, w: 0.2, h: 0.2, conf: 0.93 }],
        counts_visible: { tank: 1 },
        counts_total: { tank: 1 },
        fps: 30.1,
        resolution: [320, 240],
        status: "running",
        recording: false,
      }),
    );
    expect(m?.type).toBe("frame");
  });

  it.each([
    ["bad json", "{nope"],
    ["missing fields", { type: "frame", frame_id: 1 }],
    ["wrong detection shape", {
      type: "frame", frame_id: 1, detections: [{ cx: 0.1 }], counts_visible: {},
      counts_total: {}, fps: 1, resolution: [1, 1], status: "s", recording: false,
    }],
    ["unknown type", { type: "telemetry" }],
    ["non-numeric counts", {
      type: "frame", frame_id: 1, detections: [], counts_visible: { car: "two" },
      counts_total: {}, fps: 1, resolution: [1, 1], status: "s", recording: false,
    }],
    ["null", null],
  ])("rejects %s", (_name, raw) => {
    expect(parseServerMessage(raw as never)).toBeNull();
  });

  it("accepts state, alert and error messages", () => {
    expect(
      parseServerMessage({
        type: "state", status: "stopped", recording: false, session_id: 2,
        resolution: [0, 0], class_names: [],
      })?.type,
    ).toBe("state");
    expect(parseServerMessage({ type: "alert", frame_id: 9, rule: "r" })?.type).toBe("alert");
    expect(parseServerMessage({ type: "error", code: "invalid_transition" })?.type).toBe("error");
  });
});

describe("encodeCommand", () => {
  it("emits the wire format the server expects", () => {
    expect(encodeCommand("record_on")).toBe('{"cmd":"record_on"}');
  });
});
