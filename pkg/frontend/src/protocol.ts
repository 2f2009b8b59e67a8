// Wire protocol the console speaks with the pipeline's listener.
// One JSON document per WebSocket text message (or per line on the raw
// socket). Validation is structural: anything that does not match is
// dropped by the caller and counted, never rendered.

export interface DetectionMessage {
  class: number;
  cx: number;
  cy: number;
  w: number;
  h: number;
  conf: number;
}

export interface FrameMessage {
  type: "frame";
  frame_id: number;
  timestamp_ns?: number;
  detections: DetectionMessage[];
  counts_visible: Record<string, number>;
  counts_total: Record<string, number>;
  fps: number;
  resolution: [number, number];
  status: string;
  recording: boolean;
}

export interface AlertMessage {
  type: "alert";
  frame_id: number;
  rule: string;
}

export interface StateMessage {
  type: "state";
  status: "idle" | "running" | "stopped";
  recording: boolean;
  session_id: number;
  resolution: [number, number];
  class_names: string[];
}

export interface ErrorMessage {
  type: "error";
  code: string;
  detail?: string;
}

export type ServerMessage = FrameMessage | AlertMessage | StateMessage | ErrorMessage;

export type Command = "start" | "stop" | "record_on" | "record_off";

const isNum = (v: unknown): v is number => typeof v === "number" && Number.isFinite(v);
const isCounts = (v: unknown): v is Record<string, number> =>
  typeof v === "object" && v !== null && !Array.isArray(v) &&
  Object.values(v as Record<string, unknown>).every(isNum);

function isDetection(v: unknown): v is DetectionMessage {
  if (typeof v !== "object" || v === null) return false;
  const d = v as Record<string, unknown>;
  return isNum(d.class) && isNum(d.cx) && isNum(d.cy) && isNum(d.w) && isNum(d.h) && isNum(d.conf);
}

function isResolution(v: unknown): v is [number, number] {
  return Array.isArray(v) && v.length === 2 && isNum(v[0]) && isNum(v[1]);
}

/** Parse one wire document; null means "drop it and count a violation". */
export function parseServerMessage(raw: unknown): ServerMessage | null {
  let doc: unknown = raw;
  if (typeof raw === "string") {
    try {
      doc = JSON.parse(raw);
    } catch {
      return null;
    }
  }
  if (typeof doc !== "object" || doc === null) return null;
  const m = doc as Record<string, unknown>;
  switch (m.type) {
    case "frame":
      if (
        isNum(m.frame_id) &&
        Array.isArray(m.detections) && m.detections.every(isDetection) &&
        isCounts(m.counts_visible) && isCounts(m.counts_total) &&
        isNum(m.fps) && isResolution(m.resolution) &&
        typeof m.status === "string" && typeof m.recording === "boolean"
      ) {
        return m as unknown as FrameMessage;
      }
      return null;
    case "alert":
      return isNum(m.frame_id) && typeof m.rule === "string" ? (m as unknown as AlertMessage) : null;
    case "state":
      if (
        (m.status === "idle" || m.status === "running" || m.status === "stopped") &&
        typeof m.recording === "boolean" && isNum(m.session_id) &&
        isResolution(m.resolution) &&
        Array.isArray(m.class_names) && m.class_names.every((n) => typeof n === "string")
      ) {
        return m as unknown as StateMessage;
      }
      return null;
    case "error":
      return typeof m.code === "string" ? (m as unknown as ErrorMessage) : null;
    default:
      return null;
  }
}

export function encodeCommand(cmd: Command): string {
  return JSON.stringify({ cmd });
}
