// Console state, fed by server messages. Pure data + transitions so the
// whole thing is testable without a DOM; rendering subscribes to it.

import {
  AlertMessage,
  FrameMessage,
  ServerMessage,
  StateMessage,
  parseServerMessage,
} from "./protocol.js";

export type ConnectionState = "connecting" | "connected" | "disconnected";

export interface AlertBanner {
  id: number;
  frameId: number;
  rule: string;
}

export class ConsoleViewModel {
  connection: ConnectionState = "connecting";
  status: string = "idle";
  recording = false;
  sessionId = 0;
  resolution: [number, number] = [0, 0];
  classNames: string[] = [];
  fps = 0;
  countsVisible: Record<string, number> = {};
  countsTotal: Record<string, number> = {};
  latestFrame: FrameMessage | null = null;
  /** Banners persist until the operator dismisses them. */
  alerts: AlertBanner[] = [];
  /** Messages that failed validation or arrived out of order. */
  droppedMessages = 0;
  lastError: string | null = null;

  private lastFrameId = -1;
  private nextBannerId = 1;
  private listeners: Array<() => void> = [];

  onChange(listener: () => void): void {
    this.listeners.push(listener);
  }

  private notify(): void {
    for (const l of this.listeners) l();
  }

  setConnection(state: ConnectionState): void {
    this.connection = state;
    if (state !== "connected") this.status = "disconnected";
    this.notify();
  }

  /** Feed one raw wire document (string or parsed object). */
  ingest(raw: unknown): ServerMessage | null {
    const message = parseServerMessage(raw);
    if (message === null) {
      this.droppedMessages += 1;
      this.notify();
      return null;
    }
    switch (message.type) {
      case "frame":
        this.applyFrame(message);
        break;
      case "alert":
        this.applyAlert(message);
        break;
      case "state":
        this.applyState(message);
        break;
      case "error":
        this.lastError = message.detail ?? message.code;
        break;
    }
    this.notify();
    return message;
  }

  private applyFrame(frame: FrameMessage): void {
    // never render a frame older than one already rendered
    if (frame.frame_id <= this.lastFrameId) {
      this.droppedMessages += 1;
      return;
    }
    this.lastFrameId = frame.frame_id;
    this.latestFrame = frame;
    this.fps = frame.fps;
    this.resolution = frame.resolution;
    this.status = frame.status;
    this.recording = frame.recording;
    this.countsVisible = frame.counts_visible;
    this.countsTotal = frame.counts_total;
  }

  private applyAlert(alert: AlertMessage): void {
    this.alerts.push({ id: this.nextBannerId++, frameId: alert.frame_id, rule: alert.rule });
  }

  private applyState(state: StateMessage): void {
    this.status = state.status;
    this.recording = state.recording;
    if (state.session_id !== this.sessionId) {
      // fresh session: counts restart, a stale frame must not outrank new ones
      this.sessionId = state.session_id;
      this.lastFrameId = -1;
      this.countsVisible = {};
      this.countsTotal = {};
      this.latestFrame = null;
    }
    if (state.resolution[0] > 0) this.resolution = state.resolution;
    if (state.class_names.length > 0) this.classNames = state.class_names;
  }

  dismissAlert(id: number): void {
    this.alerts = this.alerts.filter((a) => a.id !== id);
    this.notify();
  }

  /** "Tanks: 1" style lines, cumulative with visible-now in parentheses. */
  countLines(): string[] {
    const names = new Set([...Object.keys(this.countsTotal), ...Object.keys(this.countsVisible)]);
    return [...names].sort().map((name) => {
      const total = this.countsTotal[name] ?? 0;
      const visible = this.countsVisible[name] ?? 0;
      const label = name.charAt(0).toUpperCase() + name.slice(1) + "s";
      return `${label}: ${total} (visible: ${visible})`;
    });
  }

  fpsDisplay(): string {
    return this.fps.toFixed(1);
  }

  resolutionDisplay(): string {
    return this.resolution[0] > 0 ? `${this.resolution[0]}x${this.resolution[1]}` : "-";
  }
}
