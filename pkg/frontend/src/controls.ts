// Start/stop/record controls: a sent command disables the buttons until
// the matching state change arrives or a timeout shows an error toast.

import type { Command } from "./protocol.js";
import { encodeCommand } from "./protocol.js";

export interface ControlHooks {
  send(text: string): void;
  onPendingChange(pending: boolean): void;
  onToast(message: string): void;
  /** Injectable timer for tests; defaults to setTimeout/clearTimeout. */
  setTimer?(fn: () => void, ms: number): unknown;
  clearTimer?(handle: unknown): void;
}

export const COMMAND_TIMEOUT_MS = 2000;

export class ControlChannel {
  private pending: Command | null = null;
  private timer: unknown = null;

  constructor(private hooks: ControlHooks) {}

  get isPending(): boolean {
    return this.pending !== null;
  }

  sendCommand(cmd: Command): boolean {
    if (this.pending !== null) return false;
    this.pending = cmd;
    this.hooks.onPendingChange(true);
    this.hooks.send(encodeCommand(cmd));
    const set = this.hooks.setTimer ?? ((fn: () => void, ms: number) => setTimeout(fn, ms));
    this.timer = set(() => {
      if (this.pending !== null) {
        const timedOut = this.pending;
        this.resolve();
        this.hooks.onToast(`no response to "${timedOut}" within ${COMMAND_TIMEOUT_MS / 1000}s`);
      }
    }, COMMAND_TIMEOUT_MS);
    return true;
  }

  /** Call for every server message; settles the pending command. */
  observe(message: { type: string; code?: string; detail?: string }): void {
    if (this.pending === null) return;
    if (message.type === "state") {
      this.resolve();
    } else if (message.type === "error") {
      const text = message.detail ?? message.code ?? "command rejected";
      this.resolve();
      this.hooks.onToast(text);
    }
  }

  connectionLost(): void {
    if (this.pending !== null) this.resolve();
  }

  private resolve(): void {
    this.pending = null;
    if (this.timer !== null) {
      const clear = this.hooks.clearTimer ?? ((h: unknown) => clearTimeout(h as number));
      clear(this.timer);
      this.timer = null;
    }
    this.hooks.onPendingChange(false);
  }
}
