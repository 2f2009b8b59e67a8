import { describe, expect, it } from "vitest";

import { Connection, SocketLike } from "../src/connection.js";

class FakeSocket implements SocketLike {
  onopen: ((ev?: unknown) => void) | null = null;
  onmessage: ((ev: { data: unknown }) => void) | null = null;
  onclose: ((ev?: unknown) => void) | null = null;
  onerror: ((ev?: unknown) => void) | null = null;
  sent: string[] = [];
  send(data: string): void {
    this.sent.push(data);
  }
  close(): void {
    this.onclose?.();
  }
}

function harness() {
  const sockets: FakeSocket[] = [];
  const states: string[] = [];
  const messages: unknown[] = [];
  const timers: Array<() => void> = [];
  const connection = new Connection(
    "ws://test/ws",
    {
      onMessage: (d) => messages.push(d),
      onStateChange: (s) => states.push(s),
    },
    () => {
      const s = new FakeSocket();
      sockets.push(s);
      return s;
    },
    (fn) => {
      timers.push(fn);
      return timers.length;
    },
  );
  return { connection, sockets, states, messages, timers };
}

describe("Connection", () => {
  it("reports connecting then connected, and relays messages", () => {
    const h = harness();
    h.connection.open();
    h.sockets[0].onopen!();
    h.sockets[0].onmessage!({ data: '{"type":"state"}' });
    expect(h.states).toEqual(["connecting", "connected"]);
    expect(h.messages).toEqual(['{"type":"state"}']);
  });

  it("reconnects after an unexpected close and resubscribes", () => {
    const h = harness();
    h.connection.open();
    h.sockets[0].onopen!();
    h.sockets[0].onclose!();
    expect(h.states).toEqual(["connecting", "connected", "disconnected"]);
    expect(h.timers).toHaveLength(1);
    h.timers[0]();  // reconnect timer fires
    expect(h.sockets).toHaveLength(2);
    h.sockets[1].onopen!();
    expect(h.states.at(-1)).toBe("connected");
  });

  it("does not reconnect after an intentional close", () => {
    const h = harness();
    h.connection.open();
    h.sockets[0].onopen!();
    h.connection.close();
    expect(h.timers).toHaveLength(0);
  });

  it("send fails gracefully when no socket is up", () => {
    const h = harness();
    expect(h.connection.send("x")).toBe(false);
    h.connection.open();
    h.sockets[0].onopen!();
    expect(h.connection.send('{"cmd":"start"}')).toBe(true);
    expect(h.sockets[0].sent).toEqual(['{"cmd":"start"}']);
  });
});
