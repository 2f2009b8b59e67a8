// WebSocket wrapper with automatic reconnect and resubscribe. The socket
// factory is injectable so tests can drive a fake.

export interface SocketLike {
  send(data: string): void;
  close(): void;
  onopen: ((ev?: unknown) => void) | null;
  onmessage: ((ev: { data: unknown }) => void) | null;
  onclose: ((ev?: unknown) => void) | null;
  onerror: ((ev?: unknown) => void) | null;
}

export interface ConnectionHooks {
  onMessage(data: unknown): void;
  onStateChange(state: "connecting" | "connected" | "disconnected"): void;
}

export const RECONNECT_DELAY_MS = 1000;

export class Connection {
  private socket: SocketLike | null = null;
  private closed = false;

  constructor(
    private url: string,
    private hooks: ConnectionHooks,
    private factory: (url: string) => SocketLike = (url) => new WebSocket(url) as unknown as SocketLike,
    private scheduler: (fn: () => void, ms: number) => unknown = (fn, ms) => setTimeout(fn, ms),
  ) {}

  open(): void {
    this.closed = false;
    this.connect();
  }

  private connect(): void {
    this.hooks.onStateChange("connecting");
    const socket = this.factory(this.url);
    this.socket = socket;
    socket.onopen = () => this.hooks.onStateChange("connected");
    socket.onmessage = (ev) => this.hooks.onMessage(ev.data);
    socket.onerror = () => {};
    socket.onclose = () => {
      this.socket = null;
      this.hooks.onStateChange("disconnected");
      if (!this.closed) {
        // auto-resubscribe: the server greets every new connection with
        // the current state, so reconnecting is all that is needed
        this.scheduler(() => this.connect(), RECONNECT_DELAY_MS);
      }
    };
  }

  send(text: string): boolean {
    if (this.socket === null) return false;
    try {
      this.socket.send(text);
      return true;
    } catch {
      return false;
    }
  }

  close(): void {
    this.closed = true;
    if (this.socket !== null) this.socket.close();
  }
}
