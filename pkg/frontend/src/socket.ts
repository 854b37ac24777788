/**
 * Reconnecting WebSocket transport.
 *
 * - sends JSON client messages (dropped while disconnected: the UI grays
 *   out instead of queueing stale commands)
 * - receives parsed server messages via callback
 * - exponential backoff reconnect, 1 s doubling to 30 s
 */

import { ClientMessage, ServerMessage, parseServerMessage } from "./protocol";

export type ConnectionState = "connecting" | "connected" | "disconnected";

export interface SocketLike {
  send(data: string): void;
  close(): void;
  onopen: ((ev?: unknown) => void) | null;
  onmessage: ((ev: { data: unknown }) => void) | null;
  onclose: ((ev?: unknown) => void) | null;
  onerror: ((ev?: unknown) => void) | null;
}

export type SocketFactory = (url: string) => SocketLike;

const defaultFactory: SocketFactory = (url) =>
  new WebSocket(url) as unknown as SocketLike;

export interface ConsoleSocketOptions {
  url: string;
  onMessage: (msg: ServerMessage) => void;
  onStateChange?: (state: ConnectionState) => void;
  factory?: SocketFactory;
  backoffInitialMs?: number;
  backoffMaxMs?: number;
}

export class ConsoleSocket {
  private opts: ConsoleSocketOptions;
  private ws: SocketLike | null = null;
  private backoffMs: number;
  private closedByUser = false;
  private reconnectTimer: ReturnType<typeof setTimeout> | null = null;
  state: ConnectionState = "disconnected";

  constructor(opts: ConsoleSocketOptions) {
    this.opts = opts;
    this.backoffMs = opts.backoffInitialMs ?? 1000;
  }

  private setState(state: ConnectionState) {
    this.state = state;
    this.opts.onStateChange?.(state);
  }

  connect(): void {
    this.closedByUser = false;
    this.setState("connecting");
    const factory = this.opts.factory ?? defaultFactory;
    const ws = factory(this.opts.url);
    this.ws = ws;
    ws.onopen = () => {
      this.backoffMs = this.opts.backoffInitialMs ?? 1000;
      this.setState("connected");
    };
    ws.onmessage = (ev) => {
      const msg = parseServerMessage(String(ev.data));
      if (msg) this.opts.onMessage(msg);
    };
    ws.onerror = () => {
      /* the close handler drives reconnection */
    };
    ws.onclose = () => {
      this.ws = null;
      this.setState("disconnected");
      if (!this.closedByUser) this.scheduleReconnect();
    };
  }

  private scheduleReconnect(): void {
    if (this.reconnectTimer !== null) return;
    const delay = this.backoffMs;
    this.backoffMs = Math.min(this.backoffMs * 2,
                              this.opts.backoffMaxMs ?? 30000);
    this.reconnectTimer = setTimeout(() => {
      this.reconnectTimer = null;
      if (!this.closedByUser) this.connect();
    }, delay);
  }

  /** Returns false (and sends nothing) while disconnected. */
  send(msg: ClientMessage): boolean {
    if (this.state !== "connected" || this.ws === null) return false;
    this.ws.send(JSON.stringify(msg));
    return true;
  }

  close(): void {
    this.closedByUser = true;
    if (this.reconnectTimer !== null) {
      clearTimeout(this.reconnectTimer);
      this.reconnectTimer = null;
    }
    this.ws?.close();
    this.ws = null;
    this.setState("disconnected");
  }
}
