// WebSocket client for the station: HELLO handling, command/ack matching,
// and reconnect with bounded backoff. The socket and timer are injectable so
// the whole state machine is testable without a network.

import { AckMsg, CmdOp, decodeMessage, encodeCmd, ErrMsg, HelloMsg, Message, ProtocolError } from "./protocol.js";

export type ConnState = "connecting" | "open" | "closed" | "reconnecting";

export interface SocketLike {
  binaryType: string;
  onopen: (() => void) | null;
  onmessage: ((event: { data: ArrayBuffer | string }) => void) | null;
  onclose: (() => void) | null;
  onerror: (() => void) | null;
  send(data: ArrayBuffer): void;
  close(): void;
}

export type SocketFactory = (url: string) => SocketLike;
export type Scheduler = (fn: () => void, ms: number) => void;

export interface ConnectionHooks {
  onState?: (state: ConnState, detail?: string) => void;
  onHello?: (hello: HelloMsg) => void;
  onMessage?: (msg: Message) => void;
}

export class RemoteError extends Error {
  constructor(public code: string, public text: string) {
    super(`${code}: ${text}`);
  }
}

export const BACKOFF_MS = [500, 1000, 2000, 5000];

interface PendingCmd {
  resolve: (ack: AckMsg) => void;
  reject: (err: Error) => void;
}

export class StationConnection {
  hello: HelloMsg | null = null;
  state: ConnState = "closed";
  private socket: SocketLike | null = null;
  private hooks: ConnectionHooks;
  private makeSocket: SocketFactory;
  private schedule: Scheduler;
  private token: string | null;
  private nextId = 1;
  private pending = new Map<number, PendingCmd>();
  private attempts = 0;
  private closedByUser = false;

  constructor(
    public url: string,
    hooks: ConnectionHooks = {},
    opts: { token?: string | null; socketFactory?: SocketFactory; scheduler?: Scheduler } = {},
  ) {
    this.hooks = hooks;
    this.token = opts.token ?? null;
    this.makeSocket =
      opts.socketFactory ?? ((u) => new WebSocket(u) as unknown as SocketLike);
    this.schedule = opts.scheduler ?? ((fn, ms) => setTimeout(fn, ms));
  }

  connect(): void {
    this.closedByUser = false;
    this.open();
  }

  private open(): void {
    this.setState(this.attempts > 0 ? "reconnecting" : "connecting");
    let socket: SocketLike;
    try {
      socket = this.makeSocket(this.url);
    } catch (e) {
      this.scheduleRetry(String(e));
      return;
    }
    this.socket = socket;
    socket.binaryType = "arraybuffer";
    socket.onopen = () => {
      this.attempts = 0;
      this.setState("open");
    };
    socket.onmessage = (event) => {
      if (typeof event.data === "string") return; // frames are binary only
      this.handleFrame(event.data);
    };
    socket.onerror = () => {
      /* onclose follows; state handled there */
    };
    socket.onclose = () => {
      this.socket = null;
      this.failPending(new Error("connection closed"));
      if (this.closedByUser) {
        this.setState("closed");
      } else {
        this.scheduleRetry("connection lost");
      }
    };
  }

  private scheduleRetry(detail: string): void {
    const delay = BACKOFF_MS[Math.min(this.attempts, BACKOFF_MS.length - 1)];
    this.attempts++;
    this.setState("reconnecting", `${detail}; retry in ${delay} ms`);
    this.schedule(() => {
      if (!this.closedByUser) this.open();
    }, delay);
  }

  private handleFrame(buffer: ArrayBuffer): void {
    let msg: Message;
    try {
      msg = decodeMessage(buffer);
    } catch (e) {
      if (e instanceof ProtocolError) return; // tolerate one bad frame
      throw e;
    }
    if (msg.kind === "hello") {
      this.hello = msg;
      this.hooks.onHello?.(msg);
    } else if (msg.kind === "ack") {
      const waiter = this.pending.get(msg.id);
      if (waiter) {
        this.pending.delete(msg.id);
        waiter.resolve(msg);
      }
    } else if (msg.kind === "err") {
      this.rejectFor(msg);
    }
    this.hooks.onMessage?.(msg);
  }

  private rejectFor(err: ErrMsg): void {
    if (err.id !== null) {
      const waiter = this.pending.get(err.id);
      if (waiter) {
        this.pending.delete(err.id);
        waiter.reject(new RemoteError(err.code, err.text));
      }
      return;
    }
    this.failPending(new RemoteError(err.code, err.text));
  }

  private failPending(error: Error): void {
    for (const waiter of this.pending.values()) waiter.reject(error);
    this.pending.clear();
  }

  /** Send a command; resolves with its ACK, rejects with RemoteError on ERR. */
  cmd(op: CmdOp, args: Record<string, unknown> = {}): Promise<AckMsg> {
    if (!this.socket || this.state !== "open") {
      return Promise.reject(new Error("not connected"));
    }
    const id = this.nextId++;
    const payload = this.token !== null ? { ...args, token: this.token } : args;
    const frame = encodeCmd(id, op, payload);
    return new Promise<AckMsg>((resolve, reject) => {
      this.pending.set(id, { resolve, reject });
      this.socket!.send(frame);
    });
  }

  close(): void {
    this.closedByUser = true;
    this.socket?.close();
    if (!this.socket) this.setState("closed");
  }

  private setState(state: ConnState, detail?: string): void {
    this.state = state;
    this.hooks.onState?.(state, detail);
  }
}
