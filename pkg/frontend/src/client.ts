/** WebSocket client for the live service: command/ack correlation with
 * a timeout, seq monotonicity checking, and capped-backoff reconnect.
 * The socket constructor is injectable so every behavior is testable
 * against a scripted fake. */

import {
  AckFrame,
  COMMAND_KINDS,
  CommandKind,
  PushDraft,
  ServerFrame,
  buildCommand,
  parseFrame,
  validateDraft,
} from "./protocol.js";

export interface SocketLike {
  send(data: string): void;
  close(): void;
  onopen: (() => void) | null;
  onmessage: ((event: { data: string }) => void) | null;
  onclose: (() => void) | null;
  onerror: (() => void) | null;
}

export type SocketFactory = (url: string) => SocketLike;

export type ClientState = "connecting" | "connected" | "reconnecting" | "closed";

export interface ClientEvents {
  state: (state: ClientState, detail: string) => void;
  frame: (frame: ServerFrame) => void;
  protocolError: (message: string) => void;
}

interface PendingAck {
  resolve: (ack: AckFrame) => void;
  reject: (err: Error) => void;
  timer: ReturnType<typeof setTimeout>;
}

export const ACK_TIMEOUT_MS = 2000;
const BACKOFF_BASE_MS = 1000;
const BACKOFF_CAP_MS = 30000;

/** Delay before reconnect attempt n (0-based): 1 s doubling, capped. */
export function backoffDelay(attempt: number): number {
  return Math.min(BACKOFF_BASE_MS * 2 ** attempt, BACKOFF_CAP_MS);
}

export class LiveClient {
  readonly url: string;
  state: ClientState = "closed";
  /** Count of inbound frames that broke the envelope or seq order. */
  protocolErrors = 0;

  private socket: SocketLike | null = null;
  private readonly factory: SocketFactory;
  private readonly ackTimeoutMs: number;
  private readonly pending = new Map<string, PendingAck>();
  private nextId = 1;
  private lastSeq: number | null = null;
  private attempts = 0;
  private reconnectTimer: ReturnType<typeof setTimeout> | null = null;
  private closedByUser = false;
  private readonly handlers: {
    [K in keyof ClientEvents]: Set<ClientEvents[K]>;
  } = { state: new Set(), frame: new Set(), protocolError: new Set() };

  constructor(
    url: string,
    opts: { socketFactory?: SocketFactory; ackTimeoutMs?: number } = {},
  ) {
    this.url = url;
    this.factory =
      opts.socketFactory ?? ((u) => new WebSocket(u) as unknown as SocketLike);
    this.ackTimeoutMs = opts.ackTimeoutMs ?? ACK_TIMEOUT_MS;
  }

  on<K extends keyof ClientEvents>(event: K, handler: ClientEvents[K]): void {
    this.handlers[event].add(handler);
  }

  private emitState(detail: string): void {
    for (const h of this.handlers.state) h(this.state, detail);
  }

  private emitProtocolError(message: string): void {
    this.protocolErrors += 1;
    for (const h of this.handlers.protocolError) h(message);
  }

  connect(): void {
    if (this.closedByUser) return;
    this.state = this.attempts === 0 ? "connecting" : "reconnecting";
    this.emitState(
      this.attempts === 0 ? "connecting" : `reconnect attempt ${this.attempts}`,
    );
    const socket = this.factory(this.url);
    this.socket = socket;
    socket.onopen = () => {
      this.attempts = 0;
      // a new connection restarts the server's seq stream for us
      this.lastSeq = null;
      this.state = "connected";
      this.emitState("connected");
    };
    socket.onmessage = (event) => this.handleMessage(event.data);
    socket.onerror = () => {};
    socket.onclose = () => this.handleClose();
  }

  private handleClose(): void {
    this.socket = null;
    this.failPending("connection lost");
    if (this.closedByUser) return;
    this.state = "reconnecting";
    const delay = backoffDelay(this.attempts);
    this.attempts += 1;
    this.emitState(`connection lost; retrying in ${delay / 1000} s`);
    this.reconnectTimer = setTimeout(() => this.connect(), delay);
  }

  private handleMessage(data: string): void {
    let frame: ServerFrame;
    try {
      frame = parseFrame(data);
    } catch (err) {
      this.emitProtocolError((err as Error).message);
      return;
    }
    if (this.lastSeq !== null && frame.seq <= this.lastSeq) {
      this.emitProtocolError(
        `seq went backwards: ${frame.seq} after ${this.lastSeq}`,
      );
    }
    this.lastSeq = this.lastSeq === null ? frame.seq : Math.max(this.lastSeq, frame.seq);
    if (frame.kind === "ack") {
      const ack = frame as AckFrame;
      const entry = ack.id === null ? undefined : this.pending.get(ack.id);
      if (entry && ack.id !== null) {
        this.pending.delete(ack.id);
        clearTimeout(entry.timer);
        entry.resolve(ack);
      }
    }
    for (const h of this.handlers.frame) h(frame);
  }

  private failPending(reason: string): void {
    for (const [, entry] of this.pending) {
      clearTimeout(entry.timer);
      entry.reject(new Error(reason));
    }
    this.pending.clear();
  }

  /** Send one command; resolves with its ack (ok or not), rejects when
   * disconnected or when no ack arrives inside the timeout. */
  send(kind: CommandKind, payload: Record<string, unknown> = {}): Promise<AckFrame> {
    if (!COMMAND_KINDS.includes(kind)) {
      return Promise.reject(new Error(`unknown command kind ${String(kind)}`));
    }
    const socket = this.socket;
    if (this.state !== "connected" || socket === null) {
      return Promise.reject(new Error("not connected"));
    }
    const id = `c${this.nextId++}`;
    socket.send(JSON.stringify(buildCommand(kind, id, payload)));
    return new Promise<AckFrame>((resolve, reject) => {
      const timer = setTimeout(() => {
        this.pending.delete(id);
        reject(new Error(`no acknowledgement within ${this.ackTimeoutMs / 1000} s`));
      }, this.ackTimeoutMs);
      this.pending.set(id, { resolve, reject, timer });
    });
  }

  applyPush(draft: PushDraft): Promise<AckFrame> {
    const problems = validateDraft(draft);
    if (problems.length > 0) {
      return Promise.reject(new Error(problems.join("; ")));
    }
    return this.send("apply_push", { ...draft });
  }

  pause(): Promise<AckFrame> {
    return this.send("pause");
  }

  resume(): Promise<AckFrame> {
    return this.send("resume");
  }

  reset(): Promise<AckFrame> {
    return this.send("reset");
  }

  setConfig(values: Record<string, number>): Promise<AckFrame> {
    return this.send("set_config", { values });
  }

  close(): void {
    this.closedByUser = true;
    if (this.reconnectTimer !== null) clearTimeout(this.reconnectTimer);
    this.failPending("client closed");
    this.socket?.close();
    this.socket = null;
    this.state = "closed";
    this.emitState("closed");
  }
}
