import { afterEach, beforeEach, describe, expect, it, vi } from "vitest";

import {
  ACK_TIMEOUT_MS,
  LiveClient,
  SocketLike,
  backoffDelay,
} from "../src/client.js";
import { COMMAND_KINDS, PROTOCOL_VERSION } from "../src/protocol.js";

class FakeSocket implements SocketLike {
  static instances: FakeSocket[] = [];
  sent: string[] = [];
  open_ = false;
  onopen: (() => void) | null = null;
  onmessage: ((event: { data: string }) => void) | null = null;
  onclose: (() => void) | null = null;
  onerror: (() => void) | null = null;

  constructor(readonly url: string) {
    FakeSocket.instances.push(this);
  }

  send(data: string): void {
    if (!this.open_) throw new Error("socket not open");
    this.sent.push(data);
  }

  close(): void {
    this.open_ = false;
  }

  accept(): void {
    this.open_ = true;
    this.onopen?.();
  }

  push(frame: Record<string, unknown>): void {
    this.onmessage?.({ data: JSON.stringify(frame) });
  }

  pushRaw(data: string): void {
    this.onmessage?.({ data });
  }

  drop(): void {
    this.open_ = false;
    this.onclose?.();
  }
}

function connected(): { client: LiveClient; socket: FakeSocket } {
  const client = new LiveClient("ws://example.test/ws", {
    socketFactory: (url) => new FakeSocket(url),
  });
  client.connect();
  const socket = FakeSocket.instances[FakeSocket.instances.length - 1]!;
  socket.accept();
  return { client, socket };
}

function sentKinds(socket: FakeSocket): string[] {
  return socket.sent.map((s) => JSON.parse(s).kind as string);
}

function ackFor(socket: FakeSocket, index: number, ok = true, seq = 100) {
  const cmd = JSON.parse(socket.sent[index]!) as { id: string };
  return {
    protocol_version: 1,
    seq,
    kind: "ack",
    id: cmd.id,
    ok,
    tick: 42,
    error: ok ? null : "rejected",
  };
}

beforeEach(() => {
  FakeSocket.instances = [];
  vi.useFakeTimers();
});

afterEach(() => {
  vi.useRealTimers();
});

describe("outbound discipline", () => {
  it("every UI action sends only allowed kinds, stamped and uniquely tagged", async () => {
    const { client, socket } = connected();
    const settled = Promise.allSettled([
      client.applyPush({
        link: 6,
        s: 0.8,
        force: [-20, 0, 0],
        duration: 0.5,
        profile: "constant",
      }),
      client.pause(),
      client.resume(),
      client.reset(),
      client.setConfig({ "planner.gain": 0.02 }),
    ]);
    expect(socket.sent).toHaveLength(5);
    const frames = socket.sent.map((s) => JSON.parse(s));
    for (const frame of frames) {
      expect(COMMAND_KINDS).toContain(frame.kind);
      expect(frame.protocol_version).toBe(PROTOCOL_VERSION);
      expect(typeof frame.id).toBe("string");
    }
    expect(new Set(frames.map((f) => f.id)).size).toBe(5);
    expect(sentKinds(socket)).toEqual([
      "apply_push",
      "pause",
      "resume",
      "reset",
      "set_config",
    ]);
    vi.advanceTimersByTime(ACK_TIMEOUT_MS + 1);
    await settled;
  });

  it("refuses an unknown command kind without touching the socket", async () => {
    const { client, socket } = connected();
    await expect(
      client.send("detonate" as never),
    ).rejects.toThrow("unknown command kind");
    expect(socket.sent).toHaveLength(0);
  });

  it("rejects an invalid push draft before sending", async () => {
    const { client, socket } = connected();
    await expect(
      client.applyPush({
        link: 0,
        s: 2,
        force: [1, 2, 3],
        duration: 0.5,
        profile: "constant",
      }),
    ).rejects.toThrow("link must be a positive integer");
    expect(socket.sent).toHaveLength(0);
  });

  it("rejects sends while disconnected", async () => {
    const client = new LiveClient("ws://example.test/ws", {
      socketFactory: (url) => new FakeSocket(url),
    });
    await expect(client.pause()).rejects.toThrow("not connected");
  });
});

describe("ack correlation", () => {
  it("resolves the matching command and only it", async () => {
    const { client, socket } = connected();
    const first = client.pause();
    const second = client.resume();
    socket.push(ackFor(socket, 1, true, 10));
    const ack = await second;
    expect(ack.ok).toBe(true);
    expect(ack.tick).toBe(42);
    socket.push(ackFor(socket, 0, false, 11));
    const nack = await first;
    expect(nack.ok).toBe(false);
    expect(nack.error).toBe("rejected");
  });

  it("times out a command the server never answers", async () => {
    const { client } = connected();
    const pending = client.pause();
    const outcome = expect(pending).rejects.toThrow("no acknowledgement within 2 s");
    vi.advanceTimersByTime(ACK_TIMEOUT_MS + 1);
    await outcome;
  });

  it("fails pending commands when the connection drops", async () => {
    const { client, socket } = connected();
    const pending = client.pause();
    const outcome = expect(pending).rejects.toThrow("connection lost");
    socket.drop();
    await outcome;
  });
});

describe("inbound discipline", () => {
  it("counts malformed frames instead of crashing", () => {
    const { client, socket } = connected();
    const seen: string[] = [];
    client.on("protocolError", (m) => seen.push(m));
    socket.pushRaw("{nope");
    socket.push({ protocol_version: 9, seq: 1, kind: "tick" });
    socket.push({ protocol_version: 1, seq: 2, kind: "mystery" });
    expect(client.protocolErrors).toBe(3);
    expect(seen).toHaveLength(3);
  });

  it("flags a seq that goes backwards", () => {
    const { client, socket } = connected();
    socket.push({ protocol_version: 1, seq: 5, kind: "tick" });
    socket.push({ protocol_version: 1, seq: 6, kind: "tick" });
    socket.push({ protocol_version: 1, seq: 3, kind: "tick" });
    expect(client.protocolErrors).toBe(1);
    socket.push({ protocol_version: 1, seq: 7, kind: "tick" });
    expect(client.protocolErrors).toBe(1);
  });

  it("accepts a fresh seq stream after reconnecting", () => {
    const { client, socket } = connected();
    socket.push({ protocol_version: 1, seq: 500, kind: "tick" });
    socket.drop();
    vi.advanceTimersByTime(backoffDelay(0) + 1);
    const next = FakeSocket.instances[FakeSocket.instances.length - 1]!;
    expect(next).not.toBe(socket);
    next.accept();
    next.push({ protocol_version: 1, seq: 1, kind: "tick" });
    expect(client.protocolErrors).toBe(0);
  });

  it("delivers frames to subscribers in arrival order", () => {
    const { client, socket } = connected();
    const kinds: string[] = [];
    client.on("frame", (f) => kinds.push(f.kind));
    socket.push({ protocol_version: 1, seq: 1, kind: "hello" });
    socket.push({ protocol_version: 1, seq: 2, kind: "path_update" });
    socket.push({ protocol_version: 1, seq: 3, kind: "tick" });
    expect(kinds).toEqual(["hello", "path_update", "tick"]);
  });
});

describe("reconnect backoff", () => {
  it("doubles from 1 s and caps at 30 s", () => {
    expect([0, 1, 2, 3, 4, 5, 6, 10].map(backoffDelay)).toEqual([
      1000, 2000, 4000, 8000, 16000, 30000, 30000, 30000,
    ]);
  });

  it("schedules retries on the capped schedule and recovers", () => {
    const client = new LiveClient("ws://example.test/ws", {
      socketFactory: (url) => new FakeSocket(url),
    });
    client.connect();
    expect(FakeSocket.instances).toHaveLength(1);
    // each failed socket schedules the next attempt one step later
    const steps = [1000, 2000, 4000, 8000, 16000, 30000, 30000];
    steps.forEach((delay, i) => {
      FakeSocket.instances[FakeSocket.instances.length - 1]!.drop();
      vi.advanceTimersByTime(delay - 1);
      expect(FakeSocket.instances).toHaveLength(i + 1);
      vi.advanceTimersByTime(2);
      expect(FakeSocket.instances).toHaveLength(i + 2);
    });
    const survivor = FakeSocket.instances[FakeSocket.instances.length - 1]!;
    survivor.accept();
    expect(client.state).toBe("connected");
    // the next failure starts the schedule over
    survivor.drop();
    vi.advanceTimersByTime(1001);
    expect(FakeSocket.instances).toHaveLength(steps.length + 2);
  });

  it("stays down after an explicit close", () => {
    const { client, socket } = connected();
    client.close();
    socket.drop();
    vi.advanceTimersByTime(120000);
    expect(FakeSocket.instances).toHaveLength(1);
    expect(client.state).toBe("closed");
  });
});
