import { describe, expect, it } from "vitest";

import {
  COMMAND_KINDS,
  PROTOCOL_VERSION,
  PushDraft,
  buildCommand,
  parseFrame,
  validateDraft,
} from "../src/protocol.js";

describe("command envelope", () => {
  it("permits exactly the five server commands", () => {
    expect([...COMMAND_KINDS]).toEqual([
      "apply_push",
      "pause",
      "resume",
      "reset",
      "set_config",
    ]);
  });

  it("stamps protocol version and id on every command", () => {
    const cmd = buildCommand("pause", "c7");
    expect(cmd).toEqual({ protocol_version: 1, kind: "pause", id: "c7" });
  });

  it("merges the payload without clobbering the envelope", () => {
    const cmd = buildCommand("apply_push", "c1", { link: 6, s: 0.8 });
    expect(cmd.protocol_version).toBe(PROTOCOL_VERSION);
    expect(cmd.link).toBe(6);
    expect(cmd.id).toBe("c1");
  });

  it.each(["tick", "hello", "detonate", ""])(
    "refuses to build non-command kind %j",
    (kind) => {
      expect(() => buildCommand(kind as never, "c1")).toThrow(
        "unknown command kind",
      );
    },
  );
});

describe("parseFrame", () => {
  const good = { protocol_version: 1, seq: 3, kind: "tick", t: 0.5 };

  it("accepts a well-formed frame", () => {
    const frame = parseFrame(JSON.stringify(good));
    expect(frame.kind).toBe("tick");
    expect(frame.seq).toBe(3);
  });

  it("rejects non-JSON", () => {
    expect(() => parseFrame("{nope")).toThrow("not valid JSON");
  });

  it("rejects non-object payloads", () => {
    expect(() => parseFrame("[1,2]")).toThrow("not an object");
    expect(() => parseFrame("4")).toThrow("not an object");
  });

  it("rejects a foreign protocol version", () => {
    expect(() =>
      parseFrame(JSON.stringify({ ...good, protocol_version: 2 })),
    ).toThrow("unsupported protocol version 2");
    const { protocol_version, ...missing } = good;
    expect(() => parseFrame(JSON.stringify(missing))).toThrow(
      "unsupported protocol version",
    );
  });

  it("rejects a missing or fractional seq", () => {
    const { seq, ...missing } = good;
    expect(() => parseFrame(JSON.stringify(missing))).toThrow("integer seq");
    expect(() => parseFrame(JSON.stringify({ ...good, seq: 1.5 }))).toThrow(
      "integer seq",
    );
  });

  it("rejects unknown frame kinds", () => {
    expect(() =>
      parseFrame(JSON.stringify({ ...good, kind: "surprise" })),
    ).toThrow("unknown frame kind surprise");
  });
});

describe("validateDraft", () => {
  const good: PushDraft = {
    link: 6,
    s: 0.8,
    force: [-20, 0, 0],
    duration: 0.5,
    profile: "constant",
  };

  it("passes a sound draft", () => {
    expect(validateDraft(good)).toEqual([]);
  });

  it.each<[Partial<PushDraft>, string]>([
    [{ link: 0 }, "link must be a positive integer"],
    [{ link: 2.5 }, "link must be a positive integer"],
    [{ s: 1.2 }, "s must lie in [0, 1]"],
    [{ s: Number.NaN }, "s must lie in [0, 1]"],
    [{ force: [1, Number.POSITIVE_INFINITY, 0] }, "three finite components"],
    [{ duration: 0 }, "duration must be positive"],
    [{ profile: "jolt" as never }, "profile must be one of"],
  ])("flags %j", (patch, message) => {
    const problems = validateDraft({ ...good, ...patch });
    expect(problems.length).toBeGreaterThan(0);
    expect(problems.join("; ")).toContain(message);
  });

  it("reports every problem at once", () => {
    const problems = validateDraft({
      link: -1,
      s: 9,
      force: [Number.NaN, 0, 0],
      duration: -2,
      profile: "wham" as never,
    });
    expect(problems).toHaveLength(5);
  });
});
