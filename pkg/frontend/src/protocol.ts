/** Wire contract with the live service: the command set the client may
 * send, the frame kinds the server may answer with, and the validation
 * applied on both directions. */

export const PROTOCOL_VERSION = 1;

export const COMMAND_KINDS = [
  "apply_push",
  "pause",
  "resume",
  "reset",
  "set_config",
] as const;
export type CommandKind = (typeof COMMAND_KINDS)[number];

export const SERVER_KINDS = [
  "hello",
  "tick",
  "detection",
  "estimate",
  "bump",
  "path_update",
  "metrics",
  "ack",
  "error",
] as const;
export type ServerKind = (typeof SERVER_KINDS)[number];

export const PUSH_PROFILES = ["constant", "trapezoid", "half_sine"] as const;
export type PushProfile = (typeof PUSH_PROFILES)[number];

export interface PushDraft {
  link: number;
  s: number;
  force: [number, number, number];
  duration: number;
  profile: PushProfile;
}

/** Server frame after parseFrame: the envelope is checked, kind-specific
 * fields are read out loosely where the UI needs them. */
export interface ServerFrame {
  protocol_version: number;
  seq: number;
  kind: ServerKind;
  [key: string]: unknown;
}

export interface AckFrame extends ServerFrame {
  kind: "ack";
  id: string | null;
  ok: boolean;
  tick: number;
  error: string | null;
}

export function buildCommand(
  kind: CommandKind,
  id: string,
  payload: Record<string, unknown> = {},
): Record<string, unknown> {
  if (!COMMAND_KINDS.includes(kind)) {
    throw new Error(`unknown command kind ${String(kind)}`);
  }
  return { protocol_version: PROTOCOL_VERSION, kind, id, ...payload };
}

/** Strict envelope check; throws with a reason usable in the UI log. */
export function parseFrame(text: string): ServerFrame {
  let raw: unknown;
  try {
    raw = JSON.parse(text);
  } catch {
    throw new Error("frame is not valid JSON");
  }
  if (typeof raw !== "object" || raw === null || Array.isArray(raw)) {
    throw new Error("frame is not an object");
  }
  const frame = raw as Record<string, unknown>;
  if (frame.protocol_version !== PROTOCOL_VERSION) {
    throw new Error(
      `unsupported protocol version ${String(frame.protocol_version)}`,
    );
  }
  if (typeof frame.seq !== "number" || !Number.isInteger(frame.seq)) {
    throw new Error("frame has no integer seq");
  }
  if (
    typeof frame.kind !== "string" ||
    !SERVER_KINDS.includes(frame.kind as ServerKind)
  ) {
    throw new Error(`unknown frame kind ${String(frame.kind)}`);
  }
  return frame as unknown as ServerFrame;
}

/** Pre-send checks for the push form; returns human-readable problems,
 * empty when the draft can go out. */
export function validateDraft(draft: PushDraft): string[] {
  const errors: string[] = [];
  if (!Number.isInteger(draft.link) || draft.link < 1) {
    errors.push("link must be a positive integer");
  }
  if (!(draft.s >= 0 && draft.s <= 1)) {
    errors.push("s must lie in [0, 1]");
  }
  if (
    !Array.isArray(draft.force) ||
    draft.force.length !== 3 ||
    draft.force.some((v) => !Number.isFinite(v))
  ) {
    errors.push("force needs three finite components");
  }
  if (!(draft.duration > 0)) {
    errors.push("duration must be positive");
  }
  if (!PUSH_PROFILES.includes(draft.profile)) {
    errors.push(`profile must be one of ${PUSH_PROFILES.join(", ")}`);
  }
  return errors;
}
