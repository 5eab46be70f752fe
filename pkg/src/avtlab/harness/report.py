"""Run report: everything a finished scenario produced, serializable to
byte-identical JSON for identical configuration and seeds."""

from __future__ import annotations

import base64
import json
from dataclasses import dataclass, field


@dataclass
class RunReport:
    config: dict
    seeds: dict
    ticks: int
    clients: dict = field(default_factory=dict)
    cnc: dict = field(default_factory=dict)
    delivered_blobs: list = field(default_factory=list)
    ddos: dict = field(default_factory=dict)
    network: dict = field(default_factory=dict)
    static_assets: list = field(default_factory=list)
    verdicts: dict = field(default_factory=dict)
    truncated: bool = False

    def to_dict(self) -> dict:
        return {
            "config": self.config,
            "seeds": self.seeds,
            "ticks": self.ticks,
            "clients": self.clients,
            "cnc": self.cnc,
            "delivered_blobs": self.delivered_blobs,
            "ddos": self.ddos,
            "network": self.network,
            "static_assets": self.static_assets,
            "verdicts": self.verdicts,
            "truncated": self.truncated,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"

    @classmethod
    def from_dict(cls, data: dict) -> "RunReport":
        return cls(
            config=data["config"],
            seeds=data["seeds"],
            ticks=data["ticks"],
            clients=data.get("clients", {}),
            cnc=data.get("cnc", {}),
            delivered_blobs=data.get("delivered_blobs", []),
            ddos=data.get("ddos", {}),
            network=data.get("network", {}),
            static_assets=data.get("static_assets", []),
            verdicts=data.get("verdicts", {}),
            truncated=data.get("truncated", False),
        )

    @classmethod
    def from_json(cls, text: str) -> "RunReport":
        return cls.from_dict(json.loads(text))


def encode_bytes(raw: bytes) -> str:
    return base64.b64encode(raw).decode("ascii")


def decode_bytes(text: str) -> bytes:
    return base64.b64decode(text)
