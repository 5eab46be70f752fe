"""Labeled scenario corpus generation.

Builds deterministic mixes of malicious and benign scenarios for detector
evaluation. Malicious archetypes cycle through the shipped payloads and
trigger styles; most are trigger-gated (nothing misbehaves until a chat
token or a timer), which is exactly what page-load style dynamic analysis
misses. Benign archetypes model ordinary chat traffic, same-origin
background workers, and an offline-cache service worker so false-positive
rates mean something.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

from ..cnc_sim import ScenarioConfig
from .clock import domain_rng

DEFAULT_CORPUS_SEED = 2641


@dataclass(frozen=True)
class CorpusEntry:
    name: str
    label: str  # "malicious" | "benign"
    trigger_gated: bool
    config: ScenarioConfig


def _keystrokes(client: str, start: int, text: str) -> list:
    return [[start + i // 3, client, {"event": "Keystroke", "key": k}] for i, k in enumerate(text)]


def _victim_data(rng) -> dict:
    return {
        "*": {
            "cookies": {"session": f"s{rng.randrange(10**8):08d}", "lang": "en"},
            "web_storage": {"cart": f"{rng.randint(0, 9)} items"},
        }
    }


# -- malicious archetypes -----------------------------------------------------
# Each builder returns (config dict, trigger_gated).

def _m_keylog_chat(rng, seeds):
    t = rng.randint(6, 9)
    script = [
        [t - 2, "c0", {"event": "ChatMessage", "text": "morning all"}],
        [t, "c0", {"event": "ChatMessage", "text": "ok tr1gger now"}],
    ] + _keystrokes("c0", t + 1, "pay roll pin 4412")
    return {
        "mode": "malicious_server",
        "payload_names": ["keycookielog"],
        "user_event_script": script,
        "victim_data": _victim_data(rng),
        "seeds": seeds,
    }, True


def _m_keylog_attick(rng, seeds):
    t = rng.randint(9, 14)
    script = _keystrokes("c0", t + 1, "quarterly numbers")
    return {
        "mode": "compromised_app",
        "payload_names": ["keycookielog"],
        "trigger_overrides": {"keycookielog": {"kind": "AtTick", "tick": t}},
        "user_event_script": script,
        "victim_data": _victim_data(rng),
        "seeds": seeds,
    }, True


def _m_mapworker_chat(rng, seeds):
    t = rng.randint(5, 8)
    data = " ".join(f"w{rng.randrange(9)}" for _ in range(rng.randint(20, 60)))
    return {
        "mode": "compromised_app",
        "payload_names": ["map_worker"],
        "trigger_overrides": {"map_worker": {"kind": "OnEvent", "token": "mine"}},
        "user_event_script": [[t, "c0", {"event": "ChatMessage", "text": "time to mine friends"}]],
        "mapreduce": {"fn_id": "WordCount", "data": data, "chunk_size": 24},
        "seeds": seeds,
        "max_ticks": 400,
    }, True


def _m_blobworker_attick(rng, seeds):
    t = rng.randint(8, 12)
    return {
        "mode": "malicious_server",
        "payload_names": ["blob_worker"],
        "trigger_overrides": {"blob_worker": {"kind": "AtTick", "tick": t}},
        "seeds": seeds,
    }, True


def _m_keylog_navigate(rng, seeds):
    t = rng.randint(5, 7)
    script = (
        [[t, "c0", {"event": "ChatMessage", "text": "psst tr1gger"}]]
        + _keystrokes("c0", t + 1, "wire the funds")
        + [[t + 9, "c0", {"event": "Navigate"}]]
    )
    return {
        "mode": "compromised_app",
        "payload_names": ["keycookielog"],
        "user_event_script": script,
        "victim_data": _victim_data(rng),
        "seeds": seeds,
    }, True


def _m_blobworker_chat(rng, seeds):
    t = rng.randint(5, 9)
    return {
        "mode": "compromised_app",
        "payload_names": ["blob_worker"],
        "trigger_overrides": {"blob_worker": {"kind": "OnEvent", "token": "borrow"}},
        "user_event_script": [[t, "c0", {"event": "ChatMessage", "text": "can I borrow cycles"}]],
        "seeds": seeds,
    }, True


def _m_ddos_gated(rng, seeds):
    t = rng.randint(5, 8)
    return {
        "mode": "malicious_server",
        "payload_names": ["ddos_bot"],
        "trigger_overrides": {"ddos_bot": {"kind": "OnEvent", "token": "launch"}},
        "user_event_script": [[t, "c0", {"event": "ChatMessage", "text": "launch it"}]],
        "seeds": seeds,
    }, True


def _m_ddos_immediate(rng, seeds):
    return {
        "mode": "malicious_server",
        "payload_names": ["ddos_bot"],
        "n_clients": rng.randint(1, 3),
        "seeds": seeds,
    }, False


def _m_mapworker_immediate(rng, seeds):
    data = " ".join(str(rng.randrange(40)) for _ in range(rng.randint(15, 40)))
    return {
        "mode": "compromised_app",
        "payload_names": ["map_worker"],
        "mapreduce": {"fn_id": "SumOfSquares", "data": data, "chunk_size": 16},
        "n_clients": rng.randint(1, 2),
        "seeds": seeds,
        "max_ticks": 400,
    }, False


def _m_combo_immediate(rng, seeds):
    return {
        "mode": "compromised_app",
        "payload_names": ["keycookielog", "blob_worker"],
        "trigger_overrides": {"keycookielog": {"kind": "Immediate"}},
        "user_event_script": _keystrokes("c0", 6, "status report drafts"),
        "victim_data": _victim_data(rng),
        "seeds": seeds,
    }, False


_MALICIOUS_BUILDERS = (
    ("keylog_chat", _m_keylog_chat),
    ("keylog_attick", _m_keylog_attick),
    ("mapworker_chat", _m_mapworker_chat),
    ("blobworker_attick", _m_blobworker_attick),
    ("keylog_navigate", _m_keylog_navigate),
    ("blobworker_chat", _m_blobworker_chat),
    ("ddos_gated", _m_ddos_gated),
    ("ddos_immediate", _m_ddos_immediate),
    ("mapworker_immediate", _m_mapworker_immediate),
    ("combo_immediate", _m_combo_immediate),
)


# -- benign archetypes ----------------------------------------------------------

def _chatter(rng, client: str, start: int, count: int) -> list:
    lines = ["hi", "how is it going", "lunch?", "see the game?", "brb", "done for today"]
    return [
        [start + i * rng.randint(1, 3), client, {"event": "ChatMessage", "text": rng.choice(lines)}]
        for i in range(count)
    ]


def _b_chat_basic(rng, seeds):
    return {
        "mode": "compromised_app",
        "stub": False,
        "user_event_script": _chatter(rng, "c0", 1, rng.randint(3, 8)),
        "seeds": seeds,
    }


def _b_typing(rng, seeds):
    return {
        "mode": "compromised_app",
        "stub": False,
        "user_event_script": _keystrokes("c0", 2, "just drafting a long note to the team"),
        "seeds": seeds,
    }


def _b_same_origin_worker(rng, seeds):
    return {
        "mode": "compromised_app",
        "stub": False,
        "static_scripts": ["app.js", {"name": "worker_boot.js", "behavior": "same_origin_worker"}],
        "user_event_script": _chatter(rng, "c0", 2, 3),
        "seeds": seeds,
    }


def _b_offline_sw(rng, seeds):
    return {
        "mode": "compromised_app",
        "stub": False,
        "static_scripts": ["app.js", {"name": "sw_boot.js", "behavior": "offline_cache_sw"}],
        "user_event_script": _chatter(rng, "c0", 2, 3),
        "seeds": seeds,
    }


def _b_worker_and_sw(rng, seeds):
    return {
        "mode": "compromised_app",
        "stub": False,
        "static_scripts": [
            "app.js",
            {"name": "worker_boot.js", "behavior": "same_origin_worker"},
            {"name": "sw_boot.js", "behavior": "offline_cache_sw"},
        ],
        "user_event_script": _chatter(rng, "c0", 1, 4) + _keystrokes("c0", 3, "notes"),
        "seeds": seeds,
    }


def _b_lifecycle(rng, seeds):
    return {
        "mode": "compromised_app",
        "stub": False,
        "user_event_script": _chatter(rng, "c0", 1, 3)
        + [[rng.randint(8, 10), "c0", {"event": "Navigate"}]],
        "seeds": seeds,
    }


def _b_busy_board(rng, seeds):
    return {
        "mode": "compromised_app",
        "stub": False,
        "n_clients": 2,
        "user_event_script": _chatter(rng, "c0", 1, 6) + _chatter(rng, "c1", 2, 6),
        "seeds": seeds,
    }


def _b_quiet(rng, seeds):
    return {"mode": "compromised_app", "stub": False, "seeds": seeds}


def _b_restart(rng, seeds):
    return {
        "mode": "compromised_app",
        "stub": False,
        "user_event_script": _chatter(rng, "c0", 1, 2)
        + [[rng.randint(6, 9), "c0", {"event": "MachineRestart"}]],
        "seeds": seeds,
    }


def _b_close(rng, seeds):
    return {
        "mode": "compromised_app",
        "stub": False,
        "user_event_script": _keystrokes("c0", 1, "short note")
        + [[rng.randint(7, 10), "c0", {"event": "BrowserClose"}]],
        "seeds": seeds,
    }


_BENIGN_BUILDERS = (
    ("chat_basic", _b_chat_basic),
    ("typing", _b_typing),
    ("same_origin_worker", _b_same_origin_worker),
    ("offline_sw", _b_offline_sw),
    ("worker_and_sw", _b_worker_and_sw),
    ("lifecycle", _b_lifecycle),
    ("busy_board", _b_busy_board),
    ("quiet", _b_quiet),
    ("restart", _b_restart),
    ("close", _b_close),
)


def build_corpus(
    n_benign: int = 20, n_malicious: int = 20, seed: int = DEFAULT_CORPUS_SEED
) -> list:
    """Deterministic labeled corpus; same (counts, seed) gives identical
    scenarios."""
    rng = domain_rng(seed, "corpus")
    entries = []
    for i in range(n_malicious):
        name, builder = _MALICIOUS_BUILDERS[i % len(_MALICIOUS_BUILDERS)]
        seeds = {"obfuscation": rng.randrange(2**32), "rng": rng.randrange(2**32)}
        data, gated = builder(rng, seeds)
        data["name"] = f"malicious_{i:03d}_{name}"
        entries.append(
            CorpusEntry(
                name=data["name"],
                label="malicious",
                trigger_gated=gated,
                config=ScenarioConfig.from_dict(data),
            )
        )
    for i in range(n_benign):
        name, builder = _BENIGN_BUILDERS[i % len(_BENIGN_BUILDERS)]
        seeds = {"obfuscation": rng.randrange(2**32), "rng": rng.randrange(2**32)}
        data = builder(rng, seeds)
        data["name"] = f"benign_{i:03d}_{name}"
        entries.append(
            CorpusEntry(
                name=data["name"],
                label="benign",
                trigger_gated=False,
                config=ScenarioConfig.from_dict(data),
            )
        )
    return entries


def control_scenario(seed: int = DEFAULT_CORPUS_SEED) -> ScenarioConfig:
    """The planted-file control: identical delivery, but the client writes
    the received blob to disk, which a signature scan must then catch."""
    rng = domain_rng(seed, "control")
    data, _ = _m_keylog_chat(rng, {"obfuscation": rng.randrange(2**32), "rng": rng.randrange(2**32)})
    data["name"] = "control_planted_blob"
    data["plant_blob_file"] = True
    return ScenarioConfig.from_dict(data)


def write_corpus(directory, entries) -> Path:
    """Write scenario files plus a labels manifest; returns the manifest path."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    manifest = []
    for entry in entries:
        path = directory / f"{entry.name}.json"
        path.write_text(
            json.dumps(entry.config.to_dict(), sort_keys=True, indent=2) + "\n", encoding="utf-8"
        )
        manifest.append(
            {
                "name": entry.name,
                "label": entry.label,
                "trigger_gated": entry.trigger_gated,
                "file": path.name,
            }
        )
    manifest_path = directory / "labels.json"
    manifest_path.write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
    return manifest_path


def load_corpus(directory) -> list:
    directory = Path(directory)
    manifest = json.loads((directory / "labels.json").read_text(encoding="utf-8"))
    entries = []
    for item in manifest:
        config = ScenarioConfig.from_file(directory / item["file"])
        entries.append(
            CorpusEntry(
                name=item["name"],
                label=item["label"],
                trigger_gated=item["trigger_gated"],
                config=config,
            )
        )
    return entries
