"""Two detection engines over the same run artifacts.

The static engine scans what is at rest: the served page assets plus
whatever the run wrote to disk. It matches a signature database of content
digests and a list of known-bad byte patterns. Against socket-delivered
payloads it is structurally blind: the malicious bytes are never at rest,
so even a database holding the exact digest of every delivered blob has
nothing to match.

The behavioral engine is a single-pass, bounded-memory monitor over the
ordered observation stream (the NDJSON event-log grammar the browser
simulator emits). Five context rules:

  R1  script injected from a socket within `injection_window` ticks of an
      inbound frame
  R2  worker spawned with a cross-origin script
  R3  service worker registered by a socket-injected script
  R4  keystroke hook followed by a keystroke-exfil frame within
      `exfil_window` ticks
  R5  outbound request rate to one target above `flood_rate_threshold`
      for two or more consecutive ticks

Score is the weighted sum of fired-rule indicators; a verdict is positive
when the score reaches the threshold. A replay-style "page load" engine
(R5 only) is provided for comparison; it models dynamic scanners that
execute a page briefly and therefore miss trigger-gated behavior.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

from .harness.report import RunReport, decode_bytes

RULES = ("R1", "R2", "R3", "R4", "R5")

DEFAULT_PATTERN_TOKENS = (
    b"eval(unescape(",
    b"eval(atob(",
    b"String.fromCharCode(",
    b"ActiveXObject",
    b"document.write(unescape(",
    b"shell_exec(",
    b"miner.start(",
)


class DetectorError(ValueError):
    pass


class MalformedStream(DetectorError):
    pass


class EmptyCorpus(DetectorError):
    pass


@dataclass(frozen=True)
class DetectorConfig:
    threshold: float = 1.0
    weights: tuple = (1.0, 1.0, 1.0, 1.0, 1.0)  # R1..R5
    exfil_window: int = 64
    flood_rate_threshold: int = 20
    injection_window: int = 2
    signature_db: tuple = ()  # hex sha256 digests of known-bad content
    enabled_rules: tuple = RULES
    pattern_tokens: tuple = DEFAULT_PATTERN_TOKENS

    def __post_init__(self) -> None:
        if len(self.weights) != 5 or any(w < 0 for w in self.weights):
            raise DetectorError("weights must be five non-negative reals")

    def weight(self, rule_id: str) -> float:
        return self.weights[RULES.index(rule_id)]


def page_load_dynamic_config(cfg: DetectorConfig | None = None) -> DetectorConfig:
    """The replay-style comparison engine: behavioral monitor, R5 only."""
    return replace(cfg or DetectorConfig(), enabled_rules=("R5",))


@dataclass(frozen=True)
class Flag:
    rule_id: str
    tick: int
    evidence: str


@dataclass(frozen=True)
class Verdict:
    detected: bool
    score: float
    flags: tuple
    engine: str

    def to_dict(self) -> dict:
        return {
            "detected": self.detected,
            "score": self.score,
            "engine": self.engine,
            "flags": [
                {"rule_id": f.rule_id, "tick": f.tick, "evidence": f.evidence} for f in self.flags
            ],
        }


# --------------------------------------------------------------------------
# Static engine

@dataclass(frozen=True)
class AtRestFile:
    path: str
    content: bytes
    tick: int = 0


@dataclass(frozen=True)
class ArtifactCorpus:
    """What a scanner can see at rest: served assets and disk writes."""

    at_rest_files: tuple

    @classmethod
    def from_report(cls, report: RunReport) -> "ArtifactCorpus":
        files = [
            AtRestFile(path=a["path"], content=a["content"].encode("utf-8"))
            for a in report.static_assets
        ]
        for client in sorted(report.clients):
            for fw in report.clients[client]["filesystem_log"]:
                files.append(
                    AtRestFile(
                        path=fw["path"],
                        content=decode_bytes(fw.get("content_b64", "")),
                        tick=fw["tick"],
                    )
                )
        return cls(at_rest_files=tuple(files))


def static_scan(corpus: ArtifactCorpus, cfg: DetectorConfig | None = None) -> Verdict:
    """Signature and pattern matching over at-rest bytes only."""
    import hashlib

    cfg = cfg or DetectorConfig()
    db = {d.lower() for d in cfg.signature_db}
    flags = []
    for entry in corpus.at_rest_files:
        digest = hashlib.sha256(entry.content).hexdigest()
        if digest in db:
            flags.append(
                Flag(rule_id="SIG_MATCH", tick=entry.tick, evidence=f"{entry.path} sha256={digest[:16]}")
            )
        for token in cfg.pattern_tokens:
            if token in entry.content:
                flags.append(
                    Flag(
                        rule_id="PATTERN",
                        tick=entry.tick,
                        evidence=f"{entry.path} contains {token.decode('ascii', 'replace')!r}",
                    )
                )
    score = float(len(flags))
    return Verdict(detected=score >= cfg.threshold, score=score, flags=tuple(flags), engine="Static")


# --------------------------------------------------------------------------
# Behavioral engine

class _FloodWindow:
    """Per (client, target) two-bucket window: the tick being filled plus
    whether the previous tick exceeded the rate threshold."""

    __slots__ = ("cur_tick", "cur_count", "prev_tick", "prev_exceeded")

    def __init__(self) -> None:
        self.cur_tick = -1
        self.cur_count = 0
        self.prev_tick = -2
        self.prev_exceeded = False


class BehaviorMonitor:
    """Single-pass continuous monitor; feed observations in stream order and
    ask for the verdict at any point. Memory stays bounded by clients seen,
    not by stream length."""

    def __init__(self, cfg: DetectorConfig | None = None):
        self.cfg = cfg or DetectorConfig()
        self._last_tick = -1
        self._fired: set = set()  # (rule_id, client) pairs, latched
        self._flags: list = []
        self._last_frame_in: dict = {}  # client -> tick
        self._hook_tick: dict = {}  # client -> tick
        self._flood: dict = {}  # (client, target) -> _FloodWindow

    def _fire(self, rule_id: str, client: str, tick: int, evidence: str) -> None:
        if rule_id not in self.cfg.enabled_rules:
            return
        if (rule_id, client) in self._fired:
            return
        self._fired.add((rule_id, client))
        self._flags.append(Flag(rule_id=rule_id, tick=tick, evidence=evidence))

    def feed(self, record: dict) -> None:
        if not isinstance(record, dict):
            raise MalformedStream(f"observation must be an object, got {record!r}")
        try:
            tick = record["tick"]
            kind = record["kind"]
        except (KeyError, TypeError) as exc:
            raise MalformedStream(f"observation missing tick/kind: {record!r}") from exc
        if not isinstance(tick, int) or tick < self._last_tick:
            raise MalformedStream(f"ticks must be non-decreasing, got {tick!r} after {self._last_tick}")
        self._last_tick = tick
        client = record.get("client_id", "c?")

        if kind == "frame_in":
            self._last_frame_in[client] = tick
        elif kind == "script_injected" and record.get("source") == "socket":
            last = self._last_frame_in.get(client)
            if last is not None and tick - last <= self.cfg.injection_window:
                self._fire(
                    "R1",
                    client,
                    tick,
                    f"{client}: socket-injected script {tick - last} ticks after inbound frame",
                )
        elif kind == "worker_spawned" and record.get("cross_origin"):
            self._fire(
                "R2", client, tick, f"{client}: cross-origin worker {record.get('worker_id', '?')}"
            )
        elif kind == "sw_registered" and record.get("registered_by") == "socket":
            self._fire(
                "R3", client, tick, f"{client}: service worker registered by injected script"
            )
        elif kind == "keystroke_hook_set":
            self._hook_tick[client] = tick
        elif kind == "frame_out" and record.get("frame_type") == "ExfilKeystrokes":
            hook = self._hook_tick.get(client)
            if hook is not None and tick - hook <= self.cfg.exfil_window:
                self._fire(
                    "R4", client, tick, f"{client}: keystroke exfil {tick - hook} ticks after hook"
                )
        elif kind == "outbound_request":
            target = record.get("target", "?")
            window = self._flood.setdefault((client, target), _FloodWindow())
            if window.cur_tick != tick:
                self._finalize_flood(client, target, window, tick)
            window.cur_count += 1
            if self._flood_fires(window, open_count=window.cur_count):
                self._fire(
                    "R5",
                    client,
                    tick,
                    f"{client}: >{self.cfg.flood_rate_threshold} req/tick toward {target}, 2+ ticks",
                )

    def _finalize_flood(self, client: str, target: str, window: _FloodWindow, new_tick: int) -> None:
        if window.cur_tick >= 0:
            exceeded = window.cur_count > self.cfg.flood_rate_threshold
            window.prev_tick, window.prev_exceeded = window.cur_tick, exceeded
        window.cur_tick, window.cur_count = new_tick, 0

    def _flood_fires(self, window: _FloodWindow, open_count: int) -> bool:
        return (
            window.prev_exceeded
            and window.cur_tick == window.prev_tick + 1
            and open_count > self.cfg.flood_rate_threshold
        )

    def verdict(self) -> Verdict:
        """Current verdict; non-destructive, so streams may keep feeding."""
        fired_rules = {rule for rule, _ in self._fired}
        score = sum(self.cfg.weight(rule) for rule in fired_rules)
        return Verdict(
            detected=score >= self.cfg.threshold,
            score=score,
            flags=tuple(sorted(self._flags, key=lambda f: (f.tick, f.rule_id, f.evidence))),
            engine="Behavioral" if set(self.cfg.enabled_rules) != {"R5"} else "DynamicPageLoad",
        )


def behavior_monitor(stream, cfg: DetectorConfig | None = None) -> Verdict:
    """Run the continuous monitor over an ordered observation stream."""
    monitor = BehaviorMonitor(cfg)
    for record in stream:
        monitor.feed(record)
    return monitor.verdict()


def observations_from_report(report: RunReport) -> list:
    """Merge per-client event logs into one ordered stream, tagging each
    record with its client id; same grammar, globally (tick, client, seq)
    sorted."""
    merged = []
    for client_id in sorted(report.clients):
        for record in report.clients[client_id]["event_log"]:
            tagged = dict(record)
            tagged["client_id"] = client_id
            merged.append(tagged)
    merged.sort(key=lambda r: (r["tick"], r["client_id"], r["seq"]))
    return merged


# --------------------------------------------------------------------------
# Evaluation

@dataclass(frozen=True)
class Metrics:
    tpr: float | None
    fpr: float | None
    per_rule_counts: dict
    malicious: int
    benign: int
    detected_malicious: int
    detected_benign: int

    def to_dict(self) -> dict:
        return {
            "tpr": self.tpr,
            "fpr": self.fpr,
            "per_rule_counts": self.per_rule_counts,
            "malicious": self.malicious,
            "benign": self.benign,
            "detected_malicious": self.detected_malicious,
            "detected_benign": self.detected_benign,
        }


def verdict_for_report(report: RunReport, cfg: DetectorConfig, engine: str) -> Verdict:
    if engine == "static":
        return static_scan(ArtifactCorpus.from_report(report), cfg)
    if engine == "behavioral":
        return behavior_monitor(observations_from_report(report), cfg)
    if engine == "dynamic_r5":
        return behavior_monitor(observations_from_report(report), page_load_dynamic_config(cfg))
    raise DetectorError(f"unknown engine {engine!r}")


def evaluate(labeled_runs, cfg: DetectorConfig | None = None, engine: str = "behavioral") -> Metrics:
    """Detection quality over labeled runs: true/false positive rates plus
    how often each rule fired. Deterministic; an empty corpus is an error
    and a one-sided corpus reports the undefined rate as None."""
    cfg = cfg or DetectorConfig()
    runs = list(labeled_runs)
    if not runs:
        raise EmptyCorpus("no runs to evaluate")
    malicious = benign = 0
    hit_malicious = hit_benign = 0
    rule_counts = {rule: 0 for rule in RULES} | {"SIG_MATCH": 0, "PATTERN": 0}
    for report, label in runs:
        if label not in ("malicious", "benign"):
            raise DetectorError(f"label must be malicious|benign, got {label!r}")
        verdict = verdict_for_report(report, cfg, engine)
        for rule in {f.rule_id for f in verdict.flags}:
            rule_counts[rule] = rule_counts.get(rule, 0) + 1
        if label == "malicious":
            malicious += 1
            hit_malicious += int(verdict.detected)
        else:
            benign += 1
            hit_benign += int(verdict.detected)
    return Metrics(
        tpr=(hit_malicious / malicious) if malicious else None,
        fpr=(hit_benign / benign) if benign else None,
        per_rule_counts=rule_counts,
        malicious=malicious,
        benign=benign,
        detected_malicious=hit_malicious,
        detected_benign=hit_benign,
    )
