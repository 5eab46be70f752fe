"""Deterministic state machine of one victim browser.

Models page contexts, the main thread, background workers, service workers,
socket channels, the dynamic script-injection mechanic, and a filesystem
write log. Execution is tick-driven: page scripts run synchronously when
injected, workers start one tick after spawn, service workers activate one
tick after registration, and time-spanning instructions (floods, map-task
loops) consume one tick per step. The append-only event log uses the same
observation grammar the behavioral detector consumes.

Lifecycle rules, in one line each: injected scripts die with their page on
navigation; workers die with their parent page or the browser; service
workers survive both and die only on machine restart or an explicit
coordinator terminate; registering a service worker is the single cause of
a filesystem write.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from urllib.parse import urlsplit

from . import payload as pl
from . import wire

RUNNING = "Running"
TERMINATED = "Terminated"
REGISTERED = "Registered"
COMPLETED = "Completed"
KILLED = "Killed"

CAUSE_SW_REGISTRATION = "service_worker_registration"
CAUSE_PLANTED_BLOB = "planted_blob"

_DEFAULT_PORTS = {"http": 80, "https": 443, "ws": 80, "wss": 443}

_BENIGN_SW_BODY = b"// offline cache worker\nself.addEventListener('sync', refreshCache);\n"


class SimError(Exception):
    """Base class for browser state machine errors."""


class DuplicatePage(SimError):
    pass


class UnknownSocket(SimError):
    pass


class DuplicateRegistration(SimError):
    pass


class SendWithoutSocket(SimError):
    pass


Origin = tuple


def origin_of(url: str) -> Origin:
    parts = urlsplit(url)
    scheme = parts.scheme or "http"
    host = parts.hostname or ""
    port = parts.port or _DEFAULT_PORTS.get(scheme, 0)
    return (scheme, host, port)


def origin_str(origin: Origin) -> str:
    return f"{origin[0]}://{origin[1]}:{origin[2]}"


def _same_site(a: Origin, b: Origin) -> bool:
    # Script provenance checks compare host and port; ws/http scheme pairs on
    # one host are the same site for our purposes.
    return a[1] == b[1] and a[2] == b[2]


# --------------------------------------------------------------------------
# State pieces

@dataclass(frozen=True)
class StaticScript:
    """A script shipped with the page itself; `program` is its modeled
    behavior (empty for inert assets)."""

    name: str
    program: tuple = ()


@dataclass
class InjectedScript:
    script_id: str
    source: str  # "static" | "socket"
    payload_ref: str = ""
    name: str = ""


@dataclass
class PageContext:
    page_id: str
    origin: Origin
    injected_scripts: list = field(default_factory=list)


@dataclass
class SocketHandle:
    socket_id: str
    url: str
    origin: Origin  # origin of the opening context's page
    owner_kind: str  # "page" | "worker" | "sw"
    owner_id: str
    open: bool = True


@dataclass
class FileWrite:
    path: str
    cause: str
    tick: int
    content: bytes = b""


@dataclass
class ExecCtx:
    """One running program: a page script, a worker body, a service-worker
    body, or an auxiliary task such as a commanded flood."""

    owner_kind: str  # "page" | "worker" | "sw"
    owner_id: str
    ctx_id: str
    page_id: str
    source: str  # "static" | "socket"
    program: tuple
    payload_ref: str = ""
    primary: bool = False  # completing a primary ctx completes its worker/sw
    pc: int = 0
    flood_left: int = 0
    last_run_tick: int = -1

    @property
    def done(self) -> bool:
        return self.pc >= len(self.program)


@dataclass
class WorkerState:
    worker_id: str
    parent_page: str
    script_origin: Origin
    lifecycle: str
    spawn_tick: int
    inner_instructions: tuple


@dataclass
class ServiceWorkerState:
    sw_id: str
    registering_page_origin: Origin
    lifecycle: str
    persist_file: str
    inner_instructions: tuple
    pending_sync: bool
    registered_tick: int
    payload_ref: str = ""


@dataclass
class PendingPayload:
    payload_id: str
    payload: pl.Payload
    trigger: pl.TriggerSpec
    page_id: str
    delivered_tick: int


@dataclass
class MapTask:
    task_id: int
    fn_id: str
    chunk: str
    socket_id: str


# --------------------------------------------------------------------------
# User events

@dataclass(frozen=True)
class Keystroke:
    key: str


@dataclass(frozen=True)
class ChatMessage:
    text: str


@dataclass(frozen=True)
class Navigate:
    page: str = ""  # page_id or origin string; empty = first open page


@dataclass(frozen=True)
class BrowserClose:
    pass


@dataclass(frozen=True)
class MachineRestart:
    pass


UserEvent = (Keystroke, ChatMessage, Navigate, BrowserClose, MachineRestart)


def map_compute(fn_id: str, chunk: str) -> dict:
    """The two shipped map functions over one whitespace-tokenized chunk."""
    if fn_id == "WordCount":
        counts: dict = {}
        for token in chunk.split():
            counts[token] = counts.get(token, 0) + 1
        return counts
    if fn_id == "SumOfSquares":
        total = 0
        for token in chunk.split():
            try:
                total += int(token) ** 2
            except ValueError:
                continue
        return {"sum": total}
    raise SimError(f"unknown map function {fn_id!r}")


class BrowserState:
    """One simulated victim browser; single-threaded, externally clocked."""

    def __init__(
        self,
        client_id: str,
        *,
        cookies: dict | None = None,
        web_storage: dict | None = None,
        flush_every: int = 16,
        flush_tick_multiple: int = 8,
        plant_delivered_blobs: bool = False,
        file_seed: int = 0,
    ):
        self.client_id = client_id
        self.clock = 0
        self.pages: list[PageContext] = []
        self.workers: list[WorkerState] = []
        self.service_workers: list[ServiceWorkerState] = []
        self.filesystem_log: list[FileWrite] = []
        self.event_log: list[dict] = []
        self.open_sockets: list[SocketHandle] = []
        self.keystroke_hooked = False
        self.pending_payloads: list[PendingPayload] = []
        self.map_task_queue: list[MapTask] = []
        self.map_tasks_queued: set = set()  # suppress duplicates while queued
        self.last_map_result: tuple | None = None
        self.keystroke_buffer: list[wire.KeystrokeEvent] = []
        self.keystroke_channel: str = ""
        self.cookies = dict(cookies or {})
        self.web_storage = dict(web_storage or {})
        self.read_cookies_snapshot: dict | None = None
        self.read_storage_snapshot: dict | None = None
        self.flush_every = flush_every
        self.flush_tick_multiple = flush_tick_multiple
        self.plant_delivered_blobs = plant_delivered_blobs
        self.file_seed = file_seed
        self.instructions_executed = 0
        self.outbox: list = []  # (socket_id, wire message)
        self.outbound_requests: list = []  # flood targets emitted this run
        self._contexts: list[ExecCtx] = []
        self._sw_payloads: set = set()
        self._hook_page = ""
        self._seq = 0
        self._counters: dict = {}

    # -- plumbing ----------------------------------------------------------

    def _next_id(self, prefix: str) -> str:
        n = self._counters.get(prefix, 0)
        self._counters[prefix] = n + 1
        return f"{prefix}{n}"

    def _log(self, kind: str, **fields) -> None:
        record = {"tick": self.clock, "seq": self._seq, "kind": kind}
        record.update(fields)
        self._seq += 1
        self.event_log.append(record)

    def event_log_ndjson(self) -> str:
        return "\n".join(
            json.dumps(r, sort_keys=True, separators=(",", ":")) for r in self.event_log
        )

    def _page(self, page_id: str) -> PageContext:
        for page in self.pages:
            if page.page_id == page_id:
                return page
        raise SimError(f"no such page {page_id!r}")

    def _socket(self, socket_id: str) -> SocketHandle:
        for sock in self.open_sockets:
            if sock.socket_id == socket_id and sock.open:
                return sock
        raise UnknownSocket(f"no open socket {socket_id!r}")

    def _close_sockets(self, owner_kind: str, owner_id: str) -> None:
        for sock in self.open_sockets:
            if sock.owner_kind == owner_kind and sock.owner_id == owner_id:
                sock.open = False

    def _worker(self, worker_id: str) -> WorkerState:
        for w in self.workers:
            if w.worker_id == worker_id:
                return w
        raise SimError(f"no such worker {worker_id!r}")

    def _sw(self, sw_id: str) -> ServiceWorkerState:
        for sw in self.service_workers:
            if sw.sw_id == sw_id:
                return sw
        raise SimError(f"no such service worker {sw_id!r}")

    # -- operations --------------------------------------------------------

    def open_page(self, origin, static_scripts=()) -> PageContext:
        """Open a page at `origin` with its shipped scripts; static script
        programs run synchronously, as a page load would."""
        if isinstance(origin, str):
            origin = origin_of(origin)
        origin = tuple(origin)
        for page in self.pages:
            if page.origin == origin:
                raise DuplicatePage(f"page already open at {origin_str(origin)}")
        page = PageContext(page_id=self._next_id("page"), origin=origin)
        self.pages.append(page)
        run_queue = []
        for script in static_scripts:
            if isinstance(script, str):
                script = StaticScript(name=script)
            script_id = self._next_id("s")
            page.injected_scripts.append(
                InjectedScript(script_id=script_id, source="static", name=script.name)
            )
            self._log("script_injected", source="static", script_id=script_id, script=script.name)
            if script.program:
                ctx = ExecCtx(
                    owner_kind="page",
                    owner_id=page.page_id,
                    ctx_id=script_id,
                    page_id=page.page_id,
                    source="static",
                    program=tuple(script.program),
                )
                self._contexts.append(ctx)
                run_queue.append(ctx)
        for ctx in run_queue:
            self._run_ctx(ctx)
        return page

    def receive_frame(self, socket_id: str, frame) -> None:
        """Handle one inbound frame on an open socket. Decode and payload
        normalization errors propagate before any state change."""
        sock = self._socket(socket_id)
        msg = frame if not isinstance(frame, (str, bytes, bytearray)) else wire.decode_frame(frame)

        if isinstance(msg, wire.PayloadDelivery):
            payload = pl.normalize(msg.code)  # CorruptBlob propagates, state untouched
            self._log("frame_in", frame_type="PayloadDelivery", payload_id=msg.payload_id)
            if self.plant_delivered_blobs:
                self._write_file(
                    path=f"/tmp/planted/{msg.payload_id}.bin",
                    cause=CAUSE_PLANTED_BLOB,
                    content=msg.code.bytes,
                )
            pend = PendingPayload(
                payload_id=msg.payload_id,
                payload=payload,
                trigger=msg.trigger,
                page_id=self._page_for_socket(sock),
                delivered_tick=self.clock,
            )
            if isinstance(msg.trigger, pl.Immediate) or (
                isinstance(msg.trigger, pl.AtTick) and msg.trigger.tick <= self.clock
            ):
                self._inject(pend.page_id, payload, msg.payload_id)
            else:
                self.pending_payloads.append(pend)
        elif isinstance(msg, wire.Activate):
            self._log("frame_in", frame_type="Activate", token=msg.trigger_token)
            self._fire_on_event(lambda token: token == msg.trigger_token)
        elif isinstance(msg, wire.MapAssign):
            self._log("frame_in", frame_type="MapAssign", task_id=msg.task_id)
            if msg.task_id not in self.map_tasks_queued:  # drop re-sends of queued work
                self.map_tasks_queued.add(msg.task_id)
                self.map_task_queue.append(
                    MapTask(task_id=msg.task_id, fn_id=msg.fn_id, chunk=msg.chunk, socket_id=socket_id)
                )
        elif isinstance(msg, wire.DdosCommand):
            self._log("frame_in", frame_type="DdosCommand", target=msg.target)
            ctx = ExecCtx(
                owner_kind=sock.owner_kind,
                owner_id=sock.owner_id,
                ctx_id=self._next_id("task"),
                page_id=sock.owner_id if sock.owner_kind == "page" else "",
                source="socket",
                program=(pl.HttpFlood(target=msg.target, rate=msg.rate, duration=msg.duration),),
            )
            self._contexts.append(ctx)
            self._run_ctx(ctx)
        elif isinstance(msg, wire.Terminate):
            self._log("frame_in", frame_type="Terminate")
            for worker in self.workers:
                if worker.lifecycle == RUNNING:
                    worker.lifecycle = TERMINATED
                    self._close_sockets("worker", worker.worker_id)
            for sw in self.service_workers:
                if sw.lifecycle in (REGISTERED, RUNNING):
                    sw.lifecycle = KILLED
                    sw.pending_sync = False
                    self._close_sockets("sw", sw.sw_id)
        else:
            # Server-bound or unexpected frames: observable, no state change.
            self._log("frame_in", frame_type=type(msg).__name__)

    def inject_script(self, page_id: str, blob: pl.ObfuscatedBlob) -> None:
        """Normalize a delivered blob and run it as a socket-injected script
        on `page_id`. Atomic on CorruptBlob."""
        payload = pl.normalize(blob)
        self._inject(page_id, payload, payload.payload_id)

    def _inject(self, page_id: str, payload: pl.Payload, payload_id: str) -> None:
        page = self._page(page_id)
        script_id = self._next_id("s")
        page.injected_scripts.append(
            InjectedScript(script_id=script_id, source="socket", payload_ref=payload_id)
        )
        self._log("script_injected", source="socket", script_id=script_id, payload_id=payload_id)
        ctx = ExecCtx(
            owner_kind="page",
            owner_id=page_id,
            ctx_id=script_id,
            page_id=page_id,
            source="socket",
            program=payload.instructions,
            payload_ref=payload_id,
        )
        self._contexts.append(ctx)
        self._run_ctx(ctx)

    def spawn_worker_from_blob(
        self, page_id: str, script_origin_url: str, inner, *, source: str = "socket",
        payload_ref: str = "",
    ) -> WorkerState:
        """Start a background worker; the script origin may differ from the
        page origin (channel and import APIs ignore the same-origin rule),
        which is recorded as a cross-origin spawn."""
        page = self._page(page_id)
        script_origin = origin_of(script_origin_url)
        worker = WorkerState(
            worker_id=self._next_id("w"),
            parent_page=page_id,
            script_origin=script_origin,
            lifecycle=RUNNING,
            spawn_tick=self.clock,
            inner_instructions=tuple(inner),
        )
        self.workers.append(worker)
        cross = not _same_site(script_origin, page.origin)
        self._log("worker_spawned", worker_id=worker.worker_id, cross_origin=cross)
        self._contexts.append(
            ExecCtx(
                owner_kind="worker",
                owner_id=worker.worker_id,
                ctx_id=worker.worker_id,
                page_id=page_id,
                source=source,
                program=tuple(inner),
                payload_ref=payload_ref,
                primary=True,
            )
        )
        return worker

    def register_service_worker(
        self, page_id: str, inner, *, payload_ref: str = "", source: str = "socket"
    ) -> ServiceWorkerState:
        """Register a service worker: Registered now, activated by a sync
        event one tick later. Writes the single permitted file."""
        page = self._page(page_id)
        if payload_ref and payload_ref in self._sw_payloads:
            raise DuplicateRegistration(f"payload {payload_ref!r} already registered a service worker")
        if payload_ref:
            self._sw_payloads.add(payload_ref)
        sw_id = self._next_id("sw")
        path = f"/sw-cache/{self.client_id}/{sw_id}.js"
        inner = tuple(inner)
        sw = ServiceWorkerState(
            sw_id=sw_id,
            registering_page_origin=page.origin,
            lifecycle=REGISTERED,
            persist_file=path,
            inner_instructions=inner,
            pending_sync=True,
            registered_tick=self.clock,
            payload_ref=payload_ref,
        )
        self.service_workers.append(sw)
        self._log("sw_registered", sw_id=sw_id, registered_by=source)
        self._write_file(path=path, cause=CAUSE_SW_REGISTRATION, content=self._sw_file_bytes(sw))
        self._contexts.append(
            ExecCtx(
                owner_kind="sw",
                owner_id=sw_id,
                ctx_id=sw_id,
                page_id=page_id,
                source=source,
                program=inner,
                payload_ref=payload_ref,
                primary=True,
            )
        )
        return sw

    def _sw_file_bytes(self, sw: ServiceWorkerState) -> bytes:
        if not sw.inner_instructions:
            return _BENIGN_SW_BODY
        body = json.dumps(
            [pl.instruction_to_dict(i) for i in sw.inner_instructions],
            sort_keys=True,
            separators=(",", ":"),
        ).encode("utf-8")
        return pl.scramble_bytes(body, pl.derive_seed(self.file_seed, sw.sw_id))

    def _write_file(self, path: str, cause: str, content: bytes) -> None:
        self.filesystem_log.append(
            FileWrite(path=path, cause=cause, tick=self.clock, content=content)
        )
        self._log("file_write", path=path, cause=cause)

    def deliver_user_event(self, event) -> None:
        if isinstance(event, Keystroke):
            if self.pages and self.keystroke_hooked:
                self.keystroke_buffer.append(wire.KeystrokeEvent(key=event.key, tick=self.clock))
                if len(self.keystroke_buffer) >= self.flush_every:
                    self.flush_keystrokes()
        elif isinstance(event, ChatMessage):
            if not self.pages:
                return
            self._log("frame_in", frame_type="ChatText")
            self._fire_on_event(lambda token: token in event.text)
        elif isinstance(event, Navigate):
            self._navigate(event.page)
        elif isinstance(event, BrowserClose):
            self.flush_keystrokes()
            for worker in self.workers:
                if worker.lifecycle == RUNNING:
                    worker.lifecycle = TERMINATED
                    self._close_sockets("worker", worker.worker_id)
            for page in self.pages:
                self._close_sockets("page", page.page_id)
            self.pages.clear()
            self.pending_payloads.clear()
            self.keystroke_hooked = False
            self.keystroke_buffer.clear()
        elif isinstance(event, MachineRestart):
            for worker in self.workers:
                if worker.lifecycle == RUNNING:
                    worker.lifecycle = TERMINATED
            for sw in self.service_workers:
                if sw.lifecycle in (REGISTERED, RUNNING):
                    sw.lifecycle = KILLED
                    sw.pending_sync = False
            for sock in self.open_sockets:
                sock.open = False
            self.pages.clear()
            self.pending_payloads.clear()
            self.map_task_queue.clear()
            self.map_tasks_queued.clear()
            self.keystroke_buffer.clear()
            self.keystroke_hooked = False
            self.last_map_result = None
        else:
            raise SimError(f"unknown user event {event!r}")

    def _navigate(self, page_ref: str) -> None:
        page = None
        if not page_ref:
            page = self.pages[0] if self.pages else None
        else:
            for candidate in self.pages:
                if candidate.page_id == page_ref or origin_str(candidate.origin) == page_ref:
                    page = candidate
                    break
        if page is None:
            return
        if self._hook_page == page.page_id:
            self.flush_keystrokes()
            self.keystroke_hooked = False
            self.keystroke_buffer.clear()
        for worker in self.workers:
            if worker.parent_page == page.page_id and worker.lifecycle == RUNNING:
                worker.lifecycle = TERMINATED
                self._close_sockets("worker", worker.worker_id)
        self._close_sockets("page", page.page_id)
        self.pending_payloads = [p for p in self.pending_payloads if p.page_id != page.page_id]
        self.pages.remove(page)

    def _fire_on_event(self, token_matches) -> None:
        due = [
            p
            for p in self.pending_payloads
            if isinstance(p.trigger, pl.OnEvent) and token_matches(p.trigger.token)
        ]
        for pend in due:
            self.pending_payloads.remove(pend)
            self._inject(pend.page_id, pend.payload, pend.payload_id)

    def _page_for_socket(self, sock: SocketHandle) -> str:
        if sock.owner_kind == "page" and any(p.page_id == sock.owner_id for p in self.pages):
            return sock.owner_id
        if self.pages:
            return self.pages[0].page_id
        raise SimError("no open page to receive an injection")

    # -- execution engine ---------------------------------------------------

    def execute_instruction(self, ctx: ExecCtx, instr) -> str:
        """Run one step of `instr` in `ctx`. Returns "done" when the
        instruction finished, "tick" when it consumed this tick and may have
        more to do, "blocked" when it is waiting on input."""
        if isinstance(instr, pl.HttpFlood):
            if ctx.flood_left == 0:
                ctx.flood_left = instr.duration
            self.instructions_executed += 1
            for _ in range(instr.rate):
                self._log("outbound_request", target=instr.target)
                self.outbound_requests.append(instr.target)
            ctx.flood_left -= 1
            if ctx.flood_left == 0:
                ctx.pc += 1
            return "tick"

        if isinstance(instr, pl.ComputeMap):
            if not self.map_task_queue:
                return "blocked"
            task = self.map_task_queue.pop(0)
            self.map_tasks_queued.discard(task.task_id)  # a lost result may be re-served
            self.instructions_executed += 1
            value = map_compute(task.fn_id, task.chunk)
            self.last_map_result = (task.task_id, value)
            sock = self._reply_socket(ctx, task)
            if sock is not None:
                self._emit(
                    sock.socket_id,
                    wire.MapResult(task_id=task.task_id, client_id=self.client_id, value=value),
                    task_id=task.task_id,
                )
            return "tick"

        self.instructions_executed += 1
        if isinstance(instr, pl.OpenSocket):
            origin = self._ctx_origin(ctx)
            sock = SocketHandle(
                socket_id=self._next_id("sock"),
                url=instr.url,
                origin=origin,
                owner_kind=ctx.owner_kind,
                owner_id=ctx.owner_id,
            )
            self.open_sockets.append(sock)
            self._emit(sock.socket_id, wire.Register(client_id=self.client_id))
        elif isinstance(instr, pl.HookKeystrokes):
            self.keystroke_hooked = True
            self._hook_page = ctx.page_id
            self._log("keystroke_hook_set")
        elif isinstance(instr, pl.ReadCookies):
            self.read_cookies_snapshot = dict(self.cookies)
        elif isinstance(instr, pl.ReadWebStorage):
            self.read_storage_snapshot = dict(self.web_storage)
        elif isinstance(instr, pl.Send):
            sock = self._send_socket(ctx, instr.channel_url)
            if sock is None:
                raise SendWithoutSocket(f"no open channel to {instr.channel_url!r}")
            if instr.what == "Keystrokes":
                self.keystroke_channel = sock.socket_id
                if self.keystroke_buffer:
                    self.flush_keystrokes()
            elif instr.what == "Storage":
                self._emit(
                    sock.socket_id,
                    wire.ExfilStorage(
                        client_id=self.client_id,
                        cookies=dict(self.read_cookies_snapshot or {}),
                        web_storage=dict(self.read_storage_snapshot or {}),
                    ),
                )
            elif instr.what == "MapResult" and self.last_map_result is not None:
                task_id, value = self.last_map_result
                self._emit(
                    sock.socket_id,
                    wire.MapResult(task_id=task_id, client_id=self.client_id, value=value),
                    task_id=task_id,
                )
        elif isinstance(instr, pl.SpawnWorkerFromBlob):
            self.spawn_worker_from_blob(
                ctx.page_id,
                instr.script_origin_url,
                instr.inner,
                source=ctx.source,
                payload_ref=ctx.payload_ref,
            )
        elif isinstance(instr, pl.RegisterServiceWorker):
            self.register_service_worker(
                ctx.page_id,
                instr.inner,
                payload_ref=ctx.payload_ref,
                source=ctx.source,
            )
        else:
            raise SimError(f"unknown instruction {instr!r}")
        return "done"

    def _ctx_origin(self, ctx: ExecCtx) -> Origin:
        for page in self.pages:
            if page.page_id == ctx.page_id:
                return page.origin
        if ctx.owner_kind == "sw":
            return self._sw(ctx.owner_id).registering_page_origin
        if ctx.owner_kind == "worker":
            return self._worker(ctx.owner_id).script_origin
        return ("http", "", 0)

    def _send_socket(self, ctx: ExecCtx, url: str) -> SocketHandle | None:
        owned = [
            s
            for s in self.open_sockets
            if s.open and s.url == url and (s.owner_kind, s.owner_id) == (ctx.owner_kind, ctx.owner_id)
        ]
        if owned:
            return owned[0]
        for s in self.open_sockets:
            if s.open and s.url == url:
                return s
        return None

    def _reply_socket(self, ctx: ExecCtx, task: MapTask) -> SocketHandle | None:
        for s in self.open_sockets:
            if s.open and (s.owner_kind, s.owner_id) == (ctx.owner_kind, ctx.owner_id):
                return s
        for s in self.open_sockets:
            if s.open and s.socket_id == task.socket_id:
                return s
        for s in self.open_sockets:
            if s.open:
                return s
        return None

    def _emit(self, socket_id: str, msg, **log_fields) -> None:
        fields = {"frame_type": type(msg).__name__}
        if isinstance(msg, wire.ExfilKeystrokes):
            fields["count"] = len(msg.events)
        fields.update(log_fields)
        self._log("frame_out", **fields)
        self.outbox.append((socket_id, msg))

    def flush_keystrokes(self) -> None:
        """Emit buffered keystrokes over the designated channel, if any."""
        if not self.keystroke_buffer or not self.keystroke_channel:
            return
        sock = next(
            (s for s in self.open_sockets if s.socket_id == self.keystroke_channel and s.open),
            None,
        )
        if sock is None:
            return
        events = tuple(self.keystroke_buffer)
        self.keystroke_buffer.clear()
        self._emit(sock.socket_id, wire.ExfilKeystrokes(client_id=self.client_id, events=events))

    def _alive(self, ctx: ExecCtx) -> bool:
        if ctx.owner_kind == "page":
            return any(p.page_id == ctx.owner_id for p in self.pages)
        if ctx.owner_kind == "worker":
            return self._worker(ctx.owner_id).lifecycle == RUNNING
        return self._sw(ctx.owner_id).lifecycle == RUNNING

    def _run_ctx(self, ctx: ExecCtx) -> None:
        ctx.last_run_tick = self.clock
        while not ctx.done and self._alive(ctx):
            instr = ctx.program[ctx.pc]
            try:
                status = self.execute_instruction(ctx, instr)
            except SimError:
                self._crash_ctx(ctx)
                return
            if status == "done":
                ctx.pc += 1
                continue
            break  # consumed this tick, or blocked on input
        if ctx.done:
            self._finish_ctx(ctx)

    def _finish_ctx(self, ctx: ExecCtx) -> None:
        if not ctx.primary:
            return
        if ctx.owner_kind == "worker":
            worker = self._worker(ctx.owner_id)
            if worker.lifecycle == RUNNING:
                worker.lifecycle = TERMINATED
                self._close_sockets("worker", worker.worker_id)
        elif ctx.owner_kind == "sw":
            sw = self._sw(ctx.owner_id)
            if sw.lifecycle == RUNNING:
                sw.lifecycle = COMPLETED
                self._close_sockets("sw", sw.sw_id)

    def _crash_ctx(self, ctx: ExecCtx) -> None:
        ctx.pc = len(ctx.program)
        if ctx.owner_kind == "worker" and ctx.primary:
            worker = self._worker(ctx.owner_id)
            if worker.lifecycle == RUNNING:
                worker.lifecycle = TERMINATED
                self._close_sockets("worker", worker.worker_id)
        elif ctx.owner_kind == "sw" and ctx.primary:
            sw = self._sw(ctx.owner_id)
            if sw.lifecycle == RUNNING:
                sw.lifecycle = KILLED
                self._close_sockets("sw", sw.sw_id)

    # -- clock --------------------------------------------------------------

    def begin_tick(self, tick: int | None = None) -> None:
        """Advance the clock, fire due timed payloads, deliver sync events."""
        self.clock = self.clock + 1 if tick is None else tick
        due = [
            p
            for p in self.pending_payloads
            if isinstance(p.trigger, pl.AtTick) and p.trigger.tick <= self.clock
        ]
        for pend in due:
            self.pending_payloads.remove(pend)
            if any(pg.page_id == pend.page_id for pg in self.pages):
                self._inject(pend.page_id, pend.payload, pend.payload_id)
        for sw in self.service_workers:
            if sw.pending_sync and sw.lifecycle == REGISTERED and sw.registered_tick < self.clock:
                sw.pending_sync = False
                sw.lifecycle = RUNNING

    def finish_tick(self) -> None:
        """Step every runnable context once, then apply the periodic
        keystroke flush."""
        for ctx in list(self._contexts):
            if ctx.done or ctx.last_run_tick == self.clock:
                continue
            if not self._alive(ctx):
                continue
            if ctx.owner_kind == "worker" and self._worker(ctx.owner_id).spawn_tick >= self.clock:
                continue
            self._run_ctx(ctx)
        if self.flush_tick_multiple and self.clock % self.flush_tick_multiple == 0:
            self.flush_keystrokes()

    def advance_tick(self) -> None:
        self.begin_tick()
        self.finish_tick()

    def drain_outbox(self) -> list:
        out = self.outbox
        self.outbox = []
        return out

    def drain_requests(self) -> list:
        out = self.outbound_requests
        self.outbound_requests = []
        return out
