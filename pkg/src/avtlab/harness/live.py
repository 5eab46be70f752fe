"""Live coordinator: the same wire protocol over a real WebSocket.

Serves the scenario's payload deliveries to any client that registers,
collects exfil/result frames, and accepts NDJSON behavior-log records
(objects with a "kind" field instead of a frame "type") over the same
socket. Static client assets, when present, are served from --web-dir on
the same port; GET /scenario exposes the scenario so a scripted client can
replay its user events locally.

Wall-clock mapping: one logical tick per --tick-ms milliseconds, used only
to timestamp coordinator bookkeeping; nothing in the protocol depends on
wall time. Shutdown (Ctrl-C, or --once after the last session closes)
broadcasts Terminate and flushes the live report.

Note: no postponed annotation evaluation here; the socket framework needs
the endpoint's parameter annotations resolvable at definition time.
"""

import asyncio
import json
import time
from pathlib import Path

from .. import wire
from ..cnc_sim import CncState, ScenarioConfig, resolve_payloads, validate_config
from ..payload import obfuscate


class LiveDriver:
    """Single-event-loop coordinator state; all mutation happens on the
    server loop, which is the serialized access point."""

    def __init__(self, cfg: ScenarioConfig, tick_ms: int):
        validate_config(cfg)
        payloads = resolve_payloads(cfg)
        blobs = {
            name: (payloads[name], obfuscate(payloads[name], cfg.seeds.obfuscation))
            for name in cfg.payload_names
        }
        self.cfg = cfg
        self.cnc = CncState(cfg, blobs)
        self.tick_ms = max(1, tick_ms)
        self.started = time.monotonic()
        self.sessions: dict = {}  # socket_id -> websocket
        self.session_client: dict = {}  # socket_id -> client_id
        self.client_records: dict = {}  # client_id -> list of NDJSON records
        self.decode_errors: list = []
        self._socket_seq = 0
        self.open_session_count = 0
        self.saw_a_session = False

    def now_tick(self) -> int:
        return int((time.monotonic() - self.started) * 1000 / self.tick_ms)

    def new_socket_id(self) -> str:
        self._socket_seq += 1
        return f"live{self._socket_seq}"

    async def pump_outbound(self) -> None:
        for client_id, socket_id, msg in list(self.cnc.outbound):
            target = socket_id
            if not target:
                conns = self.cnc.live_connections(client_id)
                target = conns[-1].socket_id if conns else ""
            ws = self.sessions.get(target)
            if ws is not None:
                await ws.send_text(wire.encode_frame(msg))
        self.cnc.outbound.clear()

    async def on_text(self, socket_id: str, raw: str) -> None:
        tick = self.now_tick()
        try:
            obj = json.loads(raw)
        except json.JSONDecodeError:
            self.decode_errors.append({"socket": socket_id, "error": "bad json"})
            return
        if isinstance(obj, dict) and "kind" in obj and "type" not in obj:
            client_id = self.session_client.get(socket_id, socket_id)
            self.client_records.setdefault(client_id, []).append(obj)
            return
        try:
            msg = wire.decode_frame(raw)
        except wire.FrameError as exc:
            self.decode_errors.append({"socket": socket_id, "error": str(exc)})
            return
        if isinstance(msg, wire.Register):
            self.session_client[socket_id] = msg.client_id
        client_id = self.session_client.get(socket_id, "")
        self.cnc.handle_frame(tick, client_id, socket_id, msg)
        await self.pump_outbound()

    async def periodic(self) -> None:
        """Map/reduce assignment plus flood-command scheduling."""
        tick = self.now_tick()
        cfg = self.cfg
        if cfg.mapreduce:
            if not self.cnc.job_started and self.cnc.connected:
                for client_id, frame in self.cnc.assign_chunks(
                    cfg.mapreduce, list(self.cnc.connected), tick
                ):
                    self.cnc.outbound.append((client_id, "", frame))
                self.cnc.job_started = True
            elif self.cnc.job_started and self.cnc.pending_tasks:
                timeout = 40 * cfg.network.latency_ticks  # generous under wall clock
                for client_id, frame in self.cnc.reassign_stale(cfg.mapreduce, tick, timeout):
                    self.cnc.outbound.append((client_id, "", frame))
            if (
                self.cnc.job_started
                and not self.cnc.pending_tasks
                and self.cnc.reduce_result is None
            ):
                self.cnc.reduce_result = self.cnc.reduce_results(cfg.mapreduce.fn_id)
                self.cnc.completed_at_tick = tick
        if cfg.ddos and not self.cnc.ddos_issued and len(self.cnc.connected) >= cfg.n_clients:
            for client_id, frame in self.cnc.orchestrate_ddos(
                cfg.ddos.target, cfg.ddos.rate, cfg.ddos.duration, tick
            ):
                self.cnc.outbound.append((client_id, "", frame))
            self.cnc.ddos_issued = True
        await self.pump_outbound()

    async def broadcast_terminate(self) -> None:
        frame = wire.encode_frame(wire.Terminate())
        for ws in list(self.sessions.values()):
            try:
                await ws.send_text(frame)
            except Exception:
                continue

    def report_dict(self) -> dict:
        return {
            "config": self.cfg.to_dict(),
            "clients": {
                cid: {"event_log": records} for cid, records in sorted(self.client_records.items())
            },
            "cnc": {
                "log": self.cnc.log,
                "connected": list(self.cnc.connected),
                "exfil_store": self.cnc.exfil_store,
                "mapreduce": {
                    "result": self.cnc.reduce_result,
                    "completed_at_tick": self.cnc.completed_at_tick,
                }
                if self.cfg.mapreduce
                else None,
            },
            "decode_errors": self.decode_errors,
        }


def build_app(driver: LiveDriver, web_dir: str | None = None, once: bool = False):
    from fastapi import FastAPI, WebSocket, WebSocketDisconnect
    from fastapi.responses import HTMLResponse, JSONResponse

    app = FastAPI()
    app.state.driver = driver
    app.state.should_exit = asyncio.Event()

    @app.get("/scenario")
    async def scenario() -> JSONResponse:
        return JSONResponse(driver.cfg.to_dict())

    @app.get("/healthz")
    async def healthz() -> JSONResponse:
        return JSONResponse({"ok": True, "tick": driver.now_tick()})

    @app.websocket("/ws")
    async def ws_endpoint(websocket: WebSocket) -> None:
        await websocket.accept()
        socket_id = driver.new_socket_id()
        driver.sessions[socket_id] = websocket
        driver.open_session_count += 1
        driver.saw_a_session = True
        try:
            while True:
                raw = await websocket.receive_text()
                await driver.on_text(socket_id, raw)
        except WebSocketDisconnect:
            pass
        finally:
            driver.sessions.pop(socket_id, None)
            driver.cnc.mark_dead(driver.session_client.get(socket_id, ""), socket_id)
            driver.open_session_count -= 1
            if once and driver.saw_a_session and driver.open_session_count == 0:
                app.state.should_exit.set()

    if web_dir and Path(web_dir).is_dir():
        from fastapi.staticfiles import StaticFiles

        app.mount("/", StaticFiles(directory=web_dir, html=True), name="web")
    else:

        @app.get("/")
        async def index() -> HTMLResponse:
            return HTMLResponse(
                "<html><body><h3>live coordinator</h3>"
                "<p>No web assets found; connect a client to <code>/ws</code>.</p>"
                "</body></html>"
            )

    return app


def serve(
    cfg: ScenarioConfig,
    host: str = "127.0.0.1",
    port: int = 8787,
    tick_ms: int = 100,
    report_path: str | None = None,
    web_dir: str | None = None,
    once: bool = False,
) -> None:
    """Run the live coordinator until interrupted (or, with once=True, until
    the last client disconnects); write the live report on the way out."""
    import uvicorn

    driver = LiveDriver(cfg, tick_ms)
    app = build_app(driver, web_dir=web_dir, once=once)
    config = uvicorn.Config(app, host=host, port=port, log_level="warning")
    server = uvicorn.Server(config)

    async def _main() -> None:
        ticker_stop = asyncio.Event()

        async def ticker() -> None:
            while not ticker_stop.is_set():
                await driver.periodic()
                await asyncio.sleep(driver.tick_ms / 1000)

        async def watch_exit() -> None:
            await app.state.should_exit.wait()
            server.should_exit = True

        tasks = [asyncio.create_task(ticker()), asyncio.create_task(watch_exit())]
        try:
            await server.serve()
        finally:
            ticker_stop.set()
            await driver.broadcast_terminate()
            for task in tasks:
                task.cancel()
            if report_path:
                Path(report_path).write_text(
                    json.dumps(driver.report_dict(), sort_keys=True, indent=2) + "\n",
                    encoding="utf-8",
                )

    try:
        asyncio.run(_main())
    except KeyboardInterrupt:
        pass
