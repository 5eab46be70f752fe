"""Acceptance suite: one test per shipped criterion, each printing a
PASS line with its measured numbers (run with -s to see them)."""

import json
import random
import time
from dataclasses import replace
from pathlib import Path

from avtlab import client_sim as cs
from avtlab import cnc_sim as C
from avtlab import detector as D
from avtlab import payload as pl
from avtlab.harness import corpus as K

import gen

SCENARIOS = Path(__file__).resolve().parent.parent / "scenarios"

NON_SW_PAYLOADS = ("keycookielog", "ddos_bot", "blob_worker")


def _announce(name: str, detail: str) -> None:
    print(f"\nACCEPTANCE PASS: {name} ({detail})")


def _random_scenario(rng: random.Random, payload_pool, allow_sw: bool) -> C.ScenarioConfig:
    names = sorted(rng.sample(payload_pool, rng.randint(1, min(2, len(payload_pool)))))
    n_clients = rng.randint(1, 2)
    script = []
    for client in range(n_clients):
        cid = f"c{client}"
        t = rng.randint(4, 9)
        script.append([t, cid, {"event": "ChatMessage", "text": "all hands tr1gger drill"}])
        for j, key in enumerate("notes"):
            script.append([t + 1 + j // 3, cid, {"event": "Keystroke", "key": key}])
        if rng.random() < 0.25:
            script.append([t + 6, cid, {"event": rng.choice(["Navigate", "BrowserClose"])}])
    overrides = {}
    for name in names:
        kind = rng.choice(["Immediate", "OnEvent", "AtTick"])
        if kind == "OnEvent":
            overrides[name] = {"kind": "OnEvent", "token": "tr1gger"}
        elif kind == "AtTick":
            overrides[name] = {"kind": "AtTick", "tick": rng.randint(5, 12)}
        else:
            overrides[name] = {"kind": "Immediate"}
    return C.ScenarioConfig.from_dict(
        {
            "mode": rng.choice(["malicious_server", "compromised_app"]),
            "payload_names": names,
            "trigger_overrides": overrides,
            "seeds": {"obfuscation": rng.randrange(2**32), "rng": rng.randrange(2**32)},
            "n_clients": n_clients,
            "victim_data": {"*": {"cookies": {"sid": "x"}, "web_storage": {}}},
            "user_event_script": script,
            "network": {
                "latency_ticks": rng.randint(1, 2),
                "drop_probability": rng.choice([0.0, 0.1, 0.2]),
            },
            "max_ticks": 400,
        }
    )


def test_table1_static_blindness():
    """Static scan with the exact digests of every in-flight blob stays
    blind on fileless runs and catches the planted-file control."""
    started = time.monotonic()
    entries = [e for e in K.build_corpus() if e.label == "malicious"]
    assert len(entries) == 20
    blind = 0
    for entry in entries:
        report = C.run_scenario(entry.config)
        db = tuple(b["sha256"] for b in report.delivered_blobs)
        assert db, "every malicious scenario delivers at least one blob"
        verdict = D.static_scan(
            D.ArtifactCorpus.from_report(report), D.DetectorConfig(signature_db=db)
        )
        assert verdict.detected is False, entry.name
        blind += 1
    control = C.run_scenario(K.control_scenario())
    db = tuple(b["sha256"] for b in control.delivered_blobs)
    control_verdict = D.static_scan(
        D.ArtifactCorpus.from_report(control), D.DetectorConfig(signature_db=db)
    )
    assert control_verdict.detected is True
    elapsed = time.monotonic() - started
    assert elapsed < 10.0
    _announce(
        "table1-static-blindness",
        f"{blind}/20 fileless runs undetected, control detected, {elapsed:.2f}s",
    )


def test_fileless_invariant():
    """No service-worker payloads: zero filesystem writes, ever. With
    service-worker payloads: exactly one write per worker, the permitted
    cause."""
    rng = random.Random(160)
    for _ in range(1000):
        cfg = _random_scenario(rng, NON_SW_PAYLOADS, allow_sw=False)
        report = C.run_scenario(cfg)
        for cid in report.clients:
            assert report.clients[cid]["filesystem_log"] == [], cfg.name
    sw_checked = 0
    for _ in range(300):
        cfg = _random_scenario(rng, ("map_worker", "keycookielog"), allow_sw=True)
        if "map_worker" not in cfg.payload_names:
            cfg = replace(cfg, payload_names=tuple(sorted(set(cfg.payload_names) | {"map_worker"})))
        report = C.run_scenario(cfg)
        for cid in report.clients:
            writes = report.clients[cid]["filesystem_log"]
            sws = report.clients[cid]["final"]["service_workers"]
            assert len(writes) == len(sws)
            assert all(w["cause"] == "service_worker_registration" for w in writes)
            sw_checked += len(sws)
    _announce("fileless-invariant", f"1000 runs clean, {sw_checked} service-worker writes exact")


def test_persistence_lattice():
    """Random event sequences: injected scripts die with their page,
    workers with the browser, service workers only with the machine."""
    rng = random.Random(161)
    checked = 0
    for _ in range(1000):
        state = cs.BrowserState(f"c{rng.randrange(10)}")
        page = state.open_page("http://victim.test:80", ["app.js"])
        state.inject_script(page.page_id, pl.obfuscate(pl.builtin_payloads()["map_worker"], rng.randrange(2**32)))
        state.inject_script(page.page_id, pl.obfuscate(pl.builtin_payloads()["blob_worker"], rng.randrange(2**32)))
        browser_open = True
        machine_up = True
        for _ in range(rng.randint(2, 12)):
            roll = rng.random()
            if roll < 0.35:
                state.advance_tick()
            elif roll < 0.5 and browser_open:
                state.deliver_user_event(cs.Keystroke(key="k"))
            elif roll < 0.65 and browser_open:
                state.deliver_user_event(cs.Navigate())
                browser_open = bool(state.pages)
            elif roll < 0.8 and browser_open:
                state.deliver_user_event(cs.BrowserClose())
                browser_open = False
            elif roll < 0.9:
                state.deliver_user_event(cs.MachineRestart())
                browser_open = False
                machine_up = False
            else:
                state.advance_tick()
                state.advance_tick()

            open_pages = {p.page_id for p in state.pages}
            for p in state.pages:
                # an injected script only lives inside an open page context
                assert all(s.script_id for s in p.injected_scripts)
            for w in state.workers:
                if w.lifecycle == cs.RUNNING:
                    assert browser_open and w.parent_page in open_pages
            if not machine_up:
                assert all(
                    sw.lifecycle not in (cs.RUNNING, cs.REGISTERED) for sw in state.service_workers
                )
            if not browser_open and machine_up:
                assert all(w.lifecycle == cs.TERMINATED for w in state.workers)
                # service workers are indifferent to browser lifetime
                assert any(
                    sw.lifecycle in (cs.RUNNING, cs.REGISTERED, cs.COMPLETED)
                    for sw in state.service_workers
                )
            checked += 1
    _announce("persistence-lattice", f"1000 sequences, {checked} checkpoints, zero violations")


def test_trigger_soundness():
    """Nothing executes before the token event; immediate payloads execute
    at the delivery tick."""
    rng = random.Random(162)
    gated_runs = 0
    for _ in range(500):
        token = rng.choice(["sekrit", "gamma", "blue-lotus"])
        t_act = rng.randint(5, 14)
        pre_chat = [
            [t, "c0", {"event": "ChatMessage", "text": gen.text(rng, 0, 8).replace(token, "")}]
            for t in range(2, t_act, 3)
        ]
        cfg = C.ScenarioConfig.from_dict(
            {
                "mode": "malicious_server",
                "payload_names": ["keycookielog"],
                "trigger_overrides": {"keycookielog": {"kind": "OnEvent", "token": token}},
                "seeds": {"obfuscation": rng.randrange(2**32), "rng": rng.randrange(2**32)},
                "user_event_script": pre_chat
                + [[t_act, "c0", {"event": "ChatMessage", "text": f"go {token} go"}]],
            }
        )
        report = C.run_scenario(cfg)
        log = report.clients["c0"]["event_log"]
        injections = [
            r for r in log if r["kind"] == "script_injected" and r.get("source") == "socket"
        ]
        assert len(injections) == 1 and injections[0]["tick"] == t_act
        forbidden_before = [
            r
            for r in log
            if r["tick"] < t_act
            and (
                (r["kind"] == "script_injected" and r.get("source") == "socket")
                or r["kind"] in ("keystroke_hook_set", "worker_spawned", "sw_registered", "outbound_request")
                or (r["kind"] == "frame_out" and r.get("frame_type") != "Register")
            )
        ]
        assert forbidden_before == []
        gated_runs += 1
    immediate_runs = 0
    for _ in range(500):
        cfg = C.ScenarioConfig.from_dict(
            {
                "mode": rng.choice(["malicious_server", "compromised_app"]),
                "payload_names": [rng.choice(NON_SW_PAYLOADS)],
                "trigger_overrides": {name: {"kind": "Immediate"} for name in NON_SW_PAYLOADS},
                "seeds": {"obfuscation": rng.randrange(2**32), "rng": rng.randrange(2**32)},
            }
        )
        report = C.run_scenario(cfg)
        log = report.clients["c0"]["event_log"]
        delivery_tick = next(r["tick"] for r in log if r.get("frame_type") == "PayloadDelivery")
        injection_tick = next(
            r["tick"] for r in log if r["kind"] == "script_injected" and r.get("source") == "socket"
        )
        assert injection_tick == delivery_tick
        immediate_runs += 1
    _announce(
        "trigger-soundness",
        f"{gated_runs} gated runs clean before token, {immediate_runs} immediate at delivery tick",
    )


def test_mapreduce_oracle_equivalence():
    """200 random lossy jobs match the sequential oracle and finish within
    ten times their drop-free completion tick."""
    rng = random.Random(20260810)
    worst_ratio = 0.0
    for index in range(200):
        fn_id = rng.choice(["WordCount", "SumOfSquares"])
        if fn_id == "WordCount":
            data = " ".join(f"w{rng.randrange(30)}" for _ in range(rng.randint(40, 1400)))[:10000]
        else:
            data = " ".join(str(rng.randrange(100)) for _ in range(rng.randint(40, 1200)))[:10000]
        cfg = C.ScenarioConfig.from_dict(
            {
                "mode": "compromised_app",
                "payload_names": ["map_worker"],
                "seeds": {"obfuscation": rng.randrange(2**32), "rng": rng.randrange(2**32)},
                "n_clients": rng.randint(1, 8),
                "mapreduce": {
                    "fn_id": fn_id,
                    "data": data,
                    "chunk_size": rng.randint(8, 200),
                },
                "network": {
                    "latency_ticks": rng.randint(1, 3),
                    "drop_probability": rng.choice([0.0, 0.05, 0.1, 0.2, 0.3]),
                },
                "max_ticks": 5000,
            }
        )
        if fn_id == "WordCount":
            expect: dict = {}
            for token in data.split():
                expect[token] = expect.get(token, 0) + 1
            expect = {k: expect[k] for k in sorted(expect)}
        else:
            expect = {"sum": sum(int(t) ** 2 for t in data.split())}
        drop_free = replace(
            cfg,
            network=C.NetworkConfig(latency_ticks=cfg.network.latency_ticks, drop_probability=0.0),
        )
        t_base = C.run_scenario(drop_free).cnc["mapreduce"]["completed_at_tick"]
        report = C.run_scenario(cfg)
        assert not report.truncated, index
        assert report.cnc["mapreduce"]["result"] == expect, index
        t_drop = report.cnc["mapreduce"]["completed_at_tick"]
        assert 0 <= t_drop <= 10 * t_base, (index, t_base, t_drop)
        worst_ratio = max(worst_ratio, t_drop / max(t_base, 1))
    _announce("mapreduce-oracle", f"200/200 oracle-equal, worst completion ratio {worst_ratio:.2f}x")


def test_polymorphism():
    """Ten seeds per builtin payload: pairwise-distinct signatures, equal
    normalized programs, byte-identical client event logs."""
    activation = {
        "keycookielog": [
            [5, "c0", {"event": "ChatMessage", "text": "tr1gger"}],
            [6, "c0", {"event": "Keystroke", "key": "z"}],
        ]
    }
    for name, payload in pl.builtin_payloads().items():
        blobs = [pl.obfuscate(payload, seed) for seed in range(10)]
        assert len({pl.signature(b) for b in blobs}) == 10
        assert all(pl.normalize(b) == payload for b in blobs)
        logs = set()
        for seed in range(10):
            cfg = C.ScenarioConfig.from_dict(
                {
                    "mode": "malicious_server",
                    "payload_names": [name],
                    "seeds": {"obfuscation": seed, "rng": 5},
                    "user_event_script": activation.get(name, []),
                    "victim_data": {"*": {"cookies": {"k": "v"}, "web_storage": {}}},
                    "max_ticks": 300,
                }
            )
            report = C.run_scenario(cfg)
            lines = "\n".join(
                "\n".join(json.dumps(r, sort_keys=True) for r in report.clients[cid]["event_log"])
                for cid in sorted(report.clients)
            )
            logs.add(lines)
        assert len(logs) == 1, f"{name}: event logs differ across obfuscation seeds"
    _announce("polymorphism", "4 builtins x 10 seeds: distinct signatures, identical behavior")


def test_behavioral_detection_quality():
    """Shipped corpus: continuous monitor is perfect; the page-load style
    engine misses trigger-gated payloads."""
    entries = K.build_corpus()
    assert len(entries) == 40
    runs = [(entry, C.run_scenario(entry.config)) for entry in entries]
    labeled = [(report, entry.label) for entry, report in runs]
    behavioral = D.evaluate(labeled, engine="behavioral")
    assert behavioral.tpr == 1.0
    assert behavioral.fpr == 0.0
    gated = [
        (report, entry.label)
        for entry, report in runs
        if entry.label == "malicious" and entry.trigger_gated
    ]
    assert len(gated) >= 10
    dynamic = D.evaluate(gated, engine="dynamic_r5")
    assert dynamic.tpr is not None and dynamic.tpr <= 0.2
    _announce(
        "behavioral-quality",
        f"behavioral tpr={behavioral.tpr} fpr={behavioral.fpr}; "
        f"page-load engine tpr={dynamic.tpr:.3f} on {len(gated)} trigger-gated",
    )


def test_determinism():
    """Every shipped scenario: identical config and seeds give byte-identical
    reports."""
    count = 0
    for path in sorted(SCENARIOS.glob("*.json")):
        cfg = C.ScenarioConfig.from_file(path)
        assert C.run_scenario(cfg).to_json() == C.run_scenario(cfg).to_json(), path.name
        count += 1
    for entry in K.build_corpus(n_benign=5, n_malicious=5):
        assert C.run_scenario(entry.config).to_json() == C.run_scenario(entry.config).to_json()
        count += 1
    control = K.control_scenario()
    assert C.run_scenario(control).to_json() == C.run_scenario(control).to_json()
    count += 1
    _announce("determinism", f"{count} scenarios byte-identical across repeat runs")
