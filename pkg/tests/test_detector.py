import random
from pathlib import Path

import pytest

from avtlab import cnc_sim as C
from avtlab import detector as D
from avtlab.harness import corpus as K

SCENARIOS = Path(__file__).resolve().parent.parent / "scenarios"


def fig1_report():
    return C.run_scenario(C.ScenarioConfig.from_file(SCENARIOS / "fig1_malicious_server.json"))


def run_named(name: str):
    for entry in K.build_corpus():
        if name in entry.name:
            return C.run_scenario(entry.config), entry
    raise AssertionError(name)


# -- static engine -------------------------------------------------------------

def test_static_empty_corpus():
    verdict = D.static_scan(D.ArtifactCorpus(at_rest_files=()))
    assert verdict.detected is False and verdict.score == 0.0


def test_static_blind_to_in_flight_blobs():
    report = fig1_report()
    db = tuple(b["sha256"] for b in report.delivered_blobs)
    assert db  # the exact delivered bytes are in the database
    verdict = D.static_scan(D.ArtifactCorpus.from_report(report), D.DetectorConfig(signature_db=db))
    assert verdict.detected is False
    assert verdict.flags == ()


def test_static_catches_planted_file():
    report = C.run_scenario(K.control_scenario())
    db = tuple(b["sha256"] for b in report.delivered_blobs)
    verdict = D.static_scan(D.ArtifactCorpus.from_report(report), D.DetectorConfig(signature_db=db))
    assert verdict.detected is True
    assert any(f.rule_id == "SIG_MATCH" for f in verdict.flags)


def test_static_pattern_tokens():
    corpus = D.ArtifactCorpus(
        at_rest_files=(D.AtRestFile(path="x.js", content=b"eval(atob('aGk='));", tick=3),)
    )
    verdict = D.static_scan(corpus)
    assert verdict.detected and verdict.flags[0].rule_id == "PATTERN"
    assert verdict.flags[0].tick == 3


# -- behavioral engine -----------------------------------------------------------

def test_fig1_trace_fires_r1_and_r4():
    report = fig1_report()
    verdict = D.behavior_monitor(D.observations_from_report(report))
    fired = {f.rule_id for f in verdict.flags}
    assert {"R1", "R4"} <= fired
    assert verdict.score >= 2.0
    assert verdict.detected is True


def test_benign_trace_fires_nothing():
    report, _ = run_named("benign_004_worker_and_sw")
    verdict = D.behavior_monitor(D.observations_from_report(report))
    assert verdict.flags == ()
    assert verdict.detected is False


def test_blob_worker_trace_fires_r2():
    report, _ = run_named("blobworker_chat")
    verdict = D.behavior_monitor(D.observations_from_report(report))
    assert any(f.rule_id == "R2" for f in verdict.flags)


def test_map_worker_trace_fires_r3():
    report, _ = run_named("mapworker_immediate")
    verdict = D.behavior_monitor(D.observations_from_report(report))
    assert any(f.rule_id == "R3" for f in verdict.flags)


def test_ddos_trace_fires_r5():
    report, _ = run_named("ddos_immediate")
    verdict = D.behavior_monitor(D.observations_from_report(report))
    assert any(f.rule_id == "R5" for f in verdict.flags)


def _flood_stream(rate: int, ticks: int, target: str = "http://t/") -> list:
    stream = []
    for tick in range(ticks):
        for _ in range(rate):
            stream.append({"tick": tick, "seq": len(stream), "kind": "outbound_request", "target": target})
    return stream


def test_r5_needs_two_consecutive_ticks():
    cfg = D.DetectorConfig()
    assert D.behavior_monitor(_flood_stream(25, 1), cfg).detected is False
    assert D.behavior_monitor(_flood_stream(25, 2), cfg).detected is True
    assert D.behavior_monitor(_flood_stream(20, 5), cfg).detected is False  # not above threshold
    gap = _flood_stream(25, 1) + [
        {"tick": 5, "seq": 99, "kind": "outbound_request", "target": "http://t/"}
    ] * 25
    assert D.behavior_monitor(gap, cfg).detected is False  # burst ticks not consecutive


def test_r5_distinct_targets_do_not_accumulate():
    stream = []
    for tick in range(4):
        for i in range(30):
            stream.append(
                {"tick": tick, "seq": len(stream), "kind": "outbound_request", "target": f"http://t{i}/"}
            )
    assert D.behavior_monitor(stream).detected is False


def test_monotonicity_over_prefixes():
    report = fig1_report()
    stream = D.observations_from_report(report)
    monitor = D.BehaviorMonitor()
    last = 0.0
    for record in stream:
        monitor.feed(record)
        score = monitor.verdict().score
        assert score >= last
        last = score


def test_streaming_chunk_consistency():
    report = fig1_report()
    stream = D.observations_from_report(report)
    whole = D.behavior_monitor(stream)
    rng = random.Random(5)
    for _ in range(20):
        monitor = D.BehaviorMonitor()
        i = 0
        while i < len(stream):
            step = rng.randint(1, 7)
            for record in stream[i : i + step]:
                monitor.feed(record)
            i += step
        assert monitor.verdict() == whole


def test_flag_ticks_exist_in_stream():
    report = fig1_report()
    stream = D.observations_from_report(report)
    ticks = {r["tick"] for r in stream}
    verdict = D.behavior_monitor(stream)
    assert verdict.flags
    assert all(f.tick in ticks for f in verdict.flags)


def test_malformed_stream_rejected():
    with pytest.raises(D.MalformedStream):
        D.behavior_monitor([{"tick": 5, "seq": 0, "kind": "frame_in"}, {"tick": 3, "seq": 1, "kind": "frame_in"}])
    with pytest.raises(D.MalformedStream):
        D.behavior_monitor([{"seq": 0, "kind": "frame_in"}])
    with pytest.raises(D.MalformedStream):
        D.behavior_monitor(["not a record"])


def test_r1_window_respected():
    base = [
        {"tick": 0, "seq": 0, "kind": "frame_in", "frame_type": "PayloadDelivery"},
        {"tick": 9, "seq": 1, "kind": "script_injected", "source": "socket"},
    ]
    assert D.behavior_monitor(base).detected is False  # 9 ticks later: outside window
    near = [
        {"tick": 0, "seq": 0, "kind": "frame_in", "frame_type": "PayloadDelivery"},
        {"tick": 2, "seq": 1, "kind": "script_injected", "source": "socket"},
    ]
    assert D.behavior_monitor(near).detected is True


def test_static_source_scripts_do_not_fire_r1():
    stream = [
        {"tick": 0, "seq": 0, "kind": "frame_in", "frame_type": "ChatText"},
        {"tick": 0, "seq": 1, "kind": "script_injected", "source": "static"},
    ]
    assert D.behavior_monitor(stream).detected is False


def test_weights_and_threshold_configurable():
    stream = [
        {"tick": 0, "seq": 0, "kind": "worker_spawned", "cross_origin": True, "worker_id": "w0"},
    ]
    cfg = D.DetectorConfig(weights=(1.0, 0.25, 1.0, 1.0, 1.0), threshold=0.5)
    verdict = D.behavior_monitor(stream, cfg)
    assert verdict.score == 0.25 and verdict.detected is False
    cfg2 = D.DetectorConfig(weights=(1.0, 0.25, 1.0, 1.0, 1.0), threshold=0.25)
    assert D.behavior_monitor(stream, cfg2).detected is True


# -- evaluate ----------------------------------------------------------------------

def _small_labeled(entries_filter=None, count=6):
    labeled = []
    for entry in K.build_corpus(n_benign=count, n_malicious=count):
        if entries_filter and not entries_filter(entry):
            continue
        labeled.append((C.run_scenario(entry.config), entry.label))
    return labeled


def test_evaluate_perfect_split():
    metrics = D.evaluate(_small_labeled())
    assert metrics.tpr == 1.0
    assert metrics.fpr == 0.0
    assert metrics.malicious == 6 and metrics.benign == 6


def test_evaluate_all_benign_reports_na_tpr():
    metrics = D.evaluate(_small_labeled(lambda e: e.label == "benign"))
    assert metrics.tpr is None
    assert metrics.fpr == 0.0


def test_evaluate_static_engine_scores_zero_tpr():
    metrics = D.evaluate(_small_labeled(lambda e: e.label == "malicious"), engine="static")
    assert metrics.tpr == 0.0


def test_evaluate_empty_corpus_rejected():
    with pytest.raises(D.EmptyCorpus):
        D.evaluate([])


def test_evaluate_bad_label_rejected():
    report = fig1_report()
    with pytest.raises(D.DetectorError):
        D.evaluate([(report, "sketchy")])
