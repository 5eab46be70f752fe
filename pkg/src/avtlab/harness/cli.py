"""Command-line interface.

    avtlab run <scenario.json> [--out report.json] [--detect]
    avtlab detect <report.json> [--engine static|behavioral|both] [--out f]
    avtlab corpus gen --benign N --malicious N --seed S [--out-dir D]
    avtlab evaluate <corpus-dir> [--engine all|behavioral|static|dynamic_r5]
    avtlab serve --port P --scenario <cfg> [--tick-ms MS]
    avtlab report <report.json>

Exit codes: 0 success, 1 configuration error, 2 internal error. All errors
go to stderr with an `ERR:<code>:` prefix. The environment variable
AVTLAB_SEED, when set, overrides the scenario's root rng seed.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import replace
from pathlib import Path

from .. import detector as D
from ..cnc_sim import ConfigInvalid, ScenarioConfig, Seeds, run_scenario
from ..payload import PayloadError
from ..wire import FrameError
from . import corpus as corpus_mod
from .report import RunReport

_CONFIG_ERRORS = (
    ConfigInvalid,
    PayloadError,
    FrameError,
    D.DetectorError,
    FileNotFoundError,
    NotADirectoryError,
    json.JSONDecodeError,
    KeyError,
)


def _load_scenario(path: str) -> ScenarioConfig:
    cfg = ScenarioConfig.from_file(path)
    env_seed = os.environ.get("AVTLAB_SEED")
    if env_seed is not None:
        cfg = replace(cfg, seeds=Seeds(obfuscation=cfg.seeds.obfuscation, rng=int(env_seed)))
    return cfg


def _signature_db(report: RunReport) -> tuple:
    return tuple(b["sha256"] for b in report.delivered_blobs)


def _verdicts(report: RunReport, engine: str) -> dict:
    cfg = D.DetectorConfig(signature_db=_signature_db(report))
    out = {}
    if engine in ("static", "both"):
        out["static"] = D.static_scan(D.ArtifactCorpus.from_report(report), cfg).to_dict()
    if engine in ("behavioral", "both"):
        out["behavioral"] = D.behavior_monitor(D.observations_from_report(report), cfg).to_dict()
    return out


def _emit(text: str, out: str | None) -> None:
    if out:
        Path(out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def _cmd_run(args) -> int:
    cfg = _load_scenario(args.scenario)
    report = run_scenario(cfg)
    if args.detect:
        report.verdicts = _verdicts(report, "both")
    _emit(report.to_json(), args.out)
    return 0


def _cmd_detect(args) -> int:
    report = RunReport.from_json(Path(args.report).read_text(encoding="utf-8"))
    verdicts = _verdicts(report, args.engine)
    _emit(json.dumps(verdicts, sort_keys=True, indent=2) + "\n", args.out)
    return 0


def _cmd_corpus(args) -> int:
    if args.action != "gen":
        raise ConfigInvalid(f"unknown corpus action {args.action!r}")
    entries = corpus_mod.build_corpus(
        n_benign=args.benign, n_malicious=args.malicious, seed=args.seed
    )
    manifest = corpus_mod.write_corpus(args.out_dir, entries)
    sys.stdout.write(f"{manifest.parent}: {len(entries)} scenarios, manifest {manifest.name}\n")
    return 0


def _cmd_evaluate(args) -> int:
    entries = corpus_mod.load_corpus(args.corpus_dir)
    runs = [(entry, run_scenario(entry.config)) for entry in entries]
    labeled = [(report, entry.label) for entry, report in runs]
    engines = ("behavioral", "static", "dynamic_r5") if args.engine == "all" else (args.engine,)
    result = {}
    for engine in engines:
        result[engine] = D.evaluate(labeled, engine=engine).to_dict()
    gated = [(report, entry.label) for entry, report in runs if entry.trigger_gated]
    if gated:
        result["dynamic_r5_on_trigger_gated"] = D.evaluate(gated, engine="dynamic_r5").to_dict()
    _emit(json.dumps(result, sort_keys=True, indent=2) + "\n", args.out)
    return 0


def _cmd_serve(args) -> int:
    from .live import serve  # heavy imports only when asked for

    cfg = _load_scenario(args.scenario)
    serve(
        cfg,
        host=args.host,
        port=args.port,
        tick_ms=args.tick_ms,
        report_path=args.out,
        web_dir=args.web_dir,
        once=args.once,
    )
    return 0


def _cmd_report(args) -> int:
    report = RunReport.from_json(Path(args.report).read_text(encoding="utf-8"))
    lines = [f"scenario: {report.config.get('name') or '(unnamed)'}"]
    lines.append(f"mode: {report.config.get('mode')}   ticks: {report.ticks}   truncated: {report.truncated}")
    lines.append(f"network: sent={report.network.get('sent')} dropped={report.network.get('dropped')}")
    for cid in sorted(report.clients):
        client = report.clients[cid]
        log = client["event_log"]
        injected = sum(1 for r in log if r["kind"] == "script_injected" and r.get("source") == "socket")
        writes = client["filesystem_log"]
        lines.append(
            f"{cid}: events={len(log)} socket_injected={injected} "
            f"file_writes={len(writes)} final={client['final']}"
        )
        for fw in writes:
            lines.append(f"  wrote {fw['path']} (cause={fw['cause']}, tick={fw['tick']})")
    exfil = report.cnc.get("exfil_store", {})
    for cid in sorted(exfil):
        loot = exfil[cid]
        lines.append(
            f"exfil {cid}: keystrokes={len(loot.get('keystrokes', []))} "
            f"storage_snapshots={len(loot.get('storage', []))}"
        )
    if report.cnc.get("mapreduce"):
        mr = report.cnc["mapreduce"]
        lines.append(
            f"mapreduce: tasks={mr['tasks_total']} completed_at_tick={mr['completed_at_tick']} "
            f"reassignments={len(mr['reassignments'])}"
        )
    if report.ddos:
        lines.append(
            f"ddos: observed={report.ddos['target_observed']} "
            f"expected_at_zero_drop={report.ddos['expected_at_zero_drop']}"
        )
    for engine, verdict in sorted(report.verdicts.items()):
        lines.append(
            f"verdict[{engine}]: detected={verdict['detected']} score={verdict['score']} "
            f"flags={[f['rule_id'] for f in verdict['flags']]}"
        )
    sys.stdout.write("\n".join(lines) + "\n")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="avtlab",
        description="Deterministic lab for fileless web-malware behavior and detection.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute a scenario and emit its report")
    p_run.add_argument("scenario")
    p_run.add_argument("--out", default=None)
    p_run.add_argument("--detect", action="store_true", help="embed detector verdicts")
    p_run.set_defaults(fn=_cmd_run)

    p_detect = sub.add_parser("detect", help="run detection engines over a report")
    p_detect.add_argument("report")
    p_detect.add_argument("--engine", choices=("static", "behavioral", "both"), default="both")
    p_detect.add_argument("--out", default=None)
    p_detect.set_defaults(fn=_cmd_detect)

    p_corpus = sub.add_parser("corpus", help="corpus management")
    p_corpus.add_argument("action", choices=("gen",))
    p_corpus.add_argument("--benign", type=int, default=20)
    p_corpus.add_argument("--malicious", type=int, default=20)
    p_corpus.add_argument("--seed", type=int, default=corpus_mod.DEFAULT_CORPUS_SEED)
    p_corpus.add_argument("--out-dir", default="corpus")
    p_corpus.set_defaults(fn=_cmd_corpus)

    p_eval = sub.add_parser("evaluate", help="run and score a labeled corpus directory")
    p_eval.add_argument("corpus_dir")
    p_eval.add_argument(
        "--engine", choices=("all", "behavioral", "static", "dynamic_r5"), default="all"
    )
    p_eval.add_argument("--out", default=None)
    p_eval.set_defaults(fn=_cmd_evaluate)

    p_serve = sub.add_parser("serve", help="live socket coordinator for real clients")
    p_serve.add_argument("--port", type=int, default=8787)
    p_serve.add_argument("--host", default="127.0.0.1")
    p_serve.add_argument("--scenario", required=True)
    p_serve.add_argument("--tick-ms", type=int, default=100)
    p_serve.add_argument("--out", default=None, help="write the live report here on shutdown")
    p_serve.add_argument("--web-dir", default=None, help="static client assets to serve at /")
    p_serve.add_argument(
        "--once", action="store_true", help="shut down after the last client disconnects"
    )
    p_serve.set_defaults(fn=_cmd_serve)

    p_report = sub.add_parser("report", help="human-readable report summary")
    p_report.add_argument("report")
    p_report.set_defaults(fn=_cmd_report)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except _CONFIG_ERRORS as exc:
        sys.stderr.write(f"ERR:1:{exc}\n")
        return 1
    except KeyboardInterrupt:
        raise
    except Exception as exc:  # noqa: BLE001 - the contract is exit code 2
        sys.stderr.write(f"ERR:2:{type(exc).__name__}: {exc}\n")
        return 2


if __name__ == "__main__":
    sys.exit(main())
