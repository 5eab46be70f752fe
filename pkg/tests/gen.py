"""Seeded random generators shared by the property tests.

Everything is driven by an explicit random.Random so failures reproduce
exactly; generators only ever produce values that satisfy the documented
construction invariants (the tests for rejection paths build bad values by
hand).
"""

from __future__ import annotations

import random
import string

from avtlab import payload as P
from avtlab import wire as W

URLS = [
    "ws://cnc.evil.test:8787/ws",
    "wss://alt.evil.test:443/ws",
    "ws://127.0.0.1:19999/chan",
]

SCRIPT_URLS = [
    "https://static.evil.test/foo.js",
    "http://mirror.evil.test:8080/w.js",
]

TARGETS = ["http://flood-target.test/", "https://victim.shop:8443/api"]

_TEXT_POOL = string.ascii_letters + string.digits + " _-./:?&=" + "é世界☃"


def text(rng: random.Random, lo: int = 0, hi: int = 12) -> str:
    return "".join(rng.choice(_TEXT_POOL) for _ in range(rng.randint(lo, hi)))


def u64(rng: random.Random) -> int:
    return rng.choice([0, 1, 7, rng.randint(0, 2**32), 2**64 - 1])


def str_map(rng: random.Random) -> dict:
    return {text(rng, 1, 8): text(rng) for _ in range(rng.randint(0, 4))}


def keystrokes(rng: random.Random) -> tuple:
    return tuple(
        W.KeystrokeEvent(key=rng.choice("abcdefgh ü"), tick=rng.randint(0, 1000))
        for _ in range(rng.randint(0, 6))
    )


def trigger(rng: random.Random) -> P.TriggerSpec:
    k = rng.randrange(3)
    if k == 0:
        return P.OnEvent(token=text(rng, 1, 10))
    if k == 1:
        return P.AtTick(tick=rng.randint(0, 500))
    return P.Immediate()


def instructions(rng: random.Random, depth: int = 0, inherited=(), allow_sw: bool = True) -> tuple:
    opened = set(inherited)
    out = []
    sw_left = 1 if (allow_sw and depth == 0) else 0
    for _ in range(rng.randint(1, 6)):
        kinds = ["open", "hook", "cookies", "webstorage", "map", "flood"]
        if opened:
            kinds.append("send")
        if depth == 0:
            kinds.append("worker")
        if sw_left:
            kinds.append("sw")
        kind = rng.choice(kinds)
        if kind == "open":
            url = rng.choice(URLS)
            opened.add(url)
            out.append(P.OpenSocket(url=url))
        elif kind == "hook":
            out.append(P.HookKeystrokes())
        elif kind == "cookies":
            out.append(P.ReadCookies())
        elif kind == "webstorage":
            out.append(P.ReadWebStorage())
        elif kind == "map":
            out.append(P.ComputeMap(fn_id=rng.choice(P.MAP_FNS)))
        elif kind == "flood":
            out.append(
                P.HttpFlood(
                    target=rng.choice(TARGETS),
                    rate=rng.randint(1, 40),
                    duration=rng.randint(1, 5),
                )
            )
        elif kind == "send":
            out.append(P.Send(channel_url=rng.choice(sorted(opened)), what=rng.choice(P.SEND_KINDS)))
        elif kind == "worker":
            out.append(
                P.SpawnWorkerFromBlob(
                    script_origin_url=rng.choice(SCRIPT_URLS),
                    inner=instructions(rng, depth + 1, opened, allow_sw=False),
                )
            )
        elif kind == "sw":
            sw_left = 0
            out.append(
                P.RegisterServiceWorker(
                    inner=instructions(rng, depth + 1, opened, allow_sw=False)
                )
            )
    return tuple(out)


def payload(rng: random.Random) -> P.Payload:
    return P.Payload(
        payload_id=f"gen-{rng.randrange(10**9)}",
        instructions=instructions(rng),
        trigger=trigger(rng),
    )


def message(rng: random.Random) -> W.Message:
    k = rng.randrange(9)
    if k == 0:
        return W.Register(client_id=text(rng, 1, 10))
    if k == 1:
        return W.PayloadDelivery(
            payload_id=text(rng, 1, 10),
            code=P.obfuscate(payload(rng), rng.randint(0, 2**64 - 1)),
            trigger=trigger(rng),
        )
    if k == 2:
        return W.Activate(trigger_token=text(rng, 1, 10))
    if k == 3:
        return W.ExfilKeystrokes(client_id=text(rng, 1, 10), events=keystrokes(rng))
    if k == 4:
        return W.ExfilStorage(client_id=text(rng, 1, 10), cookies=str_map(rng), web_storage=str_map(rng))
    if k == 5:
        return W.MapAssign(task_id=u64(rng), fn_id=rng.choice(P.MAP_FNS), chunk=text(rng))
    if k == 6:
        return W.MapResult(
            task_id=u64(rng),
            client_id=text(rng, 1, 10),
            value={text(rng, 1, 8): rng.randint(0, 10**9) for _ in range(rng.randint(0, 4))},
        )
    if k == 7:
        return W.DdosCommand(target=rng.choice(TARGETS), rate=rng.randint(1, 100), duration=rng.randint(1, 50))
    return W.Terminate()
