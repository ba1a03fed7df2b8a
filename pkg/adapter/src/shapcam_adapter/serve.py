"""The stdio request loop speaking the engine's oracle wire protocol.

Handshake: the engine sends ``{"op": "hello", "version": 1}``; the adapter
replies ``{"version": 1, "classes": K, "map_shape": [C, h, w], "split": name}``.
Score requests ``{"id", "op": "score", "class", "map": {"shape", "data"}}``
are answered by id — per-request failures become ``{"id", "error"}`` and the
loop continues; lines that are not JSON at all get an id-less error line.
"""

from __future__ import annotations

import json
import sys

import numpy as np

from .splitmodel import SplitRunner

PROTOCOL_VERSION = 1


def _score_reply(runner: SplitRunner, request: dict) -> dict:
    rid = request.get("id")
    try:
        if request.get("op") != "score":
            raise ValueError(f"unknown op {request.get('op')!r}")
        spec = request["map"]
        arr = np.asarray(spec["data"], dtype=np.float64).reshape(spec["shape"])
        prob = runner.score(arr, int(request["class"]))
        return {"id": rid, "prob": prob}
    except Exception as exc:  # keep serving after any single-request failure
        return {"id": rid, "error": str(exc)}


def serve(runner: SplitRunner, stdin=None, stdout=None) -> int:
    stdin = stdin or sys.stdin
    stdout = stdout or sys.stdout

    def emit(obj: dict) -> None:
        stdout.write(json.dumps(obj) + "\n")
        stdout.flush()

    line = stdin.readline()
    if not line:
        return 1
    try:
        hello = json.loads(line)
    except json.JSONDecodeError as exc:
        emit({"error": f"handshake is not JSON: {exc}"})
        return 1
    if hello.get("op") != "hello" or hello.get("version") != PROTOCOL_VERSION:
        emit({"error": f"expected hello version {PROTOCOL_VERSION}, got {hello!r}"})
        return 1
    emit({
        "version": PROTOCOL_VERSION,
        "classes": runner.classes,
        "map_shape": list(runner.map_shape),
        "split": runner.split,
    })

    for line in stdin:
        if not line.strip():
            continue
        try:
            request = json.loads(line)
        except json.JSONDecodeError as exc:
            emit({"error": f"malformed request line: {exc}"})
            continue
        emit(_score_reply(runner, request))
    return 0
