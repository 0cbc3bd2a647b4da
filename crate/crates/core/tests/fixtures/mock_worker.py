"""Minimal protocol peer for executor tests.

Understands sources carrying a `native:<name>` line for a handful of
registry names plus `crash`, which exits without answering.
"""
import json
import math
import sys
import time

loaded = {}


def evaluate(name, payload):
    if name.startswith("field:"):
        return payload[name[len("field:"):]]
    if name.startswith("constant:"):
        return float(name[len("constant:"):])
    if name == "throw":
        raise ValueError("feature raised")
    if name == "nan":
        return float("nan")
    if name.startswith("sleep:"):
        time.sleep(int(name[len("sleep:"):]) / 1000.0)
        return 0.0
    if name == "crash":
        sys.exit(3)
    raise KeyError(name)


def reply(frame):
    sys.stdout.write(json.dumps(frame) + "\n")
    sys.stdout.flush()


def error(rid, kind, message, index=None):
    err = {"kind": kind, "message": message}
    if index is not None:
        err["example_index"] = index
    reply({"id": rid, "ok": False, "error": err})


for line in sys.stdin:
    try:
        req = json.loads(line)
    except ValueError:
        continue
    rid = req.get("id")
    op = req.get("op")
    if op == "shutdown":
        reply({"id": rid, "ok": True, "values": []})
        break
    if op == "load":
        names = [l.split(":", 1)[1] for l in req["source"].splitlines() if l.startswith("native:")]
        if not names:
            error(rid, "load_error", "SyntaxError: line 1")
            continue
        loaded[req["feature_id"]] = names[0]
        reply({"id": rid, "ok": True, "values": []})
        continue
    if op == "eval":
        name = loaded.get(req["feature_id"])
        if name is None:
            error(rid, "load_error", "feature not loaded")
            continue
        values = []
        failed = False
        for i, payload in enumerate(req["examples"]):
            try:
                v = float(evaluate(name, payload))
            except Exception as e:  # noqa: BLE001
                error(rid, "runtime_exception", repr(e), i)
                failed = True
                break
            if not math.isfinite(v):
                error(rid, "non_finite", "value is not finite", i)
                failed = True
                break
            values.append(v)
        if not failed:
            reply({"id": rid, "ok": True, "values": values})
