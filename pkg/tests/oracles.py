"""Independent reference implementations used to check the simulator.

Nothing here imports the package's allocation or transfer code.
"""

from __future__ import annotations

import math
from fractions import Fraction


def progressive_filling(flows, caps, demands=None):
    """Exact max-min fair rates by textbook water-filling over Fractions.

    ``flows`` lists resource indices per flow, ``caps`` the capacity of each
    resource, ``demands`` optional per-flow caps (None = elastic).
    """
    caps = [Fraction(c) for c in caps]
    n = len(flows)
    dem = [None if demands is None or demands[i] is None or math.isinf(demands[i]) else Fraction(demands[i])
           for i in range(n)]
    rate = [Fraction(0)] * n
    frozen = [False] * n
    level = Fraction(0)
    while not all(frozen):
        # the smallest increment that saturates a resource or meets a demand
        inc = None
        for k, c in enumerate(caps):
            users = [i for i in range(n) if not frozen[i] and k in flows[i]]
            if not users:
                continue
            used = sum(rate[i] for i in range(n) if k in flows[i])
            step = (c - used) / len(users)
            inc = step if inc is None or step < inc else inc
        for i in range(n):
            if not frozen[i] and dem[i] is not None:
                step = dem[i] - level
                inc = step if inc is None or step < inc else inc
        level += inc
        for i in range(n):
            if not frozen[i]:
                rate[i] = level
        for i in range(n):
            if frozen[i]:
                continue
            if dem[i] is not None and rate[i] >= dem[i]:
                frozen[i] = True
        for k, c in enumerate(caps):
            used = sum(rate[i] for i in range(n) if k in flows[i])
            if used >= c:
                for i in range(n):
                    if k in flows[i]:
                        frozen[i] = True
    return rate


def _float_waterfill(flows, caps, demands):
    n = len(flows)
    rate = [0.0] * n
    frozen = [False] * n
    resid = list(caps)
    while not all(frozen):
        best = math.inf
        for k in range(len(caps)):
            cnt = sum(1 for i in range(n) if not frozen[i] and k in flows[i])
            if cnt:
                best = min(best, resid[k] / cnt)
        dmin = min(demands[i] for i in range(n) if not frozen[i])
        if dmin <= best:
            sel = [i for i in range(n) if not frozen[i] and demands[i] <= best]
            val = None
        else:
            bott = set()
            for k in range(len(caps)):
                cnt = sum(1 for i in range(n) if not frozen[i] and k in flows[i])
                if cnt and resid[k] / cnt <= best * (1 + 1e-12):
                    bott.add(k)
            sel = [i for i in range(n) if not frozen[i] and any(k in bott for k in flows[i])]
            val = best
        for i in sel:
            rate[i] = demands[i] if val is None else val
            frozen[i] = True
            for k in flows[i]:
                resid[k] -= rate[i]
    return rate


def fixed_step_fluid(transfers, caps, background=(), dt=1e-4, t_end=1e4):
    """Completion times by stepping a fluid model at a fixed ``dt``.

    ``transfers``: dicts with ``start``, ``bytes``, ``res`` (resource list)
    and ``latency``. ``background``: dicts with ``res``, ``demand``, ``on``,
    ``off``, ``phase`` (off == 0 means always on). Rates are re-solved at the
    start of every step from whatever is active then.
    """
    n = len(transfers)
    rem = [float(t["bytes"]) for t in transfers]
    done = [None] * n
    cache = {}
    step = 0
    while any(d is None for d in done):
        t = step * dt
        if t > t_end:
            raise RuntimeError("fluid oracle did not finish")
        act = tuple(i for i in range(n) if done[i] is None and transfers[i]["start"] <= t + 1e-15)
        bg = []
        for j, b in enumerate(background):
            if b["off"] <= 0 or (t - b["phase"]) % (b["on"] + b["off"]) < b["on"]:
                bg.append(j)
        key = (act, tuple(bg))
        if key not in cache:
            flows = [transfers[i]["res"] for i in act] + [background[j]["res"] for j in bg]
            dem = [math.inf] * len(act) + [background[j]["demand"] for j in bg]
            cache[key] = _float_waterfill(flows, caps, dem) if flows else []
        rates = cache[key]
        for pos, i in enumerate(act):
            r = rates[pos]
            if r * dt >= rem[i]:
                done[i] = t + rem[i] / r + transfers[i]["latency"]
                rem[i] = 0.0
            else:
                rem[i] -= r * dt
        step += 1
    return done


def two_pass_cv(values) -> float:
    """Population CV: mean first, then the mean squared deviation."""
    n = len(values)
    mean = math.fsum(values) / n
    var = math.fsum((v - mean) ** 2 for v in values) / n
    return math.sqrt(var) / mean


def ring_cost(p, message_bytes, bandwidth, latency):
    """Ring all-reduce on an idle uniform fabric, written out step by step."""
    if p == 1:
        return 0.0
    chunk = message_bytes / p
    total = 0.0
    for _ in range(2 * (p - 1)):
        total += latency + chunk / bandwidth
    return total
