"""Hot inner loops: max-min rate allocation and the fluid transfer DAG loop.

Every function here is written in the numba-compatible subset so the same
source runs jitted or interpreted. When numba is disabled the allocator is
swapped for a vectorized numpy version.
"""

import numpy as np

from ._accel import USE_NUMBA, njit

# relative tolerance for "drained" flows and tied bottleneck shares
DRAIN_RTOL = 1e-9
SHARE_RTOL = 1e-12
MAX_EVENTS = 50_000_000


def maxmin_loop(active, flow_res, flow_len, demand, cap, rate):
    """Progressive filling with per-flow demand caps; fills ``rate`` in place."""
    nflow = active.shape[0]
    nres = cap.shape[0]
    resid = cap.copy()
    cnt = np.zeros(nres, np.int64)
    frozen = np.ones(nflow, np.bool_)
    bott = np.zeros(nres, np.bool_)
    n_open = 0
    for f in range(nflow):
        rate[f] = 0.0
        if active[f]:
            frozen[f] = False
            n_open += 1
            for j in range(flow_len[f]):
                cnt[flow_res[f, j]] += 1
    while n_open > 0:
        best = np.inf
        for k in range(nres):
            if cnt[k] > 0:
                s = resid[k] / cnt[k]
                if s < best:
                    best = s
        if best < 0.0:
            best = 0.0
        dmin = np.inf
        for f in range(nflow):
            if not frozen[f] and demand[f] < dmin:
                dmin = demand[f]
        if dmin <= best:
            # demand-limited flows freeze at their demand; shares only grow
            for f in range(nflow):
                if not frozen[f] and demand[f] <= best:
                    rate[f] = demand[f]
                    frozen[f] = True
                    n_open -= 1
                    for j in range(flow_len[f]):
                        k = flow_res[f, j]
                        cnt[k] -= 1
                        resid[k] -= demand[f]
            continue
        thresh = best * (1.0 + SHARE_RTOL)
        for k in range(nres):
            bott[k] = cnt[k] > 0 and resid[k] / cnt[k] <= thresh
        for f in range(nflow):
            if frozen[f]:
                continue
            hit = False
            for j in range(flow_len[f]):
                if bott[flow_res[f, j]]:
                    hit = True
                    break
            if hit:
                rate[f] = best
                frozen[f] = True
                n_open -= 1
                for j in range(flow_len[f]):
                    k = flow_res[f, j]
                    cnt[k] -= 1
                    resid[k] -= best


def maxmin_numpy(active, flow_res, flow_len, demand, cap, rate):
    """Vectorized equivalent of :func:`maxmin_loop` (interpreter fallback)."""
    nflow, width = flow_res.shape
    inc = np.zeros((nflow, cap.shape[0]), dtype=bool)
    rows, cols = np.nonzero(np.arange(width)[None, :] < flow_len[:, None])
    inc[rows, flow_res[rows, cols]] = True
    inc &= active[:, None]
    rate[:] = 0.0
    frozen = ~active.astype(bool)
    resid = cap.astype(np.float64).copy()
    while not frozen.all():
        open_inc = inc & ~frozen[:, None]
        cnt = open_inc.sum(axis=0)
        with np.errstate(divide="ignore", invalid="ignore"):
            share = np.where(cnt > 0, resid / np.maximum(cnt, 1), np.inf)
        best = max(share.min(), 0.0)
        dem = np.where(frozen, np.inf, demand)
        if dem.min() <= best:
            sel = ~frozen & (demand <= best)
            rate[sel] = demand[sel]
        else:
            bott = (cnt > 0) & (share <= best * (1.0 + SHARE_RTOL))
            sel = ~frozen & open_inc[:, bott].any(axis=1)
            rate[sel] = best
        resid -= rate[sel] @ inc[sel]
        frozen |= sel


if USE_NUMBA:
    maxmin_loop = njit(maxmin_loop)
    _alloc = maxmin_loop
else:
    _alloc = maxmin_numpy


def run_dag(entry, op_bytes, op_route, op_dep, op_recv,
            agent_ops, agent_nops,
            route_res, route_len, route_lat, cap,
            bg_res, bg_len, bg_demand, bg_on, bg_off, bg_phase, t0,
            backlog_rate, backlog_cap,
            op_start, op_deliver, exit_t, wait_t, res_busy, res_contended):
    """Event-driven fluid execution of a transfer DAG.

    Each agent issues its ops strictly in order, one outstanding at a time.
    An op starts once its agent has entered, the agent's previous op has been
    delivered and every op listed in ``op_dep`` has been delivered. Bytes
    drain at max-min fair rates; delivery happens a route latency after the
    last byte leaves. Time is relative to the caller's origin; ``t0`` is the
    absolute origin used to phase the background on/off cycles.

    While an agent is stalled on a dependency before every agent has
    entered, it accumulates a backlog of ``backlog_rate`` bytes per second
    (capped at ``backlog_cap``). The backlog sits ahead of the agent's next
    op in its send queue: that op's flow carries the extra payload-free bytes
    before its own. Stalls after the last entry are plain pipeline bubbles
    and accrue nothing.

    Returns the number of processed events.
    """
    n = entry.shape[0]
    nops = op_bytes.shape[0]
    nbg = bg_demand.shape[0]
    nres = cap.shape[0]
    width = route_res.shape[1]
    nflow = n + nbg

    flow_res = np.full((nflow, width), -1, np.int64)
    flow_len = np.zeros(nflow, np.int64)
    demand = np.full(nflow, np.inf)
    solo = np.zeros(nflow)
    rem = np.zeros(nflow)
    init = np.zeros(nflow)
    active = np.zeros(nflow, np.bool_)
    rate = np.zeros(nflow)

    bg_active = np.zeros(nbg, np.bool_)
    bg_next = np.full(nbg, np.inf)
    bg_cycle = np.zeros(nbg, np.int64)
    for k in range(nbg):
        f = n + k
        flow_len[f] = bg_len[k]
        for j in range(bg_len[k]):
            flow_res[f, j] = bg_res[k, j]
        demand[f] = bg_demand[k]
        solo[f] = bg_demand[k]
        if bg_off[k] <= 0.0:
            bg_active[k] = True
        else:
            period = bg_on[k] + bg_off[k]
            c = np.floor((t0 - bg_phase[k]) / period)
            x = t0 - bg_phase[k] - c * period
            bg_cycle[k] = np.int64(c)
            if x < bg_on[k]:
                bg_active[k] = True
                bg_next[k] = bg_phase[k] + c * period + bg_on[k] - t0
            else:
                bg_next[k] = bg_phase[k] + (c + 1.0) * period - t0
        active[f] = bg_active[k] and bg_demand[k] > 0.0

    entered = np.zeros(n, np.bool_)
    cursor = np.zeros(n, np.int64)
    busy = np.zeros(n, np.bool_)
    in_flight = np.full(n, -1, np.int64)
    deliver_at = np.full(n, np.inf)
    blocked_since = np.full(n, -1.0)
    delivered = np.zeros(nops, np.bool_)
    for o in range(nops):
        op_start[o] = np.nan
        op_deliver[o] = np.nan
    for a in range(n):
        exit_t[a] = entry[a]
        wait_t[a] = 0.0
    for k in range(nres):
        res_busy[k] = 0.0
        res_contended[k] = 0.0
    load = np.zeros(nres)
    carries = np.zeros(nres, np.bool_)

    last_entry = -np.inf
    for a in range(n):
        if entry[a] > last_entry:
            last_entry = entry[a]

    t = 0.0
    events = 0
    while events < MAX_EVENTS:
        events += 1
        # admit entries and start every op that became ready at time t
        changed = True
        while changed:
            changed = False
            for a in range(n):
                if not entered[a]:
                    if entry[a] <= t:
                        entered[a] = True
                        changed = True
                    else:
                        continue
                if busy[a] or cursor[a] >= agent_nops[a]:
                    continue
                o = agent_ops[a, cursor[a]]
                ready = True
                for d in range(op_dep.shape[1]):
                    dd = op_dep[o, d]
                    if dd >= 0 and not delivered[dd]:
                        ready = False
                        break
                if not ready:
                    if blocked_since[a] < 0.0:
                        blocked_since[a] = t
                    continue
                r = op_route[o]
                extra = 0.0
                if blocked_since[a] >= 0.0:
                    wait_t[a] += t - blocked_since[a]
                    early = (t if t < last_entry else last_entry) - blocked_since[a]
                    blocked_since[a] = -1.0
                    extra = backlog_rate * early if early > 0.0 else 0.0
                    if extra > backlog_cap:
                        extra = backlog_cap
                op_start[o] = t
                busy[a] = True
                in_flight[a] = o
                cursor[a] += 1
                changed = True
                if op_bytes[o] + extra > 0.0:
                    flow_len[a] = route_len[r]
                    smin = np.inf
                    for j in range(route_len[r]):
                        flow_res[a, j] = route_res[r, j]
                        if cap[route_res[r, j]] < smin:
                            smin = cap[route_res[r, j]]
                    solo[a] = smin
                    rem[a] = op_bytes[o] + extra
                    init[a] = rem[a]
                    active[a] = True
                else:
                    deliver_at[a] = t + route_lat[r]
                    if deliver_at[a] <= t:
                        delivered[o] = True
                        op_deliver[o] = t
                        busy[a] = False
                        deliver_at[a] = np.inf
                        if t > exit_t[a]:
                            exit_t[a] = t
                        if t > exit_t[op_recv[o]]:
                            exit_t[op_recv[o]] = t

        finished = True
        for a in range(n):
            if not entered[a] or busy[a] or cursor[a] < agent_nops[a]:
                finished = False
                break
        if finished:
            break

        _alloc(active, flow_res, flow_len, demand, cap, rate)

        t_next = np.inf
        for a in range(n):
            if not entered[a] and entry[a] < t_next:
                t_next = entry[a]
            if deliver_at[a] < t_next:
                t_next = deliver_at[a]
        for f in range(nflow):
            if active[f] and f < n and rate[f] > 0.0:
                tt = t + rem[f] / rate[f]
                if tt < t_next:
                    t_next = tt
        for k in range(nbg):
            if bg_next[k] < t_next:
                t_next = bg_next[k]
        if t_next == np.inf:
            break
        dt = t_next - t

        if dt > 0.0:
            for k in range(nres):
                load[k] = 0.0
                carries[k] = False
            for f in range(nflow):
                if active[f]:
                    for j in range(flow_len[f]):
                        k = flow_res[f, j]
                        load[k] += solo[f]
                        if f < n:
                            carries[k] = True
            for k in range(nres):
                if carries[k]:
                    res_busy[k] += dt
                    if load[k] > cap[k] * (1.0 + 1e-9):
                        res_contended[k] += dt
            for f in range(nflow):
                if active[f] and f < n:
                    rem[f] -= rate[f] * dt
        t = t_next

        # a residue too small to move the clock counts as drained
        for a in range(n):
            if active[a] and (rem[a] <= DRAIN_RTOL * init[a] or (rate[a] > 0.0 and t + rem[a] / rate[a] <= t)):
                rem[a] = 0.0
                active[a] = False
                deliver_at[a] = t + route_lat[op_route[in_flight[a]]]
        for a in range(n):
            if deliver_at[a] <= t:
                o = in_flight[a]
                delivered[o] = True
                op_deliver[o] = deliver_at[a]
                busy[a] = False
                if deliver_at[a] > exit_t[a]:
                    exit_t[a] = deliver_at[a]
                if deliver_at[a] > exit_t[op_recv[o]]:
                    exit_t[op_recv[o]] = deliver_at[a]
                deliver_at[a] = np.inf
        for k in range(nbg):
            if bg_next[k] <= t:
                period = bg_on[k] + bg_off[k]
                if bg_active[k]:
                    bg_active[k] = False
                    bg_next[k] = bg_phase[k] + (bg_cycle[k] + 1.0) * period - t0
                else:
                    bg_active[k] = True
                    bg_cycle[k] += 1
                    bg_next[k] = bg_phase[k] + bg_cycle[k] * period + bg_on[k] - t0
                active[n + k] = bg_active[k] and bg_demand[k] > 0.0
    return events


if USE_NUMBA:
    run_dag = njit(run_dag)
