"""Compiled packing loops: arrival-only streams and the timed event loop.

Both mirror ``policies.choose`` (same formulas, same tie rule). The stream
loop works on level counts alone; the timed loop keeps bins and items in
flat arrays and consumes random numbers in the same order as the reference
loop in ``engine``. Falls back to plain Python when numba is unavailable.
"""

from __future__ import annotations

import math

import numpy as np

try:
    from numba import njit
except ImportError:  # pragma: no cover
    def njit(*args, **kwargs):
        if args and callable(args[0]):
            return args[0]
        return lambda f: f

POLICY_CODES = {"pd-quad": 0, "pd-exp": 1, "ss": 2, "bf": 3}
SCHEDULE_CODES = {"quad-fixed": 0, "quad-anytime": 1, "exp-fixed": 2, "exp-anytime": 3}
TIE_TOL = 1e-9


@njit(cache=True)
def _epsilon(code, B, horizon, t):
    if t < 1:
        t = 1
    if code == 0:
        return B * B / math.sqrt(2 * horizon)
    if code == 1:
        return B * B / math.sqrt(4 * t)
    if code == 2:
        return math.sqrt(B / horizon)
    return math.sqrt(B / (2 * (B + t)))


@njit(cache=True)
def _pick(scores, valid, existing, B, s):
    """Tie rule: existing bins (fullest first), then new bins (smallest hole first)."""
    best = np.inf
    for h in range(B - s + 1):
        if valid[h] and scores[h] < best:
            best = scores[h]
    thr = best + TIE_TOL
    for h in range(B - s, 0, -1):
        if valid[h] and existing[h] and scores[h] <= thr:
            return h, True
    for h in range(B - s + 1):
        if valid[h] and not existing[h] and scores[h] <= thr:
            return h, False
    return 0, False


@njit(cache=True)
def _choose(N, B, s, policy, sched, horizon, t, scores, valid, existing):
    """Level decision for one item of size ``s``: (h, into_existing_bin)."""
    top_h = B - s
    if policy == 3:
        for g in range(top_h, 0, -1):
            if N[g] > 0:
                return g, True
        return 0, False
    eps = 0.0
    if policy <= 1:
        eps = _epsilon(sched, B, horizon, t)
    for h in range(B + 1):
        valid[h] = False
        existing[h] = False
    if policy == 0:
        for h in range(top_h + 1):
            top = h + s
            nh = N[h] if h >= 1 else 0
            valid[h] = True
            if nh > 0:
                existing[h] = True
                if top < B:
                    scores[h] = eps * (N[top] - nh + 1)
                else:
                    scores[h] = B + eps * (0.5 - nh)
            else:
                if top < B:
                    scores[h] = eps * (N[top] + 0.5)
                else:
                    scores[h] = float(B)
    elif policy == 1:
        kk = B / eps
        valid[0] = True
        scores[0] = B + kk * (math.exp(-eps * (N[s] + 1)) - math.exp(-eps * N[s]))
        for h in range(1, top_h + 1):
            nh = N[h]
            if nh <= 0:
                continue
            top = h + s
            valid[h] = True
            existing[h] = True
            destroy = math.exp(-eps * (nh - 1)) - math.exp(-eps * nh)
            if top < B:
                scores[h] = kk * (math.exp(-eps * (N[top] + 1)) - math.exp(-eps * N[top]) + destroy)
            else:
                scores[h] = kk * destroy
    else:
        valid[0] = True
        scores[0] = float(2 * N[s] + 1) if s < B else 0.0
        for h in range(1, top_h + 1):
            nh = N[h]
            if nh <= 0:
                continue
            top = h + s
            valid[h] = True
            existing[h] = True
            d = -2 * nh + 1
            if top < B:
                d += 2 * N[top] + 1
            scores[h] = float(d)
    return _pick(scores, valid, existing, B, s)


@njit(cache=True)
def stream_kernel(B, sizes, types, policy, sched, horizon, snap_at, check_bound):
    """Pack ``types`` (indices into ``sizes``) one by one.

    Returns level counts (index 0..B), packed volume and hole volume at each
    item index listed in ``snap_at``, plus the number of steps at which some
    open level exceeded (B+1) h / eps.
    """
    N = np.zeros(B + 1, dtype=np.int64)
    n_snap = snap_at.shape[0]
    out_counts = np.zeros((n_snap, B + 1), dtype=np.int64)
    out_volume = np.zeros(n_snap, dtype=np.int64)
    out_holes = np.zeros(n_snap, dtype=np.int64)
    scores = np.zeros(B + 1)
    valid = np.zeros(B + 1, dtype=np.bool_)
    existing = np.zeros(B + 1, dtype=np.bool_)
    volume = 0
    holes = 0
    violations = 0
    k = 0
    for i in range(types.shape[0]):
        t = i + 1
        s = sizes[types[i]]
        h, ex = _choose(N, B, s, policy, sched, horizon, t, scores, valid, existing)
        if ex:
            N[h] -= 1
        else:
            holes += h
        N[h + s] += 1
        volume += s
        if check_bound:
            eps_b = _epsilon(sched, B, horizon, t)
            for g in range(1, B):
                if N[g] > (B + 1) * g / eps_b:
                    violations += 1
                    break
        while k < n_snap and snap_at[k] == t:
            out_counts[k, :] = N
            out_volume[k] = volume
            out_holes[k] = holes
            k += 1
    return out_counts, out_volume, out_holes, violations


# -- event-driven loop -----------------------------------------------------------
#
# State lives in arrays so that the loop can hand control back to Python
# (sampling, buffer refills, growth) and resume where it stopped.
#   ints:   item_count, bin_count, volume, holes, seq, phase, heap_size,
#           free_items, free_bins, ptr_arr, ptr_typ, ptr_life, ptr_sel, events
#   floats: next_arrival, clock

REACHED, NEED_RANDOM, NEED_ROOM = 0, 1, 2
I_ITEMS, I_BINS, I_VOLUME, I_HOLES, I_SEQ, I_PHASE, I_HEAP = 0, 1, 2, 3, 4, 5, 6
I_FREE_ITEMS, I_FREE_BINS, I_ARR, I_TYP, I_LIFE, I_SEL, I_EVENTS = 7, 8, 9, 10, 11, 12, 13
F_NEXT, F_CLOCK = 0, 1


@njit(cache=True)
def _heap_less(ht, hs, a, b):
    return ht[a] < ht[b] or (ht[a] == ht[b] and hs[a] < hs[b])


@njit(cache=True)
def _heap_swap(ht, hs, hslot, a, b):
    ht[a], ht[b] = ht[b], ht[a]
    hs[a], hs[b] = hs[b], hs[a]
    hslot[a], hslot[b] = hslot[b], hslot[a]


@njit(cache=True)
def heap_push(ht, hs, hslot, n, time, seq, slot):
    ht[n] = time
    hs[n] = seq
    hslot[n] = slot
    i = n
    while i > 0:
        parent = (i - 1) >> 1
        if _heap_less(ht, hs, i, parent):
            _heap_swap(ht, hs, hslot, i, parent)
            i = parent
        else:
            break
    return n + 1


@njit(cache=True)
def heap_pop(ht, hs, hslot, n):
    slot = hslot[0]
    n -= 1
    if n > 0:
        ht[0] = ht[n]
        hs[0] = hs[n]
        hslot[0] = hslot[n]
        i = 0
        while True:
            left = 2 * i + 1
            if left >= n:
                break
            child = left
            if left + 1 < n and _heap_less(ht, hs, left + 1, left):
                child = left + 1
            if _heap_less(ht, hs, child, i):
                _heap_swap(ht, hs, hslot, i, child)
                i = child
            else:
                break
    return slot, n


@njit(cache=True)
def _level_remove(N, lvl, bin_level, bin_pos, b):
    h = bin_level[b]
    i = bin_pos[b]
    last = lvl[h, N[h] - 1]
    lvl[h, i] = last
    bin_pos[last] = i
    N[h] -= 1


@njit(cache=True)
def _level_add(N, lvl, bin_level, bin_pos, b):
    h = bin_level[b]
    lvl[h, N[h]] = b
    bin_pos[b] = N[h]
    N[h] += 1


@njit(cache=True)
def timed_advance(B, policy, sched, N, lvl, bin_level, bin_hole, bin_items, bin_pos, free_bins,
                  item_bin, item_size, free_items, ht, hs, hslot,
                  ph_until, ph_rate, ph_cum, ph_sizes, ph_means,
                  ints, floats, u_arr, u_typ, u_life, u_sel, target):
    """Process events up to and including time ``target``.

    Returns REACHED when the next event lies beyond ``target``, NEED_RANDOM
    when a uniform buffer may run dry, NEED_ROOM when an array must grow.
    Nothing is mutated for the event that triggered a non-REACHED return.
    """
    scores = np.zeros(B + 1)
    valid = np.zeros(B + 1, dtype=np.bool_)
    existing = np.zeros(B + 1, dtype=np.bool_)
    n_phases = ph_until.shape[0]
    room = lvl.shape[1]
    while True:
        if (ints[I_ARR] >= u_arr.shape[0] or ints[I_TYP] >= u_typ.shape[0]
                or ints[I_LIFE] >= u_life.shape[0] or ints[I_SEL] >= u_sel.shape[0]):
            return NEED_RANDOM
        if (ints[I_FREE_ITEMS] == 0 or ints[I_FREE_BINS] == 0 or ints[I_HEAP] >= ht.shape[0]):
            return NEED_ROOM
        for h in range(B + 1):
            if N[h] >= room:
                return NEED_ROOM
        p = ints[I_PHASE]
        n_heap = ints[I_HEAP]
        td = ht[0] if n_heap > 0 else np.inf
        t_sw = ph_until[p] if p + 1 < n_phases else np.inf
        t_next = floats[F_NEXT]
        if t_sw < t_next and t_sw <= td:
            kind = 2
            t_ev = t_sw
        elif t_next <= td:
            kind = 0
            t_ev = t_next
        else:
            kind = 1
            t_ev = td
        if t_ev > target:
            return REACHED
        floats[F_CLOCK] = t_ev
        ints[I_EVENTS] += 1
        if kind == 0:
            u = u_typ[ints[I_TYP]]
            ints[I_TYP] += 1
            j = 0
            while ph_cum[p, j] <= u:
                j += 1
            s = ph_sizes[p, j]
            h, ex = _choose(N, B, s, policy, sched, 0, ints[I_ITEMS] + 1, scores, valid, existing)
            if ex:
                k = int(u_sel[ints[I_SEL]] * N[h])
                ints[I_SEL] += 1
                b = lvl[h, k]
                _level_remove(N, lvl, bin_level, bin_pos, b)
            else:
                ints[I_FREE_BINS] -= 1
                b = free_bins[ints[I_FREE_BINS]]
                bin_hole[b] = h
                bin_level[b] = h
                bin_items[b] = 0
                ints[I_HOLES] += h
                ints[I_BINS] += 1
            bin_level[b] += s
            bin_items[b] += 1
            _level_add(N, lvl, bin_level, bin_pos, b)
            ints[I_FREE_ITEMS] -= 1
            slot = free_items[ints[I_FREE_ITEMS]]
            item_bin[slot] = b
            item_size[slot] = s
            ints[I_VOLUME] += s
            ints[I_ITEMS] += 1
            mean = ph_means[p, j]
            life = -mean * math.log(1.0 - u_life[ints[I_LIFE]])
            ints[I_LIFE] += 1
            ints[I_HEAP] = heap_push(ht, hs, hslot, n_heap, t_ev + life, ints[I_SEQ], slot)
            ints[I_SEQ] += 1
            gap = 1.0 / ph_rate[p]
            floats[F_NEXT] = t_ev + -gap * math.log(1.0 - u_arr[ints[I_ARR]])
            ints[I_ARR] += 1
        elif kind == 1:
            slot, n_heap = heap_pop(ht, hs, hslot, n_heap)
            ints[I_HEAP] = n_heap
            b = item_bin[slot]
            s = item_size[slot]
            free_items[ints[I_FREE_ITEMS]] = slot
            ints[I_FREE_ITEMS] += 1
            _level_remove(N, lvl, bin_level, bin_pos, b)
            bin_level[b] -= s
            bin_items[b] -= 1
            ints[I_VOLUME] -= s
            ints[I_ITEMS] -= 1
            if bin_items[b] > 0:
                _level_add(N, lvl, bin_level, bin_pos, b)
            else:
                ints[I_HOLES] -= bin_hole[b]
                ints[I_BINS] -= 1
                free_bins[ints[I_FREE_BINS]] = b
                ints[I_FREE_BINS] += 1
        else:
            p += 1
            ints[I_PHASE] = p
            gap = 1.0 / ph_rate[p]
            floats[F_NEXT] = t_ev + -gap * math.log(1.0 - u_arr[ints[I_ARR]])
            ints[I_ARR] += 1
