"""Compiled hot loops.

Everything here is deliberately free of Python objects: flat numpy
arrays in, status codes and tallies out.  The Python modules own all
bookkeeping that is not performance critical (roles, holes, events,
ledgers) and call into these kernels for the raw walks.

Two sources of randomness appear:

* stack draws, ``_draw_bit(key, j)`` -- the site-keyed counter-based
  streams of ``stacks.StackSet`` (replayable, index-addressed);
* free-running splitmix64 state -- used only by the direct-sampler
  backend of the single-block module, where paths are sampled by law
  rather than replayed from stacks.

The window walk used by the sampler is exact in law: the walk is
simulated literally on a small window, and any sojourn beyond a window
edge is collapsed to a single Bernoulli trial (reach the far absorbing
site before returning to the edge), which is its exact hitting
probability.  Sojourns beyond the edge cannot touch the block, so the
collapsed steps carry no information the caller needs.
"""

from __future__ import annotations

import numpy as np
from numba import njit, prange

U64 = np.uint64
_GAMMA = U64(0x9E3779B97F4A7C15)
_M1 = U64(0xBF58476D1CE4E5B9)
_M2 = U64(0x94D049BB133111EB)

# Orientation codes (match layout.SINGLE/LEFT/RIGHT).
ORIENT_SINGLE = 0
ORIENT_LEFT = 1
ORIENT_RIGHT = 2

# Walk/episode outcomes.
ARRIVED = 0
EMIT_LEFT = 1
EMIT_RIGHT = 2
FROZE = 3
ILLEGAL = -1
CAP_HIT = -2

# Site-selection policies for stabilization.
POLICY_LEFTMOST = 0
POLICY_RIGHTMOST = 1
POLICY_RANDOM = 2
POLICY_QUEUE = 3
POLICY_STACK = 4

NO_STOP = -(1 << 60)


@njit(cache=True, inline="always")
def _mix64(z):
    z = z + _GAMMA
    z = (z ^ (z >> U64(30))) * _M1
    z = (z ^ (z >> U64(27))) * _M2
    return z ^ (z >> U64(31))


@njit(cache=True, inline="always")
def _draw_bit(key, j):
    """Instruction j of the stream with this key, as -1 or +1."""
    v = _mix64(key + U64(j + 1) * _GAMMA)
    if v >> U64(63):
        return 1
    return -1


@njit(cache=True, inline="always")
def _next_u64(state):
    state[0] = state[0] + _GAMMA
    return _mix64(state[0])


@njit(cache=True)
def _bern_one_over(state, m):
    """True with probability exactly 1/m (m >= 1)."""
    if m <= 1:
        return True
    mask = U64(1)
    mm = U64(m - 1)
    while mask < mm:
        mask = (mask << U64(1)) | U64(1)
    while True:
        u = _next_u64(state) & mask
        if u <= mm:
            return u == U64(0)


# ---------------------------------------------------------------------------
# Plain-interval stabilization (full and half topplings)
# ---------------------------------------------------------------------------


@njit(cache=True, inline="always")
def _is_legal(eta, omega, x, half):
    if eta[x] >= 2:
        return True
    if half and eta[x] == 1 and omega[x] == 1:
        return True
    return False


@njit(cache=True, inline="always")
def _topple(eta, omega, consumed, odo, keys, x, half):
    """One toppling at interior index x. Caller guarantees legality."""
    j = consumed[x, 0]
    if half:
        b = _draw_bit(keys[x, 0], j)
        consumed[x, 0] = j + 1
        eta[x] -= 1
        eta[x + b] += 1
        omega[x] ^= 1
    else:
        b1 = _draw_bit(keys[x, 0], j)
        b2 = _draw_bit(keys[x, 0], j + 1)
        consumed[x, 0] = j + 2
        eta[x] -= 2
        eta[x + b1] += 1
        eta[x + b2] += 1
    odo[x] += 1


@njit(cache=True)
def stabilize_kernel(eta, omega, consumed, keys, odo, half, policy, policy_key, cap):
    """Topple until no interior site is legal.  Index 0 and m-1 absorb.

    Returns (status, topplings); status is ARRIVED on success.
    """
    m = eta.shape[0]
    total = 0
    if policy == POLICY_LEFTMOST or policy == POLICY_RIGHTMOST:
        fwd = policy == POLICY_LEFTMOST
        p = 1 if fwd else m - 2
        while 1 <= p <= m - 2:
            if _is_legal(eta, omega, p, half):
                _topple(eta, omega, consumed, odo, keys, p, half)
                total += 1
                if total > cap:
                    return CAP_HIT, total
                # only p-1, p, p+1 can have become legal
                p = p - 1 if fwd else p + 1
                if p < 1:
                    p = 1
                if p > m - 2:
                    p = m - 2
            else:
                p = p + 1 if fwd else p - 1
        return ARRIVED, total

    if policy == POLICY_RANDOM:
        rs = np.empty(1, dtype=np.uint64)
        rs[0] = policy_key
        cand = np.empty(max(16, 4 * m), dtype=np.int64)
        ncand = 0
        for x in range(1, m - 1):
            if _is_legal(eta, omega, x, half):
                cand[ncand] = x
                ncand += 1
        while ncand > 0:
            k = int(_next_u64(rs) % U64(ncand))
            x = cand[k]
            cand[k] = cand[ncand - 1]
            ncand -= 1
            if not _is_legal(eta, omega, x, half):
                continue  # stale entry
            _topple(eta, omega, consumed, odo, keys, x, half)
            total += 1
            if total > cap:
                return CAP_HIT, total
            for y in (x - 1, x, x + 1):
                if 1 <= y <= m - 2 and _is_legal(eta, omega, y, half):
                    if ncand >= cand.shape[0]:
                        grown = np.empty(2 * cand.shape[0], dtype=np.int64)
                        grown[:ncand] = cand[:ncand]
                        cand = grown
                    cand[ncand] = y
                    ncand += 1
        return ARRIVED, total

    # queue (FIFO) / stack (LIFO) with membership flags
    fifo = policy == POLICY_QUEUE
    buf = np.empty(m, dtype=np.int64)
    inbuf = np.zeros(m, dtype=np.uint8)
    head = 0
    tail = 0
    size = 0
    for x in range(1, m - 1):
        if _is_legal(eta, omega, x, half):
            buf[tail] = x
            tail = (tail + 1) % m
            size += 1
            inbuf[x] = 1
    while size > 0:
        if fifo:
            x = buf[head]
            head = (head + 1) % m
        else:
            tail = (tail - 1) % m
            x = buf[tail]
        size -= 1
        inbuf[x] = 0
        if not _is_legal(eta, omega, x, half):
            continue
        _topple(eta, omega, consumed, odo, keys, x, half)
        total += 1
        if total > cap:
            return CAP_HIT, total
        for y in (x - 1, x, x + 1):
            if 1 <= y <= m - 2 and inbuf[y] == 0 and _is_legal(eta, omega, y, half):
                buf[tail] = y
                tail = (tail + 1) % m
                size += 1
                inbuf[y] = 1
    return ARRIVED, total


# ---------------------------------------------------------------------------
# Carpet/hole hot-particle runs (stack-driven)
# ---------------------------------------------------------------------------


@njit(cache=True)
def hot_walk(
    eta,
    omega,
    consumed,
    keys,
    odo,
    flips,
    record_flips,
    start,
    hole,
    lt,
    bs,
    be,
    rt,
    lo,
    cap,
    steps_done,
):
    """Topple the hot particle from ``start`` until it reaches ``hole``
    (pass NO_STOP to disable), ``lt`` or ``rt``.

    All sites are absolute; ``lo`` maps to array index 0.  ``bs``/``be``
    bound the hot block (single-stream region); transit sites left of the
    block use RIGHT streams, right of it LEFT streams.  ``flips`` (length
    be-bs+1) is xor-ed at each departure from a block site when
    ``record_flips`` is set.

    Returns (status, end_site, steps).
    """
    x = start
    steps = 0
    while True:
        xi = x - lo
        e = eta[xi]
        if e < 2 and not (e == 1 and omega[xi] == 1):
            return ILLEGAL, x, steps
        if x < bs:
            o = ORIENT_RIGHT
        elif x > be:
            o = ORIENT_LEFT
        else:
            o = ORIENT_SINGLE
        j = consumed[xi, o]
        consumed[xi, o] = j + 1
        b = _draw_bit(keys[xi, o], j)
        eta[xi] -= 1
        omega[xi] ^= 1
        odo[xi] += 1
        if record_flips and bs <= x <= be:
            flips[x - bs] ^= 1
        steps += 1
        if steps_done + steps > cap:
            return CAP_HIT, x, steps
        x += b
        eta[x - lo] += 1
        if x == lt:
            return EMIT_LEFT, x, steps
        if x == rt:
            return EMIT_RIGHT, x, steps
        if x == hole:
            return ARRIVED, x, steps


@njit(cache=True, inline="always")
def _leftmost_odd(omega, bs, be, lo):
    for y in range(bs, be + 1):
        if omega[y - lo] == 1:
            return y
    return -1


@njit(cache=True)
def hot_episode(
    eta,
    omega,
    consumed,
    keys,
    odo,
    holes,
    block,
    start,
    lt,
    bs,
    be,
    rt,
    lo,
    cap,
    steps_done,
):
    """One full hot designation in an unfrozen block: excursions and hole
    relocations until the particle freezes or is emitted.

    Mutates ``holes[block]`` as the hole moves.  Returns
    (status, end_site, steps, excursions, relocations); status is
    EMIT_LEFT / EMIT_RIGHT / FROZE / ILLEGAL / CAP_HIT.
    """
    x = start
    steps = 0
    excursions = 0
    relocations = 0
    dummy = np.empty(1, dtype=np.int8)
    if x == holes[block]:
        # Hot sits in the hole: restore the hole-at-leftmost-odd-parity
        # invariant before any toppling; relocate or freeze directly.
        y = _leftmost_odd(omega, bs, be, lo)
        if y == -1:
            holes[block] = be
            return FROZE, x, steps, excursions, relocations
        if y != x:
            holes[block] = y
            x = y
            relocations += 1
    while True:
        status, x, s = hot_walk(
            eta,
            omega,
            consumed,
            keys,
            odo,
            dummy,
            False,
            x,
            holes[block],
            lt,
            bs,
            be,
            rt,
            lo,
            cap,
            steps_done + steps,
        )
        steps += s
        if status != ARRIVED:
            return status, x, steps, excursions, relocations
        excursions += 1
        y = _leftmost_odd(omega, bs, be, lo)
        if y == -1:
            holes[block] = be
            return FROZE, x, steps, excursions, relocations
        holes[block] = y
        x = y


# ---------------------------------------------------------------------------
# IDLA walks
# ---------------------------------------------------------------------------


@njit(cache=True)
def idla_walk(eta, omega, consumed, keys, odo, freeze, start, cap, steps_done):
    """Walk one particle from ``start`` until it settles on an empty site
    or reaches a freeze point.  Returns (status, end_index, steps)."""
    x = start
    steps = 0
    while True:
        e = eta[x]
        if e < 2 and not (e == 1 and omega[x] == 1):
            return ILLEGAL, x, steps
        j = consumed[x]
        consumed[x] = j + 1
        b = _draw_bit(keys[x], j)
        eta[x] -= 1
        omega[x] ^= 1
        odo[x] += 1
        steps += 1
        if steps_done + steps > cap:
            return CAP_HIT, x, steps
        x += b
        eta[x] += 1
        if freeze[x] == 1 or eta[x] == 1:
            return ARRIVED, x, steps


@njit(cache=True)
def idla_sweep_kernel(eta, omega, consumed, keys, odo, freeze, lo_idx, hi_idx, cap):
    """Left-to-right sweep: every site of [lo_idx, hi_idx] is reduced to at
    most one particle by walking its surplus off (FIFO within a site).

    Walkers settle on empty sites or freeze points only, so a single pass
    leaves no swept site above one.  Returns (status, steps).
    """
    steps = 0
    for x in range(lo_idx, hi_idx + 1):
        if freeze[x] == 1:
            continue
        while eta[x] > 1:
            st, _, s = idla_walk(eta, omega, consumed, keys, odo, freeze, x, cap, steps)
            steps += s
            if st != ARRIVED:
                return st, steps
    return ARRIVED, steps


@njit(cache=True)
def idla_fill_kernel(eta, omega, consumed, keys, odo, freeze, src_a, src_b, targets, cap):
    """Release particles from the two source indices (alternating, a
    first) until every target site is occupied or the sources cannot
    legally release.  Returns (status, released_a, released_b, steps).
    """
    empty = 0
    for x in range(eta.shape[0]):
        if targets[x] == 1 and eta[x] == 0:
            empty += 1
    steps = 0
    rel_a = 0
    rel_b = 0
    use_a = True
    while empty > 0:
        # a source can legally release while it holds two particles, or a
        # single particle with odd parity (half-toppling legality)
        can_a = src_a >= 0 and (eta[src_a] >= 2 or (eta[src_a] == 1 and omega[src_a] == 1))
        can_b = src_b >= 0 and (eta[src_b] >= 2 or (eta[src_b] == 1 and omega[src_b] == 1))
        if not (can_a or can_b):
            break
        if use_a:
            src = src_a if can_a else src_b
        else:
            src = src_b if can_b else src_a
        use_a = not use_a
        st, end, s = idla_walk(eta, omega, consumed, keys, odo, freeze, src, cap, steps)
        steps += s
        if st != ARRIVED:
            return st, rel_a, rel_b, steps
        if src == src_a:
            rel_a += 1
        else:
            rel_b += 1
        if targets[end] == 1 and eta[end] == 1 and freeze[end] == 0:
            empty -= 1
    return ARRIVED, rel_a, rel_b, steps


# ---------------------------------------------------------------------------
# Direct-sampler window walk (single-block backend)
# ---------------------------------------------------------------------------


@njit(cache=True)
def window_walk(state, start, stop_site, win_lo, win_hi, qden, flips, a, max_steps):
    """Simple random walk from ``start``; stops on arrival at
    ``stop_site`` or on absorption at a far target beyond either window
    edge (an out-of-window sojourn reaches the far side with probability
    exactly 1/qden; qden = 0 means it always returns).

    ``flips[0..a]`` is xor-ed on departures from block sites.  Returns
    (outcome, steps, min_reached, max_reached) where min/max are clipped
    to one site beyond the window.
    """
    x = start
    steps = 0
    minr = x
    maxr = x
    buf = U64(0)
    nbits = 0
    while True:
        if nbits == 0:
            buf = _next_u64(state)
            nbits = 64
        bit = buf & U64(1)
        buf >>= U64(1)
        nbits -= 1
        if 0 <= x <= a:
            flips[x] ^= 1
        steps += 1
        if steps > max_steps:
            return CAP_HIT, steps, minr, maxr
        if bit:
            if x == win_hi:
                # sojourn beyond the right edge; exact far-hit Bernoulli
                if maxr < win_hi + 1:
                    maxr = win_hi + 1
                if qden > 0 and _bern_one_over(state, qden):
                    return EMIT_RIGHT, steps, minr, maxr
                continue  # walker is back at the edge
            x += 1
            if x > maxr:
                maxr = x
        else:
            if x == win_lo:
                if minr > win_lo - 1:
                    minr = win_lo - 1
                if qden > 0 and _bern_one_over(state, qden):
                    return EMIT_LEFT, steps, minr, maxr
                continue
            x -= 1
            if x < minr:
                minr = x
        if x == stop_site:
            return ARRIVED, steps, minr, maxr


@njit(cache=True, inline="always")
def _scan_leftmost_one(omega, lo_hint, a):
    s = lo_hint
    if s < 0:
        s = 0
    for i in range(s, a + 1):
        if omega[i] == 1:
            return i
    return a + 1


@njit(cache=True)
def chain_tally_kernel(a, K, target_emissions, seed, init_code, max_total_steps):
    """Bulk one-block chain in the sampler backend, tallies only.

    The block is [0, a]; the far absorbing sites sit K - a - 1 beyond the
    window edges -1 and a+1.  Inputs respawn at site a.  init_code:
    0 = random parity with leftmost one at 1, 1 = all zero (frozen).

    Returns int64[12] tallies:
      [0] attempted emissions  [1] left emissions   [2] right emissions
      [3] freezes              [4] unfreezes        [5] failed re-arrivals
      [6] chain steps          [7] walk steps       [8] stagnant pairs
      [9] pair count           [10] plain excursions  [11] cap flag
    """
    t = np.zeros(12, dtype=np.int64)
    state = np.empty(1, dtype=np.uint64)
    state[0] = _mix64(U64(seed))
    # parity configuration as a bit mask (bit i = omega(i)); a <= 62
    w = U64(0)
    if init_code == 0:
        r = _next_u64(state)
        w = (r >> U64(2)) & ((U64(1) << U64(a + 1)) - U64(1))
        w = (w | U64(2)) & ~U64(1)  # omega(1) = 1, omega(0) = 0
    qden = K - a - 1
    # positions shifted by +1: y in [0, a+2], block sites are [1, a+1]
    ymax = a + 2
    ua = U64(a)
    L = 0
    while L <= a and (w >> U64(L)) & U64(1) == U64(0):
        L += 1
    # modes: 0 hot in hole, 1 respawning input from a, 2 frozen
    mode = 2 if L > a else 0
    last1 = -1  # left-emission count after attempt k-1
    last2 = -1  # ... after attempt k-2
    steps = 0
    buf = U64(0)
    nb = 0
    while t[1] + t[2] < target_emissions:
        if steps >= max_total_steps:
            t[11] = 1
            break
        completed = 0  # 1 left, 2 right, 3 freeze
        if mode == 2:
            y = a + 1
            stop = -9
        elif mode == 1:
            y = a + 1
            stop = L + 1
        else:
            y = L + 1
            stop = L + 1
        if mode == 1 and L == a:
            out = ARRIVED  # respawned input lands straight in the hole
        else:
            out = -5
            while True:
                if nb == 0:
                    buf = _next_u64(state)
                    nb = 64
                    steps += 64  # budget at buffer granularity
                    if steps >= max_total_steps:
                        out = CAP_HIT
                        break
                bit = buf & U64(1)
                buf >>= U64(1)
                nb -= 1
                # branchless departure flip and step
                uy = U64(y - 1)
                inb = uy <= ua
                w ^= (U64(1) << (uy & U64(63))) & (U64(0) - U64(inb))
                st = (np.int64(bit) << 1) - 1
                y += st
                if y == stop:
                    out = ARRIVED
                    break
                if y < 0 or y > ymax:
                    # out-of-window sojourn: exact far-hit Bernoulli
                    if _bern_one_over(state, qden):
                        out = EMIT_LEFT if y < 0 else EMIT_RIGHT
                        break
                    y -= st  # the sojourn returned to the edge
        if out == CAP_HIT:
            t[11] = 1
            break
        if mode == 2:
            completed = 1 if out == EMIT_LEFT else 2
            if w != U64(0):
                # unfreeze: the thawed particle rests in the relocated
                # hole, so the next attempt is an excursion from it
                L = 0
                while (w >> U64(L)) & U64(1) == U64(0):
                    L += 1
                mode = 0
                t[4] += 1
        elif out == ARRIVED:
            t[6] += 1
            if mode == 0:
                t[10] += 1
            if w == U64(0):
                t[3] += 1
                completed = 3
                mode = 2
                L = a + 1
            else:
                L = 0
                while (w >> U64(L)) & U64(1) == U64(0):
                    L += 1
                mode = 0
        else:
            completed = 1 if out == EMIT_LEFT else 2
            if mode == 1:
                t[5] += 1  # failed re-arrival
            mode = 1
        if completed > 0:
            t[0] += 1
            if completed == 1:
                t[1] += 1
            elif completed == 2:
                t[2] += 1
            if last2 >= 0:
                t[9] += 1
                if t[1] == last2:
                    t[8] += 1
            last2 = last1
            last1 = t[1]
    t[7] = steps
    return t


@njit(cache=True, parallel=True)
def chain_tally_parallel(a, K, total_emissions, seed, n_chains, max_steps_each):
    """Independent chains in parallel; tallies are summed, so the result
    does not depend on scheduling."""
    out = np.zeros((n_chains, 12), dtype=np.int64)
    per = (total_emissions + n_chains - 1) // n_chains
    for c in prange(n_chains):
        sub = chain_tally_kernel(a, K, per, int(_mix64(U64(seed) ^ U64(c + 1))), 0, max_steps_each)
        out[c] = sub
    return out.sum(axis=0)


# ---------------------------------------------------------------------------
# Excursion-law oracles (pure simple-random-walk facts)
# ---------------------------------------------------------------------------


@njit(cache=True)
def reach_law_kernel(n_samples, ell_max, seed):
    """Counts of excursions whose maximum displacement reaches >= ell for
    ell in 1..ell_max.  Returns int64[ell_max+1] (index 0 unused)."""
    counts = np.zeros(ell_max + 1, dtype=np.int64)
    state = np.empty(1, dtype=np.uint64)
    state[0] = _mix64(U64(seed))
    buf = U64(0)
    nb = 0
    for _ in range(n_samples):
        x = 0
        maxd = 0
        while True:
            if nb == 0:
                buf = _next_u64(state)
                nb = 64
            bit = buf & U64(1)
            buf >>= U64(1)
            nb -= 1
            x = x + 1 if bit else x - 1
            d = x if x >= 0 else -x
            if d > maxd:
                maxd = d
                if maxd >= ell_max:
                    break  # indicator decided for every tracked ell
            if x == 0:
                break
        for ell in range(1, maxd + 1):
            counts[ell] += 1
    return counts


@njit(cache=True)
def even_visit_kernel(n_samples, seed):
    """Number of excursions from 0 that go left and visit -1 an even
    number of times (local time of the path, final position excluded).

    Renewal form: each visit to -1 ends the excursion with probability
    1/2 (step up) or recurs after a sojourn below (step down, almost-sure
    return touching nothing above -1)."""
    hits = 0
    state = np.empty(1, dtype=np.uint64)
    state[0] = _mix64(U64(seed))
    for _ in range(n_samples):
        if _next_u64(state) >> U64(63):
            continue  # right excursion: never visits -1
        visits = 1
        while _next_u64(state) >> U64(63) == 0:
            visits += 1
        if visits % 2 == 0:
            hits += 1
    return hits


@njit(cache=True)
def bounce_law_kernel(n_target, i_site, seed, hist_size):
    """Bounce counts between ``i_site`` and ``i_site + 1`` inside right
    excursions from 0 whose extreme is >= i_site + 2.

    A bounce segment opens at each arrival at i_site and closes at the
    first subsequent visit to i_site - 1 or i_site + 2; its count is the
    number of i_site visits inside.  Returns (histogram int64[hist_size+1],
    n_odd, n_total); counts above hist_size land in the last bin.
    """
    hist = np.zeros(hist_size + 1, dtype=np.int64)
    n_odd = 0
    n_total = 0
    state = np.empty(1, dtype=np.uint64)
    state[0] = _mix64(U64(seed))
    segbuf = np.empty(1 << 16, dtype=np.int64)
    buf = U64(0)
    nb = 0
    while n_total < n_target:
        x = 0
        qualified = False
        nseg = 0
        seg = -1  # open segment count, -1 when closed
        first = True
        while True:
            if nb == 0:
                buf = _next_u64(state)
                nb = 64
            bit = buf & U64(1)
            buf >>= U64(1)
            nb -= 1
            if first:
                first = False
                if bit == 0:
                    break  # left excursion: extreme < i_site + 2
                x = 1
            elif bit:
                if x == i_site + 2:
                    continue  # sojourn above returns, touching nothing below
                x += 1
            else:
                x -= 1
            if x == i_site + 2:
                qualified = True
                if seg >= 0 and nseg < segbuf.shape[0]:
                    segbuf[nseg] = seg
                    nseg += 1
                seg = -1
            elif x == i_site:
                if seg >= 0:
                    seg += 1
                else:
                    seg = 1
            elif x == i_site - 1 and seg >= 0:
                if nseg < segbuf.shape[0]:
                    segbuf[nseg] = seg
                    nseg += 1
                seg = -1
            if x == 0:
                break
        if qualified:
            for k in range(nseg):
                c = segbuf[k]
                if c % 2 == 1:
                    n_odd += 1
                n_total += 1
                if c > hist_size:
                    c = hist_size
                hist[c] += 1
    return hist, n_odd, n_total
