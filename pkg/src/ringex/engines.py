"""The three microscopic engines: hard-core SCA, correlated walkers, field automaton.

Time units are native to each engine and used consistently in every report:

* hard-core SCA      — 1 step  = L^2 plaquette proposals,
* correlated walkers — 1 sweep = N single tandem moves (N = total walkers),
* field automaton    — 1 step  = one synchronous update of all plaquettes.

The SCA proposal draws a (site, shape) pair uniformly — L^2 proposals per
step regardless of how many shapes are active — and flips a flippable
proposal with probability ``accept_prob`` (default 1/2).  Walker moves pick
a walker uniformly (i.e. a site with probability proportional to its count),
one of its four diagonal next-nearest-neighbour sites with probability 1/4,
and displace the pair to the two shared plaquette corners; the corner
assignment is a fair coin.  If the diagonal site is empty the move is
abandoned and counted (the soft-core derivation assumes this never happens
at n_d >> 1; the count is reported so that assumption can be checked).

Stochastic kernels consume pre-drawn 64-bit blocks (see :mod:`ringex.rng`)
so trajectories are bit-reproducible for a given stream regardless of how
stepping is chunked.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numba import njit

from . import rng as _rng
from .lattice import SHAPES

__all__ = [
    "DynamicsSpec",
    "sca_run",
    "sca_step",
    "WalkerState",
    "walkers_init",
    "walker_run",
    "field_step",
    "field_run",
]

# block size (in 64-bit words) for pre-drawn kernel entropy; ~8 MB
_BLOCK_WORDS = _rng.BLOCK_WORDS


@dataclass
class DynamicsSpec:
    """Which engine with which knobs; shared by runners and run metadata."""

    engine: str = "hardcore_sca"  # hardcore_sca | walkers | field_automaton
    plaquette_shapes: tuple = ("1x1",)
    accept_prob: float = 0.5
    epsilon: float = 0.05  # field engine step size
    n_d: int = 3  # walker background density
    rng_seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.accept_prob <= 1.0:
            raise ValueError("accept_prob must be in (0, 1]")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if self.n_d < 1:
            raise ValueError("n_d must be >= 1")
        for s in self.plaquette_shapes:
            if s not in SHAPES:
                raise ValueError(f"unknown plaquette shape {s!r}")

    def to_dict(self):
        d = dict(self.__dict__)
        d["plaquette_shapes"] = list(self.plaquette_shapes)
        return d


# ---------------------------------------------------------------------------
# hard-core SCA


@njit(cache=True)
def _sca_chunk16(occ, L, nprop, r16, thresh16):
    """nprop proposals in place on the flat occ array; returns flip count.

    Consumes three 16-bit draws per proposal (x, y, coin).  The body is
    branch-free: a non-flippable or rejected proposal XORs zeros, which is
    much kinder to the branch predictor than skipping (~25% of proposals
    flip in a hot configuration).
    """
    s16 = np.uint64(16)
    Lu = np.uint64(L)
    flips = 0
    j = 0
    for i in range(nprop):
        x = np.int64(np.uint64(r16[j]) * Lu >> s16)
        y = np.int64(np.uint64(r16[j + 1]) * Lu >> s16)
        c = np.int64(r16[j + 2])
        j += 3
        xa = x + 1
        if xa >= L:
            xa = 0
        yb = y + 1
        if yb >= L:
            yb = 0
        i00 = x * L + y
        i10 = xa * L + y
        i11 = xa * L + yb
        i01 = x * L + yb
        n00 = occ[i00]
        n10 = occ[i10]
        n11 = occ[i11]
        n01 = occ[i01]
        ok = np.uint8((n00 == n11) & (n10 == n01) & (n00 != n10) & (c < thresh16))
        occ[i00] ^= ok
        occ[i10] ^= ok
        occ[i11] ^= ok
        occ[i01] ^= ok
        flips += ok
    return flips


@njit(cache=True)
def _sca_chunk16_shapes(occ, L, nprop, r16, thresh16, shape_ab, nshapes):
    """Multi-shape variant: four 16-bit draws per proposal (x, y, shape, coin)."""
    s16 = np.uint64(16)
    Lu = np.uint64(L)
    ns = np.uint64(nshapes)
    flips = 0
    j = 0
    for i in range(nprop):
        x = np.int64(np.uint64(r16[j]) * Lu >> s16)
        y = np.int64(np.uint64(r16[j + 1]) * Lu >> s16)
        s = np.int64(np.uint64(r16[j + 2]) * ns >> s16)
        c = np.int64(r16[j + 3])
        j += 4
        a = shape_ab[s, 0]
        b = shape_ab[s, 1]
        xa = x + a
        if xa >= L:
            xa -= L
        yb = y + b
        if yb >= L:
            yb -= L
        i00 = x * L + y
        i10 = xa * L + y
        i11 = xa * L + yb
        i01 = x * L + yb
        n00 = occ[i00]
        n10 = occ[i10]
        n11 = occ[i11]
        n01 = occ[i01]
        ok = np.uint8((n00 == n11) & (n10 == n01) & (n00 != n10) & (c < thresh16))
        occ[i00] ^= ok
        occ[i10] ^= ok
        occ[i11] ^= ok
        occ[i01] ^= ok
        flips += ok
    return flips


def _shape_table(shapes):
    tab = np.empty((len(shapes), 2), dtype=np.int64)
    for i, s in enumerate(shapes):
        tab[i, 0], tab[i, 1] = SHAPES[s]
    return tab


def sca_run(occ, n_steps, gen, spec: DynamicsSpec | None = None):
    """Advance ``occ`` (in place) by ``n_steps`` SCA steps; returns flip count.

    ``gen`` is the realization's generator; entropy is consumed strictly in
    proposal order so results do not depend on internal chunking.  Chunks are
    whole steps, and L is even, so the word count per chunk is always
    integral (3 or 4 sixteen-bit draws per proposal).
    """
    spec = spec or DynamicsSpec()
    L = occ.shape[0]
    flat = occ.reshape(-1)
    shapes = tuple(spec.plaquette_shapes)
    nshapes = len(shapes)
    thresh16 = np.int64(round(spec.accept_prob * 65536.0))
    per_step = L * L
    draws = 3 if nshapes == 1 else 4
    flips = 0
    left = n_steps * per_step
    max_chunk = max(per_step, (_BLOCK_WORDS // per_step) * per_step)
    tab = _shape_table(shapes)
    while left > 0:
        nprop = min(left, max_chunk)
        raw = _rng.raw_block(gen, (nprop * draws + 3) // 4)
        r16 = raw.view(np.uint16)
        if nshapes == 1:
            flips += _sca_chunk16(flat, L, nprop, r16, thresh16)
        else:
            flips += _sca_chunk16_shapes(flat, L, nprop, r16, thresh16, tab, nshapes)
        left -= nprop
    return flips


def sca_step(occ, gen, spec: DynamicsSpec | None = None):
    """One SCA time step (L^2 proposals) on a copy; returns the new config."""
    out = occ.copy()
    sca_run(out, 1, gen, spec)
    return out


# ---------------------------------------------------------------------------
# correlated walkers

# per-site walker-slot capacity; counts beyond this abort the run (the
# stationary count distribution at n_d <= 8 puts ~1e-40 mass this high)
_WALKER_CAP = 96


@dataclass
class WalkerState:
    """Soft-core walker field plus the bookkeeping for uniform walker picks."""

    L: int
    counts: np.ndarray  # int32 (L, L) walkers per site
    wx: np.ndarray  # int16 per-walker x
    wy: np.ndarray  # int16 per-walker y
    slots: np.ndarray  # int32 (L*L, cap) walker ids stacked per site
    pos: np.ndarray  # int32 per-walker slot position
    abandoned: int = 0  # attempts dropped because the diagonal site was empty
    sweeps: int = 0

    @property
    def n_total(self):
        return self.wx.shape[0]


def walkers_init(counts):
    """Build a WalkerState from an integer count field."""
    counts = np.array(counts, dtype=np.int32, order="C", copy=True)
    L = counts.shape[0]
    if counts.min() < 0:
        raise ValueError("walker counts must be non-negative")
    if counts.max() >= _WALKER_CAP:
        raise ValueError(f"site count {counts.max()} exceeds capacity {_WALKER_CAP}")
    n = int(counts.sum())
    wx = np.empty(n, dtype=np.int16)
    wy = np.empty(n, dtype=np.int16)
    slots = np.zeros((L * L, _WALKER_CAP), dtype=np.int32)
    pos = np.empty(n, dtype=np.int32)
    w = 0
    for x in range(L):
        for y in range(L):
            c = int(counts[x, y])
            for j in range(c):
                wx[w] = x
                wy[w] = y
                slots[x * L + y, j] = w
                pos[w] = j
                w += 1
    return WalkerState(L=L, counts=counts, wx=wx, wy=wy, slots=slots, pos=pos)


def walkers_restore(L, wx, wy, pos):
    """Rebuild a WalkerState from per-walker arrays (checkpoint resume).

    ``walkers_init`` assigns fresh walker labels, which changes which walker a
    given entropy word picks; restoring mid-run therefore goes through the
    saved (wx, wy, pos) triple, from which counts and the slot table are
    reconstructed exactly.
    """
    wx = np.array(wx, dtype=np.int16, copy=True)
    wy = np.array(wy, dtype=np.int16, copy=True)
    pos = np.array(pos, dtype=np.int32, copy=True)
    counts = np.zeros((L, L), dtype=np.int32)
    slots = np.zeros((L * L, _WALKER_CAP), dtype=np.int32)
    for w in range(wx.shape[0]):
        site = int(wx[w]) * L + int(wy[w])
        slots[site, pos[w]] = w
        counts.reshape(-1)[site] += 1
    if np.any(pos >= counts.reshape(-1)[wx.astype(np.int64) * L + wy]):
        raise ValueError("inconsistent walker slot positions")
    return WalkerState(L=L, counts=counts, wx=wx, wy=wy, slots=slots, pos=pos)


@njit(cache=True)
def _walker_chunk(counts, wx, wy, slots, pos, L, N, raw):
    """One tandem-move attempt per entropy word, in place.

    Returns (abandoned, overflow_flag).  An attempt whose diagonal partner
    site is empty is abandoned: it still advances time (one of the sweep's N
    moves) and is tallied, it just displaces nothing.
    """
    m32 = np.uint64(0xFFFFFFFF)
    s32 = np.uint64(32)
    s34 = np.uint64(34)
    two = np.uint64(3)
    Nu = np.uint64(N)
    cap = slots.shape[1]
    abandoned = 0
    for i in range(raw.shape[0]):
        u = raw[i]
        a = np.int64((u & m32) * Nu >> s32)
        d = np.int64((u >> s32) & two)
        # diagonal displacement for d in 0..3: (+1,+1), (+1,-1), (-1,+1), (-1,-1)
        dx = 1 if d < 2 else -1
        dy = 1 if (d & 1) == 0 else -1
        x = np.int64(wx[a])
        y = np.int64(wy[a])
        bx = x + dx
        if bx >= L:
            bx -= L
        elif bx < 0:
            bx += L
        by = y + dy
        if by >= L:
            by -= L
        elif by < 0:
            by += L
        ib = bx * L + by
        if counts[ib] == 0:
            abandoned += 1
            continue
        # shared plaquette corners: (bx, y) and (x, by)
        coin = np.int64((u >> s34) & np.uint64(1))
        if coin == 0:
            ax_, ay_ = bx, y
            bx_, by_ = x, by
        else:
            ax_, ay_ = x, by
            bx_, by_ = bx, y
        ia = x * L + y
        # remove a from its site (swap with the last slot)
        ca = counts[ia] - 1
        pa = pos[a]
        last = slots[ia, ca]
        slots[ia, pa] = last
        pos[last] = pa
        counts[ia] = ca
        # remove some walker b from the diagonal site (take the last slot;
        # walkers are exchangeable so this is a uniform pick)
        cb = counts[ib] - 1
        b = slots[ib, cb]
        counts[ib] = cb
        # place a
        ja = ax_ * L + ay_
        na = counts[ja]
        if na >= cap:
            return abandoned, 1
        slots[ja, na] = a
        pos[a] = na
        counts[ja] = na + 1
        wx[a] = ax_
        wy[a] = ay_
        # place b
        jb = bx_ * L + by_
        nb = counts[jb]
        if nb >= cap:
            return abandoned, 1
        slots[jb, nb] = b
        pos[b] = nb
        counts[jb] = nb + 1
        wx[b] = bx_
        wy[b] = by_
    return abandoned, 0


def walker_run(state: WalkerState, n_sweeps, gen):
    """Advance the walker field by ``n_sweeps`` sweeps, in place.

    One sweep is N move attempts (N = total walker count); abandoned attempts
    advance time like any other move.  One entropy word per attempt, so the
    word sequence depends only on the attempt count and runs chunk and resume
    bit-exactly.
    """
    N = state.n_total
    flat = state.counts.reshape(-1)
    left = n_sweeps * N
    while left > 0:
        nmoves = min(left, _BLOCK_WORDS)
        raw = _rng.raw_block(gen, nmoves)
        ab, ov = _walker_chunk(
            flat, state.wx, state.wy, state.slots, state.pos, state.L, N, raw
        )
        state.abandoned += int(ab)
        if ov:
            raise RuntimeError(
                f"walker site count exceeded capacity {_WALKER_CAP}; "
                "n_d too large for this engine build"
            )
        left -= nmoves
    state.sweeps += n_sweeps
    return state


# ---------------------------------------------------------------------------
# real-valued field automaton


def field_step(g, epsilon):
    """One synchronous update of the field automaton; returns the new field.

    Per plaquette with bottom-left (x, y) the activity is

        a = (g[x, y+1] - g[x, y]) - (g[x+1, y+1] - g[x+1, y])

    and the update adds ``epsilon * a`` to the main-diagonal corners and
    subtracts it from the anti-diagonal corners.  The spatial sum of g is
    conserved to rounding; values leaving [-1, 1] abort the run (the field
    is a density average, saturation means epsilon is too large).
    """
    gx = np.roll(g, -1, axis=0)
    gy = np.roll(g, -1, axis=1)
    gxy = np.roll(gx, -1, axis=1)
    act = (gy - g) - (gxy - gx)
    upd = act - np.roll(act, 1, axis=0) - np.roll(act, 1, axis=1) \
        + np.roll(np.roll(act, 1, axis=0), 1, axis=1)
    out = g + epsilon * upd
    m = np.abs(out).max()
    if m > 1.0:
        raise RuntimeError(
            f"field automaton saturated: max |g| = {m:.6f} > 1 (reduce epsilon)"
        )
    return out


def field_run(g, n_steps, epsilon):
    for _ in range(n_steps):
        g = field_step(g, epsilon)
    return g
