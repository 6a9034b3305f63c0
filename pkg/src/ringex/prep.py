"""Initial-condition generators.

Everything here produces either a hard-core occupancy grid in the conserved
sector (all row and column sums = L/2), an integer walker-count field, or a
real field on the lattice.  Generators are pure functions of their parameters
and the RNG stream passed in.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

from . import rng as _rng
from .lattice import flippable_mask, in_sector


# ---------------------------------------------------------------------------
# diagonal stripes (hard-core)


def _diag_index(L):
    return (np.add.outer(np.arange(L), np.arange(L))) % L


def profile_to_config(profile):
    """Occupancy grid whose diagonal d = (x+y) mod L is filled iff profile[d]."""
    profile = np.asarray(profile, dtype=np.uint8)
    L = profile.shape[0]
    return profile[_diag_index(L)]


def make_perfect_stripe(L, widths):
    """Alternating filled/empty diagonal bands; frozen under the dynamics.

    ``widths`` lists band widths along x+y, starting with a filled band and
    alternating.  Requirements: widths sum to L, the list has even length
    (so bands alternate consistently around the torus), filled and empty
    totals balance (half filling), and every band is at least 2 wide — a
    width-1 band puts opposite-filled diagonals two apart, which creates a
    whole diagonal of flippable plaquettes instead of a frozen pattern.
    """
    widths = [int(w) for w in widths]
    if sum(widths) != L:
        raise ValueError(f"band widths sum to {sum(widths)}, need L={L}")
    if len(widths) % 2 != 0:
        raise ValueError("need an even number of bands (alternating filled/empty)")
    if min(widths) < 2:
        raise ValueError("every band must be >= 2 diagonals wide to freeze")
    filled = sum(widths[0::2])
    if filled != L // 2 or L % 2 != 0:
        raise ValueError(f"filled bands cover {filled} diagonals, need L/2={L // 2}")
    profile = np.zeros(L, dtype=np.uint8)
    d = 0
    for i, w in enumerate(widths):
        if i % 2 == 0:
            profile[d : d + w] = 1
        d += w
    return profile_to_config(profile)


def stripe_edges(occ):
    """Indices e where diagonals e and e+1 differ, for a uniform-diagonal config.

    Raises if any diagonal is not uniformly filled or empty.
    """
    L = occ.shape[0]
    dsum = np.bincount(_diag_index(L).ravel(), weights=occ.ravel(), minlength=L)
    if not np.all((dsum == 0) | (dsum == L)):
        raise ValueError("config is not a union of uniform diagonals")
    profile = (dsum == L).astype(np.uint8)
    return np.flatnonzero(profile != np.roll(profile, -1))


def perturb_stripe(occ, n_swaps, gen):
    """Swap the two diagonals flanking ``n_swaps`` distinct filled/empty edges.

    Each swap turns ...1,1|0,0... into ...1,0,1,0... at one band edge, seeding
    a diagonal of flippable plaquettes while leaving every row and column sum
    untouched (whole diagonals are permuted).  Edges are chosen uniformly
    without replacement from the available band edges.
    """
    edges = stripe_edges(occ)
    if n_swaps > edges.shape[0]:
        raise ValueError(f"requested {n_swaps} swaps, only {edges.shape[0]} band edges")
    out = occ.copy()
    if n_swaps == 0:
        return out
    L = occ.shape[0]
    chosen = gen.choice(edges, size=n_swaps, replace=False)
    dia = _diag_index(L)
    for e in chosen:
        m1 = dia == e
        m2 = dia == (e + 1) % L
        v1 = out[m1].copy()
        out[m1] = out[m2]
        out[m2] = v1
    return out


# ---------------------------------------------------------------------------
# square-wave pattern (filled / staggered / empty / staggered)


def square_wave_profile(W, n_periods):
    """Diagonal profile: W filled, W+1 alternating, W empty, W+1 alternating."""
    if W % 2 != 1 or W < 1:
        raise ValueError("W must be odd and positive")
    if n_periods < 1:
        raise ValueError("need at least one period")
    half = (W + 1) // 2
    period = [1] * W + [0, 1] * half + [0] * W + [1, 0] * half
    return np.array(period * n_periods, dtype=np.uint8)


def make_square_wave(W, n_periods):
    """Square-wave config of period 4W+2 diagonals; L = n_periods*(4W+2).

    Flippable plaquettes start out confined to (the edges of) the staggered
    bands; the uniform filled and empty bands are inert.  The dominant
    wavenumber is k = 1/(2W+1) in the sin(pi*k*(x+y)) convention.
    """
    profile = square_wave_profile(W, n_periods)
    occ = profile_to_config(profile)
    assert in_sector(occ)
    return occ


# ---------------------------------------------------------------------------
# annealed density waves


@dataclass
class WaveTarget:
    """Diagonal density-wave target A*sin(pi*k*(x+y)); k in units of pi."""

    k: float
    A: float = 1.0

    def validate(self, L):
        if not (0.0 < self.A <= 1.0):
            raise ValueError("amplitude must be in (0, 1]")
        kl = self.k * L
        if abs(kl - round(kl)) > 1e-9 or round(kl) % 2 != 0:
            raise ValueError(f"k*L = {kl} must be an even integer (commensurate)")

    def diagonal_targets(self, L):
        return L * self.A * np.sin(np.pi * self.k * np.arange(L))


@dataclass
class AnnealSchedule:
    beta_start: float = 0.01
    beta_end: float = 20.48
    multiplier: float = 2.0
    steps_per_stage: int | None = None  # default 10*L^2, filled in at run time

    def betas(self):
        out = [self.beta_start]
        while out[-1] * self.multiplier <= self.beta_end * (1 + 1e-12):
            out.append(out[-1] * self.multiplier)
        return out


@njit(cache=True)
def _rect_exchange_chunk(occ, L, D, tgt, beta, raw, greedy):
    """Rectangle-exchange Metropolis on the diagonal-sum energy, in place.

    Proposals: two random sites (x1,y1),(x2,y2); if the rectangle corners hold
    the two-particle pattern (both on one diagonal pair, both off the other),
    move the pair across.  All row/column sums are conserved by construction.
    E = sum_d (D_d - tgt_d)^2 over the L diagonals; D is kept incrementally.
    Two entropy words per proposal (corners + accept coin).  With greedy=True
    only downhill/neutral moves are taken (used by the beta->inf polish).
    Returns the number of accepted moves.
    """
    n = raw.shape[0] // 2
    Lu = np.uint64(L)
    s16 = np.uint64(16)
    s32 = np.uint64(32)
    s48 = np.uint64(48)
    m16 = np.uint64(0xFFFF)
    acc = 0
    for i in range(n):
        u = raw[2 * i]
        x1 = np.int64((u & m16) * Lu >> s16)
        y1 = np.int64(((u >> s16) & m16) * Lu >> s16)
        x2 = np.int64(((u >> s32) & m16) * Lu >> s16)
        y2 = np.int64(((u >> s48) & m16) * Lu >> s16)
        if x1 == x2 or y1 == y2:
            continue
        o11 = occ[x1, y1]
        if o11 != occ[x2, y2] or occ[x1, y2] != occ[x2, y1] or o11 == occ[x1, y2]:
            continue
        # occupied corner pair loses 2 sigma on its diagonals, the empty pair
        # gains; s flips the roles when the anti corners hold the particles
        s = 2 if o11 == 1 else -2
        d11 = (x1 + y1) % L
        d22 = (x2 + y2) % L
        d12 = (x1 + y2) % L
        d21 = (x2 + y1) % L
        dE = 0.0
        for j in range(4):
            if j == 0:
                d, dlt = d11, -s
            elif j == 1:
                d, dlt = d22, -s
            elif j == 2:
                d, dlt = d12, s
            else:
                d, dlt = d21, s
            r = D[d] - tgt[d]
            dE += dlt * dlt + 2.0 * dlt * r
            D[d] += dlt  # tentatively, so duplicate diagonals compound
        take = dE <= 0.0
        if not take and not greedy and beta * dE < 40.0:
            v = raw[2 * i + 1]
            take = np.float64(v >> np.uint64(11)) * 1.1102230246251565e-16 < np.exp(
                -beta * dE
            )
        if take:
            nv = 1 - o11
            occ[x1, y1] = nv
            occ[x2, y2] = nv
            occ[x1, y2] = o11
            occ[x2, y1] = o11
            acc += 1
        else:
            for j in range(4):
                if j == 0:
                    d, dlt = d11, -s
                elif j == 1:
                    d, dlt = d22, -s
                elif j == 2:
                    d, dlt = d12, s
                else:
                    d, dlt = d21, s
                D[d] -= dlt
    return acc


def _run_rect_exchange(occ, D, tgt, beta, n_proposals, gen, greedy=False):
    left = int(n_proposals)
    acc = 0
    while left > 0:
        n = min(left, _rng.BLOCK_WORDS // 2)
        raw = _rng.raw_block(gen, 2 * n)
        acc += _rect_exchange_chunk(occ, occ.shape[0], D, tgt, float(beta), raw, greedy)
        left -= n
    return acc


def diagonal_sigma_sums(occ):
    """D_d = sum of sigma = 2n-1 over diagonal d = (x+y) mod L."""
    L = occ.shape[0]
    dsum = np.bincount(_diag_index(L).ravel(), weights=occ.ravel(), minlength=L)
    return (2 * dsum - L).astype(np.int64)


def anneal_density_wave(L, target: WaveTarget, gen, schedule: AnnealSchedule | None = None,
                        fail_energy_factor=10.0):
    """Metropolis-anneal a sector config onto a diagonal density wave.

    Starts from the period-2 diagonal wave (checkerboard), anneals the energy
    sum_d (D_d - L*A*sin(pi*k*d))^2 through the geometric beta ladder, then
    polishes with downhill-only proposals.  Returns (config, info) where info
    carries the final energy, the worst per-diagonal deviation and acceptance
    counts.  Raises RuntimeError if the final energy exceeds
    fail_energy_factor * L.
    """
    target.validate(L)
    if schedule is None:
        schedule = AnnealSchedule()
    steps = schedule.steps_per_stage or 10 * L * L
    profile = (np.arange(L) % 2).astype(np.uint8)
    occ = profile_to_config(profile)
    tgt = target.diagonal_targets(L)
    D = diagonal_sigma_sums(occ).astype(np.float64)
    accepted = []
    for beta in schedule.betas():
        accepted.append(_run_rect_exchange(occ, D, tgt, beta, steps, gen))
    # zero-temperature polish: drain whatever downhill moves are left
    accepted.append(_run_rect_exchange(occ, D, tgt, 0.0, steps, gen, greedy=True))
    assert np.array_equal(D, diagonal_sigma_sums(occ))
    dev = D - tgt
    energy = float(dev @ dev)
    info = {
        "final_energy": energy,
        "max_abs_dev": float(np.abs(dev).max()),
        "accepted": accepted,
        "beta_ladder": schedule.betas(),
        "proposals_per_stage": steps,
    }
    if energy > fail_energy_factor * L:
        raise RuntimeError(
            f"anneal did not converge: E={energy:.1f} > {fail_energy_factor}*L={fail_energy_factor * L:.0f}"
        )
    assert in_sector(occ)
    return occ, info


# ---------------------------------------------------------------------------
# random configurations


def random_sector_config(L, gen, n_mix_factor=40):
    """Approximately uniform sample with every row/column sum = L/2.

    Equal-margin binary matrices are connected under the rectangle-exchange
    move, and the accept-all chain is doubly stochastic on the sector, so
    mixing from any sector state approaches the uniform law; n_mix_factor*L^2
    proposals is far past the empirical mixing knee.
    """
    if L % 2 != 0:
        raise ValueError("L must be even")
    occ = profile_to_config((np.arange(L) % 2).astype(np.uint8))
    D = np.zeros(L, dtype=np.float64)  # beta=0: energy never consulted
    tgt = np.zeros(L, dtype=np.float64)
    _run_rect_exchange(occ, D, tgt, 0.0, n_mix_factor * L * L, gen)
    assert in_sector(occ)
    return occ


def random_half_filled_config(L, gen):
    """Uniform config with exactly L^2/2 particles and free row/column sums."""
    flat = np.zeros(L * L, dtype=np.uint8)
    flat[: L * L // 2] = 1
    gen.shuffle(flat)
    return flat.reshape(L, L)


# ---------------------------------------------------------------------------
# soft-core / continuum stripe fields


def stripe_walker_counts(L, width, n_d):
    """Integer counts switching between n_d and n_d+1 in diagonal bands."""
    if n_d < 1:
        raise ValueError("background density must be >= 1")
    if L % (2 * width) != 0:
        raise ValueError("stripe period 2*width must divide L")
    d = _diag_index(L) % (2 * width)
    return np.where(d < width, n_d + 1, n_d).astype(np.int32)


def stripe_field(L, width, amplitude):
    """Real field +-amplitude in alternating diagonal bands."""
    if not 0 < amplitude <= 1:
        raise ValueError("amplitude must be in (0, 1]")
    if L % (2 * width) != 0:
        raise ValueError("stripe period 2*width must divide L")
    d = _diag_index(L) % (2 * width)
    return np.where(d < width, amplitude, -amplitude).astype(np.float64)


def frozen_fraction(occ):
    """1 if the config has no flippable plaquette, else the unflippable share."""
    m = flippable_mask(occ)
    return 1.0 - float(m.mean())
