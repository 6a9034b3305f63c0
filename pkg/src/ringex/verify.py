"""Tiered self-checks runnable from the command line.

The fast tier covers the exact combinatorial invariants (flippability
polynomial, conservation laws, frozen stripes, stencil identities) in under
a minute.  The slow tier adds statistical and numerical checks: the walker
ensemble's exponential collapse, fragment closure against a brute-force
sector enumeration, finite-difference convergence, and censored melt-onset
handling.  Each check prints one PASS/FAIL line with the measured value.
"""

from __future__ import annotations

import itertools

import numpy as np

from . import observables as obs
from . import pde as pdemod
from . import prep
from .engines import DynamicsSpec, field_step, sca_run, walker_run, walkers_init
from .ensemble import Observer, run_ensemble
from .lattice import (
    conserved_sums,
    flippable_mask,
    h_field,
    h_flippability,
    in_sector,
    sigma,
)
from .rng import stream


class Reporter:
    def __init__(self):
        self.failures = []

    def check(self, name, ok, detail):
        tag = "PASS" if ok else "FAIL"
        print(f"{tag} {name}: {detail}")
        if not ok:
            self.failures.append(name)


# ---------------------------------------------------------------------------
# fast tier


def _check_h_polynomial(rep):
    nonzero = []
    for bits in itertools.product((0, 1), repeat=4):
        s = tuple(2 * b - 1 for b in bits)
        h = h_flippability(*s)
        flippable = bits in ((1, 0, 1, 0), (0, 1, 0, 1))
        if (h != 0) != flippable:
            rep.check("h-polynomial", False, f"pattern {bits} gives h={h}")
            return
        if h != 0:
            nonzero.append(bits)
    rep.check("h-polynomial", len(nonzero) == 2, f"nonzero on {nonzero}")


def _check_conservation(rep):
    gen = stream(101)
    occ = prep.random_sector_config(16, gen)
    before = conserved_sums(occ)
    spec = DynamicsSpec(plaquette_shapes=("1x1", "2x1", "1x2"))
    sca_run(occ, 200, gen, spec)
    after = conserved_sums(occ)
    ok = np.array_equal(before[0], after[0]) and np.array_equal(before[1], after[1])
    rep.check("sca-conservation", ok, "row/col sums fixed over 200 steps, all shapes")


def _check_frozen_stripe(rep):
    gen = stream(7)
    occ = prep.make_perfect_stripe(16, [4, 4, 4, 4])
    ref = occ.copy()
    flips = sca_run(occ, 1000, gen)
    ok = np.array_equal(occ, ref) and flips == 0
    rep.check("frozen-stripe", ok, f"{flips} flips in 1000 steps")


def _check_stencil(rep):
    gen = np.random.default_rng(11)
    worst = 0.0
    for _ in range(20):
        g = gen.normal(size=(12, 12))
        ga = np.roll(g, -1, 0)
        gb = np.roll(g, -1, 1)
        gab = np.roll(ga, -1, 1)
        act = (gb - g) - (gab - ga)
        total = (
            act
            - np.roll(act, 1, 0)
            - np.roll(act, 1, 1)
            + np.roll(np.roll(act, 1, 0), 1, 1)
        )
        nn = np.roll(g, 1, 0) + np.roll(g, -1, 0) + np.roll(g, 1, 1) + np.roll(g, -1, 1)
        nnn = (
            np.roll(np.roll(g, 1, 0), 1, 1)
            + np.roll(np.roll(g, 1, 0), -1, 1)
            + np.roll(np.roll(g, -1, 0), 1, 1)
            + np.roll(np.roll(g, -1, 0), -1, 1)
        )
        stencil = -4 * g + 2 * nn - nnn
        worst = max(worst, np.abs(total - stencil).max())
    rep.check("stencil-identity", worst < 1e-12, f"max |diff| = {worst:.2e}")


def _check_walker_conservation(rep):
    gen = stream(13)
    st = walkers_init(prep.stripe_walker_counts(32, 8, 3))
    n0 = st.n_total
    walker_run(st, 5, gen)
    ok = int(st.counts.sum()) == n0 and st.counts.min() >= 0
    rep.check("walker-count", ok, f"{n0} walkers before and after 5 sweeps")


def _check_field_sum(rep):
    gen = np.random.default_rng(3)
    g = gen.uniform(-0.3, 0.3, size=(16, 16))
    g -= g.mean()
    s0 = g.sum()
    g2 = field_step(g, 0.05)
    rep.check(
        "field-sum", abs(g2.sum() - s0) < 1e-10, f"|sum drift| = {abs(g2.sum() - s0):.2e}"
    )


def _check_h_field_mask(rep):
    gen = stream(29)
    occ = prep.random_sector_config(12, gen)
    ok = np.array_equal(h_field(occ) != 0, flippable_mask(occ))
    rep.check("h-field-vs-mask", ok, "nonzero h exactly on flippable plaquettes")


def _check_pde_mode(rep):
    L, k, A = 32, 0.25, 0.6
    spec = pdemod.PdeSpec(L_grid=L, nonlinear=True)
    xx, yy = np.meshgrid(np.arange(L), np.arange(L), indexing="ij")
    phase = np.pi * k * (xx + yy)
    g = A * np.sin(phase)
    rhs = pdemod.pde_rhs(g, spec)
    expect = pdemod.single_mode_rhs(A, k, phase)
    # continuum closed form vs lattice stencils: second-order agreement
    tol = 5 * (np.pi * k) ** 2 * np.abs(expect).max()
    err = np.abs(rhs - expect).max()
    rep.check("pde-single-mode", err < tol, f"max err {err:.3e} < {tol:.3e}")


# ---------------------------------------------------------------------------
# slow tier


def _check_walker_collapse(rep):
    L, width, n_d, R = 64, 8, 3, 16
    k = 1.0 / width
    rate = (1 - np.cos(np.pi * k)) ** 2
    grid = np.unique(np.geomspace(1, int(2.2 / rate), 12).astype(int))
    spec = DynamicsSpec(engine="walkers", rng_seed=23)
    counts = prep.stripe_walker_counts(L, width, n_d)

    def amp(state, _k=k):
        return obs.field_diagonal_fourier(state.counts - state.counts.mean(), _k)

    ts = run_ensemble(
        counts,
        spec,
        grid,
        [Observer("amp", amp, kind="complex")],
        R,
        seed=23,
    )
    # ensemble-mean amplitude first, then the decay fit in k^4 t; the window
    # stops above the equilibrium fluctuation level (amp ~ sqrt(n)/L), where
    # the decay visibly departs from a pure mode exponential at this small L
    a_mean = np.concatenate([[obs.field_diagonal_fourier(
        counts - counts.mean(), k)], ts.mean["amp"]])
    tgrid = np.concatenate([[0], grid])
    ratio = np.real(a_mean / a_mean[0])
    keep = ratio > 0.2
    slope, _ic, stderr, r2 = obs.fit_line(tgrid[keep] * k**4, np.log(ratio[keep]))
    c_fit = -slope
    c_ref = np.pi**4 / 4
    ok = abs(c_fit / c_ref - 1) < 0.10
    rep.check(
        "walker-collapse",
        ok,
        f"fitted c = {c_fit:.3f} vs {c_ref:.3f} (r2={r2:.4f})",
    )


def _enumerate_sector_4x4():
    """All 4x4 binary matrices with every row and column sum 2."""
    rows = [r for r in itertools.product((0, 1), repeat=4) if sum(r) == 2]
    out = []
    for combo in itertools.product(rows, repeat=4):
        m = np.array(combo, dtype=np.uint8)
        if np.all(m.sum(axis=0) == 2):
            out.append(m)
    return out


def _check_fragment_closure(rep):
    from .fragment import config_key, enumerate_fragment

    sector = _enumerate_sector_4x4()
    if len(sector) != 90:
        rep.check("fragment-closure", False, f"sector size {len(sector)} != 90")
        return
    xx, yy = np.meshgrid(np.arange(4), np.arange(4), indexing="ij")
    seed = ((xx + yy) % 2 == 0).astype(np.uint8)
    fs = enumerate_fragment(seed)
    keys = set(fs.index)
    # closure: no flip leaves the member set; completeness: every sector
    # config is either in the closure or not flip-connected to it
    closed = all(
        config_key(c) in keys
        for m in fs.members
        for c in _neighbors(m)
    )
    outside = [m for m in sector if config_key(m) not in keys]
    reachable = [m for m in outside if any(
        config_key(c) in keys for c in _neighbors(m))]
    ok = closed and not reachable and fs.complete
    rep.check(
        "fragment-closure",
        ok,
        f"{fs.n_configs} members closed, {len(outside)} sector configs outside",
    )


def _neighbors(occ):
    from .lattice import flip

    for x, y in np.argwhere(flippable_mask(occ)):
        yield flip(occ, x, y)


def _check_pde_convergence(rep):
    k, A = 0.25, 0.8
    errs = []
    for dx in (1.0, 0.5):
        L = int(round(2 / (k * dx)))
        spec = pdemod.PdeSpec(L_grid=L, dx=dx)
        xx, yy = np.meshgrid(np.arange(L), np.arange(L), indexing="ij")
        g = A * np.sin(np.pi * k * (xx + yy) * dx)
        lam_exact = pdemod.DEFAULT_C * k**4
        lam_num = pdemod.stencil_eigenvalue(k, dx=dx)
        errs.append(abs(lam_num / lam_exact - 1))
    order = np.log2(errs[0] / errs[1])
    rep.check(
        "pde-convergence",
        1.8 < order < 2.2,
        f"rate errors {errs[0]:.4f} -> {errs[1]:.4f}, order {order:.2f}",
    )


def _check_censored_onset(rep):
    t = np.array([1.0, 2.0, 4.0, 8.0])
    r = np.ones(4)
    onset = obs.detect_melt_onset(t, r, threshold=0.99)
    ok = onset.censored and float(onset) == 8.0
    rep.check("censored-onset", ok, f"frozen probe censored at t={float(onset)}")


def _check_ed_norm(rep):
    from .fragment import enumerate_fragment, quantum_evolve

    xx, yy = np.meshgrid(np.arange(4), np.arange(4), indexing="ij")
    seed = ((xx + yy) % 2 == 0).astype(np.uint8)
    fs = enumerate_fragment(seed)
    res = quantum_evolve(fs, [0.0, 2.0, 5.0])
    drift = np.abs(res["norm_sq"] - 1).max()
    rep.check("ed-norm", drift < 1e-8, f"norm drift {drift:.2e}")


FAST = [
    _check_h_polynomial,
    _check_conservation,
    _check_frozen_stripe,
    _check_stencil,
    _check_walker_conservation,
    _check_field_sum,
    _check_h_field_mask,
    _check_pde_mode,
]

SLOW = [
    _check_walker_collapse,
    _check_fragment_closure,
    _check_pde_convergence,
    _check_censored_onset,
    _check_ed_norm,
]


def run_tier(level="fast"):
    rep = Reporter()
    checks = list(FAST)
    if level == "slow":
        checks += SLOW
    for fn in checks:
        fn(rep)
    n = len(checks)
    print(f"{n - len(rep.failures)}/{n} checks passed")
    return rep.failures
