import numpy as np
import pytest

from ringex.engines import sca_run
from ringex.lattice import conserved_sums, flippable_mask, in_sector
from ringex.prep import (
    AnnealSchedule,
    WaveTarget,
    anneal_density_wave,
    diagonal_sigma_sums,
    frozen_fraction,
    make_perfect_stripe,
    make_square_wave,
    perturb_stripe,
    profile_to_config,
    random_half_filled_config,
    random_sector_config,
    square_wave_profile,
    stripe_edges,
    stripe_field,
    stripe_walker_counts,
)
from ringex.rng import stream


def test_perfect_stripe_basic():
    occ = make_perfect_stripe(12, [4, 2, 2, 4])
    assert in_sector(occ)
    assert flippable_mask(occ).sum() == 0  # frozen
    # every diagonal is uniformly filled or empty
    d = (np.add.outer(np.arange(12), np.arange(12))) % 12
    for dd in range(12):
        vals = occ[d == dd]
        assert vals.min() == vals.max()


def test_perfect_stripe_validation():
    with pytest.raises(ValueError):
        make_perfect_stripe(12, [5, 3, 2, 2])  # filled widths != L/2
    with pytest.raises(ValueError):
        make_perfect_stripe(12, [6, 6, 0])  # odd band count
    with pytest.raises(ValueError):
        make_perfect_stripe(12, [1, 5, 5, 1])  # width-1 bands melt


def test_stripe_edges_found():
    occ = make_perfect_stripe(12, [3, 3, 3, 3])
    edges = stripe_edges(occ)
    assert len(edges) == 4


def test_perturb_stripe_unfreezes():
    base = make_perfect_stripe(16, [4, 4, 4, 4])
    out = perturb_stripe(base, 2, stream(3))
    assert in_sector(out)
    assert flippable_mask(out).sum() > 0
    # each swap exchanges a filled diagonal with an empty one: 2L sites flip
    assert int((out != base).sum()) == 2 * 2 * 16
    # the base is untouched
    assert flippable_mask(base).sum() == 0


def test_square_wave_profile_pinned():
    # W=3: leading full band, then alternating, half-empty gap, alternating
    expected = [1, 1, 1, 0, 1, 0, 1, 0, 0, 0, 1, 0, 1, 0]
    assert square_wave_profile(3, 1).tolist() == expected


def test_square_wave_config_sector():
    occ = make_square_wave(3, 2)
    assert occ.shape == (28, 28)
    assert in_sector(occ)


def test_profile_to_config_diagonal_structure():
    prof = np.array([1, 0, 1, 0], dtype=np.uint8)
    occ = profile_to_config(prof)
    d = (np.add.outer(np.arange(4), np.arange(4))) % 4
    for dd in range(4):
        assert np.all(occ[d == dd] == prof[dd])


def test_wave_target_validation():
    WaveTarget(k=0.125).validate(16)
    with pytest.raises(ValueError):
        WaveTarget(k=0.1).validate(16)  # k*L not even


def test_anneal_small():
    gen = stream(17)
    occ, info = anneal_density_wave(48, WaveTarget(k=0.125, A=1.0), gen)
    assert in_sector(occ)
    assert info["final_energy"] <= 10 * 48
    D = diagonal_sigma_sums(occ)
    target = 48 * 1.0 * np.sin(np.pi * 0.125 * np.arange(48))
    assert np.abs(D - target).max() <= 4


def test_anneal_schedule_ladder():
    s = AnnealSchedule(beta_start=0.01, beta_end=0.08, multiplier=2.0)
    assert s.betas() == [0.01, 0.02, 0.04, 0.08]


def test_random_sector_config_margins():
    for seed in range(3):
        occ = random_sector_config(12, stream(seed))
        rows, cols = conserved_sums(occ)
        assert np.all(rows == 6)
        assert np.all(cols == 6)


def test_random_sector_configs_differ():
    a = random_sector_config(12, stream(1))
    b = random_sector_config(12, stream(2))
    assert not np.array_equal(a, b)


def test_random_half_filled_count():
    occ = random_half_filled_config(10, stream(4))
    assert occ.sum() == 50
    rows, _ = conserved_sums(occ)
    assert rows.std() > 0  # not sector-projected


def test_stripe_walker_counts():
    c = stripe_walker_counts(32, 8, 3)
    assert c.min() == 3 and c.max() == 4
    assert c.sum() == 32 * 32 * 3.5
    d = (np.add.outer(np.arange(32), np.arange(32))) % 32
    for dd in range(32):
        assert c[d == dd].min() == c[d == dd].max()


def test_stripe_field_values():
    g = stripe_field(16, 4, 0.8)
    assert set(np.unique(g)) == {-0.8, 0.8}
    assert abs(g.sum()) < 1e-12


def test_frozen_fraction():
    assert frozen_fraction(make_perfect_stripe(8, [2, 2, 2, 2])) == 1.0
    gen = stream(6)
    occ = random_sector_config(16, gen)
    assert frozen_fraction(occ) < 1.0


def test_perturbed_stripe_stays_in_fragment_under_sca():
    """Dynamics can only rearrange the defect; sums stay at the stripe's."""
    base = make_perfect_stripe(12, [3, 3, 3, 3])
    occ = perturb_stripe(base, 1, stream(9))
    before = conserved_sums(occ)
    sca_run(occ, 500, stream(10))
    after = conserved_sums(occ)
    assert np.array_equal(before[0], after[0])
    assert np.array_equal(before[1], after[1])
