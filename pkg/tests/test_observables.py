import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ringex.engines import sca_run
from ringex.lattice import sigma
from ringex.observables import (
    CrossingTime,
    amplitude_snr_mask,
    b_profile,
    check_commensurate,
    detect_melt_onset,
    diagonal_fourier,
    diagonal_sums,
    field_diagonal_fourier,
    fit_exponential_rate,
    fit_line,
    fit_power_law,
    flip_correlator,
    fourier_ratio,
    origin_diagonals,
    postmelt_reference,
    spectrum_axis_ratio,
    structure_factor,
)
from ringex.prep import random_half_filled_config
from ringex.rng import stream


# ---------------------------------------------------------------------------
# diagonal Fourier amplitude


def test_diagonal_fourier_vs_direct_sum():
    """Oracle: the naive double loop over sites."""
    L, k = 8, 0.25
    gen = stream(11)
    occ = (gen.random((L, L)) < 0.5).astype(np.uint8)
    s = sigma(occ)
    direct = sum(
        s[x, y] * np.exp(1j * np.pi * k * (x + y)) for x in range(L) for y in range(L)
    ) / L**2
    assert abs(diagonal_fourier(occ, k) - direct) < 1e-12


@settings(deadline=None, max_examples=30)
@given(
    sx=st.integers(0, 15),
    sy=st.integers(0, 15),
    seed=st.integers(0, 2**16),
    k=st.sampled_from([0.125, 0.25, 0.5]),
)
def test_translation_multiplies_by_phase(sx, sy, seed, k):
    L = 16
    occ = (stream(seed).random((L, L)) < 0.5).astype(np.uint8)
    F = field_diagonal_fourier(sigma(occ), k)
    F2 = field_diagonal_fourier(sigma(np.roll(occ, (sx, sy), axis=(0, 1))), k)
    assert abs(F2 - F * np.exp(1j * np.pi * k * (sx + sy))) < 1e-12


def test_commensurability_guard():
    check_commensurate(16, 0.125)
    with pytest.raises(ValueError):
        check_commensurate(16, 0.1)
    with pytest.raises(ValueError):
        diagonal_fourier(np.zeros((10, 10), dtype=np.uint8), 0.1)  # k*L = 1, odd


def test_diagonal_sums_shape_and_total():
    g = stream(2).normal(size=(12, 12))
    D = diagonal_sums(g)
    assert D.shape == (12,)
    assert abs(D.sum() - g.sum()) < 1e-9


# ---------------------------------------------------------------------------
# ensemble ratio


def test_fourier_ratio_modes():
    amps = np.array(
        [[1.0 + 0j, 0.3 + 0.1j], [1.0 + 0j, 0.3 - 0.1j]]
    )
    r_c = fourier_ratio(amps, floor=0.1)
    r_m = fourier_ratio(amps, floor=0.1, mode="modulus")
    assert np.allclose(r_c, [1.0, 0.3])
    assert np.allclose(r_m, [1.0, 0.3])


def test_fourier_ratio_floor():
    amps = np.array([[0.01 + 0j, 0.005 + 0j]])
    with pytest.raises(ValueError):
        fourier_ratio(amps, L=16)  # default floor 10/16
    with pytest.raises(ValueError):
        fourier_ratio(amps)  # no floor, no L
    with pytest.raises(ValueError):
        fourier_ratio(amps, floor=0.001, mode="nope")


def test_snr_mask():
    # column 0: identical values -> zero stderr -> kept; column 1: mean zero
    amps = np.array(
        [[1.0 + 0j, 1.0 + 0j], [1.0 + 0j, -1.0 + 0j], [1.0, 1.0], [1.0, -1.0]]
    )
    mask = amplitude_snr_mask(amps, min_snr=3.0)
    assert mask.tolist() == [True, False]


# ---------------------------------------------------------------------------
# onset detection


def test_melt_onset_interpolated():
    t0 = detect_melt_onset([0, 100, 200], [1.0, 0.995, 0.985], threshold=0.99)
    assert not t0.censored
    assert abs(t0.time - 150.0) < 1e-12
    assert t0.value_at == 0.985
    assert float(t0) == t0.time


def test_melt_onset_censored_and_invalid():
    t0 = detect_melt_onset([0, 10, 20], [1.0, 0.999, 0.995])
    assert t0.censored and t0.time == 20.0
    with pytest.raises(ValueError):
        detect_melt_onset([0, 10], [0.5, 0.4])


def test_postmelt_reference_grid_sample():
    ref = postmelt_reference([0, 1, 2, 3], [1.0, 0.5, 0.008, 0.001], threshold=0.01)
    assert ref.time == 2.0 and ref.value_at == 0.008 and not ref.censored
    ref2 = postmelt_reference([0, 1], [1.0, 0.5], threshold=0.01)
    assert ref2.censored


# ---------------------------------------------------------------------------
# profile ratio


def test_b_profile_uniform_decay():
    L, k = 16, 0.125
    x = np.arange(L)
    d0 = np.sin(2 * np.pi * k * x)
    m0 = np.diag(d0)
    B = b_profile(0.5 * m0, m0, k)
    # sin(2 pi x / 8): nodes at x = 0 and 4 within one period
    assert np.isnan(B[0]) and np.isnan(B[4])
    kept = [1, 2, 3, 5, 6, 7]
    assert np.allclose(B[kept], 0.5)


def test_b_profile_period_check():
    with pytest.raises(ValueError):
        b_profile(np.zeros((10, 10)), np.ones((10, 10)), 0.3)


# ---------------------------------------------------------------------------
# flippability correlator vs brute-force double loop


def _brute_correlator(masks, origins, normalization):
    R, L, _ = masks.shape
    dgrid = (np.add.outer(np.arange(L), np.arange(L))) % L
    osites = [(x, y) for x in range(L) for y in range(L) if dgrid[x, y] in origins]
    n_o = len(osites)
    pbar = masks.mean(axis=0)
    joint = np.zeros((L, L))
    prod = np.zeros((L, L))
    for dx in range(L):
        for dy in range(L):
            js = ps = 0.0
            for x, y in osites:
                x2, y2 = (x + dx) % L, (y + dy) % L
                js += float((masks[:, x, y] * masks[:, x2, y2]).sum())
                ps += pbar[x, y] * pbar[x2, y2]
            joint[dx, dy] = js / (n_o * R)
            prod[dx, dy] = ps / n_o
    if normalization == "global_P2":
        return (joint - prod) / masks.mean() ** 2
    mu_d = np.bincount(dgrid.ravel(), weights=pbar.ravel(), minlength=L) / L
    p_i = mu_d[list(origins)].mean()
    p_j = mu_d[(np.asarray(origins)[:, None] + np.arange(L)[None, :]) % L].mean(axis=0)
    return joint / (p_i * p_j[dgrid]) - 1.0


@pytest.mark.parametrize("normalization", ["global_P2", "per_diagonal"])
def test_flip_correlator_matches_brute_force(normalization):
    L, R, k = 8, 4, 0.25
    gen = stream(30)
    masks = (gen.random((R, L, L)) < 0.6).astype(float)
    C, info = flip_correlator(masks, k=k, normalization=normalization)
    origins = info["origin_diagonals"]
    expected = _brute_correlator(masks, origins, normalization)
    assert np.allclose(C, expected, atol=1e-10)


def test_per_diagonal_lower_bound():
    gen = stream(31)
    masks = (gen.random((6, 8, 8)) < 0.4).astype(float)
    C, _ = flip_correlator(masks, k=0.25, normalization="per_diagonal")
    assert C.min() >= -1.0 - 1e-12


def test_flip_correlator_validation():
    with pytest.raises(ValueError):
        flip_correlator(np.ones((1, 8, 8)), k=0.25)  # single realization
    with pytest.raises(ValueError):
        flip_correlator(np.ones((3, 8, 8)))  # no k, no origins
    with pytest.raises(ValueError):
        flip_correlator(np.zeros((3, 8, 8)), k=0.25)  # frozen ensemble


def test_origin_diagonals():
    assert origin_diagonals(16, 0.25).tolist() == [1, 9]
    assert origin_diagonals(16, 0.125).tolist() == [2]
    with pytest.raises(ValueError):
        origin_diagonals(16, 0.5)  # k*d = 1/4 has no integer solution


# ---------------------------------------------------------------------------
# two-time structure factor


def test_structure_factor_vs_direct_dft():
    L, R = 4, 2
    gen = stream(40)
    sig0 = np.where(gen.random((R, L, L)) < 0.5, 1.0, -1.0)
    sigt = np.where(gen.random((R, L, L)) < 0.5, 1.0, -1.0)
    C = structure_factor(sigt, sig0)
    raw = np.zeros((L, L), dtype=complex)
    for r in range(R):
        Ft = np.zeros((L, L), dtype=complex)
        F0 = np.zeros((L, L), dtype=complex)
        for kx in range(L):
            for ky in range(L):
                for x in range(L):
                    for y in range(L):
                        w = np.exp(-2j * np.pi * (kx * x + ky * y) / L)
                        Ft[kx, ky] += sigt[r, x, y] * w
                        F0[kx, ky] += sig0[r, x, y] * w
        raw += Ft * np.conj(F0)
    raw = raw.real / (R * L**2)
    assert np.allclose(C, raw / raw.mean(), atol=1e-10)


def test_structure_factor_unit_mean_and_validation():
    gen = stream(41)
    s = np.where(gen.random((3, 8, 8)) < 0.5, 1.0, -1.0)
    C = structure_factor(s, s)
    assert abs(C.mean() - 1.0) < 1e-12
    with pytest.raises(ValueError):
        structure_factor(s, s[:2])


def test_axis_modes_conserved_under_dynamics():
    """Row/column sums freeze the kx=0 and ky=0 Fourier lines exactly."""
    L = 16
    occ = random_half_filled_config(L, stream(42))
    F0 = np.fft.fft2(sigma(occ).astype(float))
    sca_run(occ, 200, stream(43))
    Ft = np.fft.fft2(sigma(occ).astype(float))
    assert np.allclose(Ft[0, :], F0[0, :], atol=1e-9)
    assert np.allclose(Ft[:, 0], F0[:, 0], atol=1e-9)
    # generic off-axis modes decorrelate
    assert not np.allclose(Ft[1:, 1:], F0[1:, 1:], atol=1e-6)


def test_spectrum_axis_ratio_synthetic():
    C = np.ones((8, 8))
    C[0, 1:] = 10.0
    C[1:, 0] = 10.0
    assert abs(spectrum_axis_ratio(C) - 10.0) < 1e-12


# ---------------------------------------------------------------------------
# fits


def test_fit_line_exact():
    x = np.arange(6, dtype=float)
    slope, icept, err, r2 = fit_line(x, 3.0 * x - 2.0)
    assert abs(slope - 3.0) < 1e-12
    assert abs(icept + 2.0) < 1e-12
    assert err < 1e-10
    assert abs(r2 - 1.0) < 1e-12
    with pytest.raises(ValueError):
        fit_line([0, 1], [0, 1])


def test_fit_exponential_rate_exact():
    t = np.linspace(0, 10, 8)
    rate, err, r2 = fit_exponential_rate(t, np.exp(-0.37 * t))
    assert abs(rate - 0.37) < 1e-12
    assert r2 > 1 - 1e-12
    with pytest.raises(ValueError):
        fit_exponential_rate([0, 1, 2], [1.0, 0.5, -0.1])


def test_fit_power_law_exact_and_censoring():
    inv_k = np.array([4.0, 6.0, 8.0, 12.0])
    onsets = [CrossingTime(2.0 * x**3.5, False, 0.99, 0.9) for x in inv_k]
    alpha, err, r2, n = fit_power_law(inv_k, onsets)
    assert abs(alpha - 3.5) < 1e-12 and n == 4

    onsets[3] = CrossingTime(100.0, True, 0.99, 0.999)  # censored: dropped
    alpha, _, _, n = fit_power_law(inv_k, onsets)
    assert abs(alpha - 3.5) < 1e-12 and n == 3

    with pytest.raises(ValueError):
        fit_power_law(inv_k[:3], [onsets[0], onsets[1], onsets[3]])


def test_fit_power_law_accepts_floats():
    inv_k = [4.0, 8.0, 16.0]
    alpha, _, _, n = fit_power_law(inv_k, [x**4 for x in inv_k])
    assert abs(alpha - 4.0) < 1e-12 and n == 3
