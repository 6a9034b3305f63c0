"""Measured quantities: diagonal Fourier amplitudes and ratios, melt times,
profile ratios, flippability correlators, two-time structure factors, and the
fit helpers the analysis protocols share.

Conventions.  Wavenumbers k are in units of pi along the (1,1) direction, so
a commensurate mode needs k*L even and the pattern period is 2/k diagonals.
Amplitudes are normalized 1/L^2 (intensive across sizes).  Ensemble ratios
R(t) divide ensemble-MEAN amplitudes, never average per-realization ratios.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .lattice import flippable_mask, sigma

# ---------------------------------------------------------------------------
# diagonal Fourier amplitudes


def check_commensurate(L, k):
    kl = k * L
    if abs(kl - round(kl)) > 1e-9 or int(round(kl)) % 2 != 0:
        raise ValueError(f"k*L = {kl} must be an even integer on an L={L} torus")


def diagonal_sums(field):
    """Sum of the field over each diagonal d = (x+y) mod L; shape (L,)."""
    L = field.shape[0]
    d = (np.add.outer(np.arange(L), np.arange(L))) % L
    return np.bincount(d.ravel(), weights=np.asarray(field, dtype=float).ravel(),
                       minlength=L)


def field_diagonal_fourier(field, k):
    """(1/L^2) sum field[x,y] * exp(i*pi*k*(x+y)) for a commensurate k."""
    L = field.shape[0]
    check_commensurate(L, k)
    D = diagonal_sums(field)
    phase = np.exp(1j * np.pi * k * np.arange(L))
    return complex(D @ phase) / L**2


def diagonal_fourier(occ, k):
    """Diagonal mode amplitude of the spin field sigma = 2n-1; |result| <= 1."""
    return field_diagonal_fourier(sigma(occ), k)


# ---------------------------------------------------------------------------
# Fourier ratio R(t) over an ensemble

# default denominator floor: ten times the RMS amplitude of a random sector
# config (which is 1/L per mode), in sigma units
DEFAULT_FLOOR_FACTOR = 10.0


def fourier_ratio(amps, floor=None, L=None, mode="complex"):
    """R(t) from an ensemble of amplitude series.

    ``amps``: complex array (n_realizations, n_times); column 0 is t=0.
    Realizations are averaged first, then R(t) = <F_t>/<F_0>.  ``mode``
    "complex" returns the real part of the complex ratio (phase noise cancels
    and the estimate is unbiased at low signal); "modulus" returns
    |<F_t>|/|<F_0>|.  The denominator must clear ``floor`` (default 10/L when
    L is given), otherwise the ratio is meaningless and a ValueError is
    raised.
    """
    amps = np.atleast_2d(np.asarray(amps, dtype=complex))
    Fm = amps.mean(axis=0)
    if floor is None:
        if L is None:
            raise ValueError("need an explicit floor or L for the default one")
        floor = DEFAULT_FLOOR_FACTOR / L
    if abs(Fm[0]) < floor:
        raise ValueError(
            f"initial amplitude {abs(Fm[0]):.3g} below noise floor {floor:.3g}"
        )
    if mode == "complex":
        return (Fm / Fm[0]).real
    if mode == "modulus":
        return np.abs(Fm) / abs(Fm[0])
    raise ValueError(f"unknown mode {mode!r}")


def amplitude_snr_mask(amps, min_snr=3.0):
    """True where |ensemble mean| exceeds min_snr times its standard error.

    Used to cut fit windows before they hit the incoherent-noise floor, where
    ratio points carry no slope information.
    """
    amps = np.atleast_2d(np.asarray(amps, dtype=complex))
    R = amps.shape[0]
    Fm = amps.mean(axis=0)
    if R < 2:
        return np.abs(Fm) > 0
    spread = np.mean(np.abs(amps - Fm) ** 2, axis=0) * R / (R - 1)
    stderr = np.sqrt(spread / R)
    return np.abs(Fm) > min_snr * stderr


# ---------------------------------------------------------------------------
# melt onset / post-melt reference times


@dataclass
class CrossingTime:
    """First-crossing result; ``censored`` means the series never crossed and
    ``time`` then carries the last simulated time as a lower bound."""

    time: float
    censored: bool
    threshold: float
    value_at: float  # series value at (grid point following) the crossing

    def __float__(self):
        return float(self.time)


def detect_melt_onset(times, R, threshold=0.99):
    """First time R(t) crosses below ``threshold``, linearly interpolated.

    The series must start at or above the threshold.  If it never crosses,
    the result is censored and carries the final time.
    """
    times = np.asarray(times, dtype=float)
    R = np.asarray(R, dtype=float)
    if R[0] < threshold:
        raise ValueError(f"series starts below threshold: R(0)={R[0]:.4f}")
    below = np.flatnonzero(R < threshold)
    if below.size == 0:
        return CrossingTime(float(times[-1]), True, threshold, float(R[-1]))
    j = below[0]
    t = times[j - 1] + (R[j - 1] - threshold) / (R[j - 1] - R[j]) * (
        times[j] - times[j - 1]
    )
    return CrossingTime(float(t), False, threshold, float(R[j]))


def postmelt_reference(times, R, threshold=0.01):
    """First grid time with R below ``threshold`` plus the value there.

    No interpolation: post-melt rescaling divides by the measured value
    closest to the threshold, so the reference is an actual grid sample.
    """
    times = np.asarray(times, dtype=float)
    R = np.asarray(R, dtype=float)
    below = np.flatnonzero(R < threshold)
    if below.size == 0:
        return CrossingTime(float(times[-1]), True, threshold, float(R[-1]))
    j = below[0]
    return CrossingTime(float(times[j]), False, threshold, float(R[j]))


# ---------------------------------------------------------------------------
# main-diagonal profile ratio


def b_profile(mean_sigma_t, mean_sigma_0, k, node_fraction=0.25):
    """B_x = <sigma_{x,x}(t)> / <sigma_{x,x}(0)> folded over one period.

    Inputs are ensemble-MEAN fields.  The initial profile along the main
    diagonal is A sin(2 pi k x) with period 1/k; positions where the initial
    profile is within ``node_fraction`` of zero (relative to its maximum) are
    masked NaN — the ratio is undefined at the nodes.
    """
    L = mean_sigma_t.shape[0]
    period = 1.0 / k
    p = int(round(period))
    if abs(period - p) > 1e-9 or L % p != 0:
        raise ValueError(f"main-diagonal period 1/k = {period} must divide L={L}")
    d0 = np.diagonal(np.asarray(mean_sigma_0, dtype=float)).reshape(-1, p).mean(axis=0)
    dt = np.diagonal(np.asarray(mean_sigma_t, dtype=float)).reshape(-1, p).mean(axis=0)
    out = np.full(p, np.nan)
    ok = np.abs(d0) >= node_fraction * np.abs(d0).max()
    out[ok] = dt[ok] / d0[ok]
    return out


# ---------------------------------------------------------------------------
# flippability correlator


def origin_diagonals(L, k):
    """Diagonals d with pi*k*d = pi/4 (mod 2pi): the correlator origin class."""
    check_commensurate(L, k)
    d = np.arange(L)
    phase = (k * d - 0.25) % 2.0
    out = np.flatnonzero(np.abs(phase) < 1e-9)
    if out.size == 0:
        raise ValueError(f"no diagonal satisfies k*d = 1/4 (mod 2) at L={L}, k={k}")
    return out


def flip_correlator(masks, k=None, normalization="global_P2", origins=None):
    """Connected flippability correlator from a stack of indicator fields.

    ``masks``: (R, L, L) flippability indicators at one time.  Origins are
    all sites on the diagonals where the underlying wave sits at phase pi/4
    (``origin_diagonals``), or an explicit diagonal list.  For displacement
    (dx, dy):

        C(dx,dy) = [<P(o) P(o+d)> - <P(o)><P(o+d)>] / norm

    averaged over origins and realizations, with the mean-field product
    subtracted pointwise (FFT cross-correlation on both terms).
    ``normalization``: "global_P2" divides by the squared global mean
    flippability; "per_diagonal" divides by <P_di><P_dj> of the origin and
    displaced diagonals, which bounds values to [-1, 1] with -1 exactly when
    the joint flippability vanishes.
    Returns (C, info) with C an (L, L) map indexed by the displacement.
    """
    masks = np.asarray(masks, dtype=float)
    if masks.ndim != 3 or masks.shape[0] < 2:
        raise ValueError("need a (R>=2, L, L) stack of flippability masks")
    R, L, _ = masks.shape
    if origins is None:
        if k is None:
            raise ValueError("need k (for the pi/4 origin rule) or explicit origins")
        origins = origin_diagonals(L, k)
    origins = np.asarray(origins, dtype=int)
    dgrid = (np.add.outer(np.arange(L), np.arange(L))) % L
    osel = np.isin(dgrid, origins).astype(float)
    n_origin = osel.sum() * R

    pbar = masks.mean(axis=0)  # per-site ensemble mean
    if pbar.mean() == 0.0:
        raise ValueError("ensemble is completely frozen; correlator undefined")

    Fsel = np.fft.fft2(masks * osel[None, :, :])
    Ffull = np.fft.fft2(masks)
    joint = np.fft.ifft2(np.conj(Fsel) * Ffull).real.sum(axis=0) / n_origin
    Fm_sel = np.fft.fft2(pbar * osel)
    Fm_full = np.fft.fft2(pbar)
    prod = np.fft.ifft2(np.conj(Fm_sel) * Fm_full).real / (osel.sum())
    conn = joint - prod

    info = {"origin_diagonals": origins.tolist(), "n_realizations": R}
    if normalization == "global_P2":
        norm = masks.mean() ** 2
        info["global_mean_P"] = float(masks.mean())
        C = conn / norm
    elif normalization == "per_diagonal":
        # here both the subtraction and the scale use diagonal-level means
        # <P_di>, <P_dj>, so C = joint/(<P_di><P_dj>) - 1 >= -1, with -1
        # exactly when the joint flippability vanishes
        mu_d = np.bincount(dgrid.ravel(), weights=pbar.ravel(), minlength=L) / L
        p_i = mu_d[origins].mean()
        # displacement (dx,dy) lands on diagonals origin + dx + dy (mod L)
        p_j = mu_d[(origins[:, None] + np.arange(L)[None, :]) % L].mean(axis=0)
        denom = p_i * p_j[dgrid]
        if np.any(denom == 0):
            raise ValueError("a diagonal has zero mean flippability")
        C = joint / denom - 1.0
        info["origin_mean_P"] = float(p_i)
    else:
        raise ValueError(f"unknown normalization {normalization!r}")
    return C, info


# ---------------------------------------------------------------------------
# two-time structure factor over random initial conditions


def structure_factor(sig_t, sig_0):
    """C(k,t) = <F_t(k) conj(F_0(k))> / L^2, normalized by the r=0 correlator.

    ``sig_t``/``sig_0``: (R, L, L) spin fields of the same realizations at
    times t and 0.  Returns the real normalized spectrum (L, L) indexed by
    FFT frequencies; C(r=0,t) = mean over k of the raw spectrum, so the
    normalized map has unit mean.
    """
    sig_t = np.asarray(sig_t, dtype=float)
    sig_0 = np.asarray(sig_0, dtype=float)
    if sig_t.shape != sig_0.shape or sig_t.ndim != 3:
        raise ValueError("need matching (R, L, L) stacks")
    L = sig_t.shape[1]
    Ft = np.fft.fft2(sig_t)
    F0 = np.fft.fft2(sig_0)
    C = (Ft * np.conj(F0)).mean(axis=0).real / L**2
    c0 = C.mean()  # the r=0 two-time correlator, by Parseval
    if c0 == 0:
        raise ValueError("vanishing equal-point correlator")
    return C / c0


def spectrum_axis_ratio(C):
    """Mass on the conserved kx=0 / ky=0 lines over the off-axis median.

    The (0,0) mode is excluded from the line mass (it measures total filling,
    not line structure).
    """
    L = C.shape[0]
    lines = np.abs(C[0, 1:]).mean() + np.abs(C[1:, 0]).mean()
    off = np.abs(C[1:, 1:])
    return float(lines / 2.0 / np.median(off))


# ---------------------------------------------------------------------------
# fits


def fit_line(x, y):
    """Least-squares line fit; returns (slope, intercept, slope_stderr, r2)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.size < 3:
        raise ValueError("need at least 3 points")
    A = np.vstack([x, np.ones_like(x)]).T
    coef, res, *_ = np.linalg.lstsq(A, y, rcond=None)
    yhat = A @ coef
    ss_res = float(((y - yhat) ** 2).sum())
    ss_tot = float(((y - y.mean()) ** 2).sum())
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    dof = x.size - 2
    var = ss_res / dof if dof > 0 else 0.0
    cov = var * np.linalg.inv(A.T @ A)
    return float(coef[0]), float(coef[1]), float(np.sqrt(cov[0, 0])), r2


def fit_exponential_rate(t, R):
    """Fit R = exp(-rate * t); returns (rate, stderr, r2) from ln R."""
    R = np.asarray(R, dtype=float)
    if np.any(R <= 0):
        raise ValueError("ratio values must be positive for a log fit")
    slope, _, err, r2 = fit_line(np.asarray(t, float), np.log(R))
    return -slope, err, r2


def fit_power_law(inv_k, onsets):
    """Exponent of t0 ~ (1/k)^alpha from CrossingTime results.

    Censored onsets are excluded (they are lower bounds, not measurements);
    at least 3 uncensored points are required.  Returns
    (alpha, stderr, r2, n_used).
    """
    xs, ys = [], []
    for x, t0 in zip(inv_k, onsets):
        if isinstance(t0, CrossingTime):
            if t0.censored:
                continue
            t0 = t0.time
        xs.append(np.log(float(x)))
        ys.append(np.log(float(t0)))
    if len(xs) < 3:
        raise ValueError(f"only {len(xs)} uncensored onsets; need >= 3 for a fit")
    slope, _, err, r2 = fit_line(xs, ys)
    return slope, err, r2, len(xs)


def flippable_density(occ):
    """Fraction of the L^2 plaquettes that are flippable."""
    return float(flippable_mask(occ).mean())
