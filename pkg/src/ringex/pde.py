"""Finite-difference integrator for the sub-diffusive field equations.

Two right-hand sides on a periodic square grid:

* linear: dg/dt = -(c/pi^4) * g_xxyy (cross fourth derivative).  The c/pi^4
  bookkeeping makes a diagonal mode sin(pi*k*(x+y)) decay at rate c*k^4 with
  k in units of pi — the same reporting convention as the stochastic engines,
  so the default c = pi^4/4 gives the equation coefficient 1/4 of the
  microscopic stencil and decay curves are directly comparable;
* nonlinear (mean-field): dg/dt = -[(1-g^2)/2 * g_xxyy + gx^2*gyy + gy^2*gxx
  + 2*gx*gy*gxy + g*gxx*gyy], kept in its own time unit (the absolute scale
  against the automata is a fitted constant); its A->0 limit is the linear
  stencil with coefficient 1/2.

All spatial derivatives are second-order central differences; time stepping
is explicit RK4 with the step bounded by the fourth-order stability limit
dt <= safety * dx^4 / c_eff.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DEFAULT_C = np.pi**4 / 4


@dataclass
class PdeSpec:
    L_grid: int
    c: float = DEFAULT_C
    dt: float | None = None  # None: set from the stability bound
    nonlinear: bool = False
    dx: float = 1.0
    safety: float = 0.1

    def effective_coefficient(self, g0=None):
        """Scale entering the stability bound.

        For the nonlinear equation the local fourth-order coefficient is
        bounded by 1/2 + 4*max|g|^2 (the bracket extremes), evaluated on the
        initial field.
        """
        if not self.nonlinear:
            return self.c
        amp = 1.0 if g0 is None else float(np.abs(g0).max())
        return 0.5 + 4.0 * amp**2

    def max_dt(self, g0=None):
        return self.safety * self.dx**4 / self.effective_coefficient(g0)


def _derivs(g, dx):
    gxp = np.roll(g, -1, axis=0)
    gxm = np.roll(g, 1, axis=0)
    gyp = np.roll(g, -1, axis=1)
    gym = np.roll(g, 1, axis=1)
    gx = (gxp - gxm) / (2 * dx)
    gy = (gyp - gym) / (2 * dx)
    gxx = (gxp - 2 * g + gxm) / dx**2
    gyy = (gyp - 2 * g + gym) / dx**2
    gpp = np.roll(gxp, -1, axis=1)
    gpm = np.roll(gxp, 1, axis=1)
    gmp = np.roll(gxm, -1, axis=1)
    gmm = np.roll(gxm, 1, axis=1)
    gxy = (gpp - gpm - gmp + gmm) / (4 * dx**2)
    return gx, gy, gxx, gyy, gxy


def cross_fourth(g, dx):
    """g_xxyy by composing the two second-difference stencils (9-point)."""
    gyy = (np.roll(g, -1, axis=1) - 2 * g + np.roll(g, 1, axis=1)) / dx**2
    return (np.roll(gyy, -1, axis=0) - 2 * gyy + np.roll(gyy, 1, axis=0)) / dx**2


def pde_rhs(g, spec: PdeSpec):
    """Time derivative of the field under the selected equation."""
    if not spec.nonlinear:
        return (-spec.c / np.pi**4) * cross_fourth(g, spec.dx)
    gx, gy, gxx, gyy, gxy = _derivs(g, spec.dx)
    return -(
        0.5 * (1.0 - g * g) * cross_fourth(g, spec.dx)
        + gx * gx * gyy
        + gy * gy * gxx
        + 2.0 * gx * gy * gxy
        + g * gxx * gyy
    )


def stencil_eigenvalue(k, dx=1.0, c=DEFAULT_C):
    """Exact decay rate of sin(pi*k*(x+y)) under the discrete linear RHS.

    The second-difference operator has eigenvalue -(2 - 2cos(pi*k*dx))/dx^2
    per axis, so the cross stencil decays the mode at
    (c/pi^4) * ((2-2cos(pi*k*dx))/dx^2)^2, which tends to the continuum rate
    c*k^4 as dx -> 0 with an O(dx^2) deficit.
    """
    lam = (2.0 - 2.0 * np.cos(np.pi * k * dx)) / dx**2
    return c / np.pi**4 * lam * lam


def single_mode_rhs(A, k, phase):
    """Closed form of the nonlinear RHS on g = A sin(phase), phase = pi*k*(x+y).

    Continuum limit: A*(pi*k)^4*sin(phase) * [-1/2 + 4A^2 cos^2(phase)
    - (A^2/2) sin^2(phase)].
    """
    s = np.sin(phase)
    c2 = np.cos(phase) ** 2
    q4 = (np.pi * k) ** 4
    return A * q4 * s * (-0.5 + 4 * A * A * c2 - 0.5 * A * A * (1 - c2))


def growth_threshold(A):
    """Threshold sine value below which the nonlinear RHS amplifies |g|.

    Zero (empty region) unless 8A^2 > 1; at A=1 the value is sqrt(7/9).
    """
    if not 0 < A <= 1:
        raise ValueError("amplitude must be in (0, 1]")
    if 8.0 * A * A <= 1.0:
        return 0.0
    return float(np.sqrt((8.0 * A * A - 1.0) / (9.0 * A * A)))


def growth_region(A, k, L, dx=1.0):
    """Boolean mask of grid sites where |sin(pi*k*(x+y))| is below threshold.

    Empty when 8A^2 <= 1; otherwise bands around the nodes of the wave
    (phases 0 and pi), where the mean-field equation steepens the profile
    instead of flattening it.
    """
    thr = growth_threshold(A)
    if thr == 0.0:
        return np.zeros((L, L), dtype=bool)
    phase = np.pi * k * dx * (np.add.outer(np.arange(L), np.arange(L)))
    return np.abs(np.sin(phase)) < thr


def pde_integrate(g0, spec: PdeSpec, times):
    """RK4-integrate to each time in ``times``; returns (snapshots, info).

    ``times`` must be increasing and start anywhere >= 0; each segment is
    stepped with a constant dt chosen as the largest value within the
    stability bound that divides the segment evenly, so the requested times
    are hit exactly.  Aborts with RuntimeError if the field leaves [-1, 1]
    (the mean-field density interpretation breaks down) or goes NaN.
    """
    g = np.array(g0, dtype=np.float64, copy=True)
    if g.shape != (spec.L_grid, spec.L_grid):
        raise ValueError(f"field shape {g.shape} != grid {spec.L_grid}")
    times = np.asarray(times, dtype=float)
    if np.any(np.diff(times) <= 0):
        raise ValueError("times must be strictly increasing")
    dt_cap = spec.dt if spec.dt is not None else spec.max_dt(g)
    snaps = []
    t = 0.0
    steps = 0
    for target in times:
        gap = target - t
        if gap < 0:
            raise ValueError("times must not precede the initial time")
        if gap > 0:
            n = max(1, int(np.ceil(gap / dt_cap - 1e-12)))
            dt = gap / n
            for _ in range(n):
                k1 = pde_rhs(g, spec)
                k2 = pde_rhs(g + 0.5 * dt * k1, spec)
                k3 = pde_rhs(g + 0.5 * dt * k2, spec)
                k4 = pde_rhs(g + dt * k3, spec)
                g = g + (dt / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
                steps += 1
            t = target
            if not np.all(np.isfinite(g)):
                raise RuntimeError(f"field went non-finite at t={t}")
            m = float(np.abs(g).max())
            if m > 1.0 + 1e-9:
                raise RuntimeError(
                    f"|g| reached {m:.4f} > 1 at t={t}: mean-field validity lost"
                )
        snaps.append(g.copy())
    info = {
        "steps": steps,
        "dt_cap": float(dt_cap),
        "final_mean": float(g.mean()),
        "final_max_abs": float(np.abs(g).max()),
    }
    return snaps, info
