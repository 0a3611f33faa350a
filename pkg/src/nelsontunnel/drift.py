"""Osmotic and current velocities from the instantaneous wavefunction.

``u = (hbar/m) Re d/dx ln psi`` and ``v = (hbar/m) Im d/dx ln psi``.  The log
derivative is formed as ``psi' conj(psi) / rho`` with ``psi'`` a central
difference and ``rho`` floored at a fraction of the peak density, which
sidesteps the branch cut of the complex logarithm and keeps nodes finite.
"""

from dataclasses import dataclass

import numba as nb
import numpy as np

from .errors import ConfigurationError, NumericalError

DEFAULT_FLOOR = 1e-12


@dataclass(frozen=True)
class DriftSample:
    u: float
    v: float

    @property
    def total(self):
        return self.u + self.v


def regularized_density(state, i, floor=DEFAULT_FLOOR):
    rho = np.abs(state.psi) ** 2
    peak = rho.max()
    if peak <= 0:
        raise NumericalError("wavefunction vanishes everywhere")
    return float(max(rho[i], floor * peak))


@nb.njit(cache=True)
def drift_grid(psi, dx, hbar_over_m, floor, u, v):
    """Fill ``u`` and ``v`` on every grid node; walls get zero drift."""
    n = psi.shape[0]
    peak = 0.0
    for i in range(n):
        r = psi[i].real * psi[i].real + psi[i].imag * psi[i].imag
        if r > peak:
            peak = r
    rho_min = floor * peak
    scale = hbar_over_m / (2.0 * dx)
    u[0] = v[0] = u[n - 1] = v[n - 1] = 0.0
    for i in range(1, n - 1):
        p = psi[i]
        r = p.real * p.real + p.imag * p.imag
        if r < rho_min:
            r = rho_min
        dp = psi[i + 1] - psi[i - 1]
        # dp * conj(p)
        re = dp.real * p.real + dp.imag * p.imag
        im = dp.imag * p.real - dp.real * p.imag
        u[i] = scale * re / r
        v[i] = scale * im / r
    return peak


def velocity_fields(state, m=1.0, hbar=1.0, floor=DEFAULT_FLOOR):
    """Osmotic and current velocity on the grid nodes."""
    psi = np.ascontiguousarray(state.psi, dtype=np.complex128)
    u = np.empty(psi.shape[0])
    v = np.empty(psi.shape[0])
    peak = drift_grid(psi, state.grid.dx, hbar / m, floor, u, v)
    if peak <= 0:
        raise NumericalError("wavefunction vanishes everywhere")
    return u, v


def drift_at(state, x, m=1.0, hbar=1.0, floor=DEFAULT_FLOOR, cap=None):
    """Drift components at position ``x`` by linear interpolation between nodes.

    ``cap`` bounds ``|u|`` and ``|v|`` separately when given.
    """
    g = state.grid
    if not (g.x_min <= x <= g.x_max):
        raise ConfigurationError(f"position {x} is outside the grid [{g.x_min}, {g.x_max}]")
    u, v = velocity_fields(state, m, hbar, floor)
    s = (x - g.x_min) / g.dx
    i = min(int(s), g.n_points - 2)
    w = s - i
    uu = (1.0 - w) * u[i] + w * u[i + 1]
    vv = (1.0 - w) * v[i] + w * v[i + 1]
    if cap is not None:
        uu = float(np.clip(uu, -cap, cap))
        vv = float(np.clip(vv, -cap, cap))
    return DriftSample(float(uu), float(vv))
