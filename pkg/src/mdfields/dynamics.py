"""Symplectic dynamics on a single adiabatic surface.

The Hamiltonian is H(x, p) = sum_n |p^n|^2 / (2 m_n) + lambda_bar_j(x); in
scaled units all masses are one.  Velocity Verlet with one force evaluation
per step keeps the energy drift bounded without secular growth.
"""

import csv
from dataclasses import dataclass, field

import numpy as np

from . import nonlinear_eigen, potential
from .errors import BlowUpError, InvalidParameterError

FD_STEP = 1e-5
BLOWUP_LIMIT = 1e9


@dataclass
class PhaseState:
    """Positions and momenta of N particles on surface ``surface``."""

    x: np.ndarray
    p: np.ndarray
    masses: np.ndarray
    surface: int = 0
    time: float = 0.0

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float)
        self.p = np.asarray(self.p, dtype=float)
        self.masses = np.asarray(self.masses, dtype=float)
        if self.x.shape != self.p.shape or self.x.shape[1:] != (3,):
            raise InvalidParameterError("x and p must both be (N, 3)")
        if self.masses.shape != (self.x.shape[0],) or np.any(self.masses <= 0):
            raise InvalidParameterError("masses must be N positive reals")
        if not (np.all(np.isfinite(self.x)) and np.all(np.isfinite(self.p))):
            raise InvalidParameterError("phase-space entries must be finite")


@dataclass
class Trajectory:
    """Uniform-step trajectory with per-state total energy."""

    times: np.ndarray
    positions: np.ndarray   # (S+1, N, 3)
    momenta: np.ndarray     # (S+1, N, 3)
    energies: np.ndarray
    masses: np.ndarray
    surface: int
    dt: float

    def state(self, i):
        return PhaseState(x=self.positions[i].copy(),
                          p=self.momenta[i].copy(),
                          masses=self.masses, surface=self.surface,
                          time=float(self.times[i]))

    @property
    def energy_oscillation(self):
        """Max relative deviation of the energy series from its start."""
        e0 = self.energies[0]
        scale = max(abs(e0), 1e-300)
        return float(np.max(np.abs(self.energies - e0)) / scale)

    @property
    def energy_drift(self):
        """Relative secular energy drift over the run.

        Verlet energy oscillates with bounded amplitude O(dt^2) but must not
        trend; the drift is the least-squares linear trend of the energy
        series times the run duration, which averages out the bounded
        oscillation.
        """
        if len(self.energies) < 2:
            return 0.0
        slope = np.polyfit(self.times, self.energies, 1)[0]
        span = self.times[-1] - self.times[0]
        return float(abs(slope * span) / max(abs(self.energies[0]), 1e-300))

    def to_csv(self, path):
        n = self.positions.shape[1]
        header = ["tau"]
        header += [f"x_{i + 1}" for i in range(3 * n)]
        header += [f"p_{i + 1}" for i in range(3 * n)]
        header += ["energy"]
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(header)
            for i in range(len(self.times)):
                row = [f"{self.times[i]:.17g}"]
                row += [f"{v:.17g}" for v in self.positions[i].reshape(-1)]
                row += [f"{v:.17g}" for v in self.momenta[i].reshape(-1)]
                row += [f"{self.energies[i]:.17g}"]
                writer.writerow(row)


# ---------------------------------------------------------------------------
# surface providers

class SurfaceProvider:
    """Interface: value and configuration gradient of lambda_bar_j."""

    def value(self, x, j):
        raise NotImplementedError

    def gradient(self, x, j):
        raise NotImplementedError


class AdiabaticSurface(SurfaceProvider):
    """Bare surfaces lambda_j of a matrix potential, analytic gradients."""

    def __init__(self, v_pot, gap_tol=potential.GAP_TOL):
        self.v_pot = v_pot
        self.gap_tol = gap_tol

    def _eig(self, x):
        return potential.eigendecompose(self.v_pot.evaluate(x), self.gap_tol)

    def value(self, x, j):
        return float(self._eig(x).lambdas[j])

    def gradient(self, x, j):
        return potential.surface_gradient(self.v_pot, x, self._eig(x), j)


class CorrectedSurface(SurfaceProvider):
    """Mass-corrected surfaces lambda_bar_j.

    The gradient is the analytic Hellmann-Feynman gradient of the bare
    surface plus a central finite difference of the O(1/M) correction; the
    correction is smooth and small, so the hybrid keeps full accuracy at one
    analytic evaluation per force call.
    """

    def __init__(self, v_pot, mass, fd_step=FD_STEP,
                 gap_tol=potential.GAP_TOL):
        self.v_pot = v_pot
        self.mass = float(mass)
        self.fd_step = float(fd_step)
        self.gap_tol = gap_tol

    def _bare(self, x, j):
        eig = potential.eigendecompose(self.v_pot.evaluate(x), self.gap_tol)
        return float(eig.lambdas[j]), eig

    def _correction(self, x, j):
        cs = nonlinear_eigen.solve_nonlinear_eigen(
            self.v_pot, x, self.mass, gap_tol=self.gap_tol)
        bare, _ = self._bare(x, j)
        return float(cs.lambdas_bar[j]) - bare

    def value(self, x, j):
        return self._bare(x, j)[0] + self._correction(x, j)

    def gradient(self, x, j):
        x = np.asarray(x, dtype=float)
        _, eig = self._bare(x, j)
        grad = potential.surface_gradient(self.v_pot, x, eig, j)
        h = self.fd_step
        for n in range(x.shape[0]):
            for a in range(3):
                xp = x.copy(); xp[n, a] += h
                xm = x.copy(); xm[n, a] -= h
                grad[n, a] += (self._correction(xp, j)
                               - self._correction(xm, j)) / (2.0 * h)
        return grad


class FiniteDifferenceSurface(SurfaceProvider):
    """Black-box surface from a callable ``f(x, j) -> float``."""

    def __init__(self, f, fd_step=FD_STEP):
        self.f = f
        self.fd_step = float(fd_step)

    def value(self, x, j):
        return float(self.f(np.asarray(x, dtype=float), j))

    def gradient(self, x, j):
        x = np.asarray(x, dtype=float)
        h = self.fd_step
        grad = np.empty_like(x)
        for n in range(x.shape[0]):
            for a in range(3):
                xp = x.copy(); xp[n, a] += h
                xm = x.copy(); xm[n, a] -= h
                grad[n, a] = (self.f(xp, j) - self.f(xm, j)) / (2.0 * h)
        return grad


def force(surface_provider, x, j):
    """The force -grad lambda_bar_j(x), shape (N, 3)."""
    return -surface_provider.gradient(x, j)


def total_energy(surface_provider, state):
    kinetic = 0.5 * np.sum(np.sum(state.p ** 2, axis=1) / state.masses)
    return kinetic + surface_provider.value(state.x, state.surface)


def integrate(initial, dt, steps, surface_provider):
    """Velocity-Verlet trajectory of ``steps`` uniform steps of size ``dt``.

    One force evaluation per step; the closing force of a step is reused to
    open the next.

    Raises
    ------
    BlowUpError
        When any coordinate magnitude exceeds ``BLOWUP_LIMIT``.
    """
    if dt <= 0 or steps < 0:
        raise InvalidParameterError("need dt > 0 and steps >= 0")
    j = initial.surface
    m = initial.masses[:, None]
    x = initial.x.copy()
    p = initial.p.copy()
    times = initial.time + dt * np.arange(steps + 1)
    positions = np.empty((steps + 1,) + x.shape)
    momenta = np.empty_like(positions)
    energies = np.empty(steps + 1)
    positions[0], momenta[0] = x, p
    energies[0] = 0.5 * np.sum(p ** 2 / m) \
        + surface_provider.value(x, j)
    f = force(surface_provider, x, j)
    for s in range(steps):
        p_half = p + 0.5 * dt * f
        x = x + dt * p_half / m
        if np.max(np.abs(x)) > BLOWUP_LIMIT:
            raise BlowUpError(f"coordinate overflow at step {s + 1}")
        f = force(surface_provider, x, j)
        p = p_half + 0.5 * dt * f
        positions[s + 1], momenta[s + 1] = x, p
        energies[s + 1] = 0.5 * np.sum(p ** 2 / m) \
            + surface_provider.value(x, j)
    return Trajectory(times=times, positions=positions, momenta=momenta,
                      energies=energies, masses=initial.masses.copy(),
                      surface=j, dt=float(dt))
