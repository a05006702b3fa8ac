"""Matrix-valued potentials built from pair terms, and their eigen machinery.

Built-in models are sums of scalar pair functions over the canonical pair
ordering, which makes them rigid-motion invariant by construction.  The
per-particle split assigns half of every pair term to each endpoint.
"""

from dataclasses import dataclass

import numpy as np

from . import geometry
from .errors import DegenerateSpectrumError, InvalidParameterError

GAP_TOL = 1e-10


# ---------------------------------------------------------------------------
# scalar pair functions

class PairFunction:
    """Scalar function of a pair distance with an analytic derivative."""

    def value(self, r):
        raise NotImplementedError

    def deriv(self, r):
        raise NotImplementedError


class Constant(PairFunction):
    def __init__(self, c):
        self.c = float(c)

    def value(self, r):
        return np.full_like(np.asarray(r, dtype=float), self.c)

    def deriv(self, r):
        return np.zeros_like(np.asarray(r, dtype=float))


class Harmonic(PairFunction):
    """kappa (r - r0)^2 / 2."""

    def __init__(self, kappa, r0):
        if kappa <= 0 or r0 <= 0:
            raise InvalidParameterError("harmonic pair needs kappa, r0 > 0")
        self.kappa = float(kappa)
        self.r0 = float(r0)

    def value(self, r):
        return 0.5 * self.kappa * (np.asarray(r, dtype=float) - self.r0) ** 2

    def deriv(self, r):
        return self.kappa * (np.asarray(r, dtype=float) - self.r0)


class Morse(PairFunction):
    """D (1 - exp(-a (r - r0)))^2 - D."""

    def __init__(self, d, a, r0):
        if d <= 0 or a <= 0 or r0 <= 0:
            raise InvalidParameterError("Morse pair needs D, a, r0 > 0")
        self.d = float(d)
        self.a = float(a)
        self.r0 = float(r0)

    def value(self, r):
        e = np.exp(-self.a * (np.asarray(r, dtype=float) - self.r0))
        return self.d * (1.0 - e) ** 2 - self.d

    def deriv(self, r):
        e = np.exp(-self.a * (np.asarray(r, dtype=float) - self.r0))
        return 2.0 * self.d * self.a * e * (1.0 - e)


class LennardJones(PairFunction):
    """4 eps ((s/r)^12 - (s/r)^6), continued quadratically below r_inner.

    The inner continuation keeps values and derivatives bounded so sampling
    and lifting stay well conditioned at close encounters.
    """

    def __init__(self, eps, sigma, r_inner=None):
        if eps <= 0 or sigma <= 0:
            raise InvalidParameterError("LJ pair needs eps, sigma > 0")
        self.eps = float(eps)
        self.sigma = float(sigma)
        self.r_inner = float(r_inner) if r_inner is not None else 0.8 * sigma
        ri = self.r_inner
        self._v0 = self._raw(ri)
        self._d0 = self._raw_deriv(ri)
        # curvature of the smooth continuation matched at r_inner
        self._c0 = self._raw_curv(ri)

    def _raw(self, r):
        s6 = (self.sigma / r) ** 6
        return 4.0 * self.eps * (s6 ** 2 - s6)

    def _raw_deriv(self, r):
        s6 = (self.sigma / r) ** 6
        return 4.0 * self.eps * (-12.0 * s6 ** 2 + 6.0 * s6) / r

    def _raw_curv(self, r):
        s6 = (self.sigma / r) ** 6
        return 4.0 * self.eps * (156.0 * s6 ** 2 - 42.0 * s6) / r ** 2

    def value(self, r):
        r = np.asarray(r, dtype=float)
        out = np.empty_like(r)
        lo = r < self.r_inner
        dr = r[lo] - self.r_inner
        out[lo] = self._v0 + self._d0 * dr + 0.5 * self._c0 * dr ** 2
        out[~lo] = self._raw(r[~lo])
        return out

    def deriv(self, r):
        r = np.asarray(r, dtype=float)
        out = np.empty_like(r)
        lo = r < self.r_inner
        out[lo] = self._d0 + self._c0 * (r[lo] - self.r_inner)
        out[~lo] = self._raw_deriv(r[~lo])
        return out


class GaussianCoupling(PairFunction):
    """c0 exp(-((r - rc)/w)^2), the off-diagonal coupling profile."""

    def __init__(self, c0, rc, w):
        if w <= 0:
            raise InvalidParameterError("coupling width must be positive")
        self.c0 = float(c0)
        self.rc = float(rc)
        self.w = float(w)

    def value(self, r):
        z = (np.asarray(r, dtype=float) - self.rc) / self.w
        return self.c0 * np.exp(-z ** 2)

    def deriv(self, r):
        r = np.asarray(r, dtype=float)
        z = (r - self.rc) / self.w
        return -2.0 * z / self.w * self.c0 * np.exp(-z ** 2)


class SumPair(PairFunction):
    def __init__(self, *terms):
        self.terms = terms

    def value(self, r):
        return sum(t.value(r) for t in self.terms)

    def deriv(self, r):
        return sum(t.deriv(r) for t in self.terms)


# ---------------------------------------------------------------------------
# matrix potentials

class MatrixPotential:
    """Interface: Hermitian d x d potential of an (N, 3) configuration.

    ``deriv`` and ``part_deriv`` return all coordinate derivatives at once,
    shaped ``(N, 3, d, d)``.
    """

    d = 1
    n_particles = 0

    def evaluate(self, x):
        raise NotImplementedError

    def part(self, x, n):
        raise NotImplementedError

    def deriv(self, x):
        raise NotImplementedError

    def part_deriv(self, x, n):
        raise NotImplementedError


class PairSumPotential(MatrixPotential):
    """V(x) = sum over pairs of a fixed symmetric matrix of pair functions."""

    def __init__(self, entries, n_particles):
        """``entries``: d x d nested list of PairFunction or None, symmetric."""
        self.entries = entries
        self.d = len(entries)
        if n_particles < 2:
            raise InvalidParameterError("need at least two particles")
        self.n_particles = int(n_particles)
        self._pairs = geometry.pair_list(n_particles)

    def _pair_values(self, r):
        """(d, d, P) array of entry values at each pair distance."""
        p = len(r)
        out = np.zeros((self.d, self.d, p))
        for a in range(self.d):
            for b in range(self.d):
                f = self.entries[a][b]
                if f is not None:
                    out[a, b] = f.value(r)
        return out

    def _pair_derivs(self, r):
        p = len(r)
        out = np.zeros((self.d, self.d, p))
        for a in range(self.d):
            for b in range(self.d):
                f = self.entries[a][b]
                if f is not None:
                    out[a, b] = f.deriv(r)
        return out

    def evaluate(self, x):
        r = geometry.pair_distances(x)
        return self._pair_values(r).sum(axis=2)

    def part(self, x, n):
        r = geometry.pair_distances(x)
        vals = self._pair_values(r)
        out = np.zeros((self.d, self.d))
        for idx, (i, j) in enumerate(self._pairs):
            if n in (i, j):
                out += 0.5 * vals[:, :, idx]
        return out

    def deriv(self, x):
        x = np.asarray(x, dtype=float)
        n = self.n_particles
        r = geometry.pair_distances(x)
        dvals = self._pair_derivs(r)  # (d, d, P)
        out = np.zeros((n, 3, self.d, self.d))
        for idx, (i, j) in enumerate(self._pairs):
            e = geometry.pair_direction(x, i, j)
            out[i] += e[:, None, None] * dvals[None, :, :, idx]
            out[j] -= e[:, None, None] * dvals[None, :, :, idx]
        return out

    def part_deriv(self, x, n):
        x = np.asarray(x, dtype=float)
        npart = self.n_particles
        r = geometry.pair_distances(x)
        dvals = self._pair_derivs(r)
        out = np.zeros((npart, 3, self.d, self.d))
        for idx, (i, j) in enumerate(self._pairs):
            if n not in (i, j):
                continue
            k = j if n == i else i
            e = geometry.pair_direction(x, n, k)
            out[n] += 0.5 * e[:, None, None] * dvals[None, :, :, idx]
            out[k] -= 0.5 * e[:, None, None] * dvals[None, :, :, idx]
        return out


def make_scalar_pair_model(pair, n_particles):
    """Scalar (d=1) potential V(x) = sum over pairs of ``pair``."""
    return PairSumPotential([[pair]], n_particles)


def make_two_state_model(phi1, gap, coupling, n_particles, extra_gap=None):
    """Two-state model [[sum phi1, sum c], [sum c, sum phi1 + gap terms]].

    ``gap`` is the constant per-pair diagonal offset and must be positive so
    the eigenvalue gap stays bounded below; ``extra_gap`` may add a
    nonnegative pair profile on top.
    """
    if gap <= 0:
        raise InvalidParameterError("two-state gap must be positive")
    phi2 = SumPair(phi1, Constant(gap))
    if extra_gap is not None:
        phi2 = SumPair(phi2, extra_gap)
    entries = [[phi1, coupling], [coupling, phi2]]
    return PairSumPotential(entries, n_particles)


# ---------------------------------------------------------------------------
# eigen machinery

@dataclass
class EigenData:
    """Ascending eigenvalues, sign-fixed unitary eigenvectors, smallest gap."""

    lambdas: np.ndarray
    psi: np.ndarray
    gap_min: float


def _fix_signs(psi):
    """Make each column's largest-magnitude entry real-positive."""
    psi = psi.copy()
    for k in range(psi.shape[1]):
        i = int(np.argmax(np.abs(psi[:, k])))
        phase = psi[i, k] / abs(psi[i, k])
        psi[:, k] = psi[:, k] / phase
    if np.isrealobj(psi) or np.allclose(psi.imag, 0.0):
        psi = psi.real.astype(float, copy=False)
    return psi


def eigendecompose(v, gap_tol=GAP_TOL):
    """Eigenpairs of a Hermitian matrix with deterministic sign fixing.

    Raises
    ------
    DegenerateSpectrumError
        If an adjacent eigenvalue gap falls below ``gap_tol``.
    """
    v = np.asarray(v)
    lam, psi = np.linalg.eigh(v)
    if len(lam) > 1:
        gap_min = float(np.min(np.diff(lam)))
        if gap_min < gap_tol:
            raise DegenerateSpectrumError(
                f"adjacent eigenvalue gap {gap_min:.3e} below {gap_tol:.1e}")
    else:
        gap_min = np.inf
    return EigenData(lambdas=lam, psi=_fix_signs(psi), gap_min=gap_min)


def surface_partition(v_pot, x, eig):
    """Per-particle eigenvalue shares lambda_k^n = <psi_k, V^n psi_k>, (N, d)."""
    n = v_pot.n_particles
    d = v_pot.d
    out = np.empty((n, d))
    for i in range(n):
        vn = v_pot.part(x, i)
        out[i] = np.real(np.einsum("ik,ij,jk->k", eig.psi.conj(), vn, eig.psi))
    return out


def eigenvector_derivatives(v_pot, x, eig):
    """All coordinate derivatives of the eigenvector matrix, (N, 3, d, d).

    Column k of each (d, d) slice is the derivative of psi_k with the
    psi_k-component removed (the normalization gauge).
    """
    dv = v_pot.deriv(x)  # (N, 3, d, d)
    return _psi_derivatives(dv, eig.lambdas, eig.psi)


def _psi_derivatives(dv, lam, psi):
    """First-order eigenvector derivatives for derivative matrices ``dv``.

    ``dv`` has shape (..., d, d).  Returns the same leading shape.  Uses the
    perturbation formula d psi_k = sum_{l != k} psi_l <psi_l|dV|psi_k> /
    (lambda_k - lambda_l).
    """
    d = len(lam)
    if d == 1:
        return np.zeros(dv.shape, dtype=psi.dtype)
    c = np.einsum("il,...ij,jk->...lk", psi.conj(), dv, psi)
    denom = lam[None, :] - lam[:, None]  # lambda_k - lambda_l at (l, k)
    with np.errstate(divide="ignore", invalid="ignore"):
        w = np.where(np.eye(d, dtype=bool), 0.0, 1.0 / denom)
    coef = c * w
    return np.einsum("il,...lk->...ik", psi, coef)


def surface_gradient(v_pot, x, eig, k):
    """Hellmann-Feynman gradient of lambda_k, shape (N, 3)."""
    dv = v_pot.deriv(x)
    return np.real(np.einsum("i,ncij,j->nc",
                             eig.psi[:, k].conj(), dv, eig.psi[:, k]))


def per_particle_gradient(v_pot, x, eig, k, n):
    """Configuration gradient of lambda_k^n, shape (N, 3)."""
    dpsi = eigenvector_derivatives(v_pot, x, eig)
    return _per_particle_gradient(v_pot, x, eig, k, n, dpsi)


def _per_particle_gradient(v_pot, x, eig, k, n, dpsi):
    vn = v_pot.part(x, n)
    dvn = v_pot.part_deriv(x, n)  # (N, 3, d, d)
    psi_k = eig.psi[:, k]
    term1 = np.real(np.einsum("i,ncij,j->nc", psi_k.conj(), dvn, psi_k))
    # (d_i psi_k)* V^n psi_k + psi_k* V^n (d_i psi_k) = 2 Re(psi_k* V^n d_i psi_k)
    term2 = 2.0 * np.real(np.einsum("i,ij,ncj->nc",
                                    psi_k.conj(), vn, dpsi[:, :, :, k]))
    return term1 + term2


def per_particle_gradients_all(v_pot, x, eig, k):
    """grad_{x^m} lambda_k^n for all (n, m), shape (N, N, 3)."""
    dpsi = eigenvector_derivatives(v_pot, x, eig)
    n = v_pot.n_particles
    out = np.empty((n, n, 3))
    for i in range(n):
        out[i] = _per_particle_gradient(v_pot, x, eig, k, i, dpsi)
    return out
