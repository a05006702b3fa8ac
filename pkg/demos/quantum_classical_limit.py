"""Desk-scale quantum checks: commutator reduction and the classical limit.

On a 1D periodic grid with effective Planck constant hbar = M^{-1/2}, the
commutator of Weyl-quantized symbols reduces to the Poisson bracket exactly
for momentum degrees <= 2 and picks up an O(hbar^2) remainder at degree 3.
Propagating a wavepacket and comparing observable expectations against the
classical flow shows the O(1/M) convergence rate.

Run:  python3 demos/quantum_classical_limit.py
"""

import numpy as np

from mdfields import quantum

L = 4.0 * np.pi

# -- commutator vs Poisson bracket --------------------------------------------

grid = quantum.QuantumGrid(-L / 2.0, L, 256)
hbar = quantum.hbar_eff(1000.0)
v = quantum.trig_coeff(L, a0=1.0, cos_terms=[(1, -1.0)])
h = quantum.kinetic_plus_potential(v)
c = quantum.trig_coeff(L, a0=0.3, cos_terms=[(1, 0.4)], sin_terms=[(2, 0.2)])

print(f"hbar_eff = {hbar:.4f} on a {grid.n}-point grid")
print("\ndegree   rel op-norm of (i/hbar)[H, A] - Op({H, A})")
for deg in (0, 1, 2):
    sym = quantum.Symbol([quantum.const_coeff(0.0)] * deg + [c])
    rep = quantum.commutator_check(h, sym, grid, hbar)
    print(f"   {deg}     {rep['rel_op_norm']:.3e}")

# degree 3 breaks the exact reduction: the O(hbar^2) Moyal term survives
v2 = quantum.trig_coeff(L, a0=1.0, cos_terms=[(2, -1.0)])
h2 = quantum.kinetic_plus_potential(v2)
a3 = quantum.Symbol([quantum.const_coeff(0.0)] * 3
                    + [quantum.const_coeff(1.0)])
rep = quantum.commutator_check(h2, a3, grid, hbar)
print(f"   3     {rep['rel_packet_norm']:.3e}  (packet scale, negative "
      "control)")

# -- Egorov convergence --------------------------------------------------------

masses = [100.0, 1000.0, 10_000.0]
a = quantum.Symbol([quantum.trig_coeff(L, cos_terms=[(1, 0.5)]),
                    quantum.const_coeff(0.3),
                    quantum.const_coeff(1.0)])
rep = quantum.egorov_test(v, a, masses, x0_packet=0.4, p0_packet=0.5,
                          t_final=1.0, grid_x0=-L / 2.0, grid_length=L)
print("\n      M     grid    |quantum - classical|")
for m, e, g in zip(rep["masses"], rep["errors"], rep["grid_sizes"]):
    print(f"  {m:7.0f}   {g:5d}    {e:.3e}")
print(f"fitted log-log slope: {rep['slope']:.3f}  (O(1/M) means -1)")

# harmonic control: quadratic flows transport Gaussians exactly, so the
# classical average matches to solver accuracy at every mass
omega = 1.0
vh = quantum.Coefficient(lambda x: 0.5 * omega ** 2 * x ** 2,
                         lambda x: omega ** 2 * x)
ah = quantum.Symbol([quantum.Coefficient(lambda x: x,
                                         lambda x: np.ones_like(x))])
err, _, _, _ = quantum.egorov_error(vh, ah, mass=1000.0, x0_packet=0.5,
                                    p0_packet=0.3, t_final=1.0,
                                    grid_x0=-L / 2.0, grid_length=L)
print(f"harmonic control error at M = 1000: {err:.3e}")
