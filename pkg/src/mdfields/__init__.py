"""Mollified continuum fields from molecular dynamics on adiabatic surfaces.

Subpackage map:

- ``geometry``: pair distances, Jacobians, minimal-norm gradient lifts
- ``mollifier``: compactly supported weight and bond line integrals
- ``potential``: matrix-valued potentials, eigenpairs, per-particle splits
- ``nonlinear_eigen``: mass-corrected surfaces from the nonlinear eigenproblem
- ``dynamics``: velocity-Verlet dynamics on a chosen surface
- ``fields``: density / momentum / energy / stress / heat-flux estimators
- ``ensemble``: local grand-canonical Gibbs sampling and matching
- ``conservation``: numerical certification of the conservation laws
- ``quantum``: desk-scale 1D quantum oracle (Weyl quantization, Egorov limit)
- ``cli``: configuration-driven command line front end
"""

__version__ = "0.1.0"
