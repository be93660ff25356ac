"""Numerics for the long-time dynamics of 1-equivariant harmonic map heat flow.

Modules: ``kernels`` (steady profiles, cutoff, linearized kernels),
``heat4d`` (radial heat semigroup in R^4), ``mu_dynamics`` (scale
dynamics), ``corrector`` (elliptic corrector), ``ansatz`` (approximate
solution and its error), ``pde`` (direct simulation), ``rates`` (rate fits),
``constraints`` (exponent feasibility) and ``cli``.
"""

__version__ = "0.1.0"
