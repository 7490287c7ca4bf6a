"""Effective coefficients of a few periodic and random media.

Run with ``python demos/cell_problems.py``.
"""

import numpy as np

from twoscale import CoefficientField, TorusGrid, homogenize
from twoscale.cell import ProbabilityModel, monte_carlo_ahom

# A laminate: the effective coefficient across layers is the harmonic mean.
a = CoefficientField.layered(TorusGrid(1, 256), 1.0, 4.0)
print("layered 1D a_hom:", homogenize(a)[0].matrix[0, 0], "(harmonic mean 1.6)")

# A two-phase checkerboard is self-dual, so its effective coefficient is sqrt(1 * 4).
cb = CoefficientField.checkerboard(TorusGrid(2, 128), 1.0, 4.0)
tensor, correctors = homogenize(cb)
print("checkerboard a_hom diagonal:", np.diag(tensor.matrix).real)
print("corrector CG iterations:", [c.iterations for c in correctors])

# Random checkerboard: average periodized tensors over independent samples.
model = ProbabilityModel("checkerboard", 16, 1.0, 4.0, seed=1)
mc = monte_carlo_ahom(model, 32)
print("random checkerboard mean:", np.diag(mc.matrix).real, "+-", np.diag(mc.ci_halfwidth))
