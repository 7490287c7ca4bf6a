"""Conductivity in a layered dielectric produces a memory term in the limit.

The closed-form correctors (matrix exponentials in time) are compared
with the Galerkin limit solver for proportional damping, where both
coincide, and for constant damping, where the closed form only solves
the averaged corrector equation.

Run with ``python demos/maxwell_memory.py``.
"""

import numpy as np

from twoscale import CoefficientField, TorusGrid
from twoscale.evol import WeightedTimeGrid
from twoscale.maxwell import MaxwellProblem, memory_formula_residual, solve_maxwell_homogenized
from twoscale.unfold import UnfoldConfig


def f(t, x, c):
    bump = np.where(t < 1, np.sin(np.pi * t) ** 2, 0.0)
    return 10 * bump * np.sin(np.pi * x[..., 0]) * np.sin(np.pi * x[..., 1]) * np.where(c == 0, 1.0, 0.5)


t = TorusGrid(1, 8, freq=((1, 0),))
eta = CoefficientField.layered(t, 1.0, 4.0, n=3)
mu = CoefficientField.constant(t, np.eye(3))
for name, sigma in (("sigma = 2 eta", CoefficientField(2 * eta.values, t)),
                    ("sigma = 2 I", CoefficientField.constant(t, 2 * np.eye(3)))):
    for n_t in (40, 80):
        p = MaxwellProblem(eta, sigma, mu, f, None, UnfoldConfig(32, 4), WeightedTimeGrid(2.0, n_t, 1.0))
        r = memory_formula_residual(p, solve_maxwell_homogenized(p))
        print(f"{name:14s} n_t={n_t:4d} residual {r['residual']:.2e} "
              f"formula vs solver {r['formula_vs_solver']:.2e}")
