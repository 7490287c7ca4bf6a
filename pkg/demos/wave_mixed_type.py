"""A wave equation that turns into a heat equation halfway across the domain.

``eta`` vanishes on the right half and ``sigma`` on the left half; the
source switches on at t = 1/2 and the solution stays exactly zero before.

Run with ``python demos/wave_mixed_type.py``.
"""

import numpy as np

from twoscale import CoefficientField, TorusGrid
from twoscale.evol import WeightedTimeGrid
from twoscale.unfold import UnfoldConfig
from twoscale.wave import WaveProblem, solve_wave_eps

A = CoefficientField.layered(TorusGrid(1, 8), 1.0, 4.0)
eta = lambda x, y: np.where(x[..., 0] < 0.5, 1.0, 0.0)
sigma = lambda x, y: np.where(x[..., 0] < 0.5, 0.0, 1.0)


def f(t, x):
    return np.where(t >= 0.5, np.sin(np.pi * (t - 0.5)) ** 2, 0.0) * np.sin(np.pi * x[..., 0])


p = WaveProblem(A, eta, sigma, f, UnfoldConfig(128, 4), WeightedTimeGrid(2.0, 100, 1.0))
s = solve_wave_eps(p)
onset = int(np.argmax(p.time.t >= 0.5))
print("zero before onset:", bool(np.all(s.u[:onset] == 0)))
print("solution bound holds:", s.checks["bound_ok"], " largest step residual:", s.residual)
print("max |w| at final time:", np.abs(s.w[-1]).max())
