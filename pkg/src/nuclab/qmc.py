"""Randomized quasi-Monte Carlo integration with a fixed stopping rule.

Each estimate averages ``replicates`` independently scrambled Sobol' point sets
of size ``2**m`` and doubles ``2**m`` until ``3 * stderr <= tol * |mean|``.
Scrambling seeds derive from ``(seed, replicate)`` so results are reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import qmc


@dataclass(frozen=True)
class QMCResult:
    value: float
    stderr: float
    n_points: int
    converged: bool


def rqmc_integrate(f, dim: int, tol: float, seed: int = 0, *, m_start: int = 10,
                   m_max: int = 20, replicates: int = 8) -> QMCResult:
    """Integrate ``f`` over the unit cube ``[0, 1)**dim``.

    ``f`` maps an ``(N, dim)`` array to ``N`` values.
    """
    total = 0
    for m in range(m_start, m_max + 1):
        estimates = np.empty(replicates)
        for r in range(replicates):
            rng = np.random.default_rng([seed, r, m])
            pts = qmc.Sobol(d=dim, scramble=True, seed=rng).random_base2(m)
            estimates[r] = float(np.mean(f(pts)))
        total += replicates << m
        mean = float(np.mean(estimates))
        stderr = float(np.std(estimates, ddof=1) / np.sqrt(replicates))
        if stderr == 0.0 or 3.0 * stderr <= tol * abs(mean):
            return QMCResult(mean, stderr, total, True)
    return QMCResult(mean, stderr, total, False)


def orthant_simplex(u: np.ndarray, L: float) -> tuple[np.ndarray, np.ndarray]:
    """Map cube points onto ``{z_i > 0, sum(z) < L}`` in ``n = u.shape[1]`` dims.

    Uses ``z = s * y`` with ``s = L u_0`` and stick-breaking for ``y`` on the
    probability simplex; returns ``(z, jacobian)``.  The map is smooth in the
    open cube, which keeps QMC convergence fast for piecewise-smooth integrands.
    """
    n = u.shape[1]
    s = L * u[:, 0]
    jac = L * s ** (n - 1)
    y = np.empty_like(u)
    rest = np.ones(u.shape[0])
    for i in range(1, n):
        v = u[:, i]
        y[:, i - 1] = rest * v
        jac = jac * (1.0 - v) ** (n - 1 - i)
        rest = rest * (1.0 - v)
    y[:, n - 1] = rest
    return s[:, None] * y, jac
