"""Reference numpy implementations of the hot kernels.

The compiled module ``_ckernels`` implements the same functions; the two are
kept in agreement by the backend parity tests.
"""

from __future__ import annotations

import numpy as np


def smoothstep_cutoff(r: np.ndarray, r0: float, r1: float) -> tuple[np.ndarray, np.ndarray]:
    """``zeta = 1 - s((r - r0) / (r1 - r0))`` with ``s(t) = 3t^2 - 2t^3``, and ``dzeta/dr``."""
    width = r1 - r0
    t = np.clip((r - r0) / width, 0.0, 1.0)
    zeta = 1.0 - t * t * (3.0 - 2.0 * t)
    dzeta = -6.0 * t * (1.0 - t) / width
    return zeta, dzeta


def lens_tail_inner(z: np.ndarray, H: float, L: float, beta: float, nd: float,
                    nodes: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Integral along ``nu`` of the scalar tail integrand of the lens field.

    ``z`` holds cross-section points with nonnegative coordinates (the first
    one is ``x . nu_perp_1``); the tail below the lens is cut by ``{x_d > 0}``
    and by the cutoff support ``|x| < 4L``.  ``nodes, weights`` is a
    Gauss-Legendre rule on [0, 1] for the cutoff annulus.
    """
    n = z.shape[1]
    s = z.sum(axis=1)
    rho2 = np.einsum("ij,ij->i", z, z)
    g2 = 4.0 * H * H * n / (L * L)
    hi = -H * (1.0 - s / L)
    lo = -np.sqrt(np.maximum(16.0 * L * L - rho2, 0.0))
    if nd > 0:
        lo = np.maximum(lo, -z[:, 0] * beta / nd)
    elif beta <= 0:
        return np.zeros(len(z))
    zc = -np.sqrt(np.maximum(4.0 * L * L - rho2, 0.0))
    inner = g2 * np.clip(hi - np.maximum(lo, zc), 0.0, None)
    a_lo, a_hi = lo, np.minimum(hi, zc)
    ln = np.clip(a_hi - a_lo, 0.0, None)
    zd = a_lo[:, None] + ln[:, None] * nodes[None, :]
    r = np.sqrt(rho2[:, None] + zd * zd)
    zeta, dz = smoothstep_cutoff(r, 2.0 * L, 4.0 * L)
    w = 2.0 * H / L * s - 2.0 * H
    gx = 2.0 * H / L * s
    f = zeta * zeta * g2 + 2.0 * zeta * dz * (w * gx)[:, None] / r + (w * w)[:, None] * dz * dz
    return inner + ln * (f @ weights)


def laplace_apply(w: np.ndarray, weights: list[np.ndarray]) -> np.ndarray:
    """``diff^T (omega * diff w)`` summed over axes; ``weights[k]`` has the edge
    shape of axis ``k``."""
    y = np.zeros_like(w)
    for k, om in enumerate(weights):
        q = om * np.diff(w, axis=k)
        lo = [slice(None)] * w.ndim
        hi = [slice(None)] * w.ndim
        lo[k] = slice(0, -1)
        hi[k] = slice(1, None)
        y[tuple(lo)] -= q
        y[tuple(hi)] += q
    return y
