"""Discrete minimization of ``int |grad u - chi G|^2`` on a truncated half-space box.

Unknowns live on grid nodes.  On each cell the gradient is represented by
the forward differences along its edges; the cell energy is

    h^d / 2^(d-1) * sum_k sum_{edges e of the cell along k} (D_e w - chi_c nu_k)^2,

which is exact for fields that are affine along every edge, in particular
the compatible slab ``w = min(x_d, t)``.  Because every row of ``G = a (x) nu``
is a multiple of ``nu``, the vector minimum is ``|a|^2`` times the scalar
minimum with target ``nu``.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
import scipy.linalg
import scipy.sparse as sp

from . import kernels
from .core import RankOneTensor
from .errors import CapabilityError, ParameterError, ValidationError
from .geometry import Grid, rasterize
from .voxel import VoxelMask, exposed_faces

MAX_DENSE_NODES_2D = 24 ** 2
MAX_DENSE_NODES = 4096


@dataclass(frozen=True, eq=False)
class ScalarField:
    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != self.grid.node_shape:
            raise ValidationError("field size does not match the grid nodes")
        if not np.all(np.isfinite(v)):
            raise ValidationError("field has non-finite values")
        object.__setattr__(self, "values", v)


@dataclass(frozen=True)
class SolveReport:
    energy: float
    iterations: int
    residual: float
    converged: bool
    tolerance: float = 0.0

    def to_dict(self) -> dict:
        return asdict(self)


def grid_of(mask: VoxelMask) -> Grid:
    return Grid(mask.h, mask.origin, mask.shape)


def _check_compatible(mask: VoxelMask, grid: Grid) -> None:
    if mask.shape != grid.shape or mask.h != grid.h or not np.array_equal(mask.origin, grid.origin):
        raise ValidationError("mask is not defined on this grid")


def edge_weights(grid: Grid) -> list[np.ndarray]:
    """``omega_e = (#cells containing e) / 2^(d-1)`` for the edges along each axis."""
    d = grid.d
    out = []
    for k in range(d):
        w = np.ones(1)
        for j in range(d):
            if j == k:
                f = np.ones(grid.shape[j])
            else:
                f = np.ones(grid.shape[j] + 1)
                f[0] = f[-1] = 0.5
            w = np.multiply.outer(w, f)
        out.append(w.reshape([grid.shape[j] + (0 if j == k else 1) for j in range(d)]))
    return out


def _cell_to_edge(chi: np.ndarray, k: int) -> np.ndarray:
    """``sum_{cells c containing e} chi_c / 2^(d-1)`` for edges along axis ``k``."""
    d = chi.ndim
    acc = chi.astype(float)
    for j in range(d):
        if j == k:
            continue
        pad = [(0, 0)] * d
        pad[j] = (1, 1)
        p = np.pad(acc, pad)
        lo = [slice(None)] * d
        hi = [slice(None)] * d
        lo[j] = slice(0, -1)
        hi[j] = slice(1, None)
        acc = 0.5 * (p[tuple(lo)] + p[tuple(hi)])
    return acc


def discrete_energy(w: np.ndarray, chi: np.ndarray, target, h: float) -> float:
    """Sum of squared edge residuals ``h^d/2^(d-1) sum_c sum_e (D_e w - chi_c t_k)^2``."""
    d = chi.ndim
    target = np.asarray(target, dtype=float)
    total = 0.0
    cells = chi.shape
    chi_f = chi.astype(float)
    for k in range(d):
        D = np.diff(w, axis=k) / h
        others = [j for j in range(d) if j != k]
        for bits in range(2 ** (d - 1)):
            sl = [slice(None)] * d
            sl[k] = slice(0, cells[k])
            for b, j in enumerate(others):
                off = (bits >> b) & 1
                sl[j] = slice(off, off + cells[j])
            r = D[tuple(sl)] - chi_f * target[k]
            total += float(np.vdot(r, r))
    return total * h ** d / 2 ** (d - 1)


def _apply(w: np.ndarray, weights) -> np.ndarray:
    return kernels.laplace_apply(w, weights)


def _rhs(chi: np.ndarray, nu: np.ndarray, h: float, node_shape) -> np.ndarray:
    """``h diff^T b`` with ``b_e = nu_k sum_c chi_c / 2^(d-1)``."""
    d = chi.ndim
    y = np.zeros(node_shape)
    for k in range(d):
        q = nu[k] * _cell_to_edge(chi, k)
        lo = [slice(None)] * d
        hi = [slice(None)] * d
        lo[k] = slice(0, -1)
        hi[k] = slice(1, None)
        y[tuple(lo)] -= q
        y[tuple(hi)] += q
    return h * y


def solve_scalar(chi: np.ndarray, nu, grid: Grid, tol: float = 1e-10, max_iter: int | None = None):
    """Conjugate gradients for the scalar problem; returns ``(w, iterations, residual, converged)``."""
    nu = np.asarray(nu, dtype=float)
    weights = edge_weights(grid)
    b = _rhs(chi, nu, grid.h, grid.node_shape)
    b -= b.mean()
    bn = float(np.linalg.norm(b))
    w = np.zeros(grid.node_shape)
    if bn == 0.0:
        return w, 0, 0.0, True
    max_iter = 1000 + 50 * max(grid.node_shape) if max_iter is None else max_iter
    r = b.copy()
    p = r.copy()
    rr = float(np.vdot(r, r))
    it = 0
    res = 1.0
    while it < max_iter:
        Ap = _apply(p, weights)
        Ap -= Ap.mean()
        alpha = rr / float(np.vdot(p, Ap))
        w += alpha * p
        r -= alpha * Ap
        r -= r.mean()
        rr_new = float(np.vdot(r, r))
        it += 1
        res = math.sqrt(rr_new) / bn
        if res <= tol:
            break
        p = r + (rr_new / rr) * p
        p -= p.mean()
        rr = rr_new
    w -= w.mean()
    return w, it, res, res <= tol


def minimize_elastic(mask: VoxelMask, G: RankOneTensor, grid: Grid | None = None, tol: float = 1e-10,
                     max_iter: int | None = None, return_field: bool = False):
    """Discrete minimum of the elastic energy for the phase mask ``mask``."""
    grid = grid_of(mask) if grid is None else grid
    _check_compatible(mask, grid)
    if not 1e-12 <= tol <= 1e-4:
        raise ParameterError("tol must lie in [1e-12, 1e-4]")
    if G.d != grid.d:
        raise ValidationError("G and grid dimensions differ")
    chi = mask.occupancy
    w, it, res, ok = solve_scalar(chi, G.nu, grid, tol, max_iter)
    energy = G.norm ** 2 * discrete_energy(w, chi, G.nu, grid.h)
    report = SolveReport(max(energy, 0.0), it, res, ok, tol)
    if return_field:
        return report, ScalarField(grid, w)
    return report


def assemble(grid: Grid) -> sp.csr_matrix:
    """Sparse ``diff^T Omega diff`` on the grid nodes."""
    d = grid.d
    ns = grid.node_shape
    idx = np.arange(int(np.prod(ns))).reshape(ns)
    rows, cols, vals = [], [], []
    for k, om in enumerate(edge_weights(grid)):
        lo = [slice(None)] * d
        hi = [slice(None)] * d
        lo[k] = slice(0, -1)
        hi[k] = slice(1, None)
        i, j, o = idx[tuple(lo)].ravel(), idx[tuple(hi)].ravel(), om.ravel()
        rows += [i, j, i, j]
        cols += [i, j, j, i]
        vals += [o, o, -o, -o]
    n = idx.size
    return sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n))


def _dense_cap(d: int) -> int:
    return MAX_DENSE_NODES_2D if d == 2 else MAX_DENSE_NODES


def _bordered_solve(A: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Solve ``A w = b`` with ``sum w = 0`` by bordering with the constant vector."""
    n = len(b)
    K = np.zeros((n + 1, n + 1))
    K[:n, :n] = A
    K[:n, n] = 1.0
    K[n, :n] = 1.0
    sol = scipy.linalg.lu_solve(scipy.linalg.lu_factor(K), np.concatenate([b, [0.0]]))
    return sol[:n]


def dense_oracle(mask: VoxelMask, G: RankOneTensor, grid: Grid | None = None) -> float:
    """Exact discrete minimum by a direct factorization (small grids only)."""
    grid = grid_of(mask) if grid is None else grid
    _check_compatible(mask, grid)
    n = int(np.prod(grid.node_shape))
    if n > _dense_cap(grid.d):
        raise CapabilityError(f"dense oracle limited to {_dense_cap(grid.d)} nodes, grid has {n}")
    chi = mask.occupancy
    if not chi.any():
        return 0.0
    A = assemble(grid).toarray()
    b = _rhs(chi, G.nu, grid.h, grid.node_shape).ravel()
    w = _bordered_solve(A, b).reshape(grid.node_shape)
    return G.norm ** 2 * discrete_energy(w, chi, G.nu, grid.h)


def dense_oracle_vector(mask: VoxelMask, Gmat: np.ndarray, grid: Grid | None = None) -> float:
    """Direct minimum of the full ``d``-component problem for an arbitrary matrix well.

    All components are assembled into one block system and solved together,
    without using the rank-one structure.
    """
    grid = grid_of(mask) if grid is None else grid
    _check_compatible(mask, grid)
    Gmat = np.asarray(Gmat, dtype=float)
    d = grid.d
    n = int(np.prod(grid.node_shape))
    if n * d > 2 * _dense_cap(d):
        raise CapabilityError("grid too large for the vector oracle")
    chi = mask.occupancy
    A = assemble(grid).toarray()
    big = np.kron(np.eye(d), A)
    K = np.zeros((d * n + d, d * n + d))
    K[: d * n, : d * n] = big
    for i in range(d):
        K[i * n:(i + 1) * n, d * n + i] = 1.0
        K[d * n + i, i * n:(i + 1) * n] = 1.0
    rhs = np.concatenate([_rhs(chi, Gmat[i], grid.h, grid.node_shape).ravel() for i in range(d)] + [np.zeros(d)])
    sol = scipy.linalg.lu_solve(scipy.linalg.lu_factor(K), rhs)
    total = 0.0
    for i in range(d):
        total += discrete_energy(sol[i * n:(i + 1) * n].reshape(grid.node_shape), chi, Gmat[i], grid.h)
    return total


def discrete_vector_energy(U: np.ndarray, chi: np.ndarray, Gmat: np.ndarray, h: float) -> float:
    """Discrete energy of a node-sampled vector field ``U`` (node_shape + (d,))."""
    return sum(discrete_energy(U[..., i], chi, Gmat[i], h) for i in range(U.shape[-1]))


def evaluate_field_on_grid(fld, mask: VoxelMask, G: RankOneTensor, grid: Grid | None = None) -> float:
    """Discrete energy of a construction sampled at the grid nodes."""
    grid = grid_of(mask) if grid is None else grid
    _check_compatible(mask, grid)
    nodes = grid.nodes().reshape(-1, grid.d)
    u, _ = fld.evaluate(nodes)
    U = u.reshape(grid.node_shape + (grid.d,))
    return discrete_vector_energy(U, mask.occupancy, G.matrix, grid.h)


def grid_perimeter(mask: VoxelMask) -> float:
    """Relative perimeter of the mask: faces inside ``{x_d > 0}`` times ``h^(d-1)``."""
    interior, _ = exposed_faces(mask.occupancy, on_floor=mask.touches_floor)
    return interior * mask.h ** (mask.d - 1)


def construction_grid(shape, h: float) -> Grid:
    """Truncation box ``[-4r, 4r]^(d-1) x [0, 4r]`` for a shape of circumradius ``r``."""
    return Grid.around(4.0 * shape.circumradius, h, shape.d)


def admissibility_chain(fld, h: float, tol: float = 1e-10) -> dict:
    """Discrete minimum, discrete construction energy and the closed-form bound
    for one construction on its truncation box."""
    from .constructions import construction_energy

    shape = fld.shape
    grid = construction_grid(shape, h)
    mask = rasterize(shape, grid)
    sol = minimize_elastic(mask, fld.G, grid, tol)
    disc = evaluate_field_on_grid(fld, mask, fld.G, grid)
    closed = construction_energy(fld, shape, fld.G, "ClosedForm")
    return {"numerical_min": sol.energy, "discrete_field": disc, "closed_form_bound": closed.elastic_bound,
            "converged": sol.converged, "iterations": sol.iterations, "cells": int(np.prod(grid.shape))}
