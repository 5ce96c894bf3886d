"""Inclusion shapes, their measures, the tail factors theta, the tilted cages
used by the localized lower bound, and rasterization onto voxel grids."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import polygon
from .core import basis_vector, is_degenerate, unit_ball_volume
from .errors import ParameterError, ResolutionError, ValidationError
from .qmc import QMCResult, orthant_simplex, rqmc_integrate
from .voxel import VoxelMask

# ---------------------------------------------------------------------------
# grids


@dataclass(frozen=True, eq=False)
class Grid:
    """Axis-aligned cell grid with lower corner ``origin`` in ``{x_d >= 0}``."""

    h: float
    origin: np.ndarray
    shape: tuple[int, ...]

    def __post_init__(self):
        origin = np.array(self.origin, dtype=float).reshape(-1)
        shape = tuple(int(n) for n in self.shape)
        if len(shape) != origin.size or len(shape) < 2:
            raise ValidationError("grid origin and shape disagree in dimension")
        if min(shape) < 8:
            raise ValidationError("grid needs at least 8 cells per axis")
        if not self.h > 0:
            raise ValidationError("grid spacing must be positive")
        if origin[-1] < 0:
            raise ValidationError("grid must lie in the closed half-space x_d >= 0")
        origin.setflags(write=False)
        object.__setattr__(self, "origin", origin)
        object.__setattr__(self, "shape", shape)
        object.__setattr__(self, "h", float(self.h))

    @property
    def d(self) -> int:
        return len(self.shape)

    @property
    def node_shape(self) -> tuple[int, ...]:
        return tuple(n + 1 for n in self.shape)

    @property
    def upper(self) -> np.ndarray:
        return self.origin + self.h * np.array(self.shape)

    def nodes(self) -> np.ndarray:
        axes = [self.origin[k] + self.h * np.arange(n + 1) for k, n in enumerate(self.shape)]
        return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)

    @classmethod
    def around(cls, radius: float, h: float, d: int) -> "Grid":
        """Box ``[-radius, radius]^(d-1) x [0, radius]`` snapped outward to ``h``."""
        n_side = max(8, int(math.ceil(radius / h - 1e-9)))
        shape = (2 * n_side,) * (d - 1) + (max(8, n_side),)
        origin = np.array([-n_side * h] * (d - 1) + [0.0])
        return cls(h, origin, shape)

    def mask(self, occupancy) -> VoxelMask:
        return VoxelMask(self.h, self.origin, np.asarray(occupancy, dtype=bool))


# ---------------------------------------------------------------------------
# shapes


@dataclass(frozen=True)
class HalfBall:
    """Half-ball of radius ``R`` centred at the origin on ``{x_d = 0}``."""

    R: float
    d: int = 2

    def __post_init__(self):
        if not self.R > 0:
            raise ParameterError("radius must be positive")
        if self.d < 2:
            raise ParameterError("d must be at least 2")

    @property
    def volume(self) -> float:
        return unit_ball_volume(self.d) * self.R ** self.d / 2

    @property
    def perimeter(self) -> float:
        """Hemisphere area, the relative perimeter in the open half-space."""
        return self.d * unit_ball_volume(self.d) * self.R ** (self.d - 1) / 2

    @property
    def trace_area(self) -> float:
        """Measure of the flat disc on ``{x_d = 0}``."""
        return unit_ball_volume(self.d - 1) * self.R ** (self.d - 1)

    @property
    def min_feature(self) -> float:
        return self.R

    @property
    def circumradius(self) -> float:
        return self.R

    def contains(self, x) -> np.ndarray:
        x = np.atleast_2d(x)
        return (np.einsum("ij,ij->i", x, x) < self.R ** 2) & (x[:, -1] > 0)


def halfball_from_volume(mu: float, d: int) -> HalfBall:
    if not mu > 0:
        raise ParameterError("volume must be positive")
    R = (2.0 / unit_ball_volume(d)) ** (1.0 / d) * mu ** (1.0 / d)
    return HalfBall(R, d)


def orient_2d(nu) -> tuple[np.ndarray, int, bool]:
    """Bring ``nu`` to the branch ``nu_1 <= 0 <= nu_2``.

    Returns ``(nu', sign, mirror)``: ``nu' = S (sign * nu)`` where ``S`` flips
    the first coordinate when ``mirror``.  ``(a, nu) -> (sign*a, sign*nu)``
    leaves ``a (x) nu`` unchanged, and the mirror is a symmetry of the
    half-plane, so fields transform back by ``u(x) = u'(S x)``.
    """
    nu = np.asarray(nu, dtype=float)
    sign = 1
    if nu[1] < 0:
        nu, sign = -nu, -1
    mirror = bool(nu[0] > 0)
    if mirror:
        nu = np.array([-nu[0], nu[1]])
    return nu, sign, mirror


def perp_2d(nu) -> np.ndarray:
    return np.array([-nu[1], nu[0]])


@dataclass(frozen=True, eq=False)
class Lens2D:
    """Upper half of the rhombus with diagonals ``2H`` along ``nu`` and ``2L``
    along ``nu_perp``, centred at the origin.

    ``nu`` is stored on the normalized branch ``nu_1 <= 0 <= nu_2``; the
    original direction is ``nu_in``.
    """

    H: float
    L: float
    nu_in: np.ndarray
    nu: np.ndarray = field(init=False)
    sign: int = field(init=False)
    mirror: bool = field(init=False)

    def __post_init__(self):
        if not (self.H > 0 and self.L > 0):
            raise ParameterError("H and L must be positive")
        if self.H > self.L * (1 + 1e-12):
            raise ParameterError(f"lens needs H <= L, got H={self.H}, L={self.L}")
        nu_in = np.array(self.nu_in, dtype=float).reshape(-1)
        if nu_in.size != 2 or abs(np.linalg.norm(nu_in) - 1) > 1e-12:
            raise ValidationError("Lens2D needs a unit 2-vector")
        nu, sign, mirror = orient_2d(nu_in)
        object.__setattr__(self, "nu_in", nu_in)
        object.__setattr__(self, "nu", nu)
        object.__setattr__(self, "sign", sign)
        object.__setattr__(self, "mirror", mirror)

    d = 2

    @property
    def nu_perp(self) -> np.ndarray:
        return perp_2d(self.nu)

    def to_frame(self, x) -> np.ndarray:
        """Map original coordinates to the normalized frame (self-inverse)."""
        x = np.array(x, dtype=float, copy=True)
        if self.mirror:
            x[..., 0] = -x[..., 0]
        return x

    @property
    def area(self) -> float:
        return self.H * self.L

    @property
    def volume(self) -> float:
        return self.area

    @property
    def perimeter(self) -> float:
        return 2.0 * math.hypot(self.H, self.L)

    @property
    def trace_area(self) -> float:
        """Length of the chord on ``{x_2 = 0}``."""
        n1, n2 = abs(self.nu[0]), self.nu[1]
        return 2.0 * self.H * self.L / (self.L * n1 + self.H * n2)

    @property
    def min_feature(self) -> float:
        return self.H

    @property
    def circumradius(self) -> float:
        return self.L

    def contains(self, x) -> np.ndarray:
        x = self.to_frame(np.atleast_2d(x))
        z1 = x @ self.nu_perp
        z2 = x @ self.nu
        return (np.abs(z1) < self.L) & (np.abs(z2) < self.H - self.H / self.L * np.abs(z1)) & (x[:, 1] > 0)

    # polygons in the normalized frame -----------------------------------

    def _upper(self, poly: np.ndarray) -> np.ndarray:
        return polygon.ensure_ccw(polygon.clip_halfplane(poly, [0.0, -1.0], 0.0))

    @property
    def rhombus(self) -> np.ndarray:
        n, p = self.nu, self.nu_perp
        return polygon.ensure_ccw(np.array([self.H * n, self.L * p, -self.H * n, -self.L * p]))

    @property
    def M(self) -> np.ndarray:
        return self._upper(self.rhombus)

    @property
    def M1(self) -> np.ndarray:
        return polygon.ensure_ccw(polygon.clip_halfplane(self.M, self.nu_perp, 0.0))

    @property
    def M2(self) -> np.ndarray:
        return polygon.ensure_ccw(polygon.clip_halfplane(self.M, -self.nu_perp, 0.0))

    def tail_polygon(self, radius: float | None = None) -> np.ndarray:
        """Tail region below the lower ``M_1`` edge, cut to the box of half-width
        ``radius`` (default ``4L``, beyond which every field vanishes)."""
        radius = 4.0 * self.L if radius is None else radius
        n, p = self.nu, self.nu_perp
        far = 4.0 * radius + self.H
        zs = [(0.0, -self.H), (self.L, 0.0), (self.L, -far), (0.0, -far)]
        poly = np.array([-z1 * p + z2 * n for z1, z2 in zs])
        poly = polygon.clip_halfplane(poly, [0.0, -1.0], 0.0)
        for k in range(2):
            for s in (1.0, -1.0):
                nrm = np.zeros(2)
                nrm[k] = s
                poly = polygon.clip_halfplane(poly, nrm, radius)
        if len(poly) < 3:
            return np.zeros((0, 2))
        return polygon.ensure_ccw(poly)

    @property
    def tail_area(self) -> float:
        """``L^2(T)`` for ``nu_2 > 0`` (the tail is an unbounded strip if ``nu_2 = 0``)."""
        n1, n2 = abs(self.nu[0]), self.nu[1]
        if n1 == 0.0:
            return 0.0
        if n2 == 0.0:
            return math.inf
        return self.L ** 3 * n1 ** 2 / (2 * n2 * (self.H * n2 + self.L * n1))


def theta_2d(nu) -> float:
    """Tail-volume factor ``min{1/(2 nu_2), 4} |nu_1|`` on the normalized branch."""
    nu, _, _ = orient_2d(nu)
    n1, n2 = abs(nu[0]), nu[1]
    first = 1.0 / (2.0 * n2) if n2 > 0 else math.inf
    return min(first, 4.0) * n1


def perp_frame(nu) -> np.ndarray:
    """Orthonormal basis (rows) of ``nu^perp`` whose first vector lies in
    ``span{nu, e_d}`` with nonnegative ``e_d`` component."""
    nu = np.asarray(nu, dtype=float)
    d = nu.size
    ed = basis_vector(d, d - 1)
    if is_degenerate(nu):
        first = basis_vector(d, 0)
    else:
        first = ed - (ed @ nu) * nu
        first = first / np.linalg.norm(first)
    basis = [nu, first]
    for i in range(d):
        v = basis_vector(d, i)
        for b in basis:
            v = v - (v @ b) * b
        nv = np.linalg.norm(v)
        if nv > 1e-8:
            basis.append(v / nv)
        if len(basis) == d:
            break
    return np.array(basis[1:])


def theta_general(d: int, nu, frame=None) -> float:
    """``min{1/|nu . e_d|, 1} |nu_perp_1 . e_d|``."""
    nu = np.asarray(nu, dtype=float)
    if nu.size != d:
        raise ValidationError("nu has the wrong dimension")
    frame = perp_frame(nu) if frame is None else np.asarray(frame)
    nd = abs(nu[-1])
    factor = min(1.0 / nd, 1.0) if nd > 0 else 1.0
    return factor * abs(frame[0][-1])


@dataclass(frozen=True, eq=False)
class LensD:
    """``d``-dimensional lens: the part in ``{x_d > 0}`` of
    ``{sum_i |z_i| / L + |z_d| / H < 1}`` where ``z_i = x . nu_perp_i`` and
    ``z_d = x . nu``.  ``nu`` is stored with ``nu_d >= 0``."""

    d: int
    H: float
    L: float
    nu_in: np.ndarray
    nu: np.ndarray = field(init=False)
    sign: int = field(init=False)
    frame: np.ndarray = field(init=False)

    def __post_init__(self):
        if self.d < 2:
            raise ParameterError("d must be at least 2")
        if not (self.H > 0 and self.L > 0):
            raise ParameterError("H and L must be positive")
        if self.H > self.L * (1 + 1e-12):
            raise ParameterError(f"lens needs H <= L, got H={self.H}, L={self.L}")
        nu_in = np.array(self.nu_in, dtype=float).reshape(-1)
        if nu_in.size != self.d or abs(np.linalg.norm(nu_in) - 1) > 1e-12:
            raise ValidationError("LensD needs a unit d-vector")
        sign = -1 if nu_in[-1] < 0 else 1
        nu = sign * nu_in
        frame = perp_frame(nu)
        frame.setflags(write=False)
        object.__setattr__(self, "nu_in", nu_in)
        object.__setattr__(self, "nu", nu)
        object.__setattr__(self, "sign", sign)
        object.__setattr__(self, "frame", frame)

    @property
    def beta(self) -> float:
        """``nu_perp_1 . e_d``, the only frame component off the boundary plane."""
        return float(self.frame[0][-1])

    @property
    def min_feature(self) -> float:
        return self.H

    @property
    def circumradius(self) -> float:
        return self.L

    @property
    def volume_coefficient(self) -> float:
        """``vol / (H L^(d-1))``; the full lens is centrally symmetric, so the
        boundary plane through its centre halves it."""
        return 2.0 ** (self.d - 1) / math.factorial(self.d)

    @property
    def exact_volume(self) -> float:
        return self.volume_coefficient * self.H * self.L ** (self.d - 1)

    @property
    def perimeter(self) -> float:
        """Half the boundary area of the full lens (central symmetry again)."""
        d = self.d
        return (2.0 ** (d - 1) * self.L ** (d - 2) * math.sqrt((d - 1) * self.H ** 2 + self.L ** 2)
                / math.factorial(d - 1))

    @property
    def trace_area(self) -> float:
        if self.d == 2:
            n1, n2 = abs(self.nu[0]), abs(self.nu[1])
            return 2.0 * self.H * self.L / (self.L * n1 + self.H * n2)
        if is_degenerate(self.nu):
            return 2.0 ** (self.d - 1) * self.L ** (self.d - 1) / math.factorial(self.d - 1)
        from .errors import CapabilityError
        raise CapabilityError("flat trace of a tilted lens is only available for d = 2")

    def coords(self, x) -> tuple[np.ndarray, np.ndarray]:
        x = np.atleast_2d(x)
        return x @ self.frame.T, x @ self.nu

    def contains(self, x) -> np.ndarray:
        x = np.atleast_2d(x)
        zp, zd = self.coords(x)
        s = np.abs(zp).sum(axis=1)
        return (s < self.L) & (np.abs(zd) < self.H * (1 - s / self.L)) & (x[:, -1] > 0)

    def _section_length(self, z: np.ndarray) -> np.ndarray:
        """Length of ``{z_d : (z, z_d) in lens}`` for cross-section points ``z``."""
        s = np.abs(z).sum(axis=1)
        h = self.H * np.clip(1.0 - s / self.L, 0.0, None)
        nd = self.nu[-1]
        b = self.beta * z[:, 0]
        if nd > 0:
            lower = np.maximum(-h, -b / nd)
        else:
            lower = np.where(b > 0, -h, np.inf)
        return np.clip(h - lower, 0.0, None)

    def sampled_volume(self, tol: float = 1e-3, seed: int = 0) -> QMCResult:
        """Volume by scrambled-Sobol sampling of the cross-section with exact
        integration along ``nu``."""
        n = self.d - 1
        sym = 2.0 ** (n - 1)

        def f(u):
            z, jac = orthant_simplex(u, self.L)
            neg = z.copy()
            neg[:, 0] = -neg[:, 0]
            return sym * jac * (self._section_length(z) + self._section_length(neg))

        return rqmc_integrate(f, n, tol, seed)


InclusionShape = HalfBall | Lens2D | LensD | VoxelMask


def lens2d_measures(lens: Lens2D) -> dict:
    return {"area": lens.area, "perimeter_open_halfplane": lens.perimeter}


def shape_volume(shape, tol: float = 1e-3, seed: int = 0) -> float:
    """Exact volume for half-balls, 2D lenses and masks; sampled for ``LensD``."""
    if not 1e-6 < tol < 1e-1:
        raise ParameterError("tol must lie in (1e-6, 1e-1)")
    if isinstance(shape, (HalfBall, Lens2D, VoxelMask)):
        return shape.volume
    if isinstance(shape, LensD):
        return shape.sampled_volume(tol, seed).value
    raise TypeError(f"unsupported shape {type(shape).__name__}")


# ---------------------------------------------------------------------------
# tilted cages


@dataclass(frozen=True, eq=False)
class CageSystem:
    """Points and parallelograms of the tilted-cage construction in the unit
    half-ball around ``(0, z2)``, for ``nu = (nu1, -sqrt(1 - nu1^2))``."""

    nu1: float
    gamma: float
    theta: float
    sigma: float
    z2: float
    l: float
    x: np.ndarray          # x_0 .. x_5 on the axis
    y: np.ndarray          # y_1 .. y_4 on {x_2 = sigma}
    zproj: np.ndarray      # z_{1..4, sigma}: projections of y_i onto the axis
    Q: tuple               # Q_1, Q_2, Q_3 as ccw vertex arrays

    @property
    def tilt(self) -> float:
        """Horizontal shift ``sqrt(1 - nu1^2) / nu1`` per unit height."""
        return math.sqrt(max(0.0, 1.0 - self.nu1 ** 2)) / self.nu1


def build_cages(nu1: float, sigma: float, *, z2: float | None = None,
                gamma: float | None = None) -> CageSystem:
    if not 0 < nu1 <= 1:
        raise ParameterError("nu1 must lie in (0, 1]")
    theta = nu1 / 50.0
    gamma = theta if gamma is None else float(gamma)
    z2 = theta if z2 is None else float(z2)
    if not 0 <= z2 <= theta + 1e-15:
        raise ParameterError("cap centre height must lie in [0, theta]")
    if not 2 * gamma * (1 - 1e-12) <= sigma <= 4 * gamma * (1 + 1e-12) or sigma >= 1:
        raise ParameterError(f"sigma={sigma} outside [2 gamma, 4 gamma] = [{2 * gamma}, {4 * gamma}]")
    half = math.sqrt(1.0 - z2 ** 2)
    l = 2.0 * half
    x0 = -half
    fr = np.array([0, 1, 2, 4, 5, 6]) / 6.0
    x = np.stack([x0 + l * fr, np.zeros(6)], axis=1)
    tilt = math.sqrt(max(0.0, 1.0 - nu1 ** 2)) / nu1
    y = np.stack([x[1:5, 0] + tilt * sigma, np.full(4, sigma)], axis=1)
    zproj = y[:, 0].copy()
    Q = tuple(polygon.ensure_ccw(np.array([x[i], x[i + 1], y[i], y[i - 1]])) for i in (1, 2, 3))
    return CageSystem(nu1, gamma, theta, sigma, z2, l, x, y, zproj, Q)


def _in_convex(poly: np.ndarray, p: np.ndarray, tol: float = 0.0) -> np.ndarray:
    ok = np.ones(len(p), dtype=bool)
    m = len(poly)
    for i in range(m):
        a, b = poly[i], poly[(i + 1) % m]
        cross = (b[0] - a[0]) * (p[:, 1] - a[1]) - (b[1] - a[1]) * (p[:, 0] - a[0])
        ok &= cross >= -tol
    return ok


def verify_cage_inclusions(cage: CageSystem, n_samples: int = 10_000, seed: int = 0) -> dict:
    """Check ``B_gamma^+ subset Q_2`` and ``Q subset B_1^+`` analytically and by
    rejection sampling; margins are the slacks of the two inequalities."""
    margin1 = (cage.l / 6.0 - cage.tilt * cage.sigma) - cage.gamma
    z4 = abs(cage.x[4, 0]) + cage.tilt * cage.sigma
    margin2 = math.sqrt(1.0 - cage.sigma ** 2) - z4
    rng = np.random.default_rng(seed)
    centre = np.array([0.0, cage.z2])

    pts = []
    while sum(len(p) for p in pts) < n_samples:
        cand = centre + cage.gamma * rng.uniform(-1, 1, size=(2 * n_samples, 2))
        keep = (np.sum((cand - centre) ** 2, axis=1) < cage.gamma ** 2) & (cand[:, 1] > 0)
        pts.append(cand[keep])
    ball = np.concatenate(pts)[:n_samples]
    ball_out = int((~_in_convex(cage.Q[1], ball)).sum())

    per = [n_samples // 3 + (1 if i < n_samples % 3 else 0) for i in range(3)]
    q_pts = []
    for (i, k) in zip((1, 2, 3), per):
        st = rng.uniform(0, 1, size=(k, 2))
        base, right, up = cage.x[i], cage.x[i + 1] - cage.x[i], cage.y[i - 1] - cage.x[i]
        q_pts.append(base + st[:, :1] * right + st[:, 1:] * up)
    q = np.concatenate(q_pts)
    q_out = int((~((np.sum((q - centre) ** 2, axis=1) < 1.0) & (q[:, 1] >= 0))).sum())

    holds = margin1 > 0 and margin2 > 0 and ball_out == 0 and q_out == 0
    return {
        "holds": bool(holds),
        "margins": (float(margin1), float(margin2)),
        "ball_points_outside_Q2": ball_out,
        "cage_points_outside_ball": q_out,
    }


# ---------------------------------------------------------------------------
# rasterization


def _bbox(shape) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(shape, VoxelMask):
        return shape.origin, shape.origin + shape.h * np.array(shape.shape)
    r = shape.circumradius
    d = shape.d
    return np.array([-r] * (d - 1) + [0.0]), np.array([r] * d)


def rasterize(shape, grid: Grid, k: int = 4) -> VoxelMask:
    """A cell is occupied iff at least half of its ``k^d`` subsamples lie in ``shape``."""
    if shape.d != grid.d:
        raise ValidationError("shape and grid dimensions differ")
    if not isinstance(shape, VoxelMask) and shape.min_feature < 4 * grid.h:
        raise ResolutionError(
            f"grid spacing {grid.h} gives fewer than 4 cells across the minimal feature {shape.min_feature}")
    lo, hi = _bbox(shape)
    eps = 1e-9 * max(1.0, float(np.max(np.abs(hi))))
    if np.any(lo < grid.origin - eps) or np.any(hi > grid.upper + eps):
        raise ValidationError("shape does not fit in the grid extent")
    d = grid.d
    offs = (np.arange(k) + 0.5) / k
    sub = np.stack(np.meshgrid(*([offs] * d), indexing="ij"), axis=-1).reshape(-1, d) * grid.h
    occ = np.zeros(grid.shape, dtype=bool)
    axes = [grid.origin[j] + grid.h * np.arange(n) for j, n in enumerate(grid.shape)]
    need = (k ** d + 1) // 2
    for i0 in range(grid.shape[0]):
        corners = np.stack(np.meshgrid(axes[0][i0:i0 + 1], *axes[1:], indexing="ij"), axis=-1).reshape(-1, d)
        pts = (corners[:, None, :] + sub[None, :, :]).reshape(-1, d)
        inside = shape.contains(pts).reshape(len(corners), -1).sum(axis=1)
        occ[i0] = (inside >= need).reshape(grid.shape[1:])
    return grid.mask(occ)
