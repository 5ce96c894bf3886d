"""Upper-bound test pairs ``(u, chi)``: the half-ball and lens constructions,
their closed-form and exact energies, parameter optimization and the
reflection across the boundary hyperplane.

Every field here has the form ``u = zeta(|x|) * w(x) * a`` with a scalar,
piecewise-affine ``w`` and a radial smoothstep cutoff ``zeta``, so
``|grad u - chi G|^2 = |a|^2 |zeta grad w + w grad zeta - chi nu|^2``.
"""

from __future__ import annotations

import enum
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.stats import qmc

from . import kernels, polygon
from .core import RankOneTensor, is_degenerate, unit_ball_volume
from .errors import CapabilityError, ConsistencyError, ParameterError, RegimeError, ValidationError
from .geometry import HalfBall, Lens2D, LensD, halfball_from_volume, theta_general
from .qmc import orthant_simplex, rqmc_integrate
from .voxel import VoxelMask, exposed_faces

CONTINUITY_TOL = 1e-10
N_FACET_SAMPLES = 1000


class Method(str, enum.Enum):
    CLOSED_FORM = "ClosedForm"
    EXACT_PIECEWISE = "ExactPiecewise"
    SAMPLED = "Sampled"


class LensBranch(str, enum.Enum):
    THREE_WELL_LIKE = "ThreeWellLike"
    TWO_WELL_LIKE = "TwoWellLike"


@dataclass(frozen=True)
class LensParams:
    H: float
    L: float
    branch: LensBranch
    clamped: bool = False

    def __post_init__(self):
        if not 1.0 < self.H <= self.L * (1 + 1e-12):
            raise ParameterError(f"lens parameters need 1 < H <= L, got H={self.H}, L={self.L}")


@dataclass(frozen=True)
class ConstructionEnergy:
    """Energy parts of a construction.  For ``ClosedForm`` the elastic part is
    the closed-form bound itself."""

    surface: float
    elastic_bound: float
    elastic_exact: float
    method: Method
    measured_volume: float
    stderr: float = 0.0

    def __post_init__(self):
        if min(self.surface, self.elastic_bound, self.elastic_exact) < 0:
            raise ConsistencyError("negative energy part")

    @property
    def total(self) -> float:
        return self.surface + self.elastic_exact


# ---------------------------------------------------------------------------
# fields


@dataclass(frozen=True)
class Facet:
    name: str
    left: int
    right: int
    points: np.ndarray


@dataclass(frozen=True, eq=False)
class ConstructionField:
    """Piecewise field ``u = zeta * w * a``.

    ``classify`` maps points to region labels (``-1`` outside all regions)
    and ``piece(label, x)`` evaluates the affine scalar of that region as
    ``(w, grad w)`` in original coordinates.
    """

    kind: str
    d: int
    a: np.ndarray
    G: RankOneTensor
    shape: object
    regions: tuple[str, ...]
    cutoff: tuple[float, float]
    classify: Callable
    piece: Callable
    facets: tuple[Facet, ...]
    params: dict = field(default_factory=dict)

    def scalar(self, x) -> tuple[np.ndarray, np.ndarray]:
        """``(zeta w, grad(zeta w))`` at points ``x``."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        lab = self.classify(x)
        w = np.zeros(len(x))
        g = np.zeros_like(x)
        for k in np.unique(lab):
            if k < 0:
                continue
            m = lab == k
            w[m], g[m] = self.piece(int(k), x[m])
        r = np.sqrt(np.einsum("ij,ij->i", x, x))
        zeta, dz = kernels.smoothstep_cutoff(r, *self.cutoff)
        with np.errstate(invalid="ignore", divide="ignore"):
            xhat = np.where(r[:, None] > 0, x / r[:, None], 0.0)
        return zeta * w, zeta[:, None] * g + (w * dz)[:, None] * xhat

    def evaluate(self, x) -> tuple[np.ndarray, np.ndarray]:
        """Displacement ``u`` (N, d) and gradient ``grad u`` (N, d, d)."""
        phi, gphi = self.scalar(x)
        return phi[:, None] * self.a[None, :], self.a[None, :, None] * gphi[:, None, :]

    def chi(self, x) -> np.ndarray:
        return self.shape.contains(np.atleast_2d(x))

    def integrand(self, x) -> np.ndarray:
        """``|grad u - chi G|^2`` at points ``x``."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        _, gphi = self.scalar(x)
        nu = self.G.nu
        sgn = float(np.sign(self.a @ self.G.a)) or 1.0
        res = gphi - sgn * self.chi(x)[:, None] * nu[None, :]
        return float(self.a @ self.a) * np.einsum("ij,ij->i", res, res)

    def check_continuity(self, tol: float = CONTINUITY_TOL) -> float:
        """Largest jump of ``w`` across the facets; raises if above ``tol * max(1, L)``."""
        scale = max(1.0, float(self.params.get("L", self.params.get("R", 1.0))))
        worst = 0.0
        for f in self.facets:
            if len(f.points) == 0:
                continue
            wl, _ = self.piece(f.left, f.points) if f.left >= 0 else (np.zeros(len(f.points)), None)
            wr, _ = self.piece(f.right, f.points) if f.right >= 0 else (np.zeros(len(f.points)), None)
            jump = float(np.max(np.abs(wl - wr)))
            worst = max(worst, jump)
            if jump > tol * scale:
                raise ConsistencyError(f"field jumps by {jump:.3e} across facet {f.name}")
        return worst


def small_volume_construction(mu: float, G: RankOneTensor, d: int | None = None):
    """Half-ball of volume ``mu`` with ``u = zeta_R(|x|) G x``, ``zeta_R`` ramping
    from 1 at ``R`` to 0 at ``2R``."""
    d = G.d if d is None else d
    if G.d != d:
        raise ValidationError("G has the wrong dimension")
    shape = halfball_from_volume(mu, d)
    R = shape.R
    nu = G.nu

    def classify(x):
        return np.where(shape.contains(x), 0, 1)

    def piece(label, x):
        return x @ nu, np.broadcast_to(nu, x.shape).copy()

    fld = ConstructionField("halfball", d, G.a.copy(), G, shape, ("inclusion", "transition"),
                            (R, 2.0 * R), classify, piece, (), {"R": R})
    energy = construction_energy(fld, shape, G, Method.EXACT_PIECEWISE)
    return fld, shape, energy


def halfball_elastic_exact(R: float, d: int) -> float:
    """Elastic energy per ``|a|^2`` of the half-ball field, integrated radially.

    Outside ``B_R`` the integrand is ``zeta^2 + (nu . xhat)^2 (2 zeta zeta' r + zeta'^2 r^2)``
    and ``(nu . xhat)^2`` averages to ``1/d`` over the hemisphere.
    """
    xg, wg = polygon.gauss_legendre(16)
    r = R + R * xg
    zeta, dz = kernels.smoothstep_cutoff(r, R, 2 * R)
    f = (zeta ** 2 + (2 * zeta * dz * r + dz ** 2 * r ** 2) / d) * r ** (d - 1)
    return d * unit_ball_volume(d) / 2 * R * float(f @ wg)


def halfball_elastic_bound(R: float, d: int) -> float:
    """``(1 + 2R max|zeta'|)^2`` times the half-annulus volume, per ``|a|^2``."""
    return (1 + 2 * R * 1.5 / R) ** 2 * unit_ball_volume(d) * (2 ** d - 1) * R ** d / 2


def _segment_points(p, q, n, rng):
    t = rng.uniform(0.0, 1.0, size=(n, 1))
    return p + t * (q - p)


def lens2d_field(H: float, L: float, nu, a) -> ConstructionField:
    """Piecewise-affine lens field with gradients ``G_1, G_2`` on the two halves
    of the lens and ``G_tilde`` on the tail, times the cutoff on ``[2L, 4L]``."""
    shape = Lens2D(H, L, nu)
    a = np.asarray(a, dtype=float)
    G = RankOneTensor(a, shape.nu_in)
    a_eff = shape.sign * a
    n, p = shape.nu, shape.nu_perp
    S = np.diag([-1.0, 1.0]) if shape.mirror else np.eye(2)
    k = H / L
    grads = (n - k * p, n + k * p, -2 * k * p)
    consts = (-H, -H, -2 * H)

    def classify(x):
        xf = x @ S
        zp, zn = xf @ p, xf @ n
        up = xf[:, 1] >= 0  # closure: nodes on the plane take the limit value
        in_m = up & (np.abs(zn) < H - k * np.abs(zp))
        in_t = up & ~in_m & (-zp > 0) & (-zp < L) & (zn < 0)
        return np.select([in_m & (zp < 0), in_m & (zp >= 0), in_t], [0, 1, 2], -1)

    def piece(label, x):
        g = grads[label]
        return (x @ S) @ g + consts[label], np.broadcast_to(S @ g, x.shape).copy()

    rng = np.random.default_rng(0)
    m = N_FACET_SAMPLES
    raw = [
        ("M1|M2", 0, 1, _segment_points(H * n, -H * n, m, rng)),
        ("M1|T", 0, 2, _segment_points(-H * n, -L * p, m, rng)),
        ("M1|outside", 0, -1, _segment_points(H * n, -L * p, m, rng)),
        ("M2|outside", 1, -1, _segment_points(H * n, L * p, m, rng)),
        ("T|outside", 2, -1, -L * p + rng.uniform(-8 * L, 0, size=(m, 1)) * n),
    ]
    facets = tuple(Facet(name, l, r, (pts[pts[:, 1] > 0]) @ S) for name, l, r, pts in raw)
    params = {"H": H, "L": L, "G1": np.outer(a_eff, S @ grads[0]), "G2": np.outer(a_eff, S @ grads[1]),
              "Gtilde": np.outer(a_eff, S @ grads[2])}
    fld = ConstructionField("lens2d", 2, a_eff, G, shape, ("M1", "M2", "T"), (2 * L, 4 * L),
                            classify, piece, facets, params)
    fld.check_continuity()
    return fld


def lensd_field(d: int, H: float, L: float, nu, a, frame=None) -> ConstructionField:
    """Lens field in any dimension: ``w = x.nu + (H/L) sum_i |x.nu_perp_i| - H`` on the
    lens and its constant extension along ``nu`` below it."""
    shape = LensD(d, H, L, nu)
    a = np.asarray(a, dtype=float)
    G = RankOneTensor(a, shape.nu_in)
    a_eff = shape.sign * a
    nu = shape.nu
    frame = shape.frame if frame is None else np.asarray(frame, dtype=float)
    if frame.shape != (d - 1, d) or not np.allclose(frame @ frame.T, np.eye(d - 1), atol=1e-12) \
            or np.max(np.abs(frame @ nu)) > 1e-12:
        raise ValidationError("frame must be an orthonormal basis of nu^perp")
    n = d - 1
    k = H / L
    n_sig = 2 ** n
    signs = np.array([[1.0 if (bits >> i) & 1 == 0 else -1.0 for i in range(n)] for bits in range(n_sig)])

    def sig_index(z):
        return ((z < 0).astype(np.int64) << np.arange(n)).sum(axis=1)

    def classify(x):
        z = x @ frame.T
        zd = x @ nu
        s = np.abs(z).sum(axis=1)
        up = x[:, -1] >= 0
        h = H * (1 - s / L)
        in_m = up & (s < L) & (np.abs(zd) < h)
        in_t = up & ~in_m & (s < L) & (zd < 0)
        idx = sig_index(z)
        return np.where(in_m, idx, np.where(in_t, n_sig + idx, -1))

    def piece(label, x):
        if label < n_sig:
            g = nu + k * signs[label] @ frame
            c = -H
        else:
            g = 2 * k * signs[label - n_sig] @ frame
            c = -2 * H
        return x @ g + c, np.broadcast_to(g, x.shape).copy()

    rng = np.random.default_rng(0)
    m = N_FACET_SAMPLES

    def cross_section(count):
        u = rng.uniform(size=(count, n))
        z, _ = orthant_simplex(u, L * 0.999)
        return z * rng.choice([-1.0, 1.0], size=(count, n))

    def lift(z, zd):
        return z @ frame + zd[:, None] * nu

    facets = []

    def add(name, left, right, pts):
        keep = pts[:, -1] > 0
        pairs = np.stack([left, right], axis=1)[keep]
        for l, r in np.unique(pairs, axis=0):
            sel = keep & (left == l) & (right == r)
            facets.append(Facet(name, int(l), int(r), pts[sel]))

    # sign flips of one cross-section coordinate, inside the lens and in the tail
    z = cross_section(m)
    i = rng.integers(0, n, size=m)
    z[np.arange(m), i] = 0.0
    zpos, zneg = z.copy(), z.copy()
    zneg[np.arange(m), i] = -1e-300
    h = H * (1 - np.abs(z).sum(axis=1) / L)
    left, right = sig_index(zpos), sig_index(zneg)
    add("M|M", left, right, lift(z, h * rng.uniform(-1, 1, size=m)))
    add("T|T", n_sig + left, n_sig + right, lift(z, -h - 8 * L * rng.uniform(size=m)))
    # lower faces against the tail, upper faces against the outside
    z = cross_section(m)
    h = H * (1 - np.abs(z).sum(axis=1) / L)
    idx = sig_index(z)
    add("M|T", idx, n_sig + idx, lift(z, -h))
    add("M|outside", idx, np.full(m, -1), lift(z, h))
    # lateral faces of the tail
    z = cross_section(m)
    z = z * (L / np.abs(z).sum(axis=1))[:, None]
    idx = sig_index(z)
    add("T|outside", n_sig + idx, np.full(m, -1), lift(z, -8 * L * rng.uniform(size=m)))

    names = tuple(f"M{b}" for b in range(n_sig)) + tuple(f"T{b}" for b in range(n_sig))
    fld = ConstructionField("lensd", d, a_eff, G, shape, names, (2 * L, 4 * L), classify, piece,
                            tuple(facets), {"H": H, "L": L, "frame": frame})
    fld.check_continuity()
    return fld


def lens_field(d: int, H: float, L: float, nu, a) -> ConstructionField:
    return lens2d_field(H, L, nu, a) if d == 2 else lensd_field(d, H, L, nu, a)


# ---------------------------------------------------------------------------
# closed-form bounds


def elastic_bound_2d(H: float, L: float, nu, a) -> float:
    """``(H^3/L + 32 |nu_1| H^2) |a|^2``."""
    if H > L * (1 + 1e-12):
        raise ParameterError("elastic_bound_2d needs H <= L")
    a = np.asarray(a, dtype=float)
    return (H ** 3 / L + 32 * abs(float(nu[0])) * H ** 2) * float(a @ a)


def lens_volume_coefficient(d: int) -> float:
    return 2.0 ** (d - 1) / math.factorial(d)


def lens_perimeter(d: int, H: float, L: float) -> float:
    return 2.0 ** (d - 1) * L ** (d - 2) * math.sqrt((d - 1) * H ** 2 + L ** 2) / math.factorial(d - 1)


def lens_bound_coefficient(d: int, H: float, L: float, cos_normal: float) -> float:
    """Closed-form elastic bound per ``|a|^2``, as a function of ``|nu . e_d|``.

    ``d = 2`` is ``H^3/L + 32 |nu_1| H^2``.  For ``d >= 3``: the lens carries
    ``(d-1)(H/L)^2`` per unit volume; the tail carries at most
    ``(2H sqrt(d-1)/L + 1.5 H/L)^2`` on a set of volume at most
    ``2^(d-2)/(d-1)! min(beta/|nu_d|, 4) L^d`` with ``beta = sqrt(1 - nu_d^2)``.
    """
    c = min(1.0, abs(cos_normal))
    beta = math.sqrt(max(0.0, 1.0 - c * c))
    if d == 2:
        return H ** 3 / L + 32 * beta * H ** 2
    vol_m = lens_volume_coefficient(d) * H * L ** (d - 1)
    slope = beta / c if c > 0 else math.inf
    v_tail = 2.0 ** (d - 2) / math.factorial(d - 1) * min(slope, 4.0) * L ** d if beta > 0 else 0.0
    return (d - 1) * (H / L) ** 2 * vol_m + (2 * H * math.sqrt(d - 1) / L + 1.5 * H / L) ** 2 * v_tail


def lens_elastic_bound(d: int, H: float, L: float, nu, a) -> float:
    a = np.asarray(a, dtype=float)
    if d == 2:
        return elastic_bound_2d(H, L, nu, a)
    return lens_bound_coefficient(d, H, L, float(np.asarray(nu)[-1])) * float(a @ a)


# ---------------------------------------------------------------------------
# parameter optimization


def branch_threshold(d: int, mu: float, G_norm: float) -> float:
    return (G_norm ** (-2 * d) / mu) ** (1.0 / (3 * d - 1))


def _golden_section(f, lo: float, hi: float, iters: int = 80) -> float:
    """Minimize a unimodal ``f`` on ``[lo, hi]``."""
    g = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c, e = b - g * (b - a), a + g * (b - a)
    fc, fe = f(c), f(e)
    for _ in range(iters):
        if fc <= fe:
            b, e, fe = e, c, fc
            c = b - g * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, e, fe
            e = a + g * (b - a)
            fe = f(e)
    return 0.5 * (a + b)


def lens_seed_length(d: int, mu: float, nu, a, branch: LensBranch) -> float:
    """Optimal lengths of the reduced bounds (exact prefactors for d = 2, unit otherwise)."""
    an = float(np.linalg.norm(a))
    if d == 2:
        if branch is LensBranch.THREE_WELL_LIKE:
            return 2 ** 0.6 * an ** 0.4 * mu ** 0.6
        return 2 ** (2 / 3) * an ** (2 / 3) * abs(float(nu[0])) ** (1 / 3) * mu ** (2 / 3)
    if branch is LensBranch.THREE_WELL_LIKE:
        return an ** (2 / (3 * d - 1)) * mu ** (3 / (3 * d - 1))
    th = theta_general(d, nu)
    return an ** (2 / (2 * d - 1)) * th ** (1 / (2 * d - 1)) * mu ** (2 / (2 * d - 1))


MIN_SEARCH_HEIGHT = 1.25


def optimize_lens_params(d: int, mu: float, nu, a) -> LensParams:
    a = np.asarray(a, dtype=float)
    nu = np.asarray(nu, dtype=float)
    an = float(np.linalg.norm(a))
    if mu < an ** (-2 * d):
        raise RegimeError(f"mu={mu} is below the regime threshold {an ** (-2 * d)}; "
                          "use small_volume_construction")
    th = theta_general(d, nu)
    branch = LensBranch.THREE_WELL_LIKE if th <= branch_threshold(d, mu, an) else LensBranch.TWO_WELL_LIKE
    kappa = lens_volume_coefficient(d)
    L = lens_seed_length(d, mu, nu, a, branch)
    if d >= 3:
        cos_n = float(nu[-1])

        def objective(logL):
            Lc = math.exp(logL)
            Hc = mu / (kappa * Lc ** (d - 1))
            return an ** 2 * lens_bound_coefficient(d, Hc, Lc, cos_n) + lens_perimeter(d, Hc, Lc)

        lo, hi = math.log(L) - 0.5 * math.log(10), math.log(L) + 0.5 * math.log(10)
        # keep the search inside the admissible heights H >= MIN_SEARCH_HEIGHT
        hi_adm = math.log(mu / (kappa * MIN_SEARCH_HEIGHT)) / (d - 1)
        if lo < hi_adm < hi:
            hi = hi_adm
        L = math.exp(_golden_section(objective, lo, hi))
    H = mu / (kappa * L ** (d - 1))
    clamped = False
    if H > L:
        H = L = (mu / kappa) ** (1.0 / d)
        clamped = True
    if H <= 1.0:
        raise RegimeError(f"optimal lens height H={H:.4g} <= 1; use small_volume_construction")
    return LensParams(H, L, branch, clamped)


# ---------------------------------------------------------------------------
# energies


def _same_well(fld: ConstructionField, G: RankOneTensor) -> None:
    if G.d != fld.d or not np.allclose(G.matrix, fld.G.matrix, rtol=1e-12, atol=1e-14):
        raise ValidationError("G does not match the well the field was built for")


def _check_pair(fld: ConstructionField, shape) -> None:
    s = fld.shape
    if shape is s:
        return
    same = type(shape) is type(s)
    if same and isinstance(s, HalfBall):
        same = shape.R == s.R and shape.d == s.d
    elif same:
        same = shape.H == s.H and shape.L == s.L and np.array_equal(shape.nu_in, s.nu_in)
    if not same:
        raise ValidationError("shape does not match the field's inclusion")


def _lens2d_exact(fld: ConstructionField, lens: Lens2D) -> float:
    f = lambda pts: fld.integrand(lens.to_frame(pts))
    total = 0.0
    for poly in (lens.M1, lens.M2):
        if abs(polygon.area(poly)) > 0:
            c = poly.mean(axis=0)
            total += float(f(c[None, :])[0]) * abs(polygon.area(poly))
    tail = lens.tail_polygon()
    if len(tail) >= 3 and abs(polygon.area(tail)) > 0:
        L = lens.L
        # the integrand is constant on the tail inside B_2L; the box of
        # half-width 1.4L lies in B_2L and contains the corner -L nu_perp
        inner = float(f(lens.tail_polygon(1.4 * L).mean(axis=0)[None, :])[0])
        total += inner * polygon.disc_intersection_area(tail, 2 * L)
        total += polygon.polar_integrate(tail, f, 2 * L, 4 * L)
    return total


def lens_sampled(d: int, H: float, L: float, nu, a, tol: float = 1e-3, seed: int = 0,
                 n_gl: int = 16) -> tuple[float, float, float]:
    """``(elastic, stderr, volume)`` by RQMC over the lens cross-section with
    exact integration along ``nu``."""
    shape = LensD(d, H, L, nu)
    vol = shape.sampled_volume(tol, seed)
    n = d - 1
    beta, nd = shape.beta, float(shape.nu[-1])
    xg, wg = polygon.gauss_legendre(n_gl)
    sym = 2.0 ** (n - 1)

    def tail(u):
        z, jac = orthant_simplex(u, L)
        return sym * jac * kernels.lens_tail_inner(z, H, L, beta, nd, xg, wg)

    a = np.asarray(a, dtype=float)
    a2 = float(a @ a)
    e_m = (d - 1) * (H / L) ** 2 * vol.value
    if beta > 0:
        t = rqmc_integrate(tail, n, tol, seed + 1_000_003)
        e_t, se_t = t.value, t.stderr
    else:
        e_t, se_t = 0.0, 0.0
    elastic = a2 * (e_m + e_t)
    stderr = a2 * math.hypot((d - 1) * (H / L) ** 2 * vol.stderr, se_t)
    return elastic, stderr, vol.value


def _box_sampled(fld: ConstructionField, tol: float, seed: int) -> tuple[float, float]:
    r1 = fld.cutoff[1]
    d = fld.d
    lo = np.array([-r1] * (d - 1) + [0.0])
    span = np.array([2 * r1] * (d - 1) + [r1])
    res = rqmc_integrate(lambda u: fld.integrand(lo + u * span), d, tol, seed, m_max=18)
    vol = float(np.prod(span))
    return res.value * vol, res.stderr * vol


def construction_energy(fld: ConstructionField, shape, G: RankOneTensor, method="ExactPiecewise",
                        tol: float = 1e-3, seed: int = 0) -> ConstructionEnergy:
    method = Method(method)
    _same_well(fld, G)
    _check_pair(fld, shape)
    a2 = G.norm ** 2
    if isinstance(shape, HalfBall):
        d, R = shape.d, shape.R
        bound = a2 * halfball_elastic_bound(R, d)
        vol = shape.volume
        se = 0.0
        if method is Method.CLOSED_FORM:
            elastic = bound
        elif method is Method.EXACT_PIECEWISE:
            elastic = a2 * halfball_elastic_exact(R, d)
        else:
            elastic, se = _box_sampled(fld, tol, seed)
        return ConstructionEnergy(shape.perimeter, bound, elastic, method, vol, se)
    if isinstance(shape, (Lens2D, LensD)):
        d = shape.d
        H, L = shape.H, shape.L
        bound = lens_elastic_bound(d, H, L, shape.nu_in, G.a)
        perim = shape.perimeter
        exact_vol = H * L if d == 2 else shape.exact_volume
        if method is Method.CLOSED_FORM:
            return ConstructionEnergy(perim, bound, bound, method, exact_vol)
        if method is Method.EXACT_PIECEWISE:
            if d != 2:
                raise CapabilityError("ExactPiecewise is only available in d = 2; use Sampled")
            lens = shape if isinstance(shape, Lens2D) else Lens2D(H, L, shape.nu_in)
            return ConstructionEnergy(perim, bound, _lens2d_exact(fld, lens), method, exact_vol)
        elastic, se, vol = lens_sampled(d, H, L, shape.nu_in, G.a, tol, seed)
        return ConstructionEnergy(perim, bound, elastic, method, vol, se)
    raise CapabilityError(f"no energy evaluation for shape {type(shape).__name__}")


def construction_record(energy: ConstructionEnergy, params: LensParams | dict | None = None,
                        branch: str | None = None) -> dict:
    if isinstance(params, LensParams):
        branch = params.branch.value if branch is None else branch
        params = {"H": params.H, "L": params.L, "clamped": params.clamped}
    return {
        "params": dict(params or {}),
        "branch": branch,
        "surface": energy.surface,
        "elastic_bound": energy.elastic_bound,
        "elastic_exact": energy.elastic_exact,
        "total": energy.total,
        "measured_volume": energy.measured_volume,
        "method": energy.method.value,
    }


# ---------------------------------------------------------------------------
# reflection


@dataclass(frozen=True)
class ReflectionReport:
    elastic_half: float
    elastic_full: float
    doubling_rel_err: float
    perimeter_half: float
    trace: float
    interface_full: float
    energy_half: float
    energy_full: float
    trace_ok: bool
    warning: str | None = None

    @property
    def lower_ok(self) -> bool:
        return 2 * self.energy_half <= self.energy_full * (1 + 1e-12)

    @property
    def upper_ok(self) -> bool:
        return self.energy_full <= 4 * self.energy_half * (1 + 1e-12)

    @property
    def sandwich_holds(self) -> bool:
        return self.lower_ok and self.upper_ok

    def to_dict(self) -> dict:
        out = {k: getattr(self, k) for k in self.__dataclass_fields__}
        out.update(lower_ok=self.lower_ok, upper_ok=self.upper_ok, sandwich_holds=self.sandwich_holds)
        return out


@dataclass(frozen=True, eq=False)
class ReflectedField:
    """Extension to the full space: ``u(x)`` above, ``u(Bx)`` below, with
    ``B`` the reflection ``x_d -> -x_d``; phases ``chi`` above and ``-chi(Bx)`` below."""

    base: ConstructionField

    @property
    def B(self) -> np.ndarray:
        B = np.eye(self.base.d)
        B[-1, -1] = -1.0
        return B

    def labels(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        up = x[:, -1] > 0
        xb = x @ self.B
        return np.where(up, self.base.chi(x).astype(int), -self.base.chi(xb).astype(int))

    def evaluate(self, x) -> tuple[np.ndarray, np.ndarray]:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        up = x[:, -1] > 0
        xs = np.where(up[:, None], x, x @ self.B)
        u, g = self.base.evaluate(xs)
        g = np.where(up[:, None, None], g, g @ self.B)
        return u, g

    def wells(self) -> dict:
        G = self.base.G.matrix
        return {0: np.zeros_like(G), 1: G, -1: G @ self.B}

    def integrand(self, x) -> np.ndarray:
        _, g = self.evaluate(x)
        lab = self.labels(x)
        wells = self.wells()
        target = np.stack([wells[int(k)] for k in lab]) if len(lab) else np.zeros((0,) + g.shape[1:])
        res = g - target
        return np.einsum("nij,nij->n", res, res)


def reflect(fld: ConstructionField, shape=None, method: str | None = None, n_check: int = 2 ** 14,
            seed: int = 0):
    """Reflect a construction across ``{x_d = 0}``.

    The elastic energy of the extension is the half-space value plus the same
    quadrature evaluated on the mirrored nodes below the plane; the interface
    part is twice the relative perimeter plus twice the flat trace.
    """
    shape = fld.shape if shape is None else shape
    warn = None
    if not is_degenerate(fld.G.nu):
        warn = "reflection is intended for nu = +-e_d; result reported for the given nu"
        warnings.warn(warn, stacklevel=2)
    if method is None:
        method = Method.SAMPLED if (isinstance(shape, LensD) and shape.d > 2) else Method.EXACT_PIECEWISE
    energy = construction_energy(fld, shape, fld.G, method)
    ext = ReflectedField(fld)
    d = fld.d
    r1 = fld.cutoff[1]
    pts = qmc.Sobol(d=d, scramble=True, seed=np.random.default_rng([seed, 7])).random(n_check)
    x = np.concatenate([-r1 + 2 * r1 * pts[:, :-1], r1 * pts[:, -1:]], axis=1)
    x[:, -1] = np.maximum(x[:, -1], 1e-300)
    q_up = float(np.sum(fld.integrand(x)))
    q_low = float(np.sum(ext.integrand(x @ ext.B)))
    rel = abs(q_low - q_up) / q_up if q_up > 0 else abs(q_low)
    ratio = q_low / q_up if q_up > 0 else 1.0
    elastic_full = energy.elastic_exact * (1.0 + ratio)
    trace = shape.trace_area
    per = shape.perimeter
    iface_full = 2 * per + 2 * trace
    report = ReflectionReport(energy.elastic_exact, elastic_full, rel, per, trace, iface_full,
                              energy.total, elastic_full + iface_full, trace <= per, warn)
    return ext, ext.labels, report


def flat_trace_inequality_check(mask: VoxelMask) -> dict:
    """Trace of the mask on ``{x_d = 0}`` against its interface area inside ``{x_d > 0}``."""
    interior, floor = exposed_faces(mask.occupancy, on_floor=mask.touches_floor)
    face = mask.h ** (mask.d - 1)
    lhs, rhs = floor * face, interior * face
    return {"lhs": lhs, "rhs": rhs, "holds": bool(lhs <= rhs)}


def build_lens(d: int, mu: float, nu, a):
    """Optimized lens construction ``(params, field, shape)``."""
    params = optimize_lens_params(d, mu, nu, a)
    fld = lens_field(d, params.H, params.L, nu, a)
    return params, fld, fld.shape
