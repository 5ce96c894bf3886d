"""Volume sweeps, exponent fits, dichotomy scans, the localized lower-bound
probe and the rescaling identity."""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass

import numpy as np
from scipy import stats

from .constructions import (LensBranch, branch_threshold, build_lens, construction_energy,
                            halfball_elastic_bound, halfball_elastic_exact, lens_bound_coefficient,
                            lens_perimeter, lens_volume_coefficient, small_volume_construction)
from .core import (CanonicalProblem, PhysicalProblem, RankOneTensor, RegimeTag, canonicalize,
                   classify_regime, is_degenerate, predicted_exponent, unit_ball_volume)
from .errors import DegenerateDirectionError, FitError, ParameterError, RegimeError, ValidationError
from .field_solver import minimize_elastic
from .geometry import Grid, rasterize, theta_general
from .voxel import VoxelMask, exposed_faces, grow_blob

ENERGY_METHODS = ("ClosedForm", "ExactPiecewise", "Sampled", "NumericalMin")
MAX_PROBE_RESAMPLES = 1000


def default_threads() -> int:
    env = os.environ.get("NUCLAB_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ValidationError(f"NUCLAB_THREADS must be an integer, got {env!r}")
    return 1


@dataclass(frozen=True, eq=False)
class SweepSpec:
    d: int
    nu: np.ndarray
    a: np.ndarray
    mus: tuple
    method: str = "ExactPiecewise"
    seed: int = 0
    tol: float = 1e-3
    grid_cells_per_H: int = 8

    def __post_init__(self):
        nu = np.array(self.nu, dtype=float).reshape(-1)
        a = np.array(self.a, dtype=float).reshape(-1)
        if nu.size != self.d or a.size != self.d:
            raise ValidationError("nu and a must have length d")
        if abs(np.linalg.norm(nu) - 1) > 1e-12:
            raise ValidationError("nu must be a unit vector")
        if self.method not in ENERGY_METHODS:
            raise ValidationError(f"unknown energy method {self.method!r}")
        mus = tuple(float(m) for m in self.mus)
        if any(not m > 0 for m in mus):
            raise ValidationError("volumes must be positive")
        object.__setattr__(self, "nu", nu)
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "mus", tuple(sorted(mus)))

    @property
    def G(self) -> RankOneTensor:
        return RankOneTensor(self.a, self.nu)

    def check_fit_ready(self) -> None:
        """Fit requirements: at least 5 volumes over 2 decades, one regime."""
        if len(self.mus) < 5 or math.log10(self.mus[-1] / self.mus[0]) < 2 - 1e-12:
            raise FitError("a fit needs at least 5 volumes spanning 2 decades")
        thr = self.G.norm ** (-2 * self.d)
        if not (all(m < thr for m in self.mus) or all(m >= thr for m in self.mus)):
            raise FitError("all volumes must lie on one side of the regime threshold")


@dataclass(frozen=True)
class SweepRow:
    mu: float
    surface: float
    elastic: float
    total: float
    H: float | None
    L: float | None
    R: float | None
    branch: str
    target_mu: float
    flagged: bool = False
    note: str = ""

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class FitResult:
    slope: float
    intercept: float
    stderr: float
    rms: float
    n: int

    def to_dict(self) -> dict:
        return asdict(self)


def log_spaced(lo: float, hi: float, n: int) -> tuple:
    return tuple(float(x) for x in np.logspace(math.log10(lo), math.log10(hi), n))


def _row_for(spec: SweepSpec, mu: float, index: int) -> SweepRow:
    G = spec.G
    cp = CanonicalProblem(spec.d, G, mu)
    method = spec.method
    energy_method = {"NumericalMin": "ExactPiecewise" if spec.d == 2 else "Sampled"}.get(method, method)
    seed = spec.seed * 1_000_003 + index
    if classify_regime(cp).tag is RegimeTag.SMALL:
        return _halfball_row(spec, mu, energy_method)
    try:
        params, fld, shape = build_lens(spec.d, mu, spec.nu, spec.a)
    except RegimeError:
        return _halfball_row(spec, mu, energy_method, note="lens height H <= 1; half-ball used")
    en = construction_energy(fld, shape, G, energy_method, tol=spec.tol, seed=seed)
    elastic = en.elastic_exact
    flagged, note = False, ""
    if method == "NumericalMin":
        grid = Grid.around(4.0 * params.L, params.H / spec.grid_cells_per_H, spec.d)
        rep = minimize_elastic(rasterize(shape, grid), G, grid)
        elastic = rep.energy
        if not rep.converged:
            flagged, note = True, f"solver did not converge (residual {rep.residual:.2e})"
    return SweepRow(en.measured_volume, en.surface, elastic, en.surface + elastic, params.H, params.L, None,
                    params.branch.value, mu, flagged, note)


def _halfball_row(spec: SweepSpec, mu: float, method: str, note: str = "") -> SweepRow:
    m = "ExactPiecewise" if method == "Sampled" else method
    fld, shape, _ = small_volume_construction(mu, spec.G, spec.d)
    en = construction_energy(fld, shape, spec.G, m)
    return SweepRow(en.measured_volume, en.surface, en.elastic_exact, en.total, None, None, shape.R,
                    "HalfBall", mu, False, note)


def run_sweep(spec: SweepSpec, threads: int | None = None) -> list[SweepRow]:
    """One row per volume, in increasing order; identical for any thread count."""
    threads = default_threads() if threads is None else max(1, int(threads))
    jobs = list(enumerate(spec.mus))
    if threads == 1 or len(jobs) <= 1:
        return [_row_for(spec, mu, i) for i, mu in jobs]
    with ThreadPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(lambda job: _row_for(spec, job[1], job[0]), jobs))


def fit_exponent(rows) -> FitResult:
    """Ordinary least squares of ``log total`` on ``log mu`` over unflagged rows."""
    rows = [r for r in rows if not getattr(r, "flagged", False)]
    if len(rows) < 5:
        raise FitError(f"need at least 5 unflagged rows, got {len(rows)}")
    mu = np.array([r.mu for r in rows])
    tot = np.array([r.total for r in rows])
    if np.any(mu <= 0) or np.any(tot <= 0):
        raise FitError("volumes and energies must be positive")
    if math.log10(mu.max() / mu.min()) < 2 - 1e-9:
        raise FitError("volumes must span at least 2 decades")
    x, y = np.log(mu), np.log(tot)
    res = stats.linregress(x, y)
    resid = y - (res.intercept + res.slope * x)
    return FitResult(float(res.slope), float(res.intercept), float(res.stderr),
                     float(np.sqrt(np.mean(resid ** 2))), len(rows))


def target_exponent(spec: SweepSpec) -> float:
    cp = CanonicalProblem(spec.d, spec.G, spec.mus[0])
    return float(predicted_exponent(spec.d, spec.nu, classify_regime(cp)))


# ---------------------------------------------------------------------------
# dichotomy


def great_circle_path(d: int, start_angle: float, n: int, end_angle: float = 0.0) -> list[np.ndarray]:
    """Directions ``(-sin phi, 0, ..., 0, cos phi)`` from ``start_angle`` down to ``end_angle``."""
    if n < 2:
        raise ParameterError("a path needs at least 2 directions")
    out = []
    for phi in np.linspace(start_angle, end_angle, n):
        v = np.zeros(d)
        v[0], v[-1] = -math.sin(phi), math.cos(phi)
        out.append(v)
    return out


@dataclass(frozen=True)
class DichotomyReport:
    dist: list
    theta: list
    branch: list
    total: list
    proxy: list
    threshold: float
    crossover_index: int | None
    crossover_bracket: tuple | None
    brackets_threshold: bool
    final_le_first: bool

    def to_dict(self) -> dict:
        return asdict(self)


def dichotomy_scan(d: int, a, mu: float, nu_path, method: str | None = None, seed: int = 0) -> DichotomyReport:
    nu_path = [np.asarray(v, dtype=float) for v in nu_path]
    if len(nu_path) < 2:
        raise ParameterError("a path needs at least 2 directions")
    a = np.asarray(a, dtype=float)
    an = float(np.linalg.norm(a))
    method = ("ExactPiecewise" if d == 2 else "Sampled") if method is None else method
    thr = branch_threshold(d, mu, an)
    dist, theta, branch, total = [], [], [], []
    from .core import dist_to_normal
    for i, nu in enumerate(nu_path):
        params, fld, shape = build_lens(d, mu, nu, a)
        en = construction_energy(fld, shape, fld.G, method, seed=seed + i)
        dist.append(dist_to_normal(nu))
        theta.append(theta_general(d, nu))
        branch.append(params.branch.value)
        total.append(en.total)
    if any(dist[i + 1] > dist[i] + 1e-15 for i in range(len(dist) - 1)):
        raise ParameterError("path must approach +-e_d monotonically")
    expo = (2 * d - 2) / (2 * d - 1)
    proxy = [mu ** (-expo) * t for t in total]
    flip = next((i for i in range(len(branch) - 1) if branch[i] != branch[i + 1]), None)
    bracket = None
    ok = False
    if flip is not None:
        bracket = (theta[flip], theta[flip + 1])
        ok = bool(theta[flip] > thr >= theta[flip + 1] or theta[flip] <= thr < theta[flip + 1])
    return DichotomyReport(dist, theta, branch, total, proxy, thr, flip, bracket, ok, proxy[-1] <= proxy[0])


# ---------------------------------------------------------------------------
# localized lower-bound probe


def _ball_fraction(mask: VoxelMask, centre: np.ndarray, radius: float, k: int = 4) -> float:
    """``|chi|`` restricted to ``B_radius(centre)`` with ``k^d`` subsamples per occupied cell."""
    idx = np.argwhere(mask.occupancy)
    if len(idx) == 0:
        return 0.0
    d = mask.d
    offs = (np.arange(k) + 0.5) / k
    sub = np.stack(np.meshgrid(*([offs] * d), indexing="ij"), axis=-1).reshape(-1, d)
    pts = mask.origin + mask.h * (idx[:, None, :] + sub[None, :, :])
    inside = np.sum((pts - centre) ** 2, axis=-1) < radius ** 2
    return float(inside.mean(axis=1).sum()) * mask.h ** d


def probe_lower_bound(d: int, nu, n_samples: int, rho: float = 1.0, z=None, seed: int = 0,
                      a=None, max_cells: int = 9, cells_per_gamma: int = 48) -> dict:
    """Ratio of the elastic minimum to ``rho^-d |G|^2 |chi|^2(B_{gamma rho}^+(z))`` over random
    small inclusions near ``z`` satisfying ``|chi| <= c rho^d`` and ``|D chi| <= c rho^(d-1)``.

    Minima are taken on a box inside ``B_rho^+(z)``; a smaller domain can
    only lower the minimum, so positivity on the box carries over.
    """
    nu = np.asarray(nu, dtype=float)
    if is_degenerate(nu):
        raise DegenerateDirectionError("the probe needs nu away from +-e_d")
    a = np.eye(d)[0] if a is None else np.asarray(a, dtype=float)
    G = RankOneTensor(a, nu)
    z = np.zeros(d) if z is None else np.asarray(z, dtype=float)
    gamma = abs(float(nu[0])) / 50.0
    c = gamma / 4.0
    h = gamma * rho / cells_per_gamma
    n_side = 32
    box = (n_side,) * (d - 1) + (n_side // 2,)
    origin = z - h * np.array([n_side / 2] * (d - 1) + [0.0])
    origin[-1] = max(origin[-1], 0.0)
    half_diag = h * math.sqrt((n_side / 2) ** 2 * (d - 1) + (n_side / 2) ** 2)
    if half_diag >= rho:
        raise ParameterError("probe box does not fit in B_rho^+")
    grid = Grid(h, origin, box)
    ratios = []
    start = tuple([n_side // 2] * (d - 1) + [0])
    for i in range(n_samples):
        rng = np.random.default_rng([seed, i])
        # resample until the smallness hypotheses hold
        for _ in range(MAX_PROBE_RESAMPLES):
            occ = grow_blob(rng, box, start, int(rng.integers(1, max_cells + 1)))
            mask = grid.mask(occ)
            interior, _ = exposed_faces(occ, on_floor=mask.touches_floor)
            if mask.volume <= c * rho ** d and interior * h ** (d - 1) <= c * rho ** (d - 1):
                break
        else:
            raise ParameterError("no admissible inclusion found; refine the probe grid")
        denom = rho ** (-d) * G.norm ** 2 * _ball_fraction(mask, z, gamma * rho) ** 2
        if denom == 0:
            ratios.append(math.inf)
            continue
        ratios.append(minimize_elastic(mask, G, grid, 1e-10).energy / denom)
    finite = np.array([r for r in ratios if math.isfinite(r)])
    hist = np.histogram(np.log10(finite), bins=10) if len(finite) else (np.array([]), np.array([]))
    return {
        "min_ratio": float(finite.min()) if len(finite) else math.inf,
        "ratios": ratios,
        "n_finite": int(len(finite)),
        "histogram": {"counts": hist[0].tolist(), "log10_edges": hist[1].tolist()},
        "gamma": gamma,
        "c": c,
        "h": h,
    }


# ---------------------------------------------------------------------------
# rescaling identity


def _lens_physical_length(d: int, b_norm: float, V: float, eps: float, nu_cos: float, branch: LensBranch) -> float:
    """Seed length of the lens in physical variables (bound balanced against ``eps`` times the perimeter)."""
    beta = math.sqrt(max(0.0, 1 - nu_cos ** 2))
    if d == 2:
        if branch is LensBranch.THREE_WELL_LIKE:
            return (8 * b_norm ** 2 * V ** 3 / eps) ** 0.2
        return (4 * b_norm ** 2 * beta * V ** 2 / eps) ** (1 / 3)
    if branch is LensBranch.THREE_WELL_LIKE:
        return b_norm ** (2 / (3 * d - 1)) * V ** (3 / (3 * d - 1)) * eps ** (-1 / (3 * d - 1))
    th = min(1 / abs(nu_cos), 1.0) * beta if nu_cos != 0 else beta
    return (b_norm ** (2 / (2 * d - 1)) * th ** (1 / (2 * d - 1)) * V ** (2 / (2 * d - 1))
            * eps ** (-1 / (2 * d - 1)))


def verify_rescaling(physical: PhysicalProblem, kind: str = "lens") -> dict:
    """Compare ``E_eps(V)`` built in physical variables with ``eps^(2-d) E_1(eps^d V)``."""
    d, eps, V = physical.d, physical.epsilon, physical.volume
    b = physical.F.a
    bn = float(np.linalg.norm(b))
    cp, factor = canonicalize(physical)
    an, mu = cp.G.norm, cp.mu
    if kind == "halfball":
        R_p = (2 * V / unit_ball_volume(d)) ** (1 / d)
        lhs = bn ** 2 * halfball_elastic_bound(R_p, d) + eps * (d * unit_ball_volume(d) * R_p ** (d - 1) / 2)
        R = (2 * mu / unit_ball_volume(d)) ** (1 / d)
        rhs = factor * (an ** 2 * halfball_elastic_bound(R, d) + d * unit_ball_volume(d) * R ** (d - 1) / 2)
        lhs_exact = bn ** 2 * halfball_elastic_exact(R_p, d) + eps * (d * unit_ball_volume(d) * R_p ** (d - 1) / 2)
        rhs_exact = factor * (an ** 2 * halfball_elastic_exact(R, d) + d * unit_ball_volume(d) * R ** (d - 1) / 2)
    elif kind == "lens":
        # direction relative to the half-space normal, in both sets of variables
        cos_p = float(physical.F.nu @ physical.xi)
        cos_c = float(cp.G.nu[-1])
        kappa = lens_volume_coefficient(d)
        th_p = (min(1 / abs(cos_p), 1.0) if cos_p != 0 else 1.0) * math.sqrt(max(0.0, 1 - cos_p ** 2))
        thr_p = ((bn / eps) ** (-2 * d) / (eps ** d * V)) ** (1 / (3 * d - 1))
        branch = LensBranch.THREE_WELL_LIKE if th_p <= thr_p else LensBranch.TWO_WELL_LIKE
        L_p = _lens_physical_length(d, bn, V, eps, cos_p, branch)
        H_p = V / (kappa * L_p ** (d - 1))
        lhs = bn ** 2 * lens_bound_coefficient(d, H_p, L_p, cos_p) + eps * lens_perimeter(d, H_p, L_p)
        from .constructions import lens_seed_length
        L = lens_seed_length(d, mu, cp.G.nu, cp.G.a, branch)
        H = mu / (kappa * L ** (d - 1))
        rhs = factor * (an ** 2 * lens_bound_coefficient(d, H, L, cos_c) + lens_perimeter(d, H, L))
        lhs_exact, rhs_exact = lhs, rhs
    else:
        raise ValidationError(f"unknown construction kind {kind!r}")
    rel = abs(lhs - rhs) / abs(rhs)
    rel2 = abs(lhs_exact - rhs_exact) / abs(rhs_exact)
    return {"lhs": lhs, "rhs": rhs, "rel_err": max(rel, rel2)}


def small_regime_isoperimetric_check(d: int, G: RankOneTensor, mus) -> FitResult:
    thr = G.norm ** (-2 * d)
    mus = [float(m) for m in mus]
    if any(m > thr for m in mus):
        raise RegimeError(f"all volumes must satisfy mu <= |G|^(-2d) = {thr}")
    rows = []
    for m in mus:
        fld, shape, en = small_volume_construction(m, G, d)
        rows.append(SweepRow(en.measured_volume, en.surface, en.elastic_exact, en.total, None, None, shape.R,
                             "HalfBall", m))
    return fit_exponent(rows)
