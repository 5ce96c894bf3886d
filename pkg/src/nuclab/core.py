"""Problem definitions and the reduction to the canonical half-space.

The physical problem lives in the half-space ``{x . xi > 0}`` with interfacial
strength ``epsilon`` and well ``F = b (x) n``.  Rotating ``xi`` onto ``e_d`` and
rescaling lengths by ``epsilon`` gives the canonical problem on ``{x_d > 0}``
with unit interfacial strength, well ``G = a (x) nu`` and volume ``mu``.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .errors import DegenerateDirectionError, ValidationError

UNIT_TOL = 1e-12
DEGENERACY_TOL = 1e-12


def _frozen(v) -> np.ndarray:
    arr = np.array(v, dtype=float).reshape(-1)
    arr.setflags(write=False)
    return arr


def _check_unit(v: np.ndarray, name: str) -> None:
    if not np.all(np.isfinite(v)):
        raise ValidationError(f"{name} has non-finite entries")
    if abs(np.linalg.norm(v) - 1.0) > UNIT_TOL:
        raise ValidationError(f"{name} must be a unit vector, got |{name}| = {np.linalg.norm(v)!r}")


def basis_vector(d: int, i: int) -> np.ndarray:
    e = np.zeros(d)
    e[i] = 1.0
    return e


def normalized(v) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    return v / np.linalg.norm(v)


@dataclass(frozen=True, eq=False)
class RankOneTensor:
    """The rank-one matrix ``a (x) nu`` with ``|nu| = 1``."""

    a: np.ndarray
    nu: np.ndarray

    def __post_init__(self):
        a = _frozen(self.a)
        nu = _frozen(self.nu)
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "nu", nu)
        if a.shape != nu.shape:
            raise ValidationError("a and nu must have the same length")
        if a.size < 2:
            raise ValidationError("dimension must be at least 2")
        _check_unit(nu, "nu")
        if not np.all(np.isfinite(a)) or not np.any(a != 0.0):
            raise ValidationError("amplitude a must be finite and nonzero")

    @property
    def d(self) -> int:
        return self.a.size

    @property
    def matrix(self) -> np.ndarray:
        return np.outer(self.a, self.nu)

    @property
    def norm(self) -> float:
        """Frobenius norm, equal to ``|a|`` because ``nu`` is a unit vector."""
        return float(np.linalg.norm(self.a))

    def scaled(self, s: float) -> "RankOneTensor":
        return RankOneTensor(s * self.a, self.nu)

    def __repr__(self) -> str:
        return f"RankOneTensor(a={self.a.tolist()}, nu={self.nu.tolist()})"


@dataclass(frozen=True, eq=False)
class PhysicalProblem:
    d: int
    epsilon: float
    volume: float
    F: RankOneTensor
    xi: np.ndarray

    def __post_init__(self):
        xi = _frozen(self.xi)
        object.__setattr__(self, "xi", xi)
        if self.d < 2 or self.F.d != self.d or xi.size != self.d:
            raise ValidationError("dimension mismatch between d, F and xi")
        if not self.epsilon > 0:
            raise ValidationError("epsilon must be positive")
        if not self.volume > 0:
            raise ValidationError("volume must be positive")
        _check_unit(xi, "xi")


@dataclass(frozen=True, eq=False)
class CanonicalProblem:
    d: int
    G: RankOneTensor
    mu: float

    def __post_init__(self):
        if self.G.d != self.d:
            raise ValidationError("dimension mismatch between d and G")
        if not self.mu > 0:
            raise ValidationError("mu must be positive")


class RegimeTag(str, enum.Enum):
    SMALL = "SmallVolume"
    LARGE = "LargeVolume"


@dataclass(frozen=True)
class Regime:
    tag: RegimeTag
    threshold: float


@dataclass(frozen=True)
class LowerBoundConstants:
    """Powers of ``dist(nu, {+-e_d})`` in the lower-bound constants (metadata only)."""

    c_exponent: int
    C1_exponent: int


def rotation_to(xi) -> np.ndarray:
    """Rotation ``Q`` with ``Q e_d = xi``.

    Rotates in the plane ``span{e_d, xi}`` and is the identity on its orthogonal
    complement.  For ``xi = -e_d`` the rotation by pi in ``span{e_1, e_d}``
    is used, so the map is a pure function of ``xi``.
    """
    xi = np.asarray(xi, dtype=float)
    d = xi.size
    ed = basis_vector(d, d - 1)
    c = float(xi[-1])
    w = xi - c * ed
    s = float(np.linalg.norm(w))
    if s <= UNIT_TOL:
        if c > 0:
            return np.eye(d)
        Q = np.eye(d)
        Q[0, 0] = -1.0
        Q[d - 1, d - 1] = -1.0
        return Q
    w = w / s
    return (np.eye(d) + s * (np.outer(w, ed) - np.outer(ed, w))
            + (c - 1.0) * (np.outer(ed, ed) + np.outer(w, w)))


def canonicalize(p: PhysicalProblem) -> tuple[CanonicalProblem, float]:
    """Return the canonical problem and the factor ``epsilon**(2-d)``.

    Canonical energies ``E_1`` map back to physical ones via
    ``E_eps(V) = factor * E_1(mu)``.
    """
    Q = rotation_to(p.xi)
    nu = Q.T @ p.F.nu
    nu = nu / np.linalg.norm(nu)
    G = RankOneTensor(p.F.a / p.epsilon, nu)
    mu = p.epsilon ** p.d * p.volume
    return CanonicalProblem(p.d, G, mu), p.epsilon ** (2 - p.d)


def dist_to_normal(nu) -> float:
    """``dist(nu, {+e_d, -e_d})``."""
    nu = np.asarray(nu, dtype=float)
    ed = basis_vector(nu.size, nu.size - 1)
    return float(min(np.linalg.norm(nu - ed), np.linalg.norm(nu + ed)))


def is_degenerate(nu) -> bool:
    return dist_to_normal(nu) <= DEGENERACY_TOL


def classify_regime(cp: CanonicalProblem) -> Regime:
    threshold = cp.G.norm ** (-2 * cp.d)
    # equality is reported as large volume; both scaling branches agree there
    tag = RegimeTag.SMALL if cp.mu < threshold else RegimeTag.LARGE
    return Regime(tag, threshold)


def predicted_exponent(d: int, nu, regime: Regime | RegimeTag) -> Fraction:
    if d < 2:
        raise ValidationError("d must be at least 2")
    tag = regime.tag if isinstance(regime, Regime) else RegimeTag(regime)
    if tag is RegimeTag.SMALL:
        return Fraction(d - 1, d)
    if is_degenerate(nu):
        return Fraction(3 * d - 3, 3 * d - 1)
    return Fraction(2 * d - 2, 2 * d - 1)


def lower_bound_constants(d: int, nu) -> LowerBoundConstants:
    if is_degenerate(nu):
        raise DegenerateDirectionError("lower-bound constants are undefined for nu = +-e_d")
    if d == 2:
        return LowerBoundConstants(1, 6)
    return LowerBoundConstants(3, 2 * d + 6)


def unit_ball_volume(d: int) -> float:
    """``omega_d``, the Lebesgue measure of the unit ball in R^d."""
    return math.pi ** (d / 2) / math.gamma(d / 2 + 1)
