"""Planar polygon utilities: clipping, areas, disc intersections, polar quadrature."""

from __future__ import annotations

import math

import numpy as np

_GL_CACHE: dict[int, tuple[np.ndarray, np.ndarray]] = {}


def gauss_legendre(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Nodes and weights on [0, 1]."""
    if n not in _GL_CACHE:
        x, w = np.polynomial.legendre.leggauss(n)
        _GL_CACHE[n] = (0.5 * (x + 1.0), 0.5 * w)
    return _GL_CACHE[n]


def area(poly: np.ndarray) -> float:
    """Signed shoelace area (positive for counterclockwise vertex order)."""
    if len(poly) < 3:
        return 0.0
    x, y = poly[:, 0], poly[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


def perimeter(poly: np.ndarray) -> float:
    if len(poly) < 2:
        return 0.0
    return float(np.sum(np.linalg.norm(np.roll(poly, -1, axis=0) - poly, axis=1)))


def clip_halfplane(poly: np.ndarray, n, c: float) -> np.ndarray:
    """Sutherland-Hodgman clip of ``poly`` against ``{x : n . x <= c}``."""
    n = np.asarray(n, dtype=float)
    out = []
    m = len(poly)
    for i in range(m):
        p, q = poly[i], poly[(i + 1) % m]
        fp, fq = float(n @ p) - c, float(n @ q) - c
        if fp <= 0:
            out.append(p)
        if fp * fq < 0:
            t = fp / (fp - fq)
            out.append(p + t * (q - p))
    return np.array(out, dtype=float).reshape(-1, 2)


def ensure_ccw(poly: np.ndarray) -> np.ndarray:
    return poly[::-1].copy() if area(poly) < 0 else poly


def _segment_disc_area(a: np.ndarray, b: np.ndarray, r: float) -> float:
    """Signed area of ``triangle(0, a, b)`` intersected with the disc ``B_r(0)``."""
    d = b - a
    A = float(d @ d)
    if A == 0.0:
        return 0.0
    B = float(a @ d)
    C = float(a @ a) - r * r
    ts = [0.0]
    disc = B * B - A * C
    if disc > 0:
        sq = math.sqrt(disc)
        for t in ((-B - sq) / A, (-B + sq) / A):
            if 0.0 < t < 1.0:
                ts.append(t)
    ts.append(1.0)
    total = 0.0
    for t0, t1 in zip(ts[:-1], ts[1:]):
        p, q = a + t0 * d, a + t1 * d
        mid = 0.5 * (p + q)
        cross = float(p[0] * q[1] - p[1] * q[0])
        if float(mid @ mid) <= r * r:
            total += 0.5 * cross
        else:
            ang = math.atan2(cross, float(p @ q))
            total += 0.5 * r * r * ang
    return total


def disc_intersection_area(poly: np.ndarray, r: float) -> float:
    """Exact area of ``poly`` intersected with the disc of radius ``r`` at the origin."""
    if len(poly) < 3:
        return 0.0
    s = 0.0
    for i in range(len(poly)):
        s += _segment_disc_area(poly[i], poly[(i + 1) % len(poly)], r)
    return abs(s)


def _ray_interval(poly: np.ndarray, phi: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Radial extent ``[r_in, r_out]`` of rays at angles ``phi`` inside a convex polygon."""
    poly = ensure_ccw(poly)
    e = np.stack([np.cos(phi), np.sin(phi)], axis=1)
    lo = np.zeros(len(phi))
    hi = np.full(len(phi), np.inf)
    m = len(poly)
    for i in range(m):
        p, q = poly[i], poly[(i + 1) % m]
        t = q - p
        nrm = np.array([t[1], -t[0]])  # outward normal for ccw order
        c = float(nrm @ p)
        ne = e @ nrm
        with np.errstate(divide="ignore", invalid="ignore"):
            rr = c / ne
        pos = ne > 1e-300
        neg = ne < -1e-300
        hi = np.where(pos, np.minimum(hi, rr), hi)
        lo = np.where(neg, np.maximum(lo, rr), lo)
        bad = (~pos) & (~neg) & (c < 0)
        hi = np.where(bad, -1.0, hi)
    return lo, hi


def _line_circle_angles(p: np.ndarray, q: np.ndarray, r: float) -> list[float]:
    d = q - p
    A = float(d @ d)
    B = float(p @ d)
    C = float(p @ p) - r * r
    disc = B * B - A * C
    out = []
    if A > 0 and disc >= 0:
        sq = math.sqrt(disc)
        for t in ((-B - sq) / A, (-B + sq) / A):
            if -1e-12 <= t <= 1 + 1e-12:
                x = p + t * d
                out.append(math.atan2(x[1], x[0]))
    return out


def polar_integrate(poly: np.ndarray, f, r_min: float, r_max: float,
                    n_phi: int = 24, n_r: int = 24, splits: int = 4) -> float:
    """Integrate ``f(points) -> values`` over ``poly`` intersected with the annulus
    ``r_min < |x| < r_max``.

    ``poly`` must be convex and must not contain the origin in its interior.
    Angular breakpoints at vertices and circle crossings make the integrand
    smooth on each Gauss-Legendre panel.
    """
    if len(poly) < 3 or r_max <= r_min:
        return 0.0
    ang = np.arctan2(poly[:, 1], poly[:, 0])
    if np.any(np.hypot(poly[:, 0], poly[:, 1]) < 1e-300):
        raise ValueError("polygon vertex at the origin is not supported")
    # unwrap the angular span (polygon is convex and excludes the origin)
    ref = ang[0]
    rel = np.mod(ang - ref + math.pi, 2 * math.pi) - math.pi
    a0, a1 = ref + rel.min(), ref + rel.max()
    breaks = set((ref + rel).tolist())
    m = len(poly)
    for i in range(m):
        for r in (r_min, r_max):
            if r <= 0:
                continue
            for a in _line_circle_angles(poly[i], poly[(i + 1) % m], r):
                a = ref + (math.atan2(math.sin(a - ref), math.cos(a - ref)))
                if a0 < a < a1:
                    breaks.add(a)
    bps = np.array(sorted(breaks))
    xg, wg = gauss_legendre(n_phi)
    xr, wr = gauss_legendre(n_r)
    total = 0.0
    for b0, b1 in zip(bps[:-1], bps[1:]):
        if b1 - b0 < 1e-15:
            continue
        edges = np.linspace(b0, b1, splits + 1)
        for c0, c1 in zip(edges[:-1], edges[1:]):
            phi = c0 + (c1 - c0) * xg
            lo, hi = _ray_interval(poly, phi)
            lo = np.maximum(lo, r_min)
            hi = np.minimum(hi, r_max)
            ln = np.clip(hi - lo, 0.0, None)
            if not np.any(ln > 0):
                continue
            r = lo[:, None] + ln[:, None] * xr[None, :]
            pts = np.stack([r * np.cos(phi)[:, None], r * np.sin(phi)[:, None]], axis=-1)
            vals = f(pts.reshape(-1, 2)).reshape(r.shape)
            inner = (vals * r * wr[None, :]).sum(axis=1) * ln
            total += float((inner * wg).sum() * (c1 - c0))
    return total
