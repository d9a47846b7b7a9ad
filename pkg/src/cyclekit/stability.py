"""Geometric stability analysis of the mixing closed loop.

The loop's linearization around a cycle is Schur stable exactly when every
cycle multiplier, after the inversion ``w -> 1/conj(w)``, avoids the image
of the closed unit disk under the loop transfer function

    Phi(z) = (1-gamma)^T * z * q(z)^T / (1 - gamma*p(z))^T,

with q and p the channel generating polynomials.  Membership is decided by
counting preimages with the argument principle, which stays correct even
when Phi is not univalent.  The same data yields the characteristic
polynomial of the closed loop, whose root moduli give quantitative margins.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .coeffs import MixingCoefficients, feedback_poly, weights_poly
from .errors import (BoundaryDegeneracyError, InvalidTransferError,
                     ParameterError, ResolutionError, RootFailureError)
from .numerics import (ComplexPoly, RealPoly, count_zeros_in_disk_resilient,
                       poly_eval, poly_mul, poly_pow, poly_roots,
                       winding_count_resilient)

_CIRCLE_RTOL = 1e-9


class TransferFunction:
    """Loop transfer function with cached numerator/denominator polynomials."""

    def __init__(self, weights, feedback, gamma: float, period: int):
        q = weights_poly(weights)
        p = feedback_poly(feedback)
        if abs(poly_eval(q, 1.0) - 1.0) > 1e-12:
            raise ParameterError("weights must sum to 1")
        if abs(poly_eval(p, 1.0) - 1.0) > 1e-12:
            raise ParameterError("feedback weights must sum to 1")
        if not 0.0 <= gamma < 1.0:
            raise ParameterError("gamma must be in [0, 1)")
        if period < 1:
            raise ParameterError("period must be >= 1")
        self.weights_poly = q
        self.feedback_poly = p
        self.gamma = float(gamma)
        self.period = int(period)
        # expanded numerator (1-gamma)^T z q^T and denominator (1-gamma p)^T
        # feed the polynomial machinery; evaluation goes through the factored
        # form, which stays accurate where the expansion cancels wildly
        self.num = poly_mul(RealPoly([0.0, (1.0 - gamma) ** period]),
                            poly_pow(q, period))
        one_minus_gp = RealPoly(np.concatenate(([1.0], -gamma * p.coeffs[1:])) if p.coeffs.size > 1
                                else [1.0])
        self.den = poly_pow(one_minus_gp, period)
        self._base = one_minus_gp
        if gamma > 0.0:
            try:
                inside = count_zeros_in_disk_resilient(one_minus_gp, 1.0)
            except BoundaryDegeneracyError as exc:
                raise InvalidTransferError(f"pole on the unit circle: {exc}") from exc
            if inside:
                raise InvalidTransferError(
                    f"{inside} pole(s) of the transfer function inside the unit disk")
        value_at_one = self(1.0)
        if abs(value_at_one - 1.0) > 1e-10:
            raise ParameterError(f"transfer function is {value_at_one} at z=1, expected 1")

    @classmethod
    def from_coefficients(cls, coeffs: MixingCoefficients) -> "TransferFunction":
        return cls(coeffs.weights, coeffs.feedback, coeffs.params.gamma,
                   coeffs.params.period)

    def num_den_values(self, z):
        """Factored evaluation of numerator and denominator at ``z``."""
        z = np.asarray(z, dtype=np.complex128)
        qv = poly_eval(self.weights_poly, z)
        bv = poly_eval(self._base, z)
        t = self.period
        return ((1.0 - self.gamma) ** t) * z * qv ** t, bv ** t

    def __call__(self, z):
        scalar = np.asarray(z).shape == ()
        nv, dv = self.num_den_values(np.atleast_1d(np.asarray(z, dtype=np.complex128)))
        out = nv / dv
        return complex(out[0]) if scalar else out

    def circle_values(self, t):
        """Values on the unit circle at angles ``t``."""
        return self(np.exp(1j * np.asarray(t, dtype=float)))


@dataclass(frozen=True)
class BoundaryCurve:
    """Closed image of the unit circle, adaptively sampled."""

    t: np.ndarray       # increasing angles in [0, 2*pi]
    points: np.ndarray  # complex values at those angles


def curve_of_function(fn, resolution: float = 0.05, max_points: int = 200_000,
                      initial: int = 512) -> BoundaryCurve:
    """Sample ``fn(t)`` over [0, 2*pi] until neighbors are within ``resolution``."""
    ts = np.linspace(0.0, 2.0 * np.pi, initial + 1)
    vs = np.asarray(fn(ts), dtype=np.complex128)
    vs[-1] = vs[0]
    while True:
        gap = np.abs(np.diff(vs))
        wide = np.nonzero(gap > resolution)[0]
        if wide.size == 0:
            break
        if ts.size + wide.size > max_points:
            raise ResolutionError(
                f"curve refinement exceeded {max_points} points at resolution {resolution}")
        mid_t = 0.5 * (ts[wide] + ts[wide + 1])
        mid_v = np.asarray(fn(mid_t), dtype=np.complex128)
        ts = np.insert(ts, wide + 1, mid_t)
        vs = np.insert(vs, wide + 1, mid_v)
    return BoundaryCurve(t=ts, points=vs)


def boundary_curve(tf: TransferFunction, resolution: float = 0.05,
                   max_points: int = 200_000) -> BoundaryCurve:
    """Adaptively sampled image of the unit circle under the transfer function."""
    return curve_of_function(tf.circle_values, resolution, max_points)


# ---------------------------------------------------------------------------
# multiplier admissibility
# ---------------------------------------------------------------------------

class AdmissibilityTester:
    """Counts disk preimages of ``1/conj(mu)`` under the transfer function.

    A dense unit-circle sample of the factored numerator and denominator is
    cached; when the sampled phase increments of ``num - w*den`` are all
    below pi/2 the winding number is read off directly, otherwise the exact
    adaptive counter reruns that single membership query.
    """

    def __init__(self, tf: TransferFunction, samples: int | None = None):
        self.tf = tf
        deg = max(tf.num.degree, tf.den.degree, 1)
        if samples is None:
            samples = min(max(512, 8 * deg), 8192)
        t = np.linspace(0.0, 2.0 * np.pi, samples + 1)
        z = np.exp(1j * t)
        self._av, self._bv = tf.num_den_values(z)
        self._av[-1] = self._av[0]
        self._bv[-1] = self._bv[0]
        self._initial = min(max(64, 4 * deg), 16384)

    def _generic(self, w: complex) -> bool:
        def fn(z):
            nv, dv = self.tf.num_den_values(z)
            return nv - w * dv
        try:
            return winding_count_resilient(fn, 1.0, initial=self._initial) == 0
        except BoundaryDegeneracyError:
            return False  # on the region boundary: treated as inadmissible

    def admissible(self, mu: complex) -> bool:
        mu = complex(mu)
        if mu == 0.0:
            return True
        w = 1.0 / np.conj(mu)
        v = self._av - w * self._bv
        absv = np.abs(v)
        vmax = float(absv.max())
        if vmax == 0.0 or float(absv.min()) < _CIRCLE_RTOL * vmax:
            return self._generic(w)
        dphi = np.angle(v[1:] * np.conj(v[:-1]))
        if float(np.max(np.abs(dphi))) >= 0.5 * np.pi:
            return self._generic(w)
        return int(round(float(np.sum(dphi)) / (2.0 * np.pi))) == 0

    def admissible_many(self, mus: np.ndarray) -> np.ndarray:
        """Vectorized admissibility for a flat array of multipliers."""
        mus = np.asarray(mus, dtype=np.complex128).ravel()
        out = np.zeros(mus.size, dtype=bool)
        zero = mus == 0.0
        out[zero] = True
        todo = np.nonzero(~zero)[0]
        if todo.size == 0:
            return out
        w = 1.0 / np.conj(mus[todo])
        v = self._av[None, :] - w[:, None] * self._bv[None, :]
        absv = np.abs(v)
        vmax = absv.max(axis=1)
        degen = (vmax == 0.0) | (absv.min(axis=1) < _CIRCLE_RTOL * vmax)
        dphi = np.angle(v[:, 1:] * np.conj(v[:, :-1]))
        wide = np.max(np.abs(dphi), axis=1) >= 0.5 * np.pi
        fast = ~(degen | wide)
        winding = np.rint(np.sum(dphi[fast], axis=1) / (2.0 * np.pi)).astype(int)
        out[todo[fast]] = winding == 0
        for idx in todo[np.nonzero(~fast)[0]]:
            out[idx] = self.admissible(complex(mus[idx]))
        return out


def multiplier_admissible(tf: TransferFunction, mu: complex) -> bool:
    """True iff the closed loop is Schur stable for this single multiplier."""
    return AdmissibilityTester(tf).admissible(mu)


# ---------------------------------------------------------------------------
# characteristic polynomial and Schur margin
# ---------------------------------------------------------------------------

def characteristic_factor(tf: TransferFunction, mu: complex) -> ComplexPoly:
    """Single-multiplier factor den(z) - mu * num(z)."""
    a, b = tf.num.coeffs, tf.den.coeffs
    n = max(a.size, b.size)
    f = np.zeros(n, dtype=np.complex128)
    f[: b.size] += b
    f[: a.size] -= mu * a
    return ComplexPoly(f)


def characteristic_poly(multipliers, tf: TransferFunction) -> ComplexPoly:
    """Product of the per-multiplier factors.

    The closed-loop characteristic polynomial in the eigenvalue variable
    ``lam`` is ``lam**(N*T*m) * f(1/lam)`` for the returned ``f``.
    """
    mults = list(multipliers)
    if not mults:
        raise ParameterError("need at least one multiplier")
    f = ComplexPoly([1.0])
    for mu in mults:
        f = poly_mul(f, characteristic_factor(tf, mu))
    return f


def schur_margin(multipliers, tf: TransferFunction) -> float:
    """1 minus the spectral radius of the closed loop; positive means stable.

    Root moduli are taken per factor (the factors' roots union to the
    product's), inverting each factor into its eigenvalue form.
    """
    radius = 0.0
    for mu in multipliers:
        f = characteristic_factor(tf, mu)
        if f.degree < 1:
            continue
        lam_poly = ComplexPoly(f.coeffs[::-1])
        if lam_poly.degree >= 1:
            radius = max(radius, max(abs(r) for r in poly_roots(lam_poly)))
    return 1.0 - radius


def schur_stable(multipliers, tf: TransferFunction) -> tuple[bool, float]:
    """(stable, margin) for the whole multiplier set."""
    margin = schur_margin(multipliers, tf)
    return margin > 0.0, margin


# ---------------------------------------------------------------------------
# scalar metrics of the admissible region
# ---------------------------------------------------------------------------

def _bisect(fn, lo, hi, flo, tol=1e-12, max_iter=200):
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        if hi - lo < tol:
            return mid
        fm = fn(mid)
        if fm == 0.0:
            return mid
        if (fm > 0) == (flo > 0):
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def real_crossing_min(tf: TransferFunction, samples: int = 2048) -> float:
    """Minimum of Re Phi over the real-axis crossings of the circle image.

    Crossing angles are located by sign-change bisection of Im Phi(e^{it})
    on (0, pi) refined to 1e-12; t = 0 and t = pi are real by symmetry and
    always included.
    """
    values = [1.0, float(np.real(tf(-1.0 + 0.0j)))]
    ts = np.linspace(0.0, np.pi, samples + 1)[1:-1]
    im = np.imag(tf.circle_values(ts))
    sign = np.sign(im)
    flips = np.nonzero(sign[:-1] * sign[1:] < 0)[0]
    for i in flips:
        fn = lambda t: float(np.imag(tf(np.exp(1j * t))))
        t_star = _bisect(fn, float(ts[i]), float(ts[i + 1]), float(im[i]))
        values.append(float(np.real(tf(np.exp(1j * t_star)))))
    exact = np.nonzero(im == 0.0)[0]
    values.extend(float(np.real(tf(np.exp(1j * ts[i])))) for i in exact)
    return min(values)


_INVPHI = (np.sqrt(5.0) - 1.0) / 2.0


def _golden_min(fn, lo, hi, tol=1e-10):
    a, b = lo, hi
    c = b - _INVPHI * (b - a)
    d = a + _INVPHI * (b - a)
    fc, fd = fn(c), fn(d)
    while b - a > tol:
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - _INVPHI * (b - a)
            fc = fn(c)
        else:
            a, c, fc = c, d, fd
            d = a + _INVPHI * (b - a)
            fd = fn(d)
    return 0.5 * (a + b)


def real_part_min(tf: TransferFunction, samples: int = 2048) -> float:
    """Global minimum of Re Phi(e^{it}) over [0, pi].

    Dense sampling brackets every local minimum; each bracket is polished
    by golden-section search.
    """
    ts = np.linspace(0.0, np.pi, samples + 1)
    re = np.real(tf.circle_values(ts))
    best = float(np.min(re))
    interior = np.nonzero((re[1:-1] <= re[:-2]) & (re[1:-1] <= re[2:]))[0] + 1
    fn = lambda t: float(np.real(tf(np.exp(1j * t))))
    for i in interior:
        t_star = _golden_min(fn, float(ts[i - 1]), float(ts[i + 1]))
        best = min(best, fn(t_star))
    return best


def multiplier_bounds(i_value: float, j_value: float) -> tuple[float, float]:
    """Admissible-range bounds from the two scalar metrics.

    Returns (largest admissible real multiplier magnitude, radius of the
    admissible disk through the origin); infinite when the metric vanishes.
    """
    real_bound = np.inf if i_value == 0.0 else 1.0 / abs(i_value)
    disk_bound = np.inf if j_value == 0.0 else 1.0 / (2.0 * abs(j_value))
    return float(real_bound), float(disk_bound)


# ---------------------------------------------------------------------------
# region measures and rasters
# ---------------------------------------------------------------------------

def region_length(tf: TransferFunction, window: tuple[float, float] = (-1e4, 1.0),
                  xtol: float = 1e-9, linear_samples: int = 2048,
                  log_samples: int = 512) -> float:
    """Measure of the admissible part of the real axis left of 1.

    Scans the window with a linear grid (log-spaced beyond -50), then
    bisects every admissibility transition.  If the region touches the
    window edge the result is a lower bound.
    """
    lo, hi = float(window[0]), float(window[1])
    if not lo < hi <= 1.0:
        raise ParameterError("window must satisfy lo < hi <= 1")
    xs = [np.linspace(max(lo, -50.0), hi, linear_samples)]
    if lo < -50.0:
        xs.append(-np.geomspace(50.0, -lo, log_samples))
    grid = np.unique(np.concatenate(xs))
    tester = AdmissibilityTester(tf)
    flags = tester.admissible_many(grid.astype(np.complex128))

    total = 0.0
    runs = []
    start = None
    for i, f in enumerate(flags):
        if f and start is None:
            start = i
        elif not f and start is not None:
            runs.append((start, i - 1))
            start = None
    if start is not None:
        runs.append((start, len(flags) - 1))

    def refine(x_adm, x_not):
        a, b = x_adm, x_not
        while abs(b - a) > xtol:
            mid = 0.5 * (a + b)
            if tester.admissible(mid):
                a = mid
            else:
                b = mid
        return 0.5 * (a + b)

    for i0, i1 in runs:
        left = grid[i0] if i0 == 0 else refine(grid[i0], grid[i0 - 1])
        right = grid[i1] if i1 == len(grid) - 1 else refine(grid[i1], grid[i1 + 1])
        total += right - left
    return float(total)


def region_area(tf: TransferFunction,
                window: tuple[tuple[float, float], tuple[float, float]] = ((-25.0, 1.0), (-13.0, 13.0)),
                shape: tuple[int, int] = (400, 400)) -> tuple[float, float]:
    """Pixel-quadrature area of the admissible set with Re z < 1.

    Returns (area, error_estimate); the estimate is half a pixel's area per
    boundary pixel (a pixel whose 4-neighborhood is not unanimous).
    """
    (x0, x1), (y0, y1) = window
    nx, ny = shape
    dx = (x1 - x0) / nx
    dy = (y1 - y0) / ny
    cx = x0 + (np.arange(nx) + 0.5) * dx
    cy = y0 + (np.arange(ny) + 0.5) * dy
    tester = AdmissibilityTester(tf)
    flags = np.zeros((ny, nx), dtype=bool)
    for row in range(ny):
        mus = cx + 1j * cy[row]
        keep = cx < 1.0
        res = np.zeros(nx, dtype=bool)
        res[keep] = tester.admissible_many(mus[keep])
        flags[row] = res
    area = float(np.sum(flags)) * dx * dy
    interior = flags[1:-1, 1:-1]
    boundary = ((flags[:-2, 1:-1] != interior) | (flags[2:, 1:-1] != interior) |
                (flags[1:-1, :-2] != interior) | (flags[1:-1, 2:] != interior))
    n_boundary = int(np.sum(boundary))
    return area, 0.5 * dx * dy * n_boundary


def spectral_radius_raster(tf: TransferFunction,
                           window: tuple[tuple[float, float], tuple[float, float]] = ((-25.0, 1.0), (-13.0, 13.0)),
                           shape: tuple[int, int] = (400, 400)) -> np.ndarray:
    """Closed-loop spectral radius per multiplier pixel; < 1 means stable.

    Degree-one and degree-two factors go through vectorized closed forms;
    anything higher falls back to per-pixel root extraction.  Root failures
    become NaN pixels.
    """
    (x0, x1), (y0, y1) = window
    nx, ny = shape
    cx = x0 + (np.arange(nx) + 0.5) * (x1 - x0) / nx
    cy = y0 + (np.arange(ny) + 0.5) * (y1 - y0) / ny
    mus = cx[None, :] + 1j * cy[:, None]

    a, b = tf.num.coeffs, tf.den.coeffs
    n = max(a.size, b.size)
    av = np.zeros(n, dtype=np.complex128)
    bv = np.zeros(n, dtype=np.complex128)
    av[: a.size] = a
    bv[: b.size] = b
    deg = n - 1
    if deg == 1:
        c1 = bv[1] - mus * av[1]
        c0 = bv[0] - mus * av[0]
        out = np.abs(c1 / c0)
        return np.real(out)
    if deg == 2:
        # eigenvalue quadratic c0*lam^2 + c1*lam + c2 from reversed factor
        c0 = bv[0] - mus * av[0]
        c1 = bv[1] - mus * av[1]
        c2 = bv[2] - mus * av[2]
        disc = np.sqrt(c1 * c1 - 4.0 * c0 * c2)
        r1 = np.abs((-c1 + disc) / (2.0 * c0))
        r2 = np.abs((-c1 - disc) / (2.0 * c0))
        return np.maximum(r1, r2)

    out = np.empty((ny, nx))
    for row in range(ny):
        for col in range(nx):
            f = ComplexPoly(bv - mus[row, col] * av)
            if f.degree < 1:
                out[row, col] = 0.0
                continue
            lam = ComplexPoly(f.coeffs[::-1])
            if lam.degree < 1:
                out[row, col] = 0.0
                continue
            try:
                out[row, col] = max(abs(r) for r in poly_roots(lam))
            except RootFailureError:
                out[row, col] = np.nan
    return out


# ---------------------------------------------------------------------------
# conjecture probes
# ---------------------------------------------------------------------------

def typically_real(tf: TransferFunction, samples: int = 4096) -> bool:
    """True iff Im Phi keeps one sign on the open upper half circle."""
    ts = np.linspace(0.0, np.pi, samples + 2)[1:-1]
    im = np.imag(tf.circle_values(ts))
    scale = float(np.max(np.abs(im)))
    if scale == 0.0:
        return True
    tol = 1e-9 * scale
    return not (bool(np.any(im > tol)) and bool(np.any(im < -tol)))


def _segments_intersect(p, p2, q, q2, tol):
    d1 = p2 - p
    d2 = q2 - q
    denom = d1.real * d2.imag - d1.imag * d2.real
    rx, ry = (q - p).real, (q - p).imag
    if abs(denom) <= tol:
        # parallel: intersect only if collinear and overlapping
        if abs(rx * d1.imag - ry * d1.real) > tol:
            return False
        l1 = abs(d1)
        if l1 == 0.0:
            return False
        t0 = (rx * d1.real + ry * d1.imag) / (l1 * l1)
        t1 = t0 + (d2.real * d1.real + d2.imag * d1.imag) / (l1 * l1)
        lo, hi = min(t0, t1), max(t0, t1)
        return hi >= 0.0 and lo <= 1.0
    t = (rx * d2.imag - ry * d2.real) / denom
    u = (rx * d1.imag - ry * d1.real) / denom
    eps = 1e-12
    return eps < t < 1.0 - eps and eps < u < 1.0 - eps


def curve_is_simple(curve: BoundaryCurve) -> bool:
    """No self-intersection of the closed polygonal curve (proxy for
    univalence of the map that produced it)."""
    pts = curve.points
    if abs(pts[0] - pts[-1]) > 1e-9 * max(1.0, float(np.max(np.abs(pts)))):
        raise ParameterError("curve is not closed")
    pts = pts[:-1]
    n = pts.size
    if n < 4:
        return True
    seg_a = pts
    seg_b = np.roll(pts, -1)
    xmin = np.minimum(seg_a.real, seg_b.real)
    xmax = np.maximum(seg_a.real, seg_b.real)
    ymin = np.minimum(seg_a.imag, seg_b.imag)
    ymax = np.maximum(seg_a.imag, seg_b.imag)
    scale = float(np.max(np.abs(pts))) or 1.0
    tol = 1e-12 * scale * scale
    order = np.argsort(xmin, kind="stable")
    active: list[int] = []
    for idx in order:
        lo = xmin[idx]
        active = [j for j in active if xmax[j] >= lo]
        for j in active:
            gap = (idx - j) % n
            if gap <= 1 or gap >= n - 1:
                continue  # adjacent segments share an endpoint
            if ymin[idx] > ymax[j] or ymax[idx] < ymin[j]:
                continue
            if _segments_intersect(seg_a[idx], seg_b[idx], seg_a[j], seg_b[j], tol):
                return False
        active.append(int(idx))
    return True


# ---------------------------------------------------------------------------
# report
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class StabilityReport:
    """Admissibility verdicts and quantitative region metrics."""

    multipliers: tuple
    admissible: tuple
    stable: bool
    margin: float
    i_value: float
    j_value: float
    real_bound: float
    disk_bound: float


def stability_report(tf: TransferFunction, multipliers) -> StabilityReport:
    tester = AdmissibilityTester(tf)
    mults = tuple(complex(m) for m in multipliers)
    adm = tuple(bool(tester.admissible(m)) for m in mults)
    stable, margin = schur_stable(mults, tf)
    i_val = real_crossing_min(tf)
    j_val = real_part_min(tf)
    real_bound, disk_bound = multiplier_bounds(i_val, j_val)
    return StabilityReport(multipliers=mults, admissible=adm, stable=stable,
                           margin=margin, i_value=i_val, j_value=j_val,
                           real_bound=real_bound, disk_bound=disk_bound)
