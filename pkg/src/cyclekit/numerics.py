"""Dense polynomial arithmetic, disk zero counting, and root extraction.

Coefficients are stored ascending (``coeffs[k]`` multiplies ``z**k``).
Trailing coefficients below ``1e-14 * max|coeffs|`` are stripped, since
products of closed-loop factors routinely produce numerically-zero
leading terms.
"""
from __future__ import annotations

import numpy as np

from .errors import BoundaryDegeneracyError, ParameterError, RootFailureError

_TRAILING_RTOL = 1e-14
_CIRCLE_RTOL = 1e-9  # relative |p| threshold for "zero on the circle"


def _normalized(arr):
    """Strip trailing near-zero coefficients (relative to the largest)."""
    top = float(np.max(np.abs(arr))) if arr.size else 0.0
    if top == 0.0:
        return arr[:1] * 0.0 if arr.size else np.zeros(1, dtype=arr.dtype)
    keep = np.nonzero(np.abs(arr) > _TRAILING_RTOL * top)[0]
    if keep.size == 0:
        return arr[:1] * 0.0
    return arr[: keep[-1] + 1]


class ComplexPoly:
    """Polynomial with complex coefficients, ascending powers."""

    __slots__ = ("coeffs",)

    def __init__(self, coeffs):
        arr = np.atleast_1d(np.asarray(coeffs, dtype=np.complex128)).ravel()
        arr = _normalized(arr.copy())
        arr.setflags(write=False)
        self.coeffs = arr

    @property
    def degree(self) -> int:
        """Degree after trailing strip; -1 for the zero polynomial."""
        if self.coeffs.size == 1 and self.coeffs[0] == 0:
            return -1
        return self.coeffs.size - 1

    def __call__(self, z):
        return poly_eval(self, z)

    def __repr__(self):
        return f"ComplexPoly({list(self.coeffs)})"


class RealPoly:
    """Polynomial with real coefficients; embeds losslessly in ComplexPoly."""

    __slots__ = ("coeffs",)

    def __init__(self, coeffs):
        arr = np.atleast_1d(np.asarray(coeffs, dtype=np.float64)).ravel()
        arr = _normalized(arr.copy())
        arr.setflags(write=False)
        self.coeffs = arr

    @property
    def degree(self) -> int:
        if self.coeffs.size == 1 and self.coeffs[0] == 0:
            return -1
        return self.coeffs.size - 1

    def to_complex(self) -> ComplexPoly:
        return ComplexPoly(self.coeffs)

    def __call__(self, z):
        return poly_eval(self, z)

    def __repr__(self):
        return f"RealPoly({list(self.coeffs)})"


def poly_eval(p, z):
    """Horner evaluation of ``p`` at ``z`` (scalar or ndarray)."""
    c = p.coeffs
    zz = np.asarray(z)
    if np.iscomplexobj(c) or np.iscomplexobj(zz):
        zz = zz.astype(np.complex128)
    else:
        zz = zz.astype(np.float64)
    out = np.full(zz.shape, c[-1], dtype=zz.dtype)
    for ck in c[-2::-1]:
        out = out * zz + ck
    if out.shape == ():
        return complex(out) if np.iscomplexobj(out) else float(out)
    return out


def _as_arrays(p, q):
    a, b = p.coeffs, q.coeffs
    real = not (np.iscomplexobj(a) or np.iscomplexobj(b))
    return a, b, real


def poly_mul(p, q):
    """Product polynomial; degrees add, coefficients convolve."""
    a, b, real = _as_arrays(p, q)
    c = np.convolve(a, b)
    return RealPoly(c) if real else ComplexPoly(c)


def poly_add(p, q):
    a, b, real = _as_arrays(p, q)
    n = max(a.size, b.size)
    c = np.zeros(n, dtype=np.float64 if real else np.complex128)
    c[: a.size] += a
    c[: b.size] += b
    return RealPoly(c) if real else ComplexPoly(c)


def poly_scale(p, s):
    c = p.coeffs * s
    if np.iscomplexobj(c):
        return ComplexPoly(c)
    return RealPoly(c)


def poly_pow(p, n: int):
    """Integer power by repeated multiplication."""
    if n < 0:
        raise ParameterError("negative polynomial power")
    out = RealPoly([1.0]) if not np.iscomplexobj(p.coeffs) else ComplexPoly([1.0])
    base = p
    k = n
    while k:
        if k & 1:
            out = poly_mul(out, base)
        k >>= 1
        if k:
            base = poly_mul(base, base)
    return out


def from_conjugate_root_pairs(angles) -> RealPoly:
    """Real monic product of unit-circle conjugate pairs prod (z-e^{it})(z-e^{-it}).

    Each angle must lie strictly inside (0, pi) so every pair is genuinely
    complex conjugate.
    """
    c = np.array([1.0])
    for t in np.atleast_1d(np.asarray(angles, dtype=float)):
        if not 0.0 < t < np.pi:
            raise ParameterError(f"angle {t} outside (0, pi)")
        c = np.convolve(c, [1.0, -2.0 * np.cos(t), 1.0])
    return RealPoly(c)


# ---------------------------------------------------------------------------
# zero counting by the argument principle
# ---------------------------------------------------------------------------

def winding_count(fn, radius: float = 1.0, *, initial: int = 64,
                  rel_tol: float = _CIRCLE_RTOL, max_evals: int = 400_000) -> int:
    """Winding number of ``fn(radius * e^{it})`` around the origin.

    The uniform sample is refined by bisection until every consecutive
    phase increment stays below pi/2, which guarantees correct branch
    tracking without global root isolation.  A sampled value within
    ``rel_tol`` (relative) of zero means the curve passes through the
    origin: raised as :class:`BoundaryDegeneracyError` so the caller can
    perturb the radius.
    """
    if radius <= 0.0:
        raise ParameterError("radius must be positive")
    m0 = int(min(max(64, initial), 16384))
    ts = np.linspace(0.0, 2.0 * np.pi, m0 + 1)
    vals = np.asarray(fn(radius * np.exp(1j * ts)), dtype=np.complex128)
    vals[-1] = vals[0]  # exact closure
    n_evals = m0 + 1

    vmax = float(np.max(np.abs(vals)))
    vmin = float(np.min(np.abs(vals)))

    while True:
        if vmax == 0.0 or vmin < rel_tol * vmax:
            raise BoundaryDegeneracyError(
                f"value within {rel_tol:g} of zero on circle radius {radius:g}")
        dphi = np.angle(vals[1:] * np.conj(vals[:-1]))
        wide = np.nonzero(np.abs(dphi) >= 0.5 * np.pi)[0]
        if wide.size == 0:
            break
        if n_evals + wide.size > max_evals:
            raise BoundaryDegeneracyError(
                "refinement budget exhausted; zero too close to circle")
        mid_t = 0.5 * (ts[wide] + ts[wide + 1])
        mid_v = np.asarray(fn(radius * np.exp(1j * mid_t)), dtype=np.complex128)
        n_evals += wide.size
        ts = np.insert(ts, wide + 1, mid_t)
        vals = np.insert(vals, wide + 1, mid_v)
        vmax = max(vmax, float(np.max(np.abs(mid_v))))
        vmin = min(vmin, float(np.min(np.abs(mid_v))))

    total = float(np.sum(dphi)) / (2.0 * np.pi)
    n = int(round(total))
    if abs(total - n) > 0.25:
        raise BoundaryDegeneracyError(
            f"winding sum {total:.6f} not close to an integer")
    return n


def winding_count_resilient(fn, radius: float = 1.0, *, retries: int = 5,
                            **kwargs) -> int:
    """`winding_count` with radius nudges of 1 +/- k*1e-6 on degeneracy."""
    last = None
    for attempt in range(retries + 1):
        if attempt == 0:
            r = radius
        else:
            k = (attempt + 1) // 2
            sign = -1.0 if attempt % 2 else 1.0
            r = radius * (1.0 + sign * k * 1e-6)
        try:
            return winding_count(fn, r, **kwargs)
        except BoundaryDegeneracyError as exc:
            last = exc
    raise last


def count_zeros_in_disk(p, radius: float = 1.0, *, rel_tol: float = _CIRCLE_RTOL,
                        max_evals: int = 400_000) -> int:
    """Count zeros (with multiplicity) of ``p`` strictly inside ``|z| < radius``,
    by the argument principle."""
    d = p.degree
    if d < 0:
        raise ParameterError("zero polynomial has no winding number")
    if d == 0:
        return 0
    return winding_count(lambda z: poly_eval(p, z), radius, initial=4 * d,
                         rel_tol=rel_tol, max_evals=max_evals)


def count_zeros_in_disk_resilient(p, radius: float = 1.0, *, retries: int = 5,
                                  **kwargs) -> int:
    """`count_zeros_in_disk` with radius nudges of 1 +/- k*1e-6 on degeneracy."""
    d = p.degree
    if d < 0:
        raise ParameterError("zero polynomial has no winding number")
    if d == 0:
        return 0
    return winding_count_resilient(lambda z: poly_eval(p, z), radius,
                                   retries=retries, initial=4 * d, **kwargs)


# ---------------------------------------------------------------------------
# root extraction (Aberth-Ehrlich simultaneous iteration)
# ---------------------------------------------------------------------------

_RENORM_EVERY = 4
_RENORM_LIMIT = 2.0 ** 600


def _eval_scaled(desc: np.ndarray, z: np.ndarray):
    """Evaluate p and p' at points ``z`` with power-of-two renormalization.

    Returns ``(pv, dv, exp2)``: the true values are ``pv * 2**exp2`` and
    ``dv * 2**exp2``.  The shared exponent only grows, so underflow of the
    rescaled addend is the correct rounding.
    """
    n = z.shape[0]
    pv = np.full(n, desc[0], dtype=np.complex128)
    dv = np.zeros(n, dtype=np.complex128)
    exp2 = np.zeros(n, dtype=np.int64)
    neg = -exp2
    for i in range(1, desc.size):
        dv = dv * z + pv
        c = desc[i]
        pv = pv * z + (np.ldexp(c.real, neg) + 1j * np.ldexp(c.imag, neg))
        if i % _RENORM_EVERY == 0:
            mag = np.maximum(np.abs(pv), np.abs(dv))
            big = mag > _RENORM_LIMIT
            if np.any(big):
                k = np.zeros(n, dtype=np.int64)
                k[big] = np.frexp(mag[big])[1]
                sc = np.ldexp(1.0, -k)
                pv = pv * sc
                dv = dv * sc
                exp2 = exp2 + k
                neg = -exp2
    return pv, dv, exp2


def _log2_abs(mant: np.ndarray, exp2: np.ndarray) -> np.ndarray:
    out = np.full(mant.shape, -np.inf)
    nz = mant != 0
    out[nz] = np.log2(np.abs(mant[nz])) + exp2[nz]
    return out


def _upper_hull(xs, ys):
    hull = []
    for x, y in zip(xs, ys):
        while len(hull) >= 2:
            (x1, y1), (x2, y2) = hull[-2], hull[-1]
            if (x2 - x1) * (y - y1) - (y2 - y1) * (x - x1) >= 0.0:
                hull.pop()
            else:
                break
        hull.append((x, y))
    return hull


def _initial_roots(asc: np.ndarray) -> np.ndarray:
    """Bini-style starting points: per-annulus radii from the upper convex
    hull of (k, log2|c_k|), angles spread with a deterministic offset."""
    nz = np.nonzero(asc)[0]
    xs = nz.astype(float)
    ys = np.log2(np.abs(asc[nz]))
    hull = _upper_hull(xs, ys)
    roots = []
    for s in range(len(hull) - 1):
        (k1, h1), (k2, h2) = hull[s], hull[s + 1]
        cnt = int(round(k2 - k1))
        r = 2.0 ** ((h1 - h2) / (k2 - k1))
        r = min(max(r, 1e-150), 1e150)
        js = np.arange(cnt)
        theta = 2.0 * np.pi * (js + 0.4) / cnt + 0.41 * (s + 1)
        roots.append(r * np.exp(1j * theta))
    return np.concatenate(roots)


def _quadratic_roots(c0: complex, c1: complex, c2: complex):
    if c0 == 0:
        return [0.0 + 0.0j, -c1 / c2]
    disc = c1 * c1 - 4.0 * c2 * c0
    sq = np.sqrt(complex(disc))
    if abs(c1 - sq) > abs(c1 + sq):
        qq = -0.5 * (c1 - sq)
    else:
        qq = -0.5 * (c1 + sq)
    return [qq / c2, c0 / qq]


def poly_roots(p, *, max_iter: int = 400, residual_rtol: float = 1e-10):
    """All complex roots of ``p`` by Aberth-Ehrlich simultaneous iteration.

    Exact zeros at the origin are factored out first; degrees one and two
    use closed forms.  Each remaining root is accepted when its residual
    satisfies ``|p(root)| <= residual_rtol * max|coeffs|`` or reaches the
    backward-stable evaluation floor at that point (relevant only for
    roots far from the unit scale).  Returns exactly ``degree`` roots;
    raises :class:`RootFailureError` (carrying the best iterate) otherwise.
    """
    if p.degree < 1:
        raise ParameterError("poly_roots requires degree >= 1")
    asc = np.asarray(p.coeffs, dtype=np.complex128)

    roots = []
    nz = np.nonzero(asc)[0]
    n_origin = int(nz[0]) if nz.size else 0
    if n_origin:
        roots.extend([0.0 + 0.0j] * n_origin)
        asc = asc[n_origin:]

    d = asc.size - 1
    if d == 0:
        return roots
    maxc = float(np.max(np.abs(asc)))
    # exact power-of-two normalization keeps residual semantics intact
    asc = asc * 2.0 ** (-round(np.log2(maxc)))
    maxc_n = float(np.max(np.abs(asc)))

    if d == 1:
        roots.append(complex(-asc[0] / asc[1]))
        return roots
    if d == 2:
        roots.extend(map(complex, _quadratic_roots(asc[0], asc[1], asc[2])))
        return roots

    desc = asc[::-1].copy()
    z = _initial_roots(asc)
    locked = np.zeros(d, dtype=bool)
    target_log2 = np.log2(residual_rtol * maxc_n)
    eps_log2 = np.log2(np.finfo(float).eps)

    # lock on stationarity only: a residual-based stop would freeze iterates
    # anywhere in the wide |p| ~ 0 moat around root clusters and break the
    # collective repulsion that distributes points into them
    for _ in range(max_iter):
        pv, dv, _ = _eval_scaled(desc, z)
        dead = dv == 0
        if np.any(dead):
            z = np.where(dead, z * (1.0 + 1e-8) + 1e-8, z)
            continue
        w = pv / dv
        diff = z[:, None] - z[None, :]
        np.fill_diagonal(diff, np.inf)
        s = np.sum(1.0 / diff, axis=1)
        denom = 1.0 - w * s
        denom = np.where(np.abs(denom) < 1e-12, 1.0, denom)
        corr = np.where(locked, 0.0, w / denom)
        z = z - corr
        locked |= (np.abs(corr) <= 4.0 * np.finfo(float).eps * (1.0 + np.abs(z)))
        if locked.all():
            break

    # validation: spec residual, or the evaluation-noise floor at that point
    pv, _, e2 = _eval_scaled(desc, z)
    logres = _log2_abs(pv, e2)
    env, _, env_e2 = _eval_scaled(np.abs(desc).astype(np.complex128),
                                  np.abs(z).astype(np.complex128))
    log_floor = _log2_abs(env, env_e2) + eps_log2 + np.log2(16.0 * d)
    ok = (logres <= target_log2) | (logres <= log_floor)
    if not bool(np.all(ok)):
        raise RootFailureError(
            f"{int(np.sum(~ok))} of {d} roots missed the residual target",
            best=roots + list(map(complex, z)))
    roots.extend(map(complex, z))
    return roots


def max_root_modulus(p, **kwargs) -> float:
    """Largest root modulus of ``p``; 0 for constants."""
    if p.degree < 1:
        return 0.0
    return max(abs(r) for r in poly_roots(p, **kwargs))
