"""Built-in chaotic maps with analytic Jacobians and seeding domains.

Every map evaluates through numpy broadcasting, so ``system(states)`` works
on a single state of shape (m,) or on any batch of shape (..., m) with
identical per-element arithmetic.  Jacobians are single-point.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import DivergenceError, NonsmoothPointError, ParameterError
from .numerics import poly_roots

ESCAPE_BOUND = 1e8


@dataclass(frozen=True)
class MapSystem:
    """An m-dimensional map with evaluation, Jacobian, and seeding box."""

    name: str
    dim: int
    params: dict
    domain: np.ndarray  # shape (m, 2): per-axis [low, high]
    _eval: Callable = field(repr=False)
    _jacobian: Callable = field(repr=False)

    def __call__(self, state):
        return self._eval(np.asarray(state, dtype=float), self.params)

    def jacobian(self, state):
        return self._jacobian(np.asarray(state, dtype=float), self.params)


# --- map definitions -------------------------------------------------------

def _henon_eval(s, p):
    x, y = s[..., 0], s[..., 1]
    return np.stack([1.0 - p["a"] * x * x + y, p["b"] * x], axis=-1)


def _henon_jac(s, p):
    x = s[0]
    return np.array([[-2.0 * p["a"] * x, 1.0], [p["b"], 0.0]])


def _elhadj_sprott_eval(s, p):
    x, y = s[..., 0], s[..., 1]
    return np.stack([1.0 - p["a"] * np.sin(x) + p["b"] * y, x], axis=-1)


def _elhadj_sprott_jac(s, p):
    return np.array([[-p["a"] * np.cos(s[0]), p["b"]], [1.0, 0.0]])


def _ikeda_phase(x, y, p):
    return p["c"] - p["k"] / (1.0 + x * x + y * y)


def _ikeda_eval(s, p):
    x, y = s[..., 0], s[..., 1]
    u = _ikeda_phase(x, y, p)
    cu, su = np.cos(u), np.sin(u)
    r = p["r"]
    return np.stack([1.0 + r * (x * cu - y * su), r * (x * su + y * cu)], axis=-1)


def _ikeda_jac(s, p):
    x, y = s[0], s[1]
    den = 1.0 + x * x + y * y
    u = _ikeda_phase(x, y, p)
    ux = 2.0 * p["k"] * x / (den * den)
    uy = 2.0 * p["k"] * y / (den * den)
    cu, su = np.cos(u), np.sin(u)
    r = p["r"]
    g = x * su + y * cu   # d/du of -(x cos u - y sin u)
    h = x * cu - y * su   # d/du of  (x sin u + y cos u)
    return np.array([
        [r * (cu - g * ux), r * (-su - g * uy)],
        [r * (su + h * ux), r * (cu + h * uy)],
    ])


def _lozi_eval(s, p):
    x, y = s[..., 0], s[..., 1]
    return np.stack([1.0 - p["a"] * np.abs(x) + p["b"] * y, x], axis=-1)


def _lozi_jac(s, p):
    x = s[0]
    if x == 0.0:
        raise NonsmoothPointError("Lozi Jacobian undefined at x = 0")
    return np.array([[-p["a"] * np.sign(x), p["b"]], [1.0, 0.0]])


def _holmes_eval(s, p):
    x, y = s[..., 0], s[..., 1]
    return np.stack([y, -p["b"] * x + p["d"] * y - y ** 3], axis=-1)


def _holmes_jac(s, p):
    y = s[1]
    return np.array([[0.0, 1.0], [-p["b"], p["d"] - 3.0 * y * y]])


def _logistic_eval(s, p):
    x = s[..., 0]
    return np.stack([p["mu"] * x * (1.0 - x)], axis=-1)


def _logistic_jac(s, p):
    return np.array([[p["mu"] * (1.0 - 2.0 * s[0])]])


_REGISTRY = {
    "henon": dict(
        dim=2, params={"a": 1.4, "b": 0.3},
        domain=[[-1.5, 1.5], [-0.45, 0.45]],
        ev=_henon_eval, jac=_henon_jac),
    "elhadj_sprott": dict(
        dim=2, params={"a": 4.0, "b": 0.9},
        domain=[[-5.0, 5.0], [-5.0, 5.0]],
        ev=_elhadj_sprott_eval, jac=_elhadj_sprott_jac),
    "ikeda": dict(
        dim=2, params={"r": 0.9, "c": 0.4, "k": 6.0},
        domain=[[-1.0, 2.0], [-2.0, 1.0]],
        ev=_ikeda_eval, jac=_ikeda_jac),
    "lozi": dict(
        dim=2, params={"a": 1.7, "b": 0.5},
        domain=[[-1.5, 1.5], [-1.5, 1.5]],
        ev=_lozi_eval, jac=_lozi_jac),
    "holmes": dict(
        dim=2, params={"b": 0.2, "d": 2.77},
        domain=[[-2.0, 2.0], [-2.0, 2.0]],
        ev=_holmes_eval, jac=_holmes_jac),
    "logistic": dict(
        dim=1, params={"mu": 3.9},
        domain=[[0.0, 1.0]],
        ev=_logistic_eval, jac=_logistic_jac),
}


def list_builtin():
    return sorted(_REGISTRY)


def builtin(name: str, **overrides) -> MapSystem:
    """Look up a registered map; keyword arguments override its constants."""
    try:
        entry = _REGISTRY[name]
    except KeyError:
        raise ParameterError(
            f"unknown map {name!r}; available: {', '.join(list_builtin())}") from None
    params = dict(entry["params"])
    for key, val in overrides.items():
        if key not in params:
            raise ParameterError(f"map {name!r} has no parameter {key!r}")
        params[key] = float(val)
    domain = np.asarray(entry["domain"], dtype=float)
    domain.setflags(write=False)
    return MapSystem(name=name, dim=entry["dim"], params=params, domain=domain,
                     _eval=entry["ev"], _jacobian=entry["jac"])


# --- iteration and multipliers ---------------------------------------------

def check_state(state, escape: float = ESCAPE_BOUND):
    """Raise DivergenceError on non-finite values or escape."""
    if not np.all(np.isfinite(state)) or np.max(np.abs(state)) > escape:
        raise DivergenceError(f"state escaped: {state}")


def iterate(system: MapSystem, x0, steps: int, escape: float = ESCAPE_BOUND) -> np.ndarray:
    """Open-loop trajectory of ``steps`` applications; returns steps+1 states."""
    x = np.asarray(x0, dtype=float).reshape(system.dim)
    check_state(x, escape)
    out = np.empty((steps + 1, system.dim))
    out[0] = x
    for k in range(1, steps + 1):
        x = system(x)
        check_state(x, escape)
        out[k] = x
    return out


def _char_coeffs(m: np.ndarray) -> np.ndarray:
    """Monic characteristic polynomial of a small matrix, ascending order,
    by the Faddeev-LeVerrier recurrence."""
    n = m.shape[0]
    coeffs = np.zeros(n + 1)
    coeffs[n] = 1.0
    mk = np.eye(n)
    for k in range(1, n + 1):
        mk = m @ mk
        ck = -np.trace(mk) / k
        coeffs[n - k] = ck
        mk += ck * np.eye(n)
    return coeffs


def cycle_multipliers(system: MapSystem, points) -> list[complex]:
    """Eigenvalues of the Jacobian product around the cycle.

    Closed forms for 1x1 and 2x2 products, polynomial root extraction up
    to 4x4; larger state dimensions are rejected.  Sorted by descending
    modulus (ties by real then imaginary part) for determinism.
    """
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != system.dim:
        raise ParameterError("points must have shape (T, dim)")
    m = system.dim
    if m > 4:
        raise ParameterError("multipliers supported only for dim <= 4")
    prod = np.eye(m)
    for x in pts:
        prod = system.jacobian(x) @ prod
    if m == 1:
        mults = [complex(prod[0, 0])]
    elif m == 2:
        tr = prod[0, 0] + prod[1, 1]
        det = prod[0, 0] * prod[1, 1] - prod[0, 1] * prod[1, 0]
        disc = complex(tr * tr - 4.0 * det)
        sq = np.sqrt(disc)
        mults = [complex(0.5 * (tr + sq)), complex(0.5 * (tr - sq))]
    else:
        from .numerics import RealPoly
        mults = poly_roots(RealPoly(_char_coeffs(prod)))
    return sorted(mults, key=lambda z: (-abs(z), z.real, z.imag))
