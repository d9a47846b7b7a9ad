"""Mixing-coefficient construction for the closed-loop control scheme.

The nonlinear-channel weights come from a three-parameter family built on
Butterworth-style generating polynomials with zeros on the unit circle,
followed by a Fejer-type reweighting; the linear-channel feedback weights
are derived per cycle length.  Both channels are normalized to sum to one,
so the loop is a convex mixture and preserves every cycle of the open map.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ParameterError
from .numerics import RealPoly


@dataclass(frozen=True)
class MixingParams:
    """Parameters of the coefficient family.

    depth   -- number N >= 1 of past states mixed per channel
    period  -- cycle length T >= 1 targeted by the loop
    sigma, tau -- shape parameters, 0 < sigma <= tau <= 2 (strict by default)
    gamma   -- linear-channel gain, 0 <= gamma < 1
    enforce_range -- set False to explore sigma/tau outside the strict range
    """

    depth: int
    period: int
    sigma: float = 1.0
    tau: float = 1.0
    gamma: float = 0.0
    enforce_range: bool = field(default=True, compare=False)

    def __post_init__(self):
        if self.depth < 1:
            raise ParameterError(f"depth must be >= 1, got {self.depth}")
        if self.period < 1:
            raise ParameterError(f"period must be >= 1, got {self.period}")
        if not 0.0 <= self.gamma < 1.0:
            raise ParameterError(f"gamma must be in [0, 1), got {self.gamma}")
        if self.sigma <= 0.0 or self.tau <= 0.0:
            raise ParameterError("sigma and tau must be positive")
        if self.enforce_range and not (self.sigma <= self.tau <= 2.0):
            raise ParameterError(
                f"need sigma <= tau <= 2 (got sigma={self.sigma}, tau={self.tau}); "
                "pass enforce_range=False for exploratory sweeps")

    def with_gamma(self, gamma: float) -> "MixingParams":
        return MixingParams(self.depth, self.period, self.sigma, self.tau,
                            gamma, self.enforce_range)


@dataclass(frozen=True)
class MixingCoefficients:
    """Weight vectors of both loop channels, each summing to one.

    ``weights`` feeds the map input (nonlinear channel); ``feedback`` is the
    linear channel, unused when gamma == 0 but always populated.
    """

    weights: np.ndarray
    feedback: np.ndarray
    params: MixingParams

    def __post_init__(self):
        object.__setattr__(self, "weights", np.asarray(self.weights, dtype=float))
        object.__setattr__(self, "feedback", np.asarray(self.feedback, dtype=float))
        for name, v in (("weights", self.weights), ("feedback", self.feedback)):
            if v.shape != (self.params.depth,):
                raise ParameterError(f"{name} must have length depth={self.params.depth}")
            if abs(float(v.sum()) - 1.0) > 1e-12:
                raise ParameterError(f"{name} must sum to 1 within 1e-12")


def node_angles(params: MixingParams) -> np.ndarray:
    """Unit-circle zero angles of the generating polynomial, all in (0, pi).

    Empty for depth 1 and 2; the index range is 1..(N-2)/2 for even N and
    1..(N-1)/2 for odd N.
    """
    N, T = params.depth, params.period
    count = (N - 2) // 2 if N % 2 == 0 else (N - 1) // 2
    j = np.arange(1, count + 1, dtype=float)
    t = np.pi * (params.sigma + T * (2.0 * j - 1.0)) / (params.tau + (N - 1) * T)
    if t.size and not (0.0 < t[0] and t[-1] < np.pi):
        raise ParameterError("node angles left (0, pi); parameters out of range")
    return t


def generator_coefficients(params: MixingParams) -> np.ndarray:
    """Coefficients c_1..c_N of the generating polynomial's cofactor.

    The generator is z times a degree-(N-1) cofactor: the product of the
    conjugate unit-circle pairs at the node angles, times (z + 1) when N is
    even.  Multiplying the factors sequentially is violently ill-conditioned
    for large N (intermediate coefficients overflow long before the final,
    modest ones), so the cofactor is evaluated pointwise on the unit circle
    and its coefficients recovered with one FFT.
    """
    N = params.depth
    ts = node_angles(params)
    m = 1 << max(1, int(N - 1).bit_length())
    if m < N:
        m *= 2
    z = np.exp(2j * np.pi * np.arange(m) / m)
    v = np.ones(m, dtype=np.complex128)
    for t in ts:
        v *= (z - np.exp(1j * t)) * (z - np.exp(-1j * t))
    if N % 2 == 0:
        v *= z + 1.0
    c = np.fft.fft(v)[:N] / m
    worst = float(np.max(np.abs(c.imag)))
    if worst > 1e-12 * max(1.0, float(np.max(np.abs(c.real)))):
        raise ParameterError(f"generator coefficients not real (imag {worst:g})")
    return np.ascontiguousarray(c.real)


def mixing_weights(params: MixingParams) -> np.ndarray:
    """Nonlinear-channel weights: Fejer-reweighted generator coefficients,
    normalized to sum to one."""
    N, T = params.depth, params.period
    c = generator_coefficients(params)
    j = np.arange(1, N + 1, dtype=float)
    raw = (1.0 - (1.0 + (j - 1.0) * T) / (2.0 + (N - 1.0) * T)) * c
    total = float(raw.sum())
    if abs(total) < 1e-300:
        raise ParameterError("degenerate normalization: weight sum is zero")
    return raw / total


def feedback_weights(weights: np.ndarray, params: MixingParams) -> np.ndarray:
    """Linear-channel weights for the given cycle length.

    period 1: identical to the nonlinear weights.
    period 2: derived so the linear channel cancels the generator's
              first-difference; requires weights[0] != 0.
    period > 2: the flat profile 2/(2N-1) * (1, ..., 1, 1/2).
    """
    N, T = params.depth, params.period
    a = np.asarray(weights, dtype=float)
    if T == 1:
        return a.copy()
    if T == 2:
        if abs(a[0]) < 1e-12:
            raise ParameterError("period-2 feedback needs a nonzero first weight")
        b = np.empty(N)
        b[: N - 1] = -(a[1:] - a[:-1]) / a[0]
        b[N - 1] = a[N - 1] / a[0]
        return b
    b = np.full(N, 2.0 / (2.0 * N - 1.0))
    b[N - 1] *= 0.5
    return b


def build_coefficients(params: MixingParams) -> MixingCoefficients:
    """Construct both channels for the given parameters."""
    a = mixing_weights(params)
    b = feedback_weights(a, params)
    return MixingCoefficients(a, b, params)


def weights_poly(weights) -> RealPoly:
    """Generating polynomial of the nonlinear channel: sum a_j z^{j-1}."""
    return RealPoly(np.asarray(weights, dtype=float))


def feedback_poly(feedback) -> RealPoly:
    """Generating polynomial of the linear channel: sum b_j z^j (no constant)."""
    b = np.asarray(feedback, dtype=float)
    return RealPoly(np.concatenate(([0.0], b)))


def nyquist_gain(weights) -> float:
    """Alternating sum of the weights: the channel's response at z = -1."""
    a = np.asarray(weights, dtype=float)
    signs = np.ones(a.size)
    signs[1::2] = -1.0
    return float(np.dot(a, signs))


def nyquist_gain_closed_form(params: MixingParams) -> float:
    """Conjectured product form of the response at z = -1.

    Known sign caveat: direct evaluation of the constructed weights yields
    the opposite sign for small depths; downstream bounds use magnitudes
    only, and tests compare absolute values.
    """
    N, T = params.depth, params.period
    if N < 2:
        raise ParameterError("closed form needs depth >= 2")
    ts = node_angles(params)
    if ts.size and np.any(ts == 0.0):
        raise ParameterError("cotangent singularity at a zero node angle")
    prod = float(np.prod(1.0 / np.tan(ts / 2.0) ** 2)) if ts.size else 1.0
    if N % 2 == 0:
        return -T / (2.0 + (N - 1) * T) * prod
    return -prod
