"""Closed-loop iteration, cycle detection, refinement, and verification.

The loop mixes N past states at lag T through two convex channels,

    x_{n+1} = (1-gamma) * f(sum_j a_j x_{n-(j-1)T}) + gamma * sum_j b_j x_{n-jT+1},

which leaves every T-cycle of f in place while reshaping its stability.
Detection restarts the loop from random seeds and keeps the cycles it
converges to; every candidate is then Newton-polished against the open
map and re-run through the loop as a dynamic verification.

All restarts advance together through one vectorized engine: per-lane
arithmetic is elementwise, so each lane reproduces bit-for-bit what a
solo run of the same seed computes.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .coeffs import MixingCoefficients, MixingParams, build_coefficients
from .errors import (DivergenceError, ExtractionError, InvalidTransferError,
                     NonsmoothPointError, ParameterError, RefinementError,
                     RootFailureError)
from .maps import ESCAPE_BOUND, MapSystem, cycle_multipliers
from .stability import TransferFunction, schur_margin


@dataclass(frozen=True)
class DetectionSettings:
    """Tolerances and budgets of the detection pipeline."""

    warmup: int = 100
    tol_converge: float = 1e-9
    tol_verify: float = 1e-8
    escape: float = ESCAPE_BOUND
    max_iter: int = 200_000
    check_window: int | None = None  # None: 2*period
    dedup_tol: float = 1e-6
    refine: bool = True
    refine_max_steps: int = 50


@dataclass(frozen=True)
class CycleRecord:
    """A detected cycle with its verification data.

    ``residual`` is the open-map closure error ||f^T(x_1) - x_1||_inf.
    A record is verified when the residual beat the tolerance and the
    closed loop, reseeded exactly on the cycle, stayed on it.
    """

    points: np.ndarray
    residual: float
    minimal_period: int
    gamma: float
    multipliers: tuple | None = None
    open_loop_unstable: bool | None = None
    closed_loop_margin: float | None = None
    reconverged: bool | None = None
    verified: bool = False

    @property
    def period(self) -> int:
        return self.points.shape[0]


class _BatchLoop:
    """Closed-loop stepping over L independent lanes at once.

    The ring buffer holds (N+1)*T states per lane: lags reach back N*T-1
    and the extra T slots keep the tail returned on convergence.
    """

    def __init__(self, system: MapSystem, coeffs_a, coeffs_b, gammas,
                 period: int, histories: np.ndarray, escape: float = ESCAPE_BOUND):
        a = np.asarray(coeffs_a, dtype=float)
        b = np.asarray(coeffs_b, dtype=float)
        depth = a.size
        nt = depth * period
        if histories.ndim != 3 or histories.shape[0] != nt:
            raise ParameterError(f"histories must have shape ({nt}, L, m)")
        lanes, m = histories.shape[1], histories.shape[2]
        if m != system.dim:
            raise ParameterError("history dimension does not match the map")
        self.system = system
        self.period = period
        self.size = (depth + 1) * period
        self.buf = np.zeros((self.size, lanes, m))
        self.buf[:nt] = histories
        self.head = nt - 1
        self.steps = 0
        self.escape = escape
        self._a = a[:, None, None]
        self._b = b[:, None, None]
        # weight a_j pairs the state (j-1)T back; b_j pairs jT-1 back
        self._lag_a = np.arange(depth) * period
        self._lag_b = np.arange(1, depth + 1) * period - 1
        self._gam = np.asarray(gammas, dtype=float).reshape(lanes, 1)
        self._omg = 1.0 - self._gam
        self._gamma_zero = bool(np.all(self._gam == 0.0))
        self.alive = np.ones(lanes, dtype=bool)

    def _gather(self, lags):
        idx = (self.head - lags) % self.size
        return self.buf[idx]

    def step(self) -> np.ndarray:
        """Advance every lane once; returns the new states (L, m)."""
        with np.errstate(all="ignore"):
            u = np.sum(self._a * self._gather(self._lag_a), axis=0)
            fx = self.system(u)
            if self._gamma_zero:
                x = fx
            else:
                v = np.sum(self._b * self._gather(self._lag_b), axis=0)
                x = self._omg * fx + self._gam * v
        ok = np.isfinite(x).all(axis=-1) & (np.abs(x).max(axis=-1) <= self.escape)
        died = self.alive & ~ok
        if np.any(died):
            self.alive &= ok
        x = np.where(self.alive[:, None], x, 0.0)
        self.head = (self.head + 1) % self.size
        self.buf[self.head] = x
        self.steps += 1
        return x

    def lag(self, k: int) -> np.ndarray:
        """States k steps back from the most recent (k=0: newest)."""
        return self.buf[(self.head - k) % self.size]

    def tail(self, lane: int) -> np.ndarray:
        """Last (N+1)*T states of one lane, oldest first."""
        order = (self.head - self.size + 1 + np.arange(self.size)) % self.size
        return self.buf[order, lane, :].copy()

    def run_until_periodic(self, tol: float, check_window: int, max_iter: int):
        """Step until ||x_{n+T} - x_n|| < tol held for check_window steps.

        Returns (tails, converged): tails has shape (L, (N+1)T, m) and is
        only meaningful where converged is True (the tail is frozen at the
        step the lane first converged).
        """
        lanes = self.buf.shape[1]
        streak = np.zeros(lanes, dtype=np.int64)
        converged = np.zeros(lanes, dtype=bool)
        tails = np.zeros((lanes, self.size, self.buf.shape[2]))
        for _ in range(max_iter):
            x = self.step()
            prev = self.lag(self.period)
            close = np.abs(x - prev).max(axis=-1) < tol
            streak = np.where(close & self.alive, streak + 1, 0)
            ready = (~converged) & self.alive & (streak >= check_window) \
                & (self.steps >= self.period)
            if np.any(ready):
                order = (self.head - self.size + 1 + np.arange(self.size)) % self.size
                snap = self.buf[order]
                for lane in np.nonzero(ready)[0]:
                    tails[lane] = snap[:, lane, :]
                converged |= ready
            if np.all(converged | ~self.alive):
                break
        return tails, converged


class LoopHistory:
    """Single-trajectory closed loop (one lane of the batched engine)."""

    def __init__(self, system: MapSystem, coeffs: MixingCoefficients,
                 states: np.ndarray, escape: float = ESCAPE_BOUND):
        st = np.asarray(states, dtype=float)
        nt = coeffs.params.depth * coeffs.params.period
        if st.shape != (nt, system.dim):
            raise ParameterError(f"need exactly {nt} history states of dim {system.dim}")
        self.coeffs = coeffs
        self._loop = _BatchLoop(system, coeffs.weights, coeffs.feedback,
                                [coeffs.params.gamma], coeffs.params.period,
                                st[:, None, :], escape)

    @classmethod
    def seeded(cls, system: MapSystem, coeffs: MixingCoefficients, x0,
               warmup: int = 100, escape: float = ESCAPE_BOUND) -> "LoopHistory":
        """Warm up the open map from x0, then record N*T states as history."""
        nt = coeffs.params.depth * coeffs.params.period
        x = np.asarray(x0, dtype=float).reshape(system.dim)
        states = np.empty((nt, system.dim))
        for _ in range(warmup):
            x = system(x)
            if not np.all(np.isfinite(x)) or np.max(np.abs(x)) > escape:
                raise DivergenceError("divergence during warmup")
        states[0] = x
        for k in range(1, nt):
            x = system(x)
            if not np.all(np.isfinite(x)) or np.max(np.abs(x)) > escape:
                raise DivergenceError("divergence while filling history")
            states[k] = x
        return cls(system, coeffs, states, escape)

    @property
    def states(self) -> np.ndarray:
        """Current history, oldest first."""
        nt = self.coeffs.params.depth * self.coeffs.params.period
        order = (self._loop.head - nt + 1 + np.arange(nt)) % self._loop.size
        return self._loop.buf[order, 0, :].copy()

    def step(self) -> np.ndarray:
        x = self._loop.step()[0]
        if not self._loop.alive[0]:
            raise DivergenceError("closed-loop trajectory escaped")
        return x.copy()


def closed_loop_step(history: LoopHistory) -> np.ndarray:
    """Advance the closed loop one step and return the new state."""
    return history.step()


def seed_history(system: MapSystem, coeffs: MixingCoefficients, x0,
                 warmup: int = 100, escape: float = ESCAPE_BOUND) -> LoopHistory:
    return LoopHistory.seeded(system, coeffs, x0, warmup, escape)


def run_until_periodic(history: LoopHistory, tol: float = 1e-9,
                       check_window: int | None = None,
                       max_iter: int = 200_000):
    """Iterate the loop until T-periodicity holds for a window of steps.

    Returns (tail, converged); the tail holds the last (N+1)*T states,
    oldest first.
    """
    period = history.coeffs.params.period
    window = 2 * period if check_window is None else check_window
    tails, conv = history._loop.run_until_periodic(tol, window, max_iter)
    return tails[0], bool(conv[0])


# ---------------------------------------------------------------------------
# extraction / canonicalization
# ---------------------------------------------------------------------------

def minimal_period(points: np.ndarray, tol: float) -> int:
    """Smallest divisor d of T with points self-consistent under shift d."""
    t = points.shape[0]
    for d in range(1, t + 1):
        if t % d:
            continue
        if float(np.max(np.abs(points - np.roll(points, -d, axis=0)))) < tol:
            return d
    return t


def extract_cycle(system: MapSystem, tail: np.ndarray, period: int, tol: float,
                  gamma: float = 0.0, escape: float = ESCAPE_BOUND) -> CycleRecord:
    """Turn a converged tail into a cycle record (unverified).

    The candidate points are the last T states; the residual re-runs the
    open map for T steps from the first point.
    """
    points = np.asarray(tail, dtype=float)[-period:].copy()
    residual = cycle_residual(system, points, escape)
    if not residual < 1.0:
        raise ExtractionError(f"residual {residual} too large for a cycle")
    return CycleRecord(points=points, residual=residual,
                       minimal_period=minimal_period(points, tol), gamma=gamma)


def cycle_residual(system: MapSystem, points: np.ndarray,
                   escape: float = ESCAPE_BOUND) -> float:
    """Closure error ||f^T(x_1) - x_1||_inf of the open map."""
    x = points[0].copy()
    for _ in range(points.shape[0]):
        x = system(x)
        if not np.all(np.isfinite(x)) or np.max(np.abs(x)) > escape:
            return float("inf")
    return float(np.max(np.abs(x - points[0])))


def canonical_rotation(points: np.ndarray, tol: float = 1e-6):
    """Rotate the cycle so its tol-quantized point sequence is lexicographically
    smallest; returns (rotated_points, hashable_key)."""
    pts = np.asarray(points, dtype=float)
    quant = np.rint(pts / tol).astype(np.int64)
    t = pts.shape[0]
    best = None
    best_key = None
    for r in range(t):
        key = tuple(map(tuple, np.roll(quant, -r, axis=0)))
        if best_key is None or key < best_key:
            best_key = key
            best = r
    return np.roll(pts, -best, axis=0), best_key


def canonical_form(points: np.ndarray, tol: float = 1e-6):
    """Deduplication key: the minimal rotation of the quantized cycle."""
    return canonical_rotation(points, tol)[1]


# ---------------------------------------------------------------------------
# Newton refinement
# ---------------------------------------------------------------------------

def newton_refine(system: MapSystem, record: CycleRecord,
                  max_steps: int = 50) -> CycleRecord:
    """Damped Newton on the cyclic closure system (f(x_i) - x_{i+1})_i.

    Rejects any step that increases the closure residual, halving up to 20
    times; gives up with RefinementError on a singular system or when no
    progress is possible, in which case callers keep the original record.
    """
    if not record.residual < 0.1:
        raise RefinementError("refinement expects a residual below 0.1")
    t, m = record.points.shape
    pts = record.points.copy()

    def closure(p):
        out = np.empty((t, m))
        for i in range(t):
            out[i] = system(p[i]) - p[(i + 1) % t]
        return out

    try:
        f_val = closure(pts)
        res = float(np.max(np.abs(f_val)))
        for _ in range(max_steps):
            if res <= 1e-12:
                break
            jac = np.zeros((t * m, t * m))
            for i in range(t):
                jac[i * m:(i + 1) * m, i * m:(i + 1) * m] = system.jacobian(pts[i])
                j = (i + 1) % t
                jac[i * m:(i + 1) * m, j * m:(j + 1) * m] -= np.eye(m)
            try:
                delta = np.linalg.solve(jac, -f_val.reshape(-1)).reshape(t, m)
            except np.linalg.LinAlgError as exc:
                raise RefinementError(f"singular Newton system: {exc}") from exc
            scale = 1.0
            for _ in range(20):
                trial = pts + scale * delta
                f_trial = closure(trial)
                res_trial = float(np.max(np.abs(f_trial)))
                if res_trial < res:
                    break
                scale *= 0.5
            else:
                raise RefinementError("step rejected after 20 halvings")
            pts, f_val, res = trial, f_trial, res_trial
    except NonsmoothPointError as exc:
        raise RefinementError(f"nonsmooth point during refinement: {exc}") from exc

    residual = cycle_residual(system, pts)
    return replace(record, points=pts, residual=residual,
                   minimal_period=record.minimal_period)


# ---------------------------------------------------------------------------
# verification
# ---------------------------------------------------------------------------

def _reconverges(system: MapSystem, points: np.ndarray,
                 coeffs: MixingCoefficients, tol: float,
                 escape: float = ESCAPE_BOUND) -> bool:
    """Seed the loop exactly on the cycle and require it to stay there."""
    t = points.shape[0]
    n = coeffs.params.depth
    histories = np.tile(points, (n, 1))[:, None, :]
    loop = _BatchLoop(system, coeffs.weights, coeffs.feedback,
                      [coeffs.params.gamma], coeffs.params.period,
                      histories, escape)
    bound = 10.0 * tol
    for k in range(50 * t):
        x = loop.step()[0]
        if not loop.alive[0]:
            return False
        if float(np.max(np.abs(x - points[k % t]))) > bound:
            return False
    return True


def verify_cycle(system: MapSystem, record: CycleRecord,
                 coeffs: MixingCoefficients, tol_verify: float = 1e-8,
                 tf: TransferFunction | None = None) -> CycleRecord:
    """Fill in multipliers, margins, and the dynamic reconvergence verdict."""
    if record.points.shape[0] != coeffs.params.period:
        raise ParameterError("record period does not match the coefficients")
    residual = cycle_residual(system, record.points)
    try:
        mults = tuple(cycle_multipliers(system, record.points))
    except NonsmoothPointError:
        mults = None
    unstable = None if mults is None else bool(max(abs(m) for m in mults) > 1.0)
    margin = None
    if mults is not None:
        try:
            if tf is None:
                tf = TransferFunction.from_coefficients(coeffs)
            margin = float(schur_margin(mults, tf))
        except (InvalidTransferError, RootFailureError):
            margin = None
    reconv = _reconverges(system, record.points, coeffs, tol_verify)
    return replace(record, residual=residual, multipliers=mults,
                   open_loop_unstable=unstable, closed_loop_margin=margin,
                   reconverged=reconv,
                   verified=bool(residual < tol_verify and reconv))


# ---------------------------------------------------------------------------
# detection
# ---------------------------------------------------------------------------

def _batch_warmup(system: MapSystem, x0s: np.ndarray, warmup: int, nt: int,
                  escape: float):
    """Vectorized open-loop warmup; returns (histories, alive)."""
    lanes = x0s.shape[0]
    x = x0s.copy()
    alive = np.ones(lanes, dtype=bool)
    histories = np.zeros((nt, lanes, system.dim))

    def advance(state):
        with np.errstate(all="ignore"):
            nxt = system(state)
        ok = np.isfinite(nxt).all(axis=-1) & (np.abs(nxt).max(axis=-1) <= escape)
        return np.where((alive & ok)[:, None], nxt, 0.0), ok

    for _ in range(warmup):
        x, ok = advance(x)
        alive &= ok
    histories[0] = x
    for k in range(1, nt):
        x, ok = advance(x)
        alive &= ok
        histories[k] = x
    return histories, alive


def detect_cycles_sweep(system: MapSystem, params: MixingParams,
                        gammas: Sequence[float], restarts: int, seed: int,
                        settings: DetectionSettings = DetectionSettings(),
                        stop_on_success: bool = False):
    """Run the detection pipeline over a gamma grid with shared restarts.

    Every (gamma, restart) pair is an independent lane of one vectorized
    loop; each lane reproduces exactly what a solo run would compute, so
    the merged result is deterministic in (map, params, seed).  Returns
    (records, diagnostics).
    """
    if restarts < 1:
        raise ParameterError("needs at least one restart")
    gammas = [float(g) for g in gammas]
    for g in gammas:
        params.with_gamma(g)  # validates range
    period, depth = params.period, params.depth
    nt = depth * period
    window = 2 * period if settings.check_window is None else settings.check_window

    rng = np.random.default_rng(seed)
    x0s = rng.uniform(system.domain[:, 0], system.domain[:, 1],
                      size=(restarts, system.dim))

    histories, seeded = _batch_warmup(system, x0s, settings.warmup, nt,
                                      settings.escape)

    coeffs0 = build_coefficients(params.with_gamma(gammas[0]))
    diag = {
        "restarts": restarts, "gammas": gammas, "seed_failures": int(np.sum(~seeded)),
        "converged": 0, "diverged": 0, "not_converged": 0,
        "extraction_rejected": 0, "refine_failures": 0, "verify_failures": 0,
        "duplicates": 0,
    }

    best: dict = {}
    order_counter = 0
    for g_index, gamma in enumerate(gammas):
        coeffs = MixingCoefficients(coeffs0.weights, coeffs0.feedback,
                                    params.with_gamma(gamma))
        try:
            tf = TransferFunction.from_coefficients(coeffs)
        except InvalidTransferError:
            tf = None
        lanes_alive = seeded.copy()
        hist = histories.copy()
        hist[:, ~lanes_alive, :] = 0.0
        loop = _BatchLoop(system, coeffs.weights, coeffs.feedback,
                          np.full(restarts, gamma), period, hist,
                          settings.escape)
        loop.alive &= lanes_alive
        tails, converged = loop.run_until_periodic(settings.tol_converge,
                                                   window, settings.max_iter)
        diag["diverged"] += int(np.sum(lanes_alive & ~loop.alive))
        diag["not_converged"] += int(np.sum(loop.alive & ~converged))
        diag["converged"] += int(np.sum(converged))

        for lane in np.nonzero(converged)[0]:
            try:
                rec = extract_cycle(system, tails[lane], period,
                                    max(settings.tol_verify, 10 * settings.tol_converge),
                                    gamma=gamma, escape=settings.escape)
            except ExtractionError:
                diag["extraction_rejected"] += 1
                continue
            if settings.refine:
                try:
                    rec = newton_refine(system, rec, settings.refine_max_steps)
                except RefinementError:
                    diag["refine_failures"] += 1
            pts, key = canonical_rotation(rec.points, settings.dedup_tol)
            rec = replace(rec, points=pts,
                          minimal_period=minimal_period(pts, settings.tol_verify))
            if key in best and best[key][0].residual <= rec.residual:
                diag["duplicates"] += 1
                continue
            if key in best:
                diag["duplicates"] += 1
                order_rank = best[key][1]
            else:
                order_rank = order_counter
                order_counter += 1
            rec = verify_cycle(system, rec, coeffs, settings.tol_verify, tf=tf)
            if not rec.verified:
                diag["verify_failures"] += 1
                continue
            best[key] = (rec, order_rank)
        if stop_on_success and best:
            break

    records = [rec for rec, _ in best.values()]
    records.sort(key=lambda r: (r.minimal_period, tuple(map(tuple, r.points))))
    return records, diag


def detect_cycles(system: MapSystem, params: MixingParams, restarts: int,
                  seed: int, settings: DetectionSettings = DetectionSettings()):
    """Detection at the single gamma carried by ``params``."""
    records, _ = detect_cycles_sweep(system, params, [params.gamma], restarts,
                                     seed, settings)
    return records


def default_gammas(period: int) -> list[float]:
    """Per-period default gain grid: 0 for T in {1, 2} (the region measures
    blow up there as gamma -> 1), otherwise the sweep 0.1..0.9."""
    if period <= 2:
        return [0.0]
    return [round(0.1 * k, 1) for k in range(1, 10)]
