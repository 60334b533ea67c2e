"""Subsystem integrators producing dense micro-trajectories.

Inside the stepping loops states are plain float sequences: for the one- and
two-dimensional subsystems of a co-simulation, list arithmetic is several
times cheaper than small numpy arrays.  Results handed back to callers
(``MicroTrajectory`` and the public ``step_*`` functions) are numpy arrays.

A right-hand side is any callable ``f(t, x)`` taking a float sequence and
returning a float sequence of the same length.  Subsystem inputs are bound
into ``f`` by the caller (see :func:`cosim.model.build_rhs`).
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

Rhs = Callable[[float, Sequence[float]], Sequence[float]]

METHODS = ("euler", "rk4", "rk45", "ab2")
FIXED_STEP_METHODS = ("euler", "rk4", "ab2")
STARTUP_METHODS = ("euler", "rk4")

# relative slack when matching step counts and AB2 spacing
_SPACING_RTOL = 1e-8


class IntegrationError(RuntimeError):
    """A subsystem integration produced non-finite values or could not proceed."""

    def __init__(self, message: str, t: float | None = None, step: int | None = None):
        self.detail = message
        self.t = t
        self.step = step
        where = []
        if step is not None:
            where.append(f"step {step}")
        if t is not None:
            where.append(f"t={t!r}")
        super().__init__(f"{message} ({', '.join(where)})" if where else message)


class StepSizeUnderflow(IntegrationError):
    """The adaptive controller asked for a step below ``h_min``."""


@dataclass(frozen=True)
class StepControl:
    """Integrator choice and step-size parameters for one subsystem.

    ``h_fixed`` is mandatory for the fixed-step methods (``euler``, ``rk4``,
    ``ab2``).  For ``rk45`` the step is adaptive, bounded by ``h_max`` and
    started at ``h_init`` (default: ``h_max`` or the whole interval).
    ``startup`` selects the one-step method AB2 uses when it has no history.
    """

    method: str = "rk45"
    h_fixed: float | None = None
    rel_tol: float = 1e-6
    abs_tol: float = 1e-9
    h_min: float = 1e-14
    h_max: float = math.inf
    h_init: float | None = None
    startup: str = "euler"

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}; expected one of {METHODS}")
        if self.startup not in STARTUP_METHODS:
            raise ValueError(f"unknown AB2 startup {self.startup!r}")
        if not (self.rel_tol > 0 and self.abs_tol > 0):
            raise ValueError("tolerances must be positive")
        if not 0 < self.h_min <= self.h_max:
            raise ValueError("need 0 < h_min <= h_max")
        if self.method in FIXED_STEP_METHODS:
            if self.h_fixed is None or not self.h_fixed > 0:
                raise ValueError(f"{self.method} requires a positive h_fixed")

    @property
    def fixed_step(self) -> bool:
        return self.method in FIXED_STEP_METHODS


@dataclass(frozen=True)
class AB2History:
    """The previous node (time, state, derivative) an AB2 step leans on."""

    t: float
    x: tuple
    f: tuple


@dataclass
class MicroTrajectory:
    """Numerical solution of one subsystem over one exchange interval.

    ``times[0]`` and ``times[-1]`` are the interval edges exactly; ``derivs``
    holds the right-hand side evaluated at every node (with the inputs that
    were active during the interval).
    """

    times: np.ndarray
    states: np.ndarray
    derivs: np.ndarray
    h_next: float | None = None

    def __post_init__(self):
        n = len(self.times)
        if n < 2 or len(self.states) != n or len(self.derivs) != n:
            raise ValueError("times, states and derivs must have equal length >= 2")

    @property
    def final_state(self) -> np.ndarray:
        return self.states[-1]

    @property
    def final_deriv(self) -> np.ndarray:
        return self.derivs[-1]

    def ab2_history(self) -> AB2History:
        """History record for continuing an AB2 run into the next interval."""
        return AB2History(float(self.times[-2]), tuple(self.states[-2]), tuple(self.derivs[-2]))


# ---------------------------------------------------------------------------
# single steps on float sequences

def _all_finite(x) -> bool:
    return all(map(math.isfinite, x))


def _euler(f: Rhs, t, x, h, k1):
    return [xi + h * a for xi, a in zip(x, k1)]


def _rk4(f: Rhs, t, x, h, k1):
    h2 = 0.5 * h
    k2 = f(t + h2, [xi + h2 * a for xi, a in zip(x, k1)])
    k3 = f(t + h2, [xi + h2 * b for xi, b in zip(x, k2)])
    k4 = f(t + h, [xi + h * c for xi, c in zip(x, k3)])
    h6 = h / 6.0
    return [xi + h6 * (a + 2.0 * b + 2.0 * c + d) for xi, a, b, c, d in zip(x, k1, k2, k3, k4)]


def _ab2(x, h, f_now, f_prev):
    return [xi + h * (1.5 * a - 0.5 * b) for xi, a, b in zip(x, f_now, f_prev)]


# Dormand-Prince 5(4) tableau
_A21 = 1 / 5
_A31, _A32 = 3 / 40, 9 / 40
_A41, _A42, _A43 = 44 / 45, -56 / 15, 32 / 9
_A51, _A52, _A53, _A54 = 19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729
_A61, _A62, _A63, _A64, _A65 = 9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656
_B1, _B3, _B4, _B5, _B6 = 35 / 384, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84
# fifth-order weights minus embedded fourth-order weights
_E1, _E3, _E4, _E5, _E6, _E7 = (
    71 / 57600, -71 / 16695, 71 / 1920, -17253 / 339200, 22 / 525, -1 / 40)


def _dopri(f: Rhs, t, x, h, k1, rel_tol, abs_tol):
    """One Dormand-Prince attempt: (x_new, f(t+h, x_new), scaled error norm)."""
    k2 = f(t + 0.2 * h, [xi + h * (_A21 * a) for xi, a in zip(x, k1)])
    k3 = f(t + 0.3 * h, [xi + h * (_A31 * a + _A32 * b) for xi, a, b in zip(x, k1, k2)])
    k4 = f(t + 0.8 * h, [xi + h * (_A41 * a + _A42 * b + _A43 * c)
                         for xi, a, b, c in zip(x, k1, k2, k3)])
    k5 = f(t + (8 / 9) * h, [xi + h * (_A51 * a + _A52 * b + _A53 * c + _A54 * d)
                             for xi, a, b, c, d in zip(x, k1, k2, k3, k4)])
    k6 = f(t + h, [xi + h * (_A61 * a + _A62 * b + _A63 * c + _A64 * d + _A65 * e)
                   for xi, a, b, c, d, e in zip(x, k1, k2, k3, k4, k5)])
    xn = [xi + h * (_B1 * a + _B3 * c + _B4 * d + _B5 * e + _B6 * g)
          for xi, a, c, d, e, g in zip(x, k1, k3, k4, k5, k6)]
    k7 = f(t + h, xn)
    acc = 0.0
    for xi, yi, a, c, d, e, g, w in zip(x, xn, k1, k3, k4, k5, k6, k7):
        sc = abs_tol + rel_tol * max(abs(xi), abs(yi))
        r = h * (_E1 * a + _E3 * c + _E4 * d + _E5 * e + _E6 * g + _E7 * w) / sc
        acc += r * r
    return xn, k7, math.sqrt(acc / len(xn))


def _growth(err: float) -> float:
    # elementary controller for a 5(4) pair
    if err == 0.0:
        return 5.0
    return min(5.0, max(0.2, 0.9 * err ** -0.2))


def _adaptive(f: Rhs, t, x, k1, h, ctrl: StepControl, t_stop=math.inf):
    """Retry Dormand-Prince steps until one is accepted.

    Returns (x_new, k_new, h_used, h_next, err, reached_stop, rejected).
    A step landing within a hair of ``t_stop`` is stretched onto it.
    """
    rejected = False
    while True:
        remaining = t_stop - t
        final = h >= remaining or remaining - h <= 1e-9 * h
        if final:
            h = remaining
        xn, kn, err = _dopri(f, t, x, h, k1, ctrl.rel_tol, ctrl.abs_tol)
        if math.isnan(err):
            raise IntegrationError("non-finite state in adaptive step", t=t)
        if err <= 1.0:
            return xn, kn, h, min(h * _growth(err), ctrl.h_max), err, final, rejected
        rejected = True
        h *= max(0.2, 0.9 * err ** -0.2) if math.isfinite(err) else 0.2
        if h < ctrl.h_min:
            raise StepSizeUnderflow(f"step size {h!r} fell below h_min={ctrl.h_min!r}", t=t)


# ---------------------------------------------------------------------------
# public single-step API

def _as_floats(x) -> list:
    return [float(v) for v in np.asarray(x, dtype=float).ravel()]


def step_euler(f: Rhs, t: float, x, h: float) -> np.ndarray:
    """Forward Euler step ``x + h f(t, x)``; one right-hand-side evaluation."""
    if not h > 0:
        raise ValueError("h must be positive")
    xs = _as_floats(x)
    xn = _euler(f, t, xs, h, f(t, xs))
    if not _all_finite(xn):
        raise IntegrationError("non-finite right-hand side in Euler step", t=t)
    return np.array(xn)


def step_rk4(f: Rhs, t: float, x, h: float) -> np.ndarray:
    """Classical four-stage Runge-Kutta step."""
    if not h > 0:
        raise ValueError("h must be positive")
    xs = _as_floats(x)
    xn = _rk4(f, t, xs, h, f(t, xs))
    if not _all_finite(xn):
        raise IntegrationError("non-finite right-hand side in RK4 step", t=t)
    return np.array(xn)


def step_rk45(f: Rhs, t: float, x, h_try: float, ctrl: StepControl):
    """Adaptive Dormand-Prince 5(4) step.

    Returns
    -------
    x_new : ndarray
    h_used : float
        Accepted step, never larger than ``h_try``.
    h_next : float
        Controller proposal ``h * min(5, max(0.2, 0.9 err^(-1/5)))`` capped at
        ``ctrl.h_max``.
    err_est : float
        Scaled RMS norm of the embedded difference; ``<= 1`` for the accepted step.
    """
    if ctrl.method != "rk45":
        raise ValueError("step_rk45 needs an rk45 StepControl")
    if not h_try > 0:
        raise ValueError("h_try must be positive")
    xs = _as_floats(x)
    xn, _, h_used, h_next, err, _, _ = _adaptive(f, t, xs, f(t, xs), h_try, ctrl)
    return np.array(xn), h_used, h_next, err


def step_ab2(f: Rhs, history: AB2History | None, t: float, x, h: float,
             startup: str = "euler") -> np.ndarray:
    """Two-step Adams-Bashforth step, or the startup method without history.

    The startup method (``euler`` by default, or ``rk4``) is what a multistep
    solver falls back on after every restart.
    """
    if not h > 0:
        raise ValueError("h must be positive")
    xs = _as_floats(x)
    fx = f(t, xs)
    if history is None:
        xn = _start(f, t, xs, h, fx, startup)
    else:
        _check_spacing(history, t, h)
        xn = _ab2(xs, h, fx, history.f)
    if not _all_finite(xn):
        raise IntegrationError("non-finite right-hand side in AB2 step", t=t)
    return np.array(xn)


def _start(f, t, x, h, k1, startup):
    if startup == "euler":
        return _euler(f, t, x, h, k1)
    if startup == "rk4":
        return _rk4(f, t, x, h, k1)
    raise ValueError(f"unknown AB2 startup {startup!r}")


def _check_spacing(history: AB2History, t, h, step=None):
    gap = t - history.t
    if abs(gap - h) > _SPACING_RTOL * h:
        raise IntegrationError(
            f"AB2 needs uniform steps: history spacing {gap!r} != h {h!r}", t=t, step=step)


# ---------------------------------------------------------------------------
# interval integration

def fixed_step_count(span: float, h: float) -> int:
    """``ceil(span / h)``, ignoring round-off in an exact ratio."""
    return max(1, math.ceil(span / h - 1e-9))


def integrate(f: Rhs, x0, interval, ctrl: StepControl,
              history: AB2History | None = None) -> MicroTrajectory:
    """Integrate ``x' = f(t, x)`` across one exchange interval.

    The last micro step is clipped so the final node is ``interval[1]``
    exactly.  ``history`` lets an AB2 run continue from the previous
    interval instead of restarting.
    """
    t_a, t_b = float(interval[0]), float(interval[1])
    if not t_b > t_a:
        raise ValueError(f"empty interval [{t_a}, {t_b}]")
    x = _as_floats(x0)
    k = f(t_a, x)
    times, states, derivs = [t_a], [x], [k]

    if ctrl.method == "rk45":
        h = ctrl.h_init if ctrl.h_init is not None else min(ctrl.h_max, t_b - t_a)
        h = min(h, ctrl.h_max)
        t = t_a
        i = 0
        h_carry = h
        while True:
            h_prop = h
            try:
                x, k, h_used, h, _, final, rejected = _adaptive(f, t, x, k, h, ctrl, t_b)
            except IntegrationError as exc:
                raise type(exc)(exc.detail, t=exc.t, step=i) from exc
            t = t_b if final else t + h_used
            times.append(t)
            states.append(x)
            derivs.append(k)
            i += 1
            if final:
                # a clipped last step says nothing about the next interval
                h_carry = max(h, h_prop) if not rejected else h
                h_carry = min(h_carry, ctrl.h_max)
                break
        return MicroTrajectory(np.array(times), np.array(states, dtype=float),
                               np.array(derivs, dtype=float), h_next=h_carry)

    h = float(ctrl.h_fixed)
    n = fixed_step_count(t_b - t_a, h)
    prev: AB2History | None = history
    for i in range(n):
        t = times[-1]
        t_next = t_b if i == n - 1 else t_a + (i + 1) * h
        hi = t_next - t
        if ctrl.method == "euler":
            xn = _euler(f, t, x, hi, k)
        elif ctrl.method == "rk4":
            xn = _rk4(f, t, x, hi, k)
        else:
            if prev is None:
                xn = _start(f, t, x, hi, k, ctrl.startup)
            else:
                _check_spacing(prev, t, hi, step=i)
                xn = _ab2(x, hi, k, prev.f)
            prev = AB2History(t, tuple(x), tuple(k))
        if not _all_finite(xn):
            raise IntegrationError(f"non-finite state in {ctrl.method} step", t=t, step=i)
        x = xn
        k = f(t_next, x)
        times.append(t_next)
        states.append(x)
        derivs.append(k)
    return MicroTrajectory(np.array(times), np.array(states, dtype=float),
                           np.array(derivs, dtype=float), h_next=h)
