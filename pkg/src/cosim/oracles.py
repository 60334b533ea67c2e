"""Closed-form reference solutions for the linear test problems.

Both routes are independent of the integrators: a Padé scaling-and-squaring
matrix exponential for general ``B`` and trigonometric/hyperbolic formulas
for 2x2 systems and the oscillator.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

# Padé(6,6) coefficients b_k = (12-k)! 6! / (12! k! (6-k)!)
_PADE6 = (1.0, 1.0 / 2, 5.0 / 44, 1.0 / 66, 1.0 / 792, 1.0 / 15840, 1.0 / 665280)


@dataclass(frozen=True)
class ReferenceSolution:
    """Reference states on a time grid; ``method`` names the route used."""

    times: np.ndarray
    states: np.ndarray
    method: str  # "closed-2x2", "pade6", "oscillator" or "monolithic-rk45"
    tolerance: float | None = None

    def at(self, t: float) -> np.ndarray:
        idx = int(np.argmin(np.abs(self.times - t)))
        if not math.isclose(self.times[idx], t, rel_tol=1e-12, abs_tol=1e-14):
            raise KeyError(f"t={t} is not on the reference grid")
        return self.states[idx]


def expm_pade(A) -> np.ndarray:
    """Matrix exponential by Padé(6) approximation with scaling and squaring."""
    A = np.asarray(A, dtype=float)
    n = A.shape[0]
    norm = np.linalg.norm(A, 1)
    s = max(0, int(math.ceil(math.log2(norm / 0.5))) + 1) if norm > 0 else 0
    As = A / 2.0 ** s
    I = np.eye(n)
    A2 = As @ As
    A4 = A2 @ A2
    A6 = A4 @ A2
    b = _PADE6
    U = As @ (b[1] * I + b[3] * A2 + b[5] * A4)
    V = b[0] * I + b[2] * A2 + b[4] * A4 + b[6] * A6
    E = np.linalg.solve(V - U, V + U)
    for _ in range(s):
        E = E @ E
    return E


def _sinhc(z: float) -> float:
    # sinh(z)/z, series near zero
    if abs(z) < 1e-4:
        z2 = z * z
        return 1.0 + z2 / 6.0 + z2 * z2 / 120.0
    return math.sinh(z) / z


def _sinc(z: float) -> float:
    if abs(z) < 1e-4:
        z2 = z * z
        return 1.0 - z2 / 6.0 + z2 * z2 / 120.0
    return math.sin(z) / z


def expm_2x2(A) -> np.ndarray:
    """Exponential of a real 2x2 matrix via its trace/determinant split.

    With ``s = tr/2`` and ``N = A - s I``, ``N^2 = delta I`` where
    ``delta = s^2 - det``; hence ``exp(A) = e^s (g0 I + g1 N)``.
    """
    A = np.asarray(A, dtype=float)
    s = 0.5 * (A[0, 0] + A[1, 1])
    det = A[0, 0] * A[1, 1] - A[0, 1] * A[1, 0]
    delta = s * s - det
    N = A - s * np.eye(2)
    if delta > 1.0:
        # distinct real eigenvalues; Sylvester form avoids e^s * cosh(r) overflow
        r = math.sqrt(delta)
        big = s + math.copysign(r, s)
        small = det / big
        I = np.eye(2)
        return (math.exp(big) * (A - small * I) - math.exp(small) * (A - big * I)) / (big - small)
    if delta >= 0:
        r = math.sqrt(delta)
        g0, g1 = math.cosh(r), _sinhc(r)
    else:
        r = math.sqrt(-delta)
        g0, g1 = math.cos(r), _sinc(r)
    return math.exp(s) * (g0 * np.eye(2) + g1 * N)


def expm_solution(B, x0, t, check: bool = False) -> ReferenceSolution:
    """``x(t) = exp(B t) x0`` on the times ``t`` (scalar or array, measured from 0).

    2x2 systems use the closed form, larger ones Padé.  ``check=True``
    evaluates both where possible and raises if they disagree beyond 1e-12
    relative.
    """
    B = np.asarray(B, dtype=float)
    x0 = np.asarray(x0, dtype=float)
    ts = np.atleast_1d(np.asarray(t, dtype=float))
    closed = B.shape == (2, 2)
    fn = expm_2x2 if closed else expm_pade
    states = np.array([fn(B * ti) @ x0 for ti in ts])
    if check:
        other = np.array([expm_pade(B * ti) @ x0 for ti in ts])
        scale = max(1.0, float(np.max(np.abs(states))))
        gap = float(np.max(np.abs(states - other)))
        if gap > 1e-12 * scale:
            raise ArithmeticError(f"matrix exponential routes disagree by {gap:.3e}")
    return ReferenceSolution(ts, states, "closed-2x2" if closed else "pade6")


def oscillator_solution(c: float, m: float, x0, t, d: float = 0.0) -> ReferenceSolution:
    """Position and velocity of ``m s'' + d s' + c s = 0``.

    Undamped motion uses ``cos``/``sin`` directly; damped motion falls back
    to the 2x2 exponential.
    """
    if not (c > 0 and m > 0):
        raise ValueError("spring constant and mass must be positive")
    ts = np.atleast_1d(np.asarray(t, dtype=float))
    s0, v0 = float(x0[0]), float(x0[1])
    if d != 0.0:
        B = np.array([[0.0, 1.0], [-c / m, -d / m]])
        ref = expm_solution(B, (s0, v0), ts)
        return ReferenceSolution(ref.times, ref.states, "closed-2x2")
    w = math.sqrt(c / m)
    cw, sw = np.cos(w * ts), np.sin(w * ts)
    s = s0 * cw + v0 / w * sw
    v = -s0 * w * sw + v0 * cw
    return ReferenceSolution(ts, np.column_stack([s, v]), "oscillator")
