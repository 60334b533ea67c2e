"""Input reconstruction between exchange times.

Every reconstruction here (hold polynomials, smooth switch blends, balance
corrections riding on top of either) is a single polynomial in the local
variable ``s = t - origin`` on its support.  That keeps evaluation cheap in
the integrator hot loop and makes every integral closed-form.

One object describes one scalar input channel.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence, Union

import numpy as np
from numpy.polynomial import polynomial as P

WEIGHT_KINDS = ("box", "bump")

# support membership slack, relative to the support length
_SUPPORT_RTOL = 1e-12


class QuadratureOrderWarning(UserWarning):
    """Balance error computed without derivative samples (trapezoid rule)."""


# ---------------------------------------------------------------------------
# polynomial helpers, coefficients in increasing powers

def horner(coeffs: Sequence[float], s: float) -> float:
    acc = 0.0
    for c in reversed(coeffs):
        acc = acc * s + c
    return acc


def shift_coeffs(coeffs: Sequence[float], d: float) -> tuple:
    """Coefficients of ``q(s) = p(s + d)``."""
    n = len(coeffs)
    out = [0.0] * n
    for m, c in enumerate(coeffs):
        if c == 0.0:
            continue
        for j in range(m + 1):
            out[j] += c * math.comb(m, j) * d ** (m - j)
    return tuple(out)


def poly_integral(coeffs: Sequence[float], sa: float, sb: float) -> float:
    return sum(c * (sb ** (m + 1) - sa ** (m + 1)) / (m + 1) for m, c in enumerate(coeffs))


def _trim(coeffs) -> tuple:
    c = [float(v) for v in coeffs]
    while len(c) > 1 and c[-1] == 0.0:
        c.pop()
    return tuple(c)


def smoothstep(tau: float) -> float:
    """Degree-5 switch ``6 tau^5 - 15 tau^4 + 10 tau^3``; flat to second order at 0 and 1."""
    if tau > 0.5:
        # mirror image keeps the flat top free of cancellation
        r = 1.0 - tau
        return 1.0 - r * r * r * (10.0 + r * (-15.0 + 6.0 * r))
    return tau * tau * tau * (10.0 + tau * (-15.0 + 6.0 * tau))


def _smoothstep_coeffs(length: float) -> tuple:
    return (0.0, 0.0, 0.0, 10.0 / length ** 3, -15.0 / length ** 4, 6.0 / length ** 5)


class _PolySignal:
    """Shared evaluation and integration for polynomial reconstructions."""

    origin: float
    coeffs: tuple
    support: tuple

    @property
    def degree(self) -> int:
        return len(self.coeffs) - 1

    def __call__(self, t):
        if np.ndim(t):
            return np.polynomial.polynomial.polyval(np.asarray(t) - self.origin, self.coeffs)
        return horner(self.coeffs, t - self.origin)

    def derivative(self, t) -> float:
        d = [m * c for m, c in enumerate(self.coeffs)][1:] or [0.0]
        return horner(d, t - self.origin)


@dataclass(frozen=True, eq=False)
class Extrapolant(_PolySignal):
    """Hold polynomial for one input channel on one exchange interval.

    ``coeffs`` are in increasing powers of ``t - origin``; ``origin`` is the
    left edge of ``support``.  Evaluation is formally defined off-support too.
    """

    origin: float
    coeffs: tuple
    support: tuple
    channel: object = None

    def __post_init__(self):
        if len(self.coeffs) < 1:
            raise ValueError("an extrapolant needs at least one coefficient")


@dataclass(frozen=True, eq=False)
class SwitchBlend(_PolySignal):
    """Convex switch from ``prev`` to ``next`` across ``interval``.

    ``(1 - sigma) prev + sigma next`` with ``sigma`` the degree-5 smoothstep
    on the normalized interval; starts at ``prev(left)`` and ends at
    ``next(right)``.
    """

    prev: _PolySignal
    next: _PolySignal
    interval: tuple
    origin: float = field(init=False)
    coeffs: tuple = field(init=False)

    def __post_init__(self):
        a, b = self.interval
        p = shift_coeffs(self.prev.coeffs, a - self.prev.origin)
        q = shift_coeffs(self.next.coeffs, a - self.next.origin)
        diff = P.polysub(q, p)
        blended = P.polyadd(p, P.polymul(_smoothstep_coeffs(b - a), diff))
        object.__setattr__(self, "origin", float(a))
        object.__setattr__(self, "coeffs", _trim(blended))

    @property
    def support(self) -> tuple:
        return self.interval

    @property
    def channel(self):
        return self.next.channel

    def sigma(self, t: float) -> float:
        a, b = self.interval
        return smoothstep((t - a) / (b - a))


@dataclass(frozen=True)
class Weight:
    """Unit-integral recontribution shape on ``[start, start + length]``.

    ``box`` is constant ``1/length``; ``bump`` is ``30 tau^2 (1 - tau)^2 / length``,
    which vanishes together with its slope at both ends.
    """

    kind: str
    start: float
    length: float

    def __post_init__(self):
        if self.kind not in WEIGHT_KINDS:
            raise ValueError(f"unknown weight kind {self.kind!r}; expected one of {WEIGHT_KINDS}")
        if not self.length > 0:
            raise ValueError("weight support must have positive length")

    @property
    def coeffs(self) -> tuple:
        L = self.length
        if self.kind == "box":
            return (1.0 / L,)
        return (0.0, 0.0, 30.0 / L ** 3, -60.0 / L ** 4, 30.0 / L ** 5)

    def __call__(self, t: float) -> float:
        s = t - self.start
        if s < 0.0 or s > self.length:
            return 0.0
        if self.kind == "box":
            return 1.0 / self.length
        tau = s / self.length
        return 30.0 * (tau * (1.0 - tau)) ** 2 / self.length


def make_weight(kind: str, interval) -> Weight:
    a, b = float(interval[0]), float(interval[1])
    return Weight(kind, a, b - a)


@dataclass(frozen=True, eq=False)
class CorrectedInput(_PolySignal):
    """A base reconstruction plus scheduled balance recontributions.

    ``corrections`` is a sequence of ``(Weight, amount)``; each weight lives on
    the base's support and integrates to one, so the interval receives
    exactly ``amount`` on top of the base.
    """

    base: _PolySignal
    corrections: tuple = ()
    origin: float = field(init=False)
    coeffs: tuple = field(init=False)

    def __post_init__(self):
        a = self.base.support[0]
        total = list(shift_coeffs(self.base.coeffs, a - self.base.origin))
        for w, amount in self.corrections:
            g = shift_coeffs(w.coeffs, a - w.start)
            total += [0.0] * (len(g) - len(total))
            for m, gm in enumerate(g):
                total[m] += amount * gm
        object.__setattr__(self, "origin", float(a))
        object.__setattr__(self, "coeffs", _trim(total))

    @property
    def support(self) -> tuple:
        return self.base.support

    @property
    def channel(self):
        return self.base.channel

    @property
    def amount(self) -> float:
        return float(sum(a for _, a in self.corrections))


Reconstruction = Union[Extrapolant, SwitchBlend, CorrectedInput]


# ---------------------------------------------------------------------------
# construction

def _support(support) -> tuple:
    a, b = float(support[0]), float(support[1])
    if not b > a:
        raise ValueError(f"degenerate support [{a}, {b}]")
    return (a, b)


def fit_zoh(t0: float, u0: float, support, channel=None) -> Extrapolant:
    """Zero-order hold: ``u0`` across the whole support."""
    sup = _support(support)
    return Extrapolant(sup[0], (float(u0),), sup, channel)


def fit_foh(t0: float, u0: float, du0: float, support, channel=None) -> Extrapolant:
    """First-order hold ``u0 + du0 (t - t0)`` from a value and its exported slope."""
    sup = _support(support)
    return Extrapolant(sup[0], (float(u0) + float(du0) * (sup[0] - t0), float(du0)), sup, channel)


def fit_lagrange(samples, degree: int, support, channel=None) -> Extrapolant:
    """Interpolating polynomial of degree ``degree`` through ``degree + 1`` past samples.

    ``samples`` is a sequence of ``(t_i, u_i)`` with every ``t_i`` at or
    before the support's left edge.
    """
    sup = _support(support)
    pts = [(float(t), float(u)) for t, u in samples]
    if degree < 0:
        raise ValueError("degree must be non-negative")
    if degree > len(pts) - 1:
        raise ValueError(f"degree {degree} needs {degree + 1} samples, got {len(pts)}")
    if len(pts) != degree + 1:
        raise ValueError(f"expected exactly {degree + 1} samples, got {len(pts)}")
    ts = np.array([t for t, _ in pts])
    if len(np.unique(ts)) != len(ts):
        raise ValueError("duplicate sample times")
    if np.any(ts > sup[0] + _SUPPORT_RTOL * (sup[1] - sup[0])):
        raise ValueError("extrapolation samples must not lie past the support's left edge")
    us = np.array([u for _, u in pts])
    origin = sup[0]
    rel = ts - origin
    scale = float(np.max(np.abs(rel))) or 1.0
    V = np.vander(rel / scale, degree + 1, increasing=True)
    gamma = np.linalg.solve(V, us)
    coeffs = gamma / scale ** np.arange(degree + 1)
    return Extrapolant(origin, tuple(float(c) for c in coeffs), sup, channel)


def smooth_blend(prev: Reconstruction, next: Reconstruction, interval) -> SwitchBlend:
    """Blend the previous interval's reconstruction into the current one."""
    return SwitchBlend(prev, next, _support(interval))


# ---------------------------------------------------------------------------
# integrals and balance errors

def integrate_extrapolant(e: Reconstruction, a: float, b: float) -> float:
    """Closed-form integral of a reconstruction over ``[a, b]`` inside its support."""
    lo, hi = e.support
    slack = _SUPPORT_RTOL * (hi - lo)
    if a < lo - slack or b > hi + slack or b < a:
        raise ValueError(f"[{a}, {b}] is not inside the support [{lo}, {hi}]")
    return poly_integral(e.coeffs, a - e.origin, b - e.origin)


class SampledSignal(NamedTuple):
    """Node samples of an exchanged signal; ``derivs`` may be missing."""

    times: np.ndarray
    values: np.ndarray
    derivs: np.ndarray | None = None


def hermite_integral(times, values, derivs=None) -> float:
    """Integral of node data: cubic Hermite with slopes, trapezoid without."""
    t = [float(v) for v in times]
    u = [float(v) for v in values]
    total = 0.0
    if derivs is None:
        for i in range(len(t) - 1):
            total += 0.5 * (t[i + 1] - t[i]) * (u[i] + u[i + 1])
        return total
    d = [float(v) for v in derivs]
    for i in range(len(t) - 1):
        h = t[i + 1] - t[i]
        total += 0.5 * h * (u[i] + u[i + 1]) + h * h / 12.0 * (d[i] - d[i + 1])
    return total


def compute_balance_error(sender, e: Reconstruction, index: int = 0) -> float:
    """Mis-delivered amount ``int u dt - int Ext(u) dt`` over the sender's interval.

    Parameters
    ----------
    sender : MicroTrajectory or SampledSignal
        The sender's own micro-trajectory across the exchange interval.  For a
        trajectory, ``index`` picks the state column carrying the signal.
    e : reconstruction the receiver used (without corrections)

    Positive values mean the receiver got less than the sender produced.
    Without derivative samples the trapezoid rule is used and a
    :class:`QuadratureOrderWarning` is issued.
    """
    if isinstance(sender, SampledSignal):
        times, values, derivs = sender
    else:
        times = sender.times
        values = sender.states[:, index]
        derivs = None if sender.derivs is None else sender.derivs[:, index]
    if derivs is None:
        warnings.warn("no derivative samples; balance error uses the trapezoid rule",
                      QuadratureOrderWarning, stacklevel=2)
    a, b = float(times[0]), float(times[-1])
    return hermite_integral(times, values, derivs) - integrate_extrapolant(e, a, b)


# ---------------------------------------------------------------------------
# balance ledger

@dataclass
class LedgerEntry:
    """One committed balance error and where its fractions go."""

    interval: int
    delta: float
    schedule: list  # [(target interval, amount)]
    delivered: set = field(default_factory=set)

    @property
    def fractions(self) -> list:
        return [amount / self.delta for _, amount in self.schedule]

    @property
    def remaining(self) -> float:
        return float(sum(a for j, a in self.schedule if j not in self.delivered))


class BalanceLedger:
    """Per-channel record of balance errors and their recontribution schedule.

    A balance error committed in interval ``j`` is split into ``spread_k``
    equal parts for intervals ``j+1 .. j+spread_k``.  Parts whose target lies
    past the end of the run are the uncorrectable residual.
    """

    def __init__(self, weight_kind: str = "box", spread_k: int = 1):
        if weight_kind not in WEIGHT_KINDS:
            raise ValueError(f"unknown weight kind {weight_kind!r}")
        if not 1 <= int(spread_k) <= 4:
            raise ValueError("spread_k must be in 1..4")
        self.weight_kind = weight_kind
        self.spread_k = int(spread_k)
        self.entries: dict = {}
        self._due: dict = {}  # (channel, target) -> [entry]

    def schedule(self, channel, j: int, delta: float) -> LedgerEntry | None:
        if delta == 0.0:
            return None
        k = self.spread_k
        part = delta / k
        amounts = [part] * (k - 1)
        # last part absorbs rounding so the parts sum to delta exactly
        amounts.append(delta - math.fsum(amounts))
        entry = LedgerEntry(j, float(delta), [(j + 1 + i, a) for i, a in enumerate(amounts)])
        self.entries.setdefault(channel, []).append(entry)
        for target, _ in entry.schedule:
            self._due.setdefault((channel, target), []).append(entry)
        return entry

    def pending(self, channel, j: int) -> list:
        """Amounts targeted at interval ``j`` that have not been delivered."""
        out = []
        for entry in self._due.get((channel, j), ()):
            if j not in entry.delivered:
                out.extend(a for target, a in entry.schedule if target == j)
        return out

    def collect(self, channel, j: int) -> list:
        """Hand out and mark delivered everything due in interval ``j``."""
        out = self.pending(channel, j)
        for entry in self._due.get((channel, j), ()):
            entry.delivered.add(j)
        return out

    def residual(self, channel, n_intervals: int) -> float:
        """Scheduled amounts with no target interval inside a run of ``n_intervals``."""
        return float(sum(a for entry in self.entries.get(channel, ())
                         for target, a in entry.schedule if target >= n_intervals))

    def channels(self) -> list:
        return list(self.entries)


def schedule_correction(ledger: BalanceLedger, channel, j: int, delta: float) -> BalanceLedger:
    """Record the balance error of interval ``j`` for later recontribution."""
    ledger.schedule(channel, j, delta)
    return ledger


def correct(base: Reconstruction, amounts: Sequence[float], weight_kind: str) -> Reconstruction:
    """Wrap ``base`` with recontributions spread by ``weight_kind`` over its support."""
    if not amounts:
        return base
    w = make_weight(weight_kind, base.support)
    return CorrectedInput(base, tuple((w, float(a)) for a in amounts))


def corrected_eval(ci: Reconstruction, t: float) -> float:
    """Value of a (possibly corrected) input at ``t``."""
    return ci(t)
