"""Explicit Jacobi co-simulation master loop."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .model import (ConfigurationError, Partition, SchemeConfig, SystemSpec, WiringReport,
                    build_rhs, energy, validate_wiring)
from .ode_core import IntegrationError, MicroTrajectory, integrate
from .signals import (BalanceLedger, compute_balance_error, correct, fit_foh, fit_lagrange,
                      fit_zoh, integrate_extrapolant, shift_coeffs, smooth_blend)

__all__ = ["ExchangeGrid", "Snapshot", "CosimRun", "CosimFailure", "exchange_snapshot",
           "run_cosim", "energy", "input_evaluator"]


class CosimFailure(RuntimeError):
    """A subsystem integration failed; ``interval`` and ``subsystem`` say where."""

    def __init__(self, message, interval: int, subsystem: int, cause=None):
        super().__init__(f"interval {interval}, subsystem {subsystem}: {message}")
        self.interval = interval
        self.subsystem = subsystem
        self.cause = cause


@dataclass(frozen=True, eq=False)
class ExchangeGrid:
    times: np.ndarray

    def __post_init__(self):
        T = np.array(self.times, dtype=float)
        if T.ndim != 1 or len(T) < 2 or not np.all(np.diff(T) > 0):
            raise ConfigurationError("exchange times must be strictly increasing, at least two")
        T.setflags(write=False)
        object.__setattr__(self, "times", T)

    @classmethod
    def uniform(cls, t_span, H: float) -> "ExchangeGrid":
        """Uniform grid of step ``H``; a remainder becomes a shorter last interval."""
        t0, t1 = float(t_span[0]), float(t_span[1])
        ratio = (t1 - t0) / H
        n = round(ratio)
        if abs(ratio - n) <= 1e-9 * max(1.0, ratio):
            return cls(np.linspace(t0, t1, n + 1))
        n = math.floor(ratio)
        return cls(np.append(t0 + H * np.arange(n + 1), t1))

    @property
    def N(self) -> int:
        return len(self.times) - 1

    def interval(self, j: int) -> tuple:
        return float(self.times[j]), float(self.times[j + 1])


@dataclass(frozen=True, eq=False)
class Snapshot:
    """Exchanged values and derivatives of every state at one exchange time."""

    time: float
    values: np.ndarray
    derivs: np.ndarray


def exchange_snapshot(time: float, part: Partition, states: Sequence, derivs: Sequence,
                      dim: int | None = None) -> Snapshot:
    """Assemble the per-subsystem final nodes into one frozen snapshot."""
    dim = part.dim if dim is None else dim
    values = np.zeros(dim)
    rates = np.zeros(dim)
    for sub, x, dx in zip(part.subsystems, states, derivs):
        idx = list(sub.owned)
        values[idx] = x
        rates[idx] = dx
    values.setflags(write=False)
    rates.setflags(write=False)
    return Snapshot(float(time), values, rates)


def input_evaluator(recons: Sequence):
    """Evaluate several reconstructions sharing one left edge in a single Horner pass."""
    if not recons:
        return lambda t: ()
    origin = recons[0].support[0]
    cols = [shift_coeffs(r.coeffs, origin - r.origin) if r.origin != origin else tuple(r.coeffs)
            for r in recons]
    deg = max(len(c) for c in cols)
    # highest power first, one tuple of channel coefficients per power
    rows = [tuple(float(c[m]) if m < len(c) else 0.0 for c in cols) for m in range(deg)][::-1]
    if deg == 1:
        const = list(rows[0])

        def ev(t):
            return const
    else:
        top, rest = rows[0], rows[1:]

        def ev(t):
            s = t - origin
            acc = list(top)
            for row in rest:
                acc = [v * s + c for v, c in zip(acc, row)]
            return acc

    ev.rows = tuple(rows)
    ev.origin = origin
    return ev


@dataclass
class CosimRun:
    """Result of one co-simulation.

    ``states[k]`` is the full state at exchange time ``grid.times[k]``.
    ``balance[(receiver, state)]`` holds per-interval arrays ``delta``,
    ``delivered`` and ``sender`` (integrals over each interval) and
    ``residual`` is the part of the ledger that never found a target interval.
    """

    system: SystemSpec
    partition: Partition
    config: SchemeConfig
    grid: ExchangeGrid
    wiring: WiringReport
    states: np.ndarray
    snapshots: list
    ledger: BalanceLedger | None = None
    balance: dict = field(default_factory=dict)
    residual: dict = field(default_factory=dict)
    energy: np.ndarray | None = None
    trajectories: list | None = None
    micro_steps: np.ndarray | None = None

    @property
    def final_state(self) -> np.ndarray:
        return self.states[-1]

    def conservation_defect(self, channel) -> float:
        """``sum(delivered) - sum(sender) + residual`` for one channel."""
        b = self.balance[channel]
        return (math.fsum(b["delivered"]) - math.fsum(b["sender"])
                + self.residual.get(channel, 0.0))


def _build_bases(part, cfg, snapshots, k, interval, channel_of):
    """Uncorrected reconstructions for receiver ``k`` from exchange-time data only."""
    a = interval[0]
    last = snapshots[-1]
    if __debug__ and last.time > a:
        raise AssertionError("snapshot from the future")
    out = []
    for i in part[k].inputs:
        ch = channel_of(k, i)
        if cfg.extrapolation == "zoh":
            out.append(fit_zoh(last.time, last.values[i], interval, ch))
        elif cfg.extrapolation == "foh":
            out.append(fit_foh(last.time, last.values[i], last.derivs[i], interval, ch))
        else:
            d = min(cfg.degree, len(snapshots) - 1)
            samples = [(s.time, s.values[i]) for s in snapshots[len(snapshots) - 1 - d:]]
            out.append(fit_lagrange(samples, d, interval, ch))
    return out


def run_cosim(sys: SystemSpec, part: Partition, cfg: SchemeConfig, *,
              grid: ExchangeGrid | None = None, order: Sequence[int] | None = None,
              executor=None, keep_trajectories: bool = False) -> CosimRun:
    """Run the explicit Jacobi co-simulation of ``sys`` split by ``part``.

    Parameters
    ----------
    sys, part, cfg : system, its partition and the scheme settings
    grid : exchange grid, defaults to uniform ``cfg.H`` over ``sys.t_span``
    order : processing order of the subsystems inside an interval; any
        permutation gives bit-identical results
    executor : optional ``concurrent.futures`` executor for the per-interval
        subsystem integrations
    keep_trajectories : keep every MicroTrajectory (memory grows with N)

    Raises
    ------
    CosimFailure
        When a subsystem integration fails; carries the interval index.
    """
    wiring = validate_wiring(part, cfg, sys.dim)
    grid = ExchangeGrid.uniform(sys.t_span, cfg.H) if grid is None else grid
    if not (math.isclose(grid.times[0], sys.t_span[0]) and math.isclose(grid.times[-1], sys.t_span[1])):
        raise ConfigurationError("exchange grid does not span the system's time span")
    n_sub = len(part)
    order = list(range(n_sub)) if order is None else list(order)
    if sorted(order) != list(range(n_sub)):
        raise ConfigurationError("order must be a permutation of the subsystems")
    rhs = [build_rhs(sys, part, k) for k in range(n_sub)]
    x0 = np.array(sys.x0)
    T0 = float(grid.times[0])

    # initial exchange: peers' exact initial values held constant
    xs = [[float(v) for v in x0[list(s.owned)]] for s in part.subsystems]
    ds = []
    for k, s in enumerate(part.subsystems):
        u0 = [float(x0[i]) for i in s.inputs]
        ds.append(rhs[k](T0, xs[k], lambda t, u0=u0: u0))
    snapshots = [exchange_snapshot(T0, part, xs, ds, sys.dim)]

    corrected = cfg.balance_correction
    ledger = BalanceLedger(cfg.weight_kind, cfg.spread_k) if corrected else None
    channels = [(k, i) for k, s in enumerate(part.subsystems) for i in s.inputs]
    locate = {i: part.local_index(i) for _, i in channels}
    balance = {ch: {"delta": [], "delivered": [], "sender": []} for ch in channels} if corrected else {}
    prev_base: list = [None] * n_sub
    history: list = [None] * n_sub
    h_init: list = [None] * n_sub
    solvers = [cfg.solver_for(k) for k in range(n_sub)]
    carry = [cfg.carry_history and solvers[k].method == "ab2" for k in range(n_sub)]
    refresh = cfg.derivative_export == "refreshed"
    trajs = [] if keep_trajectories else None
    micro = np.zeros((grid.N, n_sub), dtype=int)

    def channel_of(k, i):
        return (k, i)

    for j in range(grid.N):
        a, b = grid.interval(j)
        # serial: reconstructions and ledger collection
        bases, recons, inputs = [], [], []
        for k in range(n_sub):
            base = _build_bases(part, cfg, snapshots, k, (a, b), channel_of)
            if cfg.smoothing and prev_base[k] is not None:
                base_used = [smooth_blend(p, q, (a, b)) for p, q in zip(prev_base[k], base)]
            else:
                base_used = base
            if corrected:
                delivered = [correct(r, ledger.collect(r.channel, j), cfg.weight_kind)
                             for r in base_used]
            else:
                delivered = base_used
            prev_base[k] = base
            bases.append(base_used)
            recons.append(delivered)
            inputs.append(input_evaluator(delivered))
        ctrls = [solvers[k].control(b - a, cfg.h_rule, h_init[k]) for k in range(n_sub)]

        def task(k):
            try:
                return integrate(rhs[k].bind(inputs[k]), xs[k], (a, b), ctrls[k],
                                 history=history[k] if carry[k] else None)
            except IntegrationError as exc:
                raise CosimFailure(str(exc), j, k, exc) from exc

        if executor is None:
            results = {k: task(k) for k in order}
        else:
            results = dict(zip(order, executor.map(task, order)))
        out = [results[k] for k in range(n_sub)]

        # serial barrier: snapshot, balance accounting
        for k, tr in enumerate(out):
            xs[k] = [float(v) for v in tr.states[-1]]
            ds[k] = [float(v) for v in tr.derivs[-1]]
            h_init[k] = tr.h_next
            history[k] = tr.ab2_history() if carry[k] else None
            micro[j, k] = len(tr.times) - 1
        if refresh:
            fresh = exchange_snapshot(b, part, xs, ds, sys.dim).values
            for k, s in enumerate(part.subsystems):
                u = [float(fresh[i]) for i in s.inputs]
                ds[k] = rhs[k](b, xs[k], lambda t, u=u: u)
        snapshots.append(exchange_snapshot(b, part, xs, ds, sys.dim))
        if corrected:
            for k in range(n_sub):
                for r_base, r_del, i in zip(bases[k], recons[k], part[k].inputs):
                    ch = (k, i)
                    sender, col = locate[i]
                    delta = compute_balance_error(out[sender], r_base, col)
                    ledger.schedule(ch, j, delta)
                    rec = balance[ch]
                    rec["delta"].append(delta)
                    rec["delivered"].append(integrate_extrapolant(r_del, a, b))
                    rec["sender"].append(delta + integrate_extrapolant(r_base, a, b))
        if keep_trajectories:
            trajs.append(out)

    states = np.array([s.values for s in snapshots])
    run = CosimRun(sys, part, cfg, grid, wiring, states, snapshots, ledger,
                   trajectories=trajs, micro_steps=micro)
    if corrected:
        run.balance = {ch: {key: np.array(v) for key, v in rec.items()} for ch, rec in balance.items()}
        run.residual = {ch: ledger.residual(ch, grid.N) for ch in channels}
    if sys.kind == "spring_mass":
        c, m = sys.params["c"], sys.params["m"]
        run.energy = np.array([energy(x, c, m) for x in states])
    return run
