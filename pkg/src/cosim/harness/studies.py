"""Experiment drivers: convergence, stability, balance correction and AB2 restart."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np

from ..model import HRule, SchemeConfig, SolverSpec
from ..ode_core import StepControl, integrate
from ..orchestrator import CosimFailure, run_cosim
from .problems import Problem, linear_triangular, make_problem, spring_mass

DEFAULT_H0 = 0.2
DEFAULT_LEVELS = 7
STABILITY_HS = (0.2, 0.1, 0.05, 0.025)
STABILITY_DELTA = 1e-3
PITFALL_RATIO = 4


class OrderFitWarning(UserWarning):
    """Some error levels were unusable and left out of an order fit."""


def h_levels(levels: int = DEFAULT_LEVELS, H0: float = DEFAULT_H0) -> list:
    """``H0 * 2**-n`` for ``n = 0 .. levels-1``."""
    return [H0 * 2.0 ** -n for n in range(levels)]


def estimate_order(errors, Hs):
    """Least-squares slope of ``log(error)`` against ``log(H)``.

    Returns ``(slope, ratios)`` where ``ratios[k] = log2(e_k / e_{k+1})``
    for adjacent levels, divided by ``log2(H_k / H_{k+1})`` (one for
    halvings), and ``nan`` where either error is unusable.
    Non-positive or non-finite errors are dropped with an
    :class:`OrderFitWarning`; fewer than two usable levels raise ValueError.
    """
    e = np.asarray(errors, dtype=float)
    H = np.asarray(Hs, dtype=float)
    if e.shape != H.shape:
        raise ValueError("errors and step sizes differ in length")
    ok = np.isfinite(e) & (e > 0)
    if not ok.all():
        warnings.warn(f"{int((~ok).sum())} error level(s) excluded from the order fit",
                      OrderFitWarning, stacklevel=2)
    if ok.sum() < 2:
        raise ValueError("an order fit needs at least two positive finite errors")
    slope = float(np.polyfit(np.log(H[ok]), np.log(e[ok]), 1)[0])
    ratios = []
    for k in range(len(e) - 1):
        if ok[k] and ok[k + 1]:
            ratios.append(math.log2(e[k] / e[k + 1]) / math.log2(H[k] / H[k + 1]))
        else:
            ratios.append(math.nan)
    return slope, ratios


# ---------------------------------------------------------------------------
# convergence

@dataclass(frozen=True)
class ConvergenceRow:
    variant: str
    H: float
    h: float  # resolved micro step (h_max for adaptive)
    status: str  # "ok" or "DNF"
    err_end: float
    err_sup: float
    err_components: tuple  # end-time error per state
    signed_end: tuple  # signed end-time error per state
    micro_steps: int


@dataclass(frozen=True)
class OrderFit:
    order_end: float
    order_sup: float
    ratios: tuple


@dataclass
class ConvergenceReport:
    problem: str
    rows: list
    fits: dict = field(default_factory=dict)
    flags: dict = field(default_factory=dict)

    def variants(self) -> list:
        seen = []
        for r in self.rows:
            if r.variant not in seen:
                seen.append(r.variant)
        return seen

    def rows_for(self, variant: str) -> list:
        return [r for r in self.rows if r.variant == variant]

    def order(self, variant: str) -> float:
        return self.fits[variant].order_end

    def errors(self, variant: str, component: int | None = None) -> np.ndarray:
        rows = self.rows_for(variant)
        if component is None:
            return np.array([r.err_end for r in rows])
        return np.array([r.err_components[component] for r in rows])


def _resolved_h(cfg: SchemeConfig) -> float:
    h = cfg.h_rule.micro_step(cfg.H)
    return cfg.H if h is None else h


def _fit(rows) -> OrderFit:
    good = [r for r in rows if r.status == "ok"]
    Hs = [r.H for r in good]
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", OrderFitWarning)
        end, ratios = estimate_order([r.err_end for r in good], Hs)
        sup, _ = estimate_order([r.err_sup for r in good], Hs)
    return OrderFit(end, sup, tuple(ratios))


def run_variant(problem: Problem, name: str, cfg: SchemeConfig) -> ConvergenceRow:
    """One co-simulation measured against the problem's exact solution."""
    h = _resolved_h(cfg)
    dim = problem.system.dim
    try:
        run = run_cosim(problem.system, problem.partition, cfg)
    except CosimFailure:
        nan = (math.nan,) * dim
        return ConvergenceRow(name, cfg.H, h, "DNF", math.nan, math.nan, nan, nan, 0)
    ref = problem.reference(run.grid.times)
    diff = run.states - ref
    if not np.all(np.isfinite(diff)):
        nan = (math.nan,) * dim
        return ConvergenceRow(name, cfg.H, h, "DNF", math.nan, math.nan, nan, nan,
                              int(run.micro_steps.sum()))
    end = diff[-1]
    return ConvergenceRow(name, cfg.H, h, "ok", float(np.max(np.abs(end))),
                          float(np.max(np.abs(diff))), tuple(float(abs(v)) for v in end),
                          tuple(float(v) for v in end), int(run.micro_steps.sum()))


def convergence_study(problem: Problem | str, variants: Mapping[str, SchemeConfig],
                      H_levels: Sequence[float] | None = None, map_fn=map) -> ConvergenceReport:
    """Error against the exact solution for every (variant, H).

    ``variants`` maps a label to a SchemeConfig whose ``H`` is replaced by
    each level.  ``map_fn`` may be an executor's ``map`` to run levels in
    parallel; rows come back in input order either way.  Failed runs are DNF
    rows and stay out of the fits.
    """
    if isinstance(problem, str):
        problem = make_problem(problem)
    Hs = h_levels() if H_levels is None else list(H_levels)
    jobs = [(name, replace(cfg, H=H)) for name, cfg in variants.items() for H in Hs]
    rows = list(map_fn(lambda job: run_variant(problem, *job), jobs))
    report = ConvergenceReport(problem.name, rows)
    for name in variants:
        try:
            report.fits[name] = _fit(report.rows_for(name))
        except ValueError:
            report.fits[name] = OrderFit(math.nan, math.nan, ())
    return report


def default_solver() -> SolverSpec:
    return SolverSpec("rk45", rel_tol=1e-12, abs_tol=1e-12)


def order_variants(solver: SolverSpec | None = None, h_rule: HRule | None = None) -> dict:
    """ZOH and FOH on the default solver, Proportional h with c = 10."""
    solver = default_solver() if solver is None else solver
    h_rule = HRule("proportional", 10) if h_rule is None else h_rule
    base = SchemeConfig(DEFAULT_H0, solver=solver, h_rule=h_rule)
    return {"zoh": base, "foh": replace(base, extrapolation="foh")}


def balance_variants(solver: SolverSpec | None = None, h_rule: HRule | None = None,
                     spread: Sequence[int] = (1,), weight_kind: str = "box") -> dict:
    """Uncorrected ZOH and FOH plus balance-corrected ZOH for each ``spread_k``."""
    out = order_variants(solver, h_rule)
    for k in spread:
        out[f"zoh_bc{k}"] = replace(out["zoh"], balance_correction=True, spread_k=k,
                                    weight_kind=weight_kind)
    return out


def balance_correction_study(problem: Problem | str | None = None,
                             variants: Mapping[str, SchemeConfig] | None = None,
                             H_levels: Sequence[float] | None = None, map_fn=map) -> ConvergenceReport:
    """Side-by-side orders with and without balance correction (spring-mass default)."""
    problem = spring_mass() if problem is None else problem
    variants = balance_variants() if variants is None else variants
    return convergence_study(problem, variants, H_levels, map_fn)


# ---------------------------------------------------------------------------
# stability

@dataclass(frozen=True)
class EnergySeries:
    variant: str
    H: float
    times: np.ndarray
    energy: np.ndarray
    unstable: bool

    @property
    def relative_drift(self) -> float:
        return float((self.energy[-1] - self.energy[0]) / self.energy[0])


@dataclass
class StabilityReport:
    series: list
    reference: EnergySeries
    delta: float

    def verdicts(self) -> dict:
        return {(s.variant, s.H): s.unstable for s in self.series}


def stability_solver() -> SolverSpec:
    return SolverSpec("rk45", rel_tol=1e-10, abs_tol=1e-10)


def monolithic_energy(problem: Problem, rel_tol: float = 1e-12, samples: int = 201) -> EnergySeries:
    """Energy of a single-solver RK45 run of the whole oscillator."""
    sys = problem.system
    c, m = sys.params["c"], sys.params["m"]
    f = sys.monolithic_rhs()
    ctrl = StepControl("rk45", rel_tol=rel_tol, abs_tol=rel_tol)
    times = np.linspace(sys.t_span[0], sys.t_span[1], samples)
    x = list(sys.x0)
    E = [0.5 * m * x[1] ** 2 + 0.5 * c * x[0] ** 2]
    h = None
    for a, b in zip(times[:-1], times[1:]):
        tr = integrate(f, x, (a, b), replace(ctrl, h_init=h))
        x, h = list(tr.states[-1]), tr.h_next
        E.append(0.5 * m * x[1] ** 2 + 0.5 * c * x[0] ** 2)
    E = np.array(E)
    return EnergySeries("monolithic_rk45", math.nan, times, E,
                        bool(E[-1] > E[0] * (1 + STABILITY_DELTA)))


def stability_experiment(problem: Problem | None = None, extrapolations=("zoh", "foh"),
                         Hs: Sequence[float] = STABILITY_HS, solver: SolverSpec | None = None,
                         h_rule: HRule | None = None, delta: float = STABILITY_DELTA,
                         map_fn=map) -> StabilityReport:
    """Energy at every exchange time of the undamped oscillator for each (hold, H).

    A run is flagged unstable when ``E(T_N) > E(T_0) (1 + delta)``.
    """
    problem = spring_mass() if problem is None else problem
    if problem.system.kind != "spring_mass" or problem.system.params["d"] != 0.0:
        raise ValueError("stability experiment needs the undamped spring-mass problem")
    solver = stability_solver() if solver is None else solver
    h_rule = HRule("adaptive", None) if h_rule is None else h_rule

    def one(job):
        ex, H = job
        cfg = SchemeConfig(H, extrapolation=ex, solver=solver, h_rule=h_rule)
        run = run_cosim(problem.system, problem.partition, cfg)
        E = run.energy
        return EnergySeries(ex, H, np.array(run.grid.times), E, bool(E[-1] > E[0] * (1 + delta)))

    series = list(map_fn(one, [(ex, H) for ex in extrapolations for H in Hs]))
    return StabilityReport(series, monolithic_energy(problem), delta)


# ---------------------------------------------------------------------------
# AB2 restart pitfall

def pitfall_variants(ratio: int = PITFALL_RATIO, extrapolation: str = "foh") -> dict:
    """AB2 carried across exchanges vs restarted with Euler or RK4 startup, ``H = ratio h``."""
    rule = HRule("proportional", ratio)
    base = SchemeConfig(DEFAULT_H0, extrapolation=extrapolation, h_rule=rule,
                        solver=SolverSpec("ab2", startup="euler"))
    return {
        "carried": replace(base, carry_history=True),
        "restart_euler": base,
        "restart_rk4": replace(base, solver=SolverSpec("ab2", startup="rk4")),
    }


def _local_minimum(signed: Sequence[float]) -> bool:
    """Whether the signed error changes sign between levels (a dip in |e|)."""
    s = np.sign(np.asarray(signed, dtype=float))
    return bool(np.any(s[:-1] * s[1:] < 0))


def pitfall_experiment(problem: Problem | None = None, variants: Mapping[str, SchemeConfig] | None = None,
                       H_levels: Sequence[float] | None = None, component: int = 1,
                       map_fn=map) -> ConvergenceReport:
    """Order of fixed-step AB2 with and without restarting at every exchange.

    ``flags[variant]`` reports whether the signed end error of ``component``
    changes sign across levels, which shows up as a local minimum of the
    error curve.
    """
    problem = linear_triangular() if problem is None else problem
    variants = pitfall_variants() if variants is None else variants
    report = convergence_study(problem, variants, H_levels, map_fn)
    for name in variants:
        signed = [r.signed_end[component] for r in report.rows_for(name) if r.status == "ok"]
        report.flags[name] = {"local_minimum": _local_minimum(signed)}
    return report
