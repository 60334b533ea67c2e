"""One test per acceptance criterion; each prints a PASS/FAIL line."""
import math
import time
from pathlib import Path

import numpy as np
import pytest

from cosim.harness import cli
from cosim.harness.problems import linear_offdiag, linear_triangular, spring_mass
from cosim.harness.studies import (balance_variants, convergence_study, h_levels, order_variants,
                                   pitfall_experiment, pitfall_variants, stability_experiment)
from cosim.model import HRule, SchemeConfig, SolverSpec
from cosim.ode_core import StepControl, integrate
from cosim.orchestrator import run_cosim
from cosim.signals import (SampledSignal, compute_balance_error, fit_lagrange, fit_zoh, make_weight,
                           poly_integral, smooth_blend, smoothstep)

CONFIGS = Path(__file__).resolve().parents[1] / "configs"
LEVELS = h_levels(7, 0.2)


@pytest.fixture
def verdict(capsys):
    def emit(n, ok, detail):
        with capsys.disabled():
            print(f"\n{'PASS' if ok else 'FAIL'} criterion {n}: {detail}")
        assert ok, detail
    return emit


@pytest.fixture(scope="module")
def linear_reports():
    t0 = time.perf_counter()
    reports = {p.name: convergence_study(p, order_variants(), LEVELS)
               for p in (linear_triangular(), linear_offdiag())}
    return reports, time.perf_counter() - t0


def test_c1_euler_equivalence(verdict):
    t0 = time.perf_counter()
    worst = 0.0
    for p in (linear_triangular(), linear_offdiag()):
        for H in (0.2, 0.1, 0.05):
            cfg = SchemeConfig(H, solver=SolverSpec("euler"), h_rule=HRule("proportional", 1))
            run = run_cosim(p.system, p.partition, cfg)
            mono = integrate(p.system.monolithic_rhs(), p.system.x0, p.system.t_span,
                             StepControl("euler", h_fixed=H))
            assert len(mono.times) == len(run.grid.times)
            worst = max(worst, float(np.max(np.abs(run.states - mono.states))))
    dt = time.perf_counter() - t0
    verdict(1, worst <= 1e-13 and dt < 1.0, f"Euler equivalence max diff {worst:.2e} (<=1e-13), {dt:.2f} s")


def test_c2_linear_orders(verdict, linear_reports):
    reports, dt = linear_reports
    o = {(name, v): r.order(v) for name, r in reports.items() for v in ("zoh", "foh")}
    ok = all(0.85 <= o[(n, "zoh")] <= 1.3 and 1.8 <= o[(n, "foh")] <= 2.3 for n in reports)
    gap = abs(o[("linear_offdiag", "foh")] - o[("linear_triangular", "foh")])
    ok = ok and gap <= 0.3 and dt < 30.0
    detail = ", ".join(f"{n} {v} {val:.3f}" for (n, v), val in o.items())
    verdict(2, ok, f"{detail}; FOH gap {gap:.3f} (<=0.3); {dt:.1f} s")


def test_c3_input_free_component(verdict, linear_reports):
    rep = linear_reports[0]["linear_triangular"]
    worst = math.inf
    for v in ("zoh", "foh"):
        free, coupled = rep.errors(v, 0), rep.errors(v, 1)
        worst = min(worst, float(np.min(coupled / np.maximum(free, 1e-300))))
    verdict(3, worst >= 100.0, f"smallest coupled/free error ratio {worst:.3g} (>=100)")


def test_c4_spring_mass_orders(verdict):
    t0 = time.perf_counter()
    variants = {**order_variants(), **balance_variants(spread=(1,))}
    rep = convergence_study(spring_mass(), variants, LEVELS)
    dt = time.perf_counter() - t0
    z, f, bc = rep.order("zoh"), rep.order("foh"), rep.order("zoh_bc1")
    ok = 0.85 <= z <= 1.3 and 1.8 <= f <= 2.3 and 1.8 <= bc <= 2.5 and dt < 30.0
    verdict(4, ok, f"ZOH {z:.3f}, FOH {f:.3f}, ZOH+BC {bc:.3f}; {dt:.1f} s")


def test_c5_instability(verdict):
    t0 = time.perf_counter()
    rep = stability_experiment(spring_mass(), ("zoh", "foh"), (0.2, 0.1, 0.05, 0.025))
    dt = time.perf_counter() - t0
    grow = [s.energy[-1] > s.energy[0] for s in rep.series]
    drift = abs(rep.reference.relative_drift)
    ok = len(grow) == 8 and all(grow) and drift <= 1e-6 and dt < 5.0
    rel = ", ".join(f"{s.variant}@{s.H:g} {s.relative_drift:+.2e}" for s in rep.series)
    verdict(5, ok, f"{sum(grow)}/8 runs gain energy ({rel}); monolithic drift {drift:.1e}; {dt:.2f} s")


def test_c6_telescoping(verdict):
    t0 = time.perf_counter()
    worst = 0.0
    p = spring_mass()
    for ex, H in (("zoh", 0.1), ("foh", 0.2), ("zoh", 0.05)):
        cfg = SchemeConfig(H, extrapolation=ex, balance_correction=True, spread_k=1,
                           solver=SolverSpec("rk45", rel_tol=1e-10, abs_tol=1e-10))
        run = run_cosim(p.system, p.partition, cfg)
        for ch, b in run.balance.items():
            # the last interval's error has no later interval to land in
            d = math.fsum(b["delivered"]) - math.fsum(b["sender"]) + b["delta"][-1]
            assert run.residual[ch] == b["delta"][-1]
            worst = max(worst, abs(d))
    dt = time.perf_counter() - t0
    verdict(6, worst <= 1e-8 and dt < 1.0, f"telescoping defect {worst:.2e} (<=1e-8), {dt:.2f} s")


def test_c7_signal_suite(verdict):
    t0 = time.perf_counter()
    rng = np.random.default_rng(0)
    lag = 0.0
    for P in range(5):
        for _ in range(20):
            c = rng.normal(size=P + 1)
            H = float(rng.uniform(0.01, 1.0))
            t0_ = float(rng.uniform(-2, 2))
            times = t0_ - H * np.arange(P, -1, -1)
            e = fit_lagrange([(t, np.polyval(c, t)) for t in times], P, (t0_, t0_ + H))
            for t in np.linspace(t0_, t0_ + H, 7):
                lag = max(lag, abs(e(t) - np.polyval(c, t)))
    d = 1e-6
    ends = (smoothstep(0.0), smoothstep(1.0), smoothstep(d) / d, (1 - smoothstep(1 - d)) / d)
    step_ok = ends[0] == 0.0 and ends[1] == 1.0 and ends[2] < 1e-9 and ends[3] < 1e-9
    blend = smooth_blend(fit_zoh(0.0, 1.0, (0.0, 0.5)), fit_zoh(0.0, 3.0, (0.0, 0.5)), (0.0, 0.5))
    step_ok = step_ok and blend(0.0) == 1.0 and abs(blend(0.5) - 3.0) < 1e-15
    mass = 0.0
    for kind in ("box", "bump"):
        for H in (1e-2, 0.1, 0.2, 1.0, 3.0):
            w = make_weight(kind, (1.0, 1.0 + H))
            mass = max(mass, abs(poly_integral(w.coeffs, 0.0, H) - 1.0))
    de = 0.0
    for H in (0.2, 0.1, 0.05, 0.025):
        t = np.linspace(0.0, H, 11)
        got = compute_balance_error(SampledSignal(t, t, np.ones_like(t)), fit_zoh(0.0, 0.0, (0.0, H)))
        de = max(de, abs(got - H * H / 2))
    dt = time.perf_counter() - t0
    ok = lag <= 1e-10 and step_ok and mass <= 1e-12 and de <= 1e-15 and dt < 1.0
    verdict(7, ok, f"Lagrange {lag:.1e}, smoothstep contract {step_ok}, weight mass {mass:.1e}, "
                   f"ZOH ramp dE-H^2/2 {de:.1e}; {dt:.2f} s")


def test_c8_multistep_pitfall(verdict):
    t0 = time.perf_counter()
    rep = pitfall_experiment(linear_triangular(), pitfall_variants(4, "foh"), LEVELS)
    dt = time.perf_counter() - t0
    carried, euler, rk4 = (rep.order(v) for v in ("carried", "restart_euler", "restart_rk4"))
    gap, gap_rk4 = carried - euler, abs(carried - rk4)
    ok = gap >= 0.5 and gap_rk4 <= 0.2 and dt < 10.0
    verdict(8, ok, f"carried {carried:.3f}, restart/Euler {euler:.3f} (gap {gap:.3f} >=0.5), "
                   f"restart/RK4 {rk4:.3f} (gap {gap_rk4:.3f} <=0.2); {dt:.2f} s")


DETERMINISM = [
    ("run", "spring_mass_balance.yaml", []),
    ("converge", "linear_triangular.yaml", []),
    ("converge", "linear_offdiag.yaml", []),
    ("stability", "spring_mass.yaml", []),
    ("pitfall", "linear_triangular.yaml", []),
    ("converge", "spring_mass.yaml", ["--levels", "4"]),
    ("balance", "spring_mass_balance.yaml", ["--levels", "4"]),
]


def test_c9_determinism(verdict, tmp_path):
    diffs = []
    for n, (cmd, cfg, extra) in enumerate(DETERMINISM):
        outs = []
        for rep in range(2):
            out = tmp_path / f"{n}_{rep}"
            assert cli.main([cmd, str(CONFIGS / cfg), "--out", str(out), *extra]) == 0
            outs.append(out)
        for f in sorted(outs[0].glob("*.csv")):
            if f.read_bytes() != (outs[1] / f.name).read_bytes():
                diffs.append(f"{cmd} {cfg} {f.name}")
    verdict(9, not diffs, f"{len(DETERMINISM)} commands rerun, differing CSV: {diffs or 'none'}")
