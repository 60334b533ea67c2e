"""YAML experiment configuration and its resolved, flattened echo."""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Any

import yaml

from ..model import ConfigurationError, HRule, Partition, SchemeConfig, SolverSpec, SystemSpec
from ..oracles import expm_solution
from .problems import Problem, make_problem
from .studies import DEFAULT_H0, DEFAULT_LEVELS, PITFALL_RATIO, STABILITY_DELTA, STABILITY_HS

_SCHEME_KEYS = {"H", "extrapolation", "degree", "smoothing", "balance_correction",
                "weight_kind", "spread_k", "h_rule", "carry_history", "derivative_export",
                "solver", "solvers"}
_SOLVER_KEYS = {"method", "rel_tol", "abs_tol", "startup", "h_min"}


def _num(v, what: str) -> float:
    # YAML 1.1 reads "1e-12" as a string
    try:
        return float(v)
    except (TypeError, ValueError):
        raise ConfigurationError(f"{what}: expected a number, got {v!r}") from None


def _solver(d: dict | None) -> SolverSpec:
    d = dict(d or {})
    unknown = set(d) - _SOLVER_KEYS
    if unknown:
        raise ConfigurationError(f"unknown solver keys {sorted(unknown)}")
    for key in ("rel_tol", "abs_tol", "h_min"):
        if key in d:
            d[key] = _num(d[key], f"solver.{key}")
    base = SolverSpec()
    return replace(base, **d)


def _h_rule(v) -> HRule:
    if isinstance(v, HRule):
        return v
    if isinstance(v, dict):
        kind = v.get("kind", "proportional")
        val = v.get("value")
        if val is not None:
            val = int(val) if kind == "proportional" else _num(val, "h_rule.value")
        return HRule(kind, val)
    return HRule.parse(str(v))


def scheme_from_dict(d: dict, base: SchemeConfig | None = None) -> SchemeConfig:
    """SchemeConfig from a mapping; missing keys keep ``base``'s values."""
    d = dict(d or {})
    unknown = set(d) - _SCHEME_KEYS
    if unknown:
        raise ConfigurationError(f"unknown scheme keys {sorted(unknown)}")
    kw: dict[str, Any] = {}
    if "H" in d:
        kw["H"] = _num(d["H"], "scheme.H")
    for key in ("extrapolation", "weight_kind", "derivative_export"):
        if key in d:
            kw[key] = str(d[key]).lower()
    for key in ("degree", "spread_k"):
        if key in d:
            kw[key] = int(d[key])
    for key in ("smoothing", "balance_correction", "carry_history"):
        if key in d:
            kw[key] = bool(d[key])
    if "h_rule" in d:
        kw["h_rule"] = _h_rule(d["h_rule"])
    if "solvers" in d:
        kw["solver"] = tuple(_solver(s) for s in d["solvers"])
    elif "solver" in d:
        kw["solver"] = _solver(d["solver"])
    if base is None:
        kw.setdefault("H", DEFAULT_H0)
        return SchemeConfig(**kw)
    return replace(base, **kw)


@dataclass
class Experiment:
    """Everything a CLI subcommand needs, resolved from one config file."""

    problem: Problem
    scheme: SchemeConfig
    variants: dict = field(default_factory=dict)
    H0: float = DEFAULT_H0
    levels: int = DEFAULT_LEVELS
    stability: dict = field(default_factory=dict)
    pitfall: dict = field(default_factory=dict)

    def H_levels(self) -> list:
        return [self.H0 * 2.0 ** -n for n in range(self.levels)]


def _problem(raw: dict) -> Problem:
    name = raw.get("problem")
    params = dict(raw.get("system") or {})
    for key in ("c", "m", "d"):
        if key in params:
            params[key] = _num(params[key], f"system.{key}")
    for key in ("x0", "t_span"):
        if key in params:
            params[key] = tuple(_num(v, f"system.{key}") for v in params[key])
    if "matrix" in params:
        params["B"] = tuple(tuple(_num(v, "system.matrix") for v in row) for row in params.pop("matrix"))
    if name is None:
        if "B" not in params:
            raise ConfigurationError("config needs 'problem' or a system matrix")
        sys = SystemSpec.linear(params["B"], params.get("x0", (1.0,) * len(params["B"])),
                                params.get("t_span", (0.0, 1.0)))
        groups = raw.get("partition") or [[i] for i in range(sys.dim)]
        part = Partition.from_matrix(sys.matrix, groups)
        return Problem("linear", sys, part, lambda t: expm_solution(sys.matrix, sys.x0, t).states)
    problem = make_problem(str(name), **params)
    if raw.get("partition") is not None:
        part = Partition.from_matrix(problem.system.matrix, raw["partition"])
        problem = Problem(problem.name, problem.system, part, problem.oracle)
    return problem


def experiment_from_dict(raw: dict) -> Experiment:
    raw = dict(raw or {})
    problem = _problem(raw)
    scheme = scheme_from_dict(raw.get("scheme") or {})
    variants = {str(name): scheme_from_dict(v, scheme)
                for name, v in (raw.get("variants") or {}).items()}
    stab = dict(raw.get("stability") or {})
    stability = {
        "H": tuple(_num(v, "stability.H") for v in stab.get("H", STABILITY_HS)),
        "extrapolations": tuple(str(v).lower() for v in stab.get("extrapolations", ("zoh", "foh"))),
        "delta": _num(stab.get("delta", STABILITY_DELTA), "stability.delta"),
    }
    if "solver" in stab:
        stability["solver"] = _solver(stab["solver"])
    if "h_rule" in stab:
        stability["h_rule"] = _h_rule(stab["h_rule"])
    pit = dict(raw.get("pitfall") or {})
    pitfall = {
        "ratio": int(pit.get("ratio", PITFALL_RATIO)),
        "extrapolation": str(pit.get("extrapolation", "foh")).lower(),
    }
    return Experiment(problem, scheme, variants, _num(raw.get("H0", DEFAULT_H0), "H0"),
                      int(raw.get("levels", DEFAULT_LEVELS)), stability, pitfall)


def load_experiment(path) -> Experiment:
    with open(path, encoding="utf-8") as fh:
        raw = yaml.safe_load(fh)
    if raw is not None and not isinstance(raw, dict):
        raise ConfigurationError(f"{path}: top level must be a mapping")
    return experiment_from_dict(raw or {})


# ---------------------------------------------------------------------------
# echo

def _flat_scheme(prefix: str, cfg: SchemeConfig, n_sub: int) -> list:
    rows = [
        (f"{prefix}.H", cfg.H),
        (f"{prefix}.extrapolation", cfg.extrapolation),
        (f"{prefix}.degree", cfg.extrapolation_degree),
        (f"{prefix}.smoothing", cfg.smoothing),
        (f"{prefix}.balance_correction", cfg.balance_correction),
        (f"{prefix}.weight_kind", cfg.weight_kind),
        (f"{prefix}.spread_k", cfg.spread_k),
        (f"{prefix}.h_rule", str(cfg.h_rule)),
        (f"{prefix}.carry_history", cfg.carry_history),
        (f"{prefix}.derivative_export", cfg.derivative_export),
    ]
    for k in range(n_sub):
        s = cfg.solver_for(k)
        p = f"{prefix}.solver.{k}"
        rows += [(f"{p}.method", s.method), (f"{p}.rel_tol", s.rel_tol),
                 (f"{p}.abs_tol", s.abs_tol), (f"{p}.startup", s.startup), (f"{p}.h_min", s.h_min)]
    return rows


def flatten_experiment(exp: Experiment, command: str) -> list:
    """Resolved configuration as ``(key, value)`` pairs in a fixed order."""
    sys = exp.problem.system
    n_sub = len(exp.problem.partition)
    rows = [("command", command), ("problem", exp.problem.name), ("system.kind", sys.kind)]
    for i, row in enumerate(sys.matrix):
        for j, v in enumerate(row):
            rows.append((f"system.B.{i}.{j}", float(v)))
    rows += [(f"system.x0.{i}", v) for i, v in enumerate(sys.x0)]
    rows += [("system.t0", sys.t_span[0]), ("system.t1", sys.t_span[1])]
    for key in sorted(sys.params):
        rows.append((f"system.{key}", sys.params[key]))
    for k, s in enumerate(exp.problem.partition.subsystems):
        rows.append((f"partition.{k}.owned", " ".join(map(str, s.owned))))
        rows.append((f"partition.{k}.inputs", " ".join(map(str, s.inputs))))
    rows += _flat_scheme("scheme", exp.scheme, n_sub)
    for name, cfg in exp.variants.items():
        rows += _flat_scheme(f"variant.{name}", cfg, n_sub)
    rows += [("H0", exp.H0), ("levels", exp.levels)]
    if command == "stability":
        rows += [("stability.H", " ".join(repr(v) for v in exp.stability["H"])),
                 ("stability.extrapolations", " ".join(exp.stability["extrapolations"])),
                 ("stability.delta", exp.stability["delta"]),
                 ("stability.h_rule", str(exp.stability.get("h_rule", "adaptive")))]
    if command == "pitfall":
        rows += [("pitfall.ratio", exp.pitfall["ratio"]),
                 ("pitfall.extrapolation", exp.pitfall["extrapolation"])]
    return rows
