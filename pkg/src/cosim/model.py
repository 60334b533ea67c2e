"""Coupled system description, its partition into subsystems, and scheme settings."""
from __future__ import annotations

import graphlib
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .ode_core import METHODS, STARTUP_METHODS, StepControl
from .signals import WEIGHT_KINDS

SYSTEM_KINDS = ("linear", "spring_mass")
EXTRAPOLATIONS = ("zoh", "foh", "lagrange")
H_RULES = ("proportional", "fixed", "adaptive")
DERIVATIVE_EXPORTS = ("refreshed", "lagged")


class ConfigurationError(ValueError):
    """Inconsistent system, partition or scheme settings."""


# ---------------------------------------------------------------------------
# system

@dataclass(frozen=True, eq=False)
class SystemSpec:
    """A linear coupled ODE ``x' = B x`` on ``t_span`` with initial value ``x0``.

    ``kind`` is ``"linear"`` for a dense matrix or ``"spring_mass"`` for the
    oscillator ``s' = v, v' = -(c s + d v)/m``; ``params`` keeps ``c, m, d``
    for the latter.  ``metadata`` records the spectral abscissa of ``B``.
    """

    kind: str
    matrix: np.ndarray
    x0: tuple
    t_span: tuple
    params: dict = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in SYSTEM_KINDS:
            raise ConfigurationError(f"unknown system kind {self.kind!r}")
        B = np.array(self.matrix, dtype=float)
        if B.ndim != 2 or B.shape[0] != B.shape[1]:
            raise ConfigurationError("system matrix must be square")
        if len(self.x0) != B.shape[0]:
            raise ConfigurationError(f"x0 has {len(self.x0)} entries for a {B.shape[0]}-state system")
        if self.kind == "spring_mass" and B.shape[0] != 2:
            raise ConfigurationError("spring-mass system has exactly two states")
        t0, t1 = (float(v) for v in self.t_span)
        if not t1 > t0:
            raise ConfigurationError("t_span must be increasing")
        B.setflags(write=False)
        object.__setattr__(self, "matrix", B)
        object.__setattr__(self, "x0", tuple(float(v) for v in self.x0))
        object.__setattr__(self, "t_span", (t0, t1))
        abscissa = float(np.max(np.linalg.eigvals(B).real))
        self.metadata.setdefault("spectral_abscissa", abscissa)
        self.metadata.setdefault("stable_spectrum", abscissa <= 1e-12)

    @classmethod
    def linear(cls, B, x0, t_span) -> "SystemSpec":
        return cls("linear", np.asarray(B, dtype=float), tuple(x0), tuple(t_span))

    @classmethod
    def spring_mass(cls, c=1.0, m=1.0, d=0.0, x0=(1.0, 0.0), t_span=(0.0, 20.0)) -> "SystemSpec":
        if not (c > 0 and m > 0):
            raise ConfigurationError("spring constant and mass must be positive")
        B = np.array([[0.0, 1.0], [-c / m, -d / m]])
        return cls("spring_mass", B, tuple(x0), tuple(t_span),
                   params={"c": float(c), "m": float(m), "d": float(d)})

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    def monolithic_rhs(self) -> Callable:
        """Right-hand side of the unsplit system, row sums in column order."""
        rows = tuple(tuple(float(v) for v in r) for r in self.matrix)

        def rhs(t, x):
            out = []
            for r in rows:
                acc = 0.0
                for a, b in zip(r, x):
                    acc += a * b
                out.append(acc)
            return out

        return rhs


def energy(x, c: float, m: float) -> float:
    """Oscillator energy ``m v^2 / 2 + c s^2 / 2`` of ``x = (s, v)``."""
    s, v = float(x[0]), float(x[1])
    return 0.5 * m * v * v + 0.5 * c * s * s


def spring_force_output(values, derivs, c: float) -> tuple:
    """Force ``F = -c s`` and its rate ``-c s'`` as the spring would export them."""
    return -c * float(values[0]), -c * float(derivs[0])


# ---------------------------------------------------------------------------
# partition

@dataclass(frozen=True)
class OutputPort:
    state: int
    export_derivative: bool = True


@dataclass(frozen=True)
class Subsystem:
    """Owned differential states, received states and exported ports."""

    owned: tuple
    inputs: tuple = ()
    outputs: tuple = ()
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "owned", tuple(int(i) for i in self.owned))
        object.__setattr__(self, "inputs", tuple(int(i) for i in self.inputs))
        object.__setattr__(self, "outputs", tuple(self.outputs))

    def port(self, state: int) -> OutputPort | None:
        for p in self.outputs:
            if p.state == state:
                return p
        return None


@dataclass(frozen=True)
class Partition:
    subsystems: tuple

    def __post_init__(self):
        object.__setattr__(self, "subsystems", tuple(self.subsystems))

    def __len__(self):
        return len(self.subsystems)

    def __getitem__(self, k) -> Subsystem:
        return self.subsystems[k]

    @classmethod
    def from_matrix(cls, B, groups: Sequence[Sequence[int]], export_derivative: bool = True,
                    names: Sequence[str] | None = None) -> "Partition":
        """Partition whose inputs are exactly the off-block columns ``B`` couples to.

        Every state received by someone is exported by its owner.
        """
        B = np.asarray(B, dtype=float)
        groups = [tuple(int(i) for i in g) for g in groups]
        inputs = []
        for g in groups:
            cols = [j for j in range(B.shape[1])
                    if j not in g and np.any(B[list(g), j] != 0.0)]
            inputs.append(tuple(cols))
        received = {i for ins in inputs for i in ins}
        subs = []
        for k, (g, ins) in enumerate(zip(groups, inputs)):
            ports = tuple(OutputPort(i, export_derivative) for i in g if i in received)
            name = names[k] if names else f"S{k + 1}"
            subs.append(Subsystem(g, ins, ports, name))
        return cls(tuple(subs))

    @property
    def dim(self) -> int:
        return sum(len(s.owned) for s in self.subsystems)

    def owner(self, state: int) -> int:
        for k, s in enumerate(self.subsystems):
            if state in s.owned:
                return k
        raise ConfigurationError(f"state {state} is owned by no subsystem")

    def local_index(self, state: int) -> tuple:
        """``(owner, position within the owner's state vector)``."""
        k = self.owner(state)
        return k, self.subsystems[k].owned.index(state)

    def check(self, dim: int | None = None) -> None:
        dim = self.dim if dim is None else dim
        seen = []
        for s in self.subsystems:
            seen.extend(s.owned)
        if len(seen) != len(set(seen)):
            raise ConfigurationError("subsystems own overlapping states")
        if sorted(seen) != list(range(dim)):
            raise ConfigurationError(f"owned states {sorted(seen)} do not cover 0..{dim - 1}")
        for k, s in enumerate(self.subsystems):
            for i in s.inputs:
                if not 0 <= i < dim:
                    raise ConfigurationError(f"input index {i} of {s.name or k} out of range")
                if i in s.owned:
                    raise ConfigurationError(
                        f"state {i} is both owned and received by {s.name or k}; "
                        "an integrated state must only be exported")
            for p in s.outputs:
                if p.state not in s.owned:
                    raise ConfigurationError(
                        f"{s.name or k} exports state {p.state} it does not own")


# ---------------------------------------------------------------------------
# scheme

@dataclass(frozen=True)
class HRule:
    """How the micro step relates to the exchange step.

    ``proportional``: ``h = H / value`` (integer ``value >= 1``);
    ``fixed``: ``h = value`` with ``H / h`` an integer;
    ``adaptive``: the subsystem solver chooses, bounded by ``H``.
    """

    kind: str = "proportional"
    value: float | None = 10

    def __post_init__(self):
        if self.kind not in H_RULES:
            raise ConfigurationError(f"unknown h rule {self.kind!r}")
        if self.kind == "proportional":
            c = self.value
            if c is None or c < 1 or float(c) != int(c):
                raise ConfigurationError("proportional h rule needs an integer c >= 1")
        if self.kind == "fixed" and not (self.value is not None and self.value > 0):
            raise ConfigurationError("fixed h rule needs a positive step")

    @classmethod
    def parse(cls, text: str) -> "HRule":
        """``"proportional:10"``, ``"fixed:0.001"`` or ``"adaptive"``."""
        kind, _, val = text.partition(":")
        kind = kind.strip().lower()
        if kind == "adaptive":
            return cls("adaptive", None)
        if not val:
            raise ConfigurationError(f"h rule {text!r} needs a value")
        return cls(kind, int(val) if kind == "proportional" else float(val))

    def micro_step(self, H: float) -> float | None:
        if self.kind == "proportional":
            return H / self.value
        if self.kind == "fixed":
            h = float(self.value)
            ratio = H / h
            if h > H * (1 + 1e-12) or abs(ratio - round(ratio)) > 1e-9 * ratio:
                raise ConfigurationError(f"fixed micro step {h} does not divide H={H}")
            return h
        return None

    def __str__(self):
        return self.kind if self.value is None else f"{self.kind}:{self.value}"


@dataclass(frozen=True)
class SolverSpec:
    """Subsystem solver choice, turned into a StepControl once H is known."""

    method: str = "rk45"
    rel_tol: float = 1e-12
    abs_tol: float = 1e-12
    startup: str = "euler"
    h_min: float = 1e-14

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigurationError(f"unknown solver {self.method!r}")
        if self.startup not in STARTUP_METHODS:
            raise ConfigurationError(f"unknown AB2 startup {self.startup!r}")

    def control(self, H: float, rule: HRule, h_init: float | None = None) -> StepControl:
        h = rule.micro_step(H)
        if self.method == "rk45":
            h_max = H if h is None else h
            start = h_max if h_init is None else min(h_init, h_max)
            return StepControl("rk45", rel_tol=self.rel_tol, abs_tol=self.abs_tol,
                               h_min=self.h_min, h_max=h_max, h_init=start)
        if h is None:
            raise ConfigurationError(f"{self.method} is fixed-step; use a proportional or fixed h rule")
        return StepControl(self.method, h_fixed=h, rel_tol=self.rel_tol, abs_tol=self.abs_tol,
                           startup=self.startup)


@dataclass(frozen=True)
class SchemeConfig:
    """Exchange step, input reconstruction and subsystem solver settings.

    ``solver`` is one SolverSpec shared by all subsystems or a tuple with one
    per subsystem.  ``carry_history`` lets AB2 subsystems keep their step
    history across exchanges instead of restarting.

    ``derivative_export`` picks the exported slope at ``T_k``: ``refreshed``
    evaluates the sender's right-hand side with the peers' exchanged values
    at ``T_k``; ``lagged`` reuses the last micro node, whose inputs were the
    interval's extrapolants.
    """

    H: float
    extrapolation: str = "zoh"
    degree: int = 0
    smoothing: bool = False
    balance_correction: bool = False
    weight_kind: str = "box"
    spread_k: int = 1
    solver: SolverSpec | tuple = SolverSpec()
    h_rule: HRule = HRule()
    carry_history: bool = False
    derivative_export: str = "refreshed"

    def __post_init__(self):
        if not self.H > 0:
            raise ConfigurationError("exchange step H must be positive")
        if self.extrapolation not in EXTRAPOLATIONS:
            raise ConfigurationError(f"unknown extrapolation {self.extrapolation!r}")
        if self.extrapolation == "lagrange" and self.degree < 0:
            raise ConfigurationError("Lagrange degree must be non-negative")
        if self.weight_kind not in WEIGHT_KINDS:
            raise ConfigurationError(f"unknown weight kind {self.weight_kind!r}")
        if self.derivative_export not in DERIVATIVE_EXPORTS:
            raise ConfigurationError(f"unknown derivative export {self.derivative_export!r}")
        if not 1 <= self.spread_k <= 4:
            raise ConfigurationError("spread_k must be in 1..4")
        self.h_rule.micro_step(self.H)

    @property
    def extrapolation_degree(self) -> int:
        return {"zoh": 0, "foh": 1}.get(self.extrapolation, self.degree)

    def solver_for(self, k: int) -> SolverSpec:
        if isinstance(self.solver, SolverSpec):
            return self.solver
        return self.solver[k]


# ---------------------------------------------------------------------------
# wiring

@dataclass(frozen=True)
class WiringReport:
    acyclic: bool
    edges: tuple  # (sender, receiver, state)
    cycle: tuple | None = None
    notes: tuple = ()


def validate_wiring(part: Partition, cfg: SchemeConfig | None = None,
                    dim: int | None = None) -> WiringReport:
    """Check the partition and classify its output-dependency graph.

    Mutual dependencies are reported, not rejected: an explicit scheme runs
    them with lagged inputs.  Hard errors are structural (ownership, self
    input, missing export, FOH without exported derivative).
    """
    part.check(dim)
    edges = []
    notes = []
    deps = {k: set() for k in range(len(part))}
    for k, s in enumerate(part.subsystems):
        for i in s.inputs:
            sender = part.owner(i)
            port = part[sender].port(i)
            if port is None:
                raise ConfigurationError(f"state {i} is received by {s.name or k} but not exported")
            if cfg is not None and cfg.extrapolation == "foh" and not port.export_derivative:
                raise ConfigurationError(
                    f"first-order hold of state {i} needs its derivative exported")
            edges.append((sender, k, i))
            deps[k].add(sender)
    cycle = None
    try:
        tuple(graphlib.TopologicalSorter(deps).static_order())
    except graphlib.CycleError as exc:
        cycle = tuple(exc.args[1])
        notes.append("mutual dependency between subsystems; inputs are lagged")
    return WiringReport(cycle is None, tuple(edges), cycle, tuple(notes))


def build_rhs(sys: SystemSpec, part: Partition, k: int) -> Callable:
    """Right-hand side ``f(t, x_owned, input_eval)`` of subsystem ``k``.

    ``input_eval(t)`` returns the reconstructed inputs in the order of the
    subsystem's ``inputs``.  Couplings to states that are neither owned nor
    received are a configuration error.
    """
    if not 0 <= k < len(part):
        raise ConfigurationError(f"no subsystem {k}")
    s = part[k]
    n = sys.dim
    for i in s.owned + s.inputs:
        if not 0 <= i < n:
            raise ConfigurationError(f"state index {i} out of range for a {n}-state system")
    B = sys.matrix
    wired = set(s.owned) | set(s.inputs)
    for i in s.owned:
        for j in range(n):
            if j not in wired and B[i, j] != 0.0:
                raise ConfigurationError(
                    f"row {i} of {s.name or k} couples to state {j}, which is not an input")
    rows = tuple((tuple(float(B[i, j]) for j in s.owned),
                  tuple(float(B[i, j]) for j in s.inputs)) for i in s.owned)
    has_inputs = bool(s.inputs)

    def rhs(t, x, input_eval):
        u = input_eval(t) if has_inputs else ()
        out = []
        for rd, ri in rows:
            acc = 0.0
            for a, b in zip(rd, x):
                acc += a * b
            for a, b in zip(ri, u):
                acc += a * b
            out.append(acc)
        return out

    def bind(input_eval) -> Callable:
        """``f(t, x)`` with the inputs fixed; same arithmetic as ``rhs``."""
        poly = getattr(input_eval, "rows", None)
        if len(rows) == 1 and len(rows[0][1]) == 1 and poly is not None and len(poly) <= 2:
            (a,), (b,) = rows[0]
            if len(poly) == 1:
                c = b * poly[0][0]
                return lambda t, x: [0.0 + a * x[0] + c]
            c1, c0, o = poly[0][0], poly[1][0], input_eval.origin
            return lambda t, x: [0.0 + a * x[0] + b * (c1 * (t - o) + c0)]
        return lambda t, x: rhs(t, x, input_eval)

    rhs.bind = bind
    return rhs
