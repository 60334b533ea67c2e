"""Named test problems with their partitions and exact solutions."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from ..model import ConfigurationError, Partition, SystemSpec
from ..oracles import expm_solution, oscillator_solution

TRIANGULAR_B = ((-1.0, 0.0), (1.0, -2.0))
OFFDIAG_B = ((0.0, 1.0), (-1.0, 0.0))
LINEAR_X0 = (1.0, 1.0)
LINEAR_SPAN = (0.0, 2.0)
SPRING_SPAN = (0.0, 20.0)


@dataclass(frozen=True, eq=False)
class Problem:
    name: str
    system: SystemSpec
    partition: Partition
    oracle: Callable  # times -> (len(times), dim) array

    def reference(self, times) -> np.ndarray:
        return self.oracle(np.asarray(times, dtype=float) - self.system.t_span[0])


def linear_triangular(x0=LINEAR_X0, t_span=LINEAR_SPAN, B=TRIANGULAR_B) -> Problem:
    sys = SystemSpec.linear(B, x0, t_span)
    return _linear("linear_triangular", sys)


def linear_offdiag(x0=LINEAR_X0, t_span=LINEAR_SPAN, B=OFFDIAG_B) -> Problem:
    sys = SystemSpec.linear(B, x0, t_span)
    return _linear("linear_offdiag", sys)


def _linear(name, sys) -> Problem:
    groups = [[i] for i in range(sys.dim)]
    part = Partition.from_matrix(sys.matrix, groups)
    B, x0 = sys.matrix, sys.x0
    return Problem(name, sys, part, lambda t: expm_solution(B, x0, t).states)


def spring_mass(c=1.0, m=1.0, d=0.0, x0=(1.0, 0.0), t_span=SPRING_SPAN) -> Problem:
    sys = SystemSpec.spring_mass(c, m, d, x0, t_span)
    part = Partition.from_matrix(sys.matrix, [[0], [1]], names=("spring", "mass"))
    return Problem("spring_mass", sys, part,
                   lambda t: oscillator_solution(c, m, x0, t, d).states)


PROBLEMS = {
    "linear_triangular": linear_triangular,
    "linear_offdiag": linear_offdiag,
    "spring_mass": spring_mass,
}


def make_problem(name: str, **params) -> Problem:
    try:
        factory = PROBLEMS[name]
    except KeyError:
        raise ConfigurationError(f"unknown problem {name!r}; choose from {sorted(PROBLEMS)}") from None
    return factory(**params)
