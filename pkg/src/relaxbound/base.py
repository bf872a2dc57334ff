"""Shared result type and the interface every bounding method implements."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Optional, Protocol

import numpy as np


@dataclass
class SolveResult:
    """Outcome of one bounding run.

    ``bound`` is the best dual value seen, hence a valid lower bound on the
    network output. ``x0`` is a primal input point suitable as a
    counterexample candidate. Unpacks as ``(bound, state)``.
    """

    bound: float
    state: Any
    x0: Optional[np.ndarray] = None
    history: list = field(default_factory=list)
    iters: int = 0
    dual_sizes: list = field(default_factory=list)
    info: dict = field(default_factory=dict)

    def __iter__(self):
        yield self.bound
        yield self.state


class BoundingMethod(Protocol):
    name: str

    def solve(self, net, bounds, warm=None) -> SolveResult:
        ...
