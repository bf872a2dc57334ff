"""Named bounding methods with their default hyperparameters."""
from __future__ import annotations

from .activeset import ActiveSetConfig, ActiveSetSolver
from .base import SolveResult
from .bigm import BigMSolver, bigm_solve
from .optim import LinearSchedule
from .saddlepoint import PrimalInitConfig, SaddlePointConfig, SaddlePointSolver

METHODS = ("interval", "bigm", "activeset", "saddlepoint")


class IntervalSolver:
    """Zero duals: the last-layer interval bound."""

    name = "interval"

    def solve(self, net, bounds, warm=None) -> SolveResult:
        return bigm_solve(net, bounds, 0)


def make_solver(name: str, iters=None, **options):
    """Build a solver by name.

    ``iters`` sets the main iteration budget of the method; ``options`` may hold
    ``lr_start``/``lr_end``, ``as_init_iters``, ``as_omega``, ``as_vars``,
    ``as_max_cuts``, ``sp_init``, ``sp_init_iters``, ``sp_cap_const`` and
    ``sp_primal_steps``.
    """
    if name == "interval":
        return IntervalSolver()
    sched = LinearSchedule(options.get("lr_start", 1e-2), options.get("lr_end", 1e-4))
    if name == "bigm":
        return BigMSolver(1000 if iters is None else iters, sched)
    if name == "activeset":
        cfg = ActiveSetConfig(init_iters=options.get("as_init_iters", 500),
                              iters=1500 if iters is None else iters,
                              omega=options.get("as_omega", 450),
                              vars_per_addition=options.get("as_vars", 2),
                              max_cuts=options.get("as_max_cuts", 7),
                              init_schedule=sched)
        return ActiveSetSolver(cfg)
    if name == "saddlepoint":
        init = options.get("sp_init", "bigm")
        init_iters = options.get("sp_init_iters", 500)
        cap = options.get("sp_cap_const", 1e-2)
        as_cfg = ActiveSetConfig(init_iters=init_iters, iters=options.get("as_iters", 450),
                                 max_cuts=options.get("as_max_cuts", 7),
                                 init_schedule=sched) if init == "activeset" else None
        cfg = SaddlePointConfig(init=init, init_iters=init_iters, init_schedule=sched, as_config=as_cfg,
                                iters=1000 if iters is None else iters, c_alpha=cap, c_beta=cap,
                                primal=PrimalInitConfig(steps=options.get("sp_primal_steps", 100)))
        return SaddlePointSolver(cfg)
    raise ValueError(f"unknown method {name!r}; choose from {', '.join(METHODS)}")


def bab_solver(name: str):
    """Cheaper settings suited to the many small problems of branch and bound."""
    if name == "bigm":
        return make_solver("bigm", 200)
    if name == "activeset":
        return make_solver("activeset", 200, as_init_iters=100, as_omega=100)
    if name == "saddlepoint":
        return make_solver("saddlepoint", 200, sp_init_iters=100, sp_primal_steps=20)
    return make_solver(name)
