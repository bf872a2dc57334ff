"""Lower bounds on ReLU network outputs from dual solvers over the Big-M and Anderson relaxations."""
from .activeset import ActiveSetConfig, ActiveSetSolver, activeset_solve
from .bab import Budget, Status, VerifyResult, bab_verify
from .base import SolveResult
from .bigm import BigMDualState, BigMSolver, bigm_init, bigm_solve
from .methods import make_solver
from .network import (Conv2d, InputDomain, Linear, Network, example_network, forward_eval, fold,
                      load_network, masked_backward, masked_forward, random_network, save_network, unfold)
from .optim import Adam, LinearSchedule
from .relaxation import (BigMDual, CheckMatrices, IntervalOnly, LayerBounds, anderson_violation,
                         bigm_violation, check_matrices, intermediate_bounds, interval_propagate,
                         oracle_most_violated, refine_bounds)
from .saddlepoint import SaddlePointConfig, SaddlePointSolver, saddlepoint_solve

__version__ = "0.1.0"
