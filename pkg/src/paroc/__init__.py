"""Multiobjective optimal control: Pareto fronts by weighted scalarization with
Pontryagin-based certification of the resulting extremals."""

__version__ = "0.1.0"

from .problem import (BolzaProblem, ControlSet, Process, ProblemError,
                      check_admissible, evaluate_objectives, integrate_state)
from .registry import REGISTRY_NAMES, get_problem
from .pontryagin import (CheckConfig, ConditionReport, MultiplierSet,
                         PontryaginError, check_conditions, integrate_adjoint,
                         recover_multipliers, terminal_adjoint)
from .solver import (ParetoFront, ParetoPoint, SolverConfig, SolverError,
                     WeightVector, dominance_filter, solve_scalarized,
                     sweep_front, weight_grid)
from .sufficiency import (SufficiencyConfig, SufficiencyError,
                          SufficiencyReport, certify)
from .qualification import (QualificationError, check_constraint_gradients,
                            check_control_surjectivity)
from .transform import (AugmentedProblem, TransformError, bolza_to_mayer,
                        lift_process, project_multipliers)

__all__ = [
    "__version__",
    "BolzaProblem", "ControlSet", "Process", "ProblemError",
    "check_admissible", "evaluate_objectives", "integrate_state",
    "REGISTRY_NAMES", "get_problem",
    "CheckConfig", "ConditionReport", "MultiplierSet", "PontryaginError",
    "check_conditions", "integrate_adjoint", "recover_multipliers",
    "terminal_adjoint",
    "ParetoFront", "ParetoPoint", "SolverConfig", "SolverError",
    "WeightVector", "dominance_filter", "solve_scalarized", "sweep_front",
    "weight_grid",
    "SufficiencyConfig", "SufficiencyError", "SufficiencyReport", "certify",
    "QualificationError", "check_constraint_gradients",
    "check_control_surjectivity",
    "AugmentedProblem", "TransformError", "bolza_to_mayer", "lift_process",
    "project_multipliers",
]
