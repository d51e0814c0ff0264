"""Nonlinear MPC: OCP transcription, SQP solver, QP subproblem, command synthesis."""
from .commands import CommandProfile, constant_profile, synthesize_commands
from .ocp import (SLACK_PENALTY, SOFT_KINDS, DimensionMismatch, OcpLimits, OcpProblem, OcpWeights,
                  assemble_ocp, curve_speed_limit, stage_cost)
from .qp import QpProblem, QpResult, QpSolver, solve_qp
from .sqp import OcpSolution, SqpSolver, dynamics_defect, shift, solve

__all__ = [
    "CommandProfile", "constant_profile", "synthesize_commands", "SLACK_PENALTY", "SOFT_KINDS",
    "DimensionMismatch", "OcpLimits", "OcpProblem", "OcpWeights", "assemble_ocp", "curve_speed_limit",
    "stage_cost", "QpProblem", "QpResult", "QpSolver", "solve_qp", "OcpSolution", "SqpSolver",
    "dynamics_defect", "shift", "solve",
]
