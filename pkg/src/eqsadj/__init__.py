"""Adjoint sensitivities for transient nonlinear electroquasistatic FE models."""

__version__ = "0.1.0"

from .forward import DC, Impulse, Sinusoid, EQSProblem, build_timegrid, solve_forward  # noqa: E402
from .materials import FGMMaterial, LinearMaterial  # noqa: E402
from .mesh import Mesh, build_layered_rect, build_tensor_mesh, load_mesh, save_mesh  # noqa: E402
from .adjoint import solve_adjoint, solve_adjoints  # noqa: E402
from .sensitivity import Parameter, compute_sensitivities  # noqa: E402
from .scenarios import Scenario, scenario_fgm_joint_simplified, scenario_layered_resistor  # noqa: E402

__all__ = [
    "DC", "Impulse", "Sinusoid", "EQSProblem", "build_timegrid", "solve_forward",
    "FGMMaterial", "LinearMaterial",
    "Mesh", "build_layered_rect", "build_tensor_mesh", "load_mesh", "save_mesh",
    "solve_adjoint", "solve_adjoints", "Parameter", "compute_sensitivities",
    "Scenario", "scenario_fgm_joint_simplified", "scenario_layered_resistor",
]
