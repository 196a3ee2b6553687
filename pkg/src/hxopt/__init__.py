"""Level-set topology optimization of two-fluid heat exchangers.

P1 finite elements on crossed-diagonal triangle meshes, penalized
Navier-Stokes flow per fluid, a shared advection-diffusion temperature
field, adjoint shape derivatives with a Hilbertian smoothing step, and a
null-space constrained descent loop driving pseudo-time transport of the
level set with elliptic signed-distance reinitialization.
"""

from .flow import FlowParams, FlowState, gls_parameter_ns, solve_flow
from .levelset import (
    AdvectionSettings,
    LevelSetField,
    ReinitSettings,
    advect_levelset,
    indicator_from_levelset,
    reinit_potential,
    reinitialize,
    theta_max,
)
from .mesh import Mesh, build_structured_mesh
from .optimizer import OptimizerConfig, run_optimization
from .problem import ProblemConfig, build_problem, desk_preset
from .sensitivity import (
    ExtensionSettings,
    ShapeDerivative,
    assemble_shape_derivative,
    hilbertian_extension,
    solve_adjoints,
)
from .thermal import ThermalParams, ThermalState, gls_parameter_T, solve_temperature

__all__ = [
    "AdvectionSettings",
    "ExtensionSettings",
    "FlowParams",
    "FlowState",
    "LevelSetField",
    "Mesh",
    "OptimizerConfig",
    "ProblemConfig",
    "ReinitSettings",
    "ShapeDerivative",
    "ThermalParams",
    "ThermalState",
    "advect_levelset",
    "assemble_shape_derivative",
    "build_problem",
    "build_structured_mesh",
    "desk_preset",
    "gls_parameter_T",
    "gls_parameter_ns",
    "hilbertian_extension",
    "indicator_from_levelset",
    "reinit_potential",
    "reinitialize",
    "run_optimization",
    "solve_adjoints",
    "solve_flow",
    "solve_temperature",
    "theta_max",
]
__version__ = "0.1.0"
