"""Shape optimization on overlapping (MultiMesh) P1 discretizations in 2D."""
from .errors import (ConfigError, GeometryError, HaloError, InvalidStepError, LineSearchError,
                     MeshError, OverlapError, SolverError)
from .mesh import Mesh, RigidPose
from .mmassembly import NitscheParams, build_stack, solve_adjoint, solve_state

__version__ = "0.1.0"

__all__ = ["ConfigError", "GeometryError", "HaloError", "InvalidStepError", "LineSearchError", "MeshError",
           "OverlapError", "SolverError", "Mesh", "RigidPose", "NitscheParams", "build_stack",
           "solve_adjoint", "solve_state"]
