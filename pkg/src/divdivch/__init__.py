"""Mixed divDiv-conforming finite elements for the Cahn-Hilliard equation in 2D."""
from .assembly import ConfigurationError, NumericalFailure, build_operators
from .ch_solver import CahnHilliardStepper, RunConfig, run
from .mesh import TriMesh, build_mesh, structured_square

__all__ = ["ConfigurationError", "NumericalFailure", "build_operators", "CahnHilliardStepper",
           "RunConfig", "run", "TriMesh", "build_mesh", "structured_square"]
__version__ = "0.1.0"
