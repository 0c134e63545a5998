"""Fixed-domain shape and topology optimization by cost penalization.

The shape is the negativity region of a P1 level-set function on a fixed
hold-all mesh; the Dirichlet condition on its free boundary is enforced
by a boundary-integral penalty, and both the level-set function and a
distributed control are updated by projected gradient descent.
"""

from .estimator import ShapeOptimizer
from .expr import Expr, ExprDomainError, ExprSyntaxError, parse
from .mesh import (Mesh, MeshError, generate_disk_mesh, generate_rect_mesh,
                   load_mesh, ngon, read_vtk, save_mesh, write_vtk)
from .optimize import (OptimizerConfig, Problem, RunResult, run)

__version__ = "0.1.0"

__all__ = [
    "Expr", "ExprDomainError", "ExprSyntaxError", "parse",
    "Mesh", "MeshError", "generate_disk_mesh", "generate_rect_mesh",
    "load_mesh", "ngon", "read_vtk", "save_mesh", "write_vtk",
    "OptimizerConfig", "Problem", "RunResult", "run",
    "ShapeOptimizer", "__version__",
]
