"""Adaptive mixed finite element solver for elasticity eigenvalue problems.

Stress-displacement (Hellinger-Reissner) eigenproblems discretized with
the extended Hu-Zhang element on newest-vertex-bisection meshes, driven
by a residual a posteriori estimator with bulk marking, plus a local
postprocessing step that improves the eigenvalue.
"""

__version__ = "0.1.0"

from .adapt import (AdaptConfig, AdaptError, AdaptiveEigensolver,
                    ConvergenceHistory, afem_run, mark_dorfler, uniform_run)
from .assembly import BlockSystem, ComplianceModel, assemble, l2_project
from .eigensolver import EigenPair, SolverConfig, SolverError, align, solve_eigen
from .estimator import (EstimatorReport, compute_estimator, eta_global,
                        eta_star, eta_subset)
from .mesh import (Mesh, MeshError, NewVertexRecord, ancestor_indices, bisect,
                   initial_lshape, is_refinement_of, load_mesh, save_mesh,
                   uniform_refine)
from .postprocess import ReconstructedField, lambda_star, reconstruct
from .spaces import (BasisEval, DisplacementSpace, SpaceError, StressSpace,
                     build_displacement_space, build_stress_space,
                     eval_displacement, eval_stress, interpolate_displacement,
                     interpolate_stress, prolong, prolongation_matrix)

__all__ = [
    "AdaptConfig", "AdaptError", "AdaptiveEigensolver", "ConvergenceHistory",
    "afem_run", "mark_dorfler", "uniform_run",
    "BlockSystem", "ComplianceModel", "assemble", "l2_project",
    "EigenPair", "SolverConfig", "SolverError", "align", "solve_eigen",
    "EstimatorReport", "compute_estimator", "eta_global", "eta_star", "eta_subset",
    "Mesh", "MeshError", "NewVertexRecord", "ancestor_indices", "bisect",
    "initial_lshape", "is_refinement_of", "load_mesh", "save_mesh",
    "uniform_refine",
    "ReconstructedField", "lambda_star", "reconstruct",
    "BasisEval", "DisplacementSpace", "SpaceError", "StressSpace",
    "build_displacement_space", "build_stress_space", "eval_displacement",
    "eval_stress", "interpolate_displacement", "interpolate_stress", "prolong",
    "prolongation_matrix",
]
