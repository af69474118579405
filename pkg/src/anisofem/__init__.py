"""Anisotropic graded refinement of tetrahedral meshes toward vertex and edge
singularities, with a P1 Poisson solver and convergence-rate studies."""

from .mesh import (
    Mesh, SingularSet, TetType, check_conformity, classify_tet, classify_tets, refine, refine_mesh,
    validate_initial_mesh,
)
from .domains import DomainSpec, build_domain, fichera_domain, prism_domain
from .fem import FEFunction, assemble, convergence_rates, h1_diff, h1_seminorm, prolong, solve, solve_cg
from .weights import (
    GradingExponents, a_from_kappa, compute_aV, decompose_domain, kappa_from_a, weighted_norm,
    weighted_seminorm,
)
from .shape import (
    absolute_distance, max_face_angle, mesh_layers, reference_map_e, reference_map_ev, reference_map_ve,
    relative_z_distances, similarity_classes,
)
from .meshio import export_vtk, load_mesh, save_mesh
from .experiments import ExperimentConfig, RateTable, emit_table, run_experiment

__version__ = "0.1.0"
