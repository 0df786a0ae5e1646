"""spectube: spectral registration, fold segmentation and flattening of tubes.

Registers pairs of deformed topological-cylinder triangle meshes using the
Fiedler vector of the cotangent Laplacian for a global (theta, t) chart,
level-set fold segmentation for anatomical references and local refinement,
and fold-aware cuts for low-distortion rectangle flattening, with metric
evaluation on synthetic ground truth.
"""

from . import errors
from ._kernels import KERNEL_KIND
from .fileio import load_mesh, save_mesh
from .mesh import (
    TriMesh,
    TopologyReport,
    boundary_arc_length_parameterization,
    cotangent_laplacian,
    mass_matrix,
    remove_caps,
    validate_cylinder_topology,
)
from .spectral import (
    FiedlerField,
    SpectralResult,
    compute_fiedler,
    compute_spectrum,
    harmonic_field,
    heat_evolve,
)
from .levelset import (
    centerline,
    corresponding_point,
    extract_level_set,
    parameterize_tube,
    uniform_level_sets,
)
from .folds import detect_and_segment
from .registration import (
    build_characteristic,
    energy,
    global_register,
    map_point,
    match_boundaries,
    refine_multiscale,
    refine_registration,
)
from .flatten import (
    angle_distortion,
    extract_consistent_cut,
    flatten,
    geodesic_cut,
)
from .evaluate import distance_error, sar, score_detection

__version__ = "0.1.0"

__all__ = [
    "errors",
    "KERNEL_KIND",
    "load_mesh",
    "save_mesh",
    "TriMesh",
    "TopologyReport",
    "boundary_arc_length_parameterization",
    "cotangent_laplacian",
    "mass_matrix",
    "remove_caps",
    "validate_cylinder_topology",
    "FiedlerField",
    "SpectralResult",
    "compute_fiedler",
    "compute_spectrum",
    "harmonic_field",
    "heat_evolve",
    "centerline",
    "corresponding_point",
    "extract_level_set",
    "parameterize_tube",
    "uniform_level_sets",
    "detect_and_segment",
    "build_characteristic",
    "energy",
    "global_register",
    "map_point",
    "match_boundaries",
    "refine_multiscale",
    "refine_registration",
    "angle_distortion",
    "extract_consistent_cut",
    "flatten",
    "geodesic_cut",
    "distance_error",
    "sar",
    "score_detection",
    "__version__",
]
