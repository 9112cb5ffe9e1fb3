"""partbox: part-based 3D structure toolkit.

Oriented-box shape representation, symmetry-ambiguity-aware rotation
losses, group-based size regression, contact-point part assembly, EMD
evaluation, and a procedural synthetic shape generator, wired together
by a small fp64 autodiff stack and a CLI.
"""

from .geometry import (
    GeometryError,
    NormalizationError,
    OrientedBox,
    RotationEquivalenceSet,
    equivalence_set,
    geodesic_error,
    matrix_to_quat,
    pca_obb_fit,
    quat_to_matrix,
    rotation_set_distance,
    sample_box_surface,
)
from .losses import (
    LossConfig,
    MoEPrediction,
    chamfer_box_distance,
    l1_vector_error,
    laplace_mixture_loglik,
    min_of_n_loss,
    moe_total_loss,
    size_loss,
)
from .evaluation import (
    MetricReport,
    PointCloud,
    emd_approx,
    emd_exact,
    evaluate_dataset,
    farthest_point_sampling,
    shape_to_pointcloud,
)
from .assembly import (
    ContactAssignment,
    PartTree,
    PlacedShape,
    assemble,
    build_part_tree,
    contact_weights_for_point,
    relative_from_contacts,
)
from .relations import (
    PartPairScore,
    SymmetryGrouping,
    cluster_parts,
    oracle_adjacency,
    oracle_translational_symmetry,
)
from .synth.shapes import PartShape, generate_shape, randomize_gt_rotation_labels

__version__ = "0.1.0"
