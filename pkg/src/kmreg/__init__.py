"""Multi-view rigid point-set registration by joint K-means clustering.

The library registers N partially overlapping 3D point sets by
alternating hard K-means clustering over all transformed points with a
closed-form per-view rigid alignment against the cluster centroids.
"""

from .geometry import PointSet, RigidTransform, Scene
from .spatial_index import NnIndex
from .alignment import (
    Correspondences,
    DegenerateConfigurationError,
    InsufficientCorrespondencesError,
    solve_rigid,
)
from .clustering import (
    ClusterState,
    assign,
    compute_weights,
    lloyd_kmeans,
    objective,
    seed_centroids,
    update_centroids,
)
from .registration import (
    IterationTrace,
    RegistrationConfig,
    RegistrationError,
    register,
)
from .dataset_io import (
    PerturbationSpec,
    SceneManifest,
    ViewEntry,
    downsample,
    load_manifest,
    load_ply,
    load_scene,
    perturb,
    save_manifest,
    save_scene,
    synth_scene,
    write_ply,
)
from .evaluation import (
    RegistrationReport,
    ablation_elimination,
    cross_section,
    k_sweep,
    noise_sweep,
    rotation_error,
    run_single,
    translation_error,
)

__version__ = "0.1.0"

__all__ = [
    "PointSet",
    "RigidTransform",
    "Scene",
    "NnIndex",
    "Correspondences",
    "DegenerateConfigurationError",
    "InsufficientCorrespondencesError",
    "solve_rigid",
    "ClusterState",
    "assign",
    "compute_weights",
    "lloyd_kmeans",
    "objective",
    "seed_centroids",
    "update_centroids",
    "IterationTrace",
    "RegistrationConfig",
    "RegistrationError",
    "register",
    "PerturbationSpec",
    "SceneManifest",
    "ViewEntry",
    "downsample",
    "load_manifest",
    "load_ply",
    "load_scene",
    "perturb",
    "save_manifest",
    "save_scene",
    "synth_scene",
    "write_ply",
    "RegistrationReport",
    "ablation_elimination",
    "cross_section",
    "k_sweep",
    "noise_sweep",
    "rotation_error",
    "run_single",
    "translation_error",
]
