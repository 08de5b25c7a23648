"""Point cloud denoising by graph total variation of surface normals."""

from .bipartite import (
    BLUE,
    RED,
    Bipartition,
    approximate_bipartite,
    induced_bipartite_graph,
    kld,
)
from .cloud import (
    NoiseSpec,
    PointCloud,
    add_gaussian_noise,
    load_cloud,
    rescale_unit_diagonal,
    save_cloud,
)
from .errors import (
    AdmmDivergenceError,
    CloudFormatError,
    CollinearityError,
    ConfigError,
    DegenerateCloudError,
    GtvDenoiseError,
    MissingLinearizationError,
    NoSupportPairError,
    UsageError,
)
from .graph import SpatialIndex, WeightedGraph, build_knn_graph, edge_weight, laplacian
from .metrics import MetricReport, c2c, c2p, evaluate, gtv_value
from .normals import (
    NormalField,
    NormalLinearization,
    SupportPair,
    estimate_normal_field,
    linearize,
    orient_normals,
    raw_normal,
    select_support_pair,
)
from .solver import (
    DenoiseParams,
    DiagnosticsReport,
    EdgeOperator,
    admm_denoise_partite,
    assemble_edge_operator,
    denoise,
    m_update,
    p_update,
    soft_threshold,
    u_update,
)

__version__ = "0.1.0"

__all__ = [
    "AdmmDivergenceError",
    "approximate_bipartite",
    "add_gaussian_noise",
    "admm_denoise_partite",
    "assemble_edge_operator",
    "Bipartition",
    "BLUE",
    "build_knn_graph",
    "c2c",
    "c2p",
    "CloudFormatError",
    "CollinearityError",
    "ConfigError",
    "DegenerateCloudError",
    "denoise",
    "DenoiseParams",
    "DiagnosticsReport",
    "EdgeOperator",
    "edge_weight",
    "estimate_normal_field",
    "evaluate",
    "GtvDenoiseError",
    "gtv_value",
    "induced_bipartite_graph",
    "kld",
    "laplacian",
    "linearize",
    "load_cloud",
    "MetricReport",
    "MissingLinearizationError",
    "m_update",
    "NoiseSpec",
    "NormalField",
    "NormalLinearization",
    "NoSupportPairError",
    "orient_normals",
    "PointCloud",
    "p_update",
    "raw_normal",
    "RED",
    "rescale_unit_diagonal",
    "save_cloud",
    "select_support_pair",
    "soft_threshold",
    "SpatialIndex",
    "SupportPair",
    "UsageError",
    "u_update",
    "WeightedGraph",
    "__version__",
]
