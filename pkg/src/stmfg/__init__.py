"""stMFG: dual-view graph convolution with per-layer attention fusion,
inter-view contrastive learning, spatial regularization and ZINB
reconstruction, for clustering spatial transcriptomics spots into
spatial domains."""

__version__ = "0.1.0"

from .autodiff import SparseMatrix, Tensor
from .clustering import Partition, ari, kmeans, nmi
from .data import Dataset, generate_synthetic, load_dataset, preprocess
from .graphs import GraphPair, build_graph_pair
from .model import ForwardTrace, ModelParams
from .training import TrainConfig, TrainResult, train

__all__ = [
    "__version__",
    "SparseMatrix",
    "Tensor",
    "Partition",
    "ari",
    "kmeans",
    "nmi",
    "Dataset",
    "generate_synthetic",
    "load_dataset",
    "preprocess",
    "GraphPair",
    "build_graph_pair",
    "ForwardTrace",
    "ModelParams",
    "TrainConfig",
    "TrainResult",
    "train",
]
