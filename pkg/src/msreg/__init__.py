"""Multi-scale sparse voxel descriptors and robust registration."""

__version__ = "0.1.0"

from .cloud import (
    PointCloud,
    RigidTransform,
    VoxelMap,
    apply_transform,
    compose,
    grid_subsample,
    invert,
)
from .cloud_io import load_cloud, save_cloud
from .model import Model, ModelConfig, build_model, forward_multiscale, rescale, voxelize_scale
from .pairgen import PairSample, UdgeParams, generate_pair
from .registration import RansacConfig, kabsch, match_descriptors, register_pair
from .sparseops import SparseTensor
from .train import TrainConfig, train

__all__ = [
    "Model",
    "ModelConfig",
    "PairSample",
    "PointCloud",
    "RansacConfig",
    "RigidTransform",
    "SparseTensor",
    "TrainConfig",
    "UdgeParams",
    "VoxelMap",
    "apply_transform",
    "build_model",
    "compose",
    "forward_multiscale",
    "generate_pair",
    "grid_subsample",
    "invert",
    "kabsch",
    "load_cloud",
    "match_descriptors",
    "register_pair",
    "rescale",
    "save_cloud",
    "train",
    "voxelize_scale",
    "__version__",
]
