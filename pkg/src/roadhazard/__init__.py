"""Saliency-based road hazard detection on point clouds, with a shared obstacle registry."""

from .pointcloud import LabeledCloud, PointCloud, load_cloud, save_cloud
from .rpca import RpcaConfig, RpcaResult, fast_pcp
from .saliency import SaliencyConfig, SaliencyMap, compute_saliency_map

__all__ = [
    "LabeledCloud", "PointCloud", "RpcaConfig", "RpcaResult", "SaliencyConfig", "SaliencyMap",
    "compute_saliency_map", "fast_pcp", "load_cloud", "save_cloud",
]
__version__ = "0.1.0"
