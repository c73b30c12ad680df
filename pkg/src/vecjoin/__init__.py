"""Threshold vector joins over graph proximity indexes."""
from .core import Counters, VectorStore, distance, threshold_check
from .errors import ConfigurationError, FormatError, VecJoinError, VersionError
from .graph_index import (IndexBuildParams, NodeRole, ProximityGraph, build_index,
                          build_merged_index, load_index, save_index)
from .join import (HybridMode, JoinConfig, JoinIndexes, JoinOutcome, MethodVariant,
                   order_queries, predict_ood, recall, vector_join)
from .oracle import GroundTruth, nlj_exact
from .workloads import Generator, WorkloadSpec, generate

__all__ = [
    "Counters", "VectorStore", "distance", "threshold_check",
    "ConfigurationError", "FormatError", "VecJoinError", "VersionError",
    "IndexBuildParams", "NodeRole", "ProximityGraph", "build_index", "build_merged_index",
    "load_index", "save_index",
    "HybridMode", "JoinConfig", "JoinIndexes", "JoinOutcome", "MethodVariant",
    "order_queries", "predict_ood", "recall", "vector_join",
    "GroundTruth", "nlj_exact",
    "Generator", "WorkloadSpec", "generate",
]
