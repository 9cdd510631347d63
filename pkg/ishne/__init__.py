"""Influence self-attention node embeddings for heterogeneous graphs."""

__version__ = "1.0.0"

from .errors import IshneError
from .hetgraph import HetGraph, MetaPathSchema, build_graph, parse_schemas
from .training import IshneModel, forward, predict, prepare_inputs, train

__all__ = [
    "__version__",
    "IshneError",
    "HetGraph",
    "MetaPathSchema",
    "build_graph",
    "parse_schemas",
    "IshneModel",
    "forward",
    "predict",
    "prepare_inputs",
    "train",
]
