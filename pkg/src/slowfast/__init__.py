"""Two-pathway (Slow/Fast) video recognition networks in numpy.

Modules: ``arch`` (graph builder and cost model), ``tensor`` (autodiff
kernels), ``net`` (executable network), ``data`` (clip sampling and the
synthetic motion corpus), ``train``, ``evaluation``, ``detect`` and ``cli``.
"""
from .arch import ArchConfig, ConfigError, ShapeError, build_graph, count_flops, count_params, infer_shapes
from .net import NetworkInstance, PathwayInput, backward, forward

__all__ = ["ArchConfig", "ConfigError", "ShapeError", "build_graph", "count_flops", "count_params", "infer_shapes",
           "NetworkInstance", "PathwayInput", "backward", "forward"]
__version__ = "0.1.0"
