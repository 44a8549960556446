"""Executable two-pathway network built from a :class:`~slowfast.arch.StageGraph`."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Mapping

import numpy as np

from . import tensor as tn
from .arch import ArchConfig, StageGraph, build_graph, node_shapes
from .tensor import DimensionError, NumericError, ParamStore, Tensor


@dataclass
class PathwayInput:
    """Sampled clip batch: slow (N, C, T, S, S) and fast (N, C_f, omega*T, S_f, S_f)."""

    slow: np.ndarray | None
    fast: np.ndarray | None

    def __post_init__(self):
        if self.slow is not None:
            self.slow = np.asarray(self.slow, dtype=np.float64)
        if self.fast is not None:
            self.fast = np.asarray(self.fast, dtype=np.float64)

    @property
    def batch(self) -> int:
        return (self.slow if self.slow is not None else self.fast).shape[0]

    def select(self, idx) -> "PathwayInput":
        return PathwayInput(None if self.slow is None else self.slow[idx],
                            None if self.fast is None else self.fast[idx])


def param_names(layer) -> dict[str, str]:
    return {k: f"{layer.name}.{k}" for k in layer.param_shapes()}


def init_params(graph: StageGraph, seed: int = 0) -> ParamStore:
    """He-normal conv/fc weights (variance 2/fan-in), zero biases, BN scale 1 and shift 0."""
    rng = np.random.Generator(np.random.Philox(key=seed))
    store = ParamStore()
    for layer in graph.learnable_layers():
        shapes = layer.param_shapes()
        if layer.kind == "batchnorm":
            store[f"{layer.name}.scale"] = np.ones(shapes["scale"])
            store[f"{layer.name}.shift"] = np.zeros(shapes["shift"])
            store.buffers[f"{layer.name}.running_mean"] = np.zeros(shapes["scale"])
            store.buffers[f"{layer.name}.running_var"] = np.ones(shapes["scale"])
            continue
        wshape = shapes["weight"]
        fan_in = math.prod(wshape[1:])
        store[f"{layer.name}.weight"] = rng.normal(0.0, math.sqrt(2.0 / fan_in), size=wshape)
        if "bias" in shapes:
            store[f"{layer.name}.bias"] = np.zeros(shapes["bias"])
    return store


def expected_input_shapes(graph: StageGraph, side: int) -> dict[str, tuple[int, int, int, int]]:
    """(C, T, H, W) expected at each data layer for a square crop of ``side``."""
    cfg = graph.config
    shapes = node_shapes(graph, (cfg.raw_frames, side))
    return {layer.pathway: (shapes[layer.name].c, shapes[layer.name].t, shapes[layer.name].h, shapes[layer.name].w)
            for layer in graph if layer.kind == "data-layer"}


def run_graph(graph: StageGraph, tensors: Mapping[str, Tensor], buffers: Mapping[str, np.ndarray],
              inputs: Mapping[str, Tensor], mode: str = "eval", rng: np.random.Generator | None = None,
              taps: dict | None = None, stop_before_head: bool = False) -> Tensor | dict[str, Tensor]:
    """Evaluate ``graph`` node by node.

    ``tensors`` maps parameter names to Tensors, ``inputs`` maps pathway name
    to the data-layer Tensor. When ``taps`` is a dict it receives every node's
    output plus ``"<stage>.<pathway>"`` aliases for stage outputs.
    """
    cfg = graph.config
    slow_in, fast_in = inputs.get("slow"), inputs.get("fast")
    if slow_in is not None and fast_in is not None and slow_in.data.ndim == fast_in.data.ndim == 5:
        if fast_in.data.shape[2] != cfg.omega * slow_in.data.shape[2]:
            raise DimensionError(f"stage data: fast pathway has {fast_in.data.shape[2]} frames, expected "
                                 f"omega x {slow_in.data.shape[2]} = {cfg.omega * slow_in.data.shape[2]}")
    vals: dict[str, Tensor] = {}
    if stop_before_head:
        heads = {}
    for layer in graph:
        if stop_before_head and layer.kind == "global-avgpool":
            heads[layer.pathway] = vals[layer.inputs[0]]
            continue
        if stop_before_head and layer.stage == "head":
            continue
        src = [vals[i] for i in layer.inputs]
        kind = layer.kind
        if kind == "data-layer":
            if layer.pathway not in inputs or inputs[layer.pathway] is None:
                raise DimensionError(f"stage data: missing {layer.pathway} pathway input")
            out = inputs[layer.pathway]
            if out.data.ndim != 5 or out.data.shape[1] != layer.out_channels:
                raise DimensionError(f"stage data ({layer.pathway}): expected (N, {layer.out_channels}, T, H, W), "
                                     f"got {out.data.shape}")
        elif kind == "conv3d":
            try:
                out = tn.conv3d(src[0], tensors[f"{layer.name}.weight"], layer.stride, layer.padding, layer.dilation)
            except DimensionError as exc:
                raise DimensionError(f"stage {layer.stage} ({layer.name}): {exc}") from None
        elif kind == "batchnorm":
            out = tn.batchnorm(src[0], tensors[f"{layer.name}.scale"], tensors[f"{layer.name}.shift"],
                               buffers[f"{layer.name}.running_mean"], buffers[f"{layer.name}.running_var"], mode)
        elif kind == "relu":
            out = tn.relu(src[0])
        elif kind == "maxpool3d":
            out = tn.maxpool3d(src[0], layer.kernel, layer.stride, layer.padding)
        elif kind == "add":
            try:
                out = tn.add(src[0], src[1])
            except DimensionError as exc:
                raise DimensionError(f"stage {layer.stage} ({layer.name}): {exc}") from None
        elif kind == "concat":
            try:
                out = tn.concat_channels(src)
            except DimensionError as exc:
                raise DimensionError(f"stage {layer.stage} ({layer.name}): {exc}") from None
        elif kind == "lateral-transform":
            if layer.op == "ttoc":
                out = tn.reshape_ttoc(src[0], cfg.omega)
            elif layer.op == "tsample":
                out = tn.temporal_subsample(src[0], cfg.omega)
            else:
                out = tn.conv3d(src[0], tensors[f"{layer.name}.weight"], layer.stride, layer.padding)
            out = tn.upsample_spatial(out, layer.upsample)
        elif kind == "global-avgpool":
            out = tn.global_avgpool(src[0])
        elif kind == "dropout":
            out = tn.dropout(src[0], cfg.dropout, rng, mode)
        elif kind == "fully-connected":
            out = tn.fully_connected(src[0], tensors[f"{layer.name}.weight"], tensors[f"{layer.name}.bias"])
        else:
            raise ValueError(f"unknown layer kind {kind}")
        vals[layer.name] = out
        if taps is not None:
            taps[layer.name] = out
    if taps is not None:
        for (stage, pathway), name in graph.stage_outputs().items():
            if name in vals:
                taps[f"{stage}.{pathway}"] = vals[name]
    if stop_before_head:
        return heads
    return vals[graph.output]


@dataclass
class NetworkInstance:
    graph: StageGraph
    params: ParamStore
    mode: str = "train"

    def __post_init__(self):
        for layer in self.graph.learnable_layers():
            for key, shape in layer.param_shapes().items():
                name = f"{layer.name}.{key}"
                if name not in self.params:
                    raise KeyError(f"parameter store lacks {name}")
                if self.params[name].shape != tuple(shape):
                    raise DimensionError(f"{name}: stored shape {self.params[name].shape} != graph shape {shape}")

    @classmethod
    def create(cls, config: ArchConfig, seed: int = 0, mode: str = "train") -> "NetworkInstance":
        graph = build_graph(config)
        return cls(graph, init_params(graph, seed), mode)

    @property
    def config(self) -> ArchConfig:
        return self.graph.config

    def param_tensors(self, requires_grad: bool = False) -> dict[str, Tensor]:
        return {k: Tensor(v, requires_grad=requires_grad) for k, v in self.params.items()}

    def _inputs(self, inp: PathwayInput) -> dict[str, Tensor]:
        return {"slow": None if inp.slow is None else Tensor(inp.slow),
                "fast": None if inp.fast is None else Tensor(inp.fast)}


def forward(net: NetworkInstance, inp: PathwayInput, rng: np.random.Generator | None = None,
            taps: dict | None = None, tensors: Mapping[str, Tensor] | None = None) -> Tensor:
    """Raw logits (N, num_classes)."""
    if tensors is None:
        tensors = net.param_tensors()
    return run_graph(net.graph, tensors, net.params.buffers, net._inputs(inp), net.mode, rng, taps)


def backward(net: NetworkInstance, inp: PathwayInput, loss_fn: Callable[[Tensor], Tensor],
             rng: np.random.Generator | None = None) -> tuple[float, ParamStore, Tensor]:
    """Return (loss, parameter gradients, logits) for one batch."""
    tensors = net.param_tensors(requires_grad=True)
    logits = forward(net, inp, rng, tensors=tensors)
    loss = loss_fn(logits)
    value = float(loss.data)
    if not np.isfinite(value):
        raise NumericError("non-finite loss")
    loss.backward()
    grads = ParamStore({k: (t.grad if t.grad is not None else np.zeros_like(t.data)) for k, t in tensors.items()})
    return value, grads, logits


def backbone_features(net: NetworkInstance, inp: PathwayInput) -> dict[str, np.ndarray]:
    """Final res5 feature maps per pathway (N, C, T, H, W), before pooling."""
    heads = run_graph(net.graph, net.param_tensors(), net.params.buffers, net._inputs(inp), net.mode,
                      stop_before_head=True)
    return {k: v.data for k, v in heads.items()}


def pathway_order(graph: StageGraph) -> list[str]:
    return [layer.pathway for layer in graph if layer.kind == "global-avgpool"]


def tiny_config(lateral: str = "time-strided-conv", **changes) -> ArchConfig:
    """The smallest two-pathway net that still has every layer kind."""
    from fractions import Fraction

    base = dict(T=2, tau=4, omega=2, phi=Fraction(1, 2), width=4, blocks=(1, 1, 1, 1), num_classes=3,
                lateral=lateral, fusion="concat")
    base.update(changes)
    return ArchConfig(**base)


LATERALS = ("time-to-channel", "time-strided-sample", "time-strided-conv")


def gradient_check(seed: int = 0, side: int = 8, num_samples: int = 210, epsilon: float = 1e-5,
                   laterals: tuple[str, ...] = LATERALS, return_details: bool = False):
    """Finite-difference check of full-network backprop on tiny nets, one per lateral transform.

    BN runs in training mode and dropout replays a fixed mask, so every layer
    kind is differentiated. The coordinate budget is split across the nets.
    """
    worst, details = 0.0, []
    per = -(-num_samples // len(laterals))
    for k, lateral in enumerate(laterals):
        net = NetworkInstance.create(tiny_config(lateral), seed, mode="train")
        rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, 3, k])))
        shapes = expected_input_shapes(net.graph, side)
        slow = rng.normal(size=(2,) + shapes["slow"])
        fast = rng.normal(size=(2,) + shapes["fast"])
        labels = np.array([0, 2])
        n_slow = slow.size

        def loss(tensors, x, _net=net, _k=k):
            # one flat input tensor so the input gradient covers both pathways
            s = tn.slice_reshape(x, slice(0, n_slow), slow.shape)
            f = tn.slice_reshape(x, slice(n_slow, None), fast.shape)
            drop = np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, 4, _k])))
            logits = run_graph(_net.graph, tensors, {k2: v.copy() for k2, v in _net.params.buffers.items()},
                               {"slow": s, "fast": f}, "train", drop)
            return tn.cross_entropy(logits, labels)

        x = np.concatenate([slow.ravel(), fast.ravel()])
        err, det = tn.finite_diff_check(loss, net.params.params, x, epsilon, per, rng, return_details=True)
        worst = max(worst, err)
        details += [(lateral,) + d for d in det]
    return (worst, details) if return_details else worst

