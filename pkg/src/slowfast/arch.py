"""Architecture description, layer graph construction, shape inference and cost model.

The layer graph built here is shared by the cost model and by the executable
network in :mod:`slowfast.net`, so shapes and parameter counts cannot drift
between the two.
"""
from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Any, Iterable, Sequence

LATERALS = ("none", "time-to-channel", "time-strided-sample", "time-strided-conv")
FUSIONS = ("sum", "concat")
MODES = ("slowfast", "slow-only", "fast-only")
INPUT_VARIANTS = ("rgb", "gray", "time-diff", "half-res")
HEADS = ("classify-softmax", "classify-sigmoid", "detect")
BLOCK_COUNTS = {50: (3, 4, 6, 3), 101: (3, 4, 23, 3)}

STAGES = ("data", "conv1", "pool1", "res2", "res3", "res4", "res5")
# lateral edges leave the Fast pathway after these stages
FUSION_STAGES = ("pool1", "res2", "res3", "res4")


class ConfigError(ValueError):
    """An ArchConfig violates one of its invariants."""


class ShapeError(ValueError):
    """A raw clip cannot be pushed through the graph."""


def _as_fraction(value) -> Fraction:
    if isinstance(value, Fraction):
        return value
    if isinstance(value, float):
        return Fraction(value).limit_denominator(1024)
    return Fraction(str(value).strip())


@dataclass(frozen=True)
class ArchConfig:
    """Declarative description of one SlowFast / Slow-only / Fast-only network.

    ``width``, ``blocks`` and ``dropout`` are desk-scale knobs: the defaults
    reproduce the full-size ResNet layouts.
    """

    T: int = 4
    tau: int = 16
    omega: int = 8
    phi: Fraction = Fraction(1, 8)
    depth: int = 50
    lateral: str = "time-strided-conv"
    fusion: str = "concat"
    mode: str = "slowfast"
    input_variant: str = "rgb"
    num_classes: int = 400
    head: str = "classify-softmax"
    width: int = 64
    blocks: tuple[int, ...] | None = None
    dropout: float = 0.5

    def __post_init__(self):
        object.__setattr__(self, "phi", _as_fraction(self.phi))
        if self.blocks is not None:
            object.__setattr__(self, "blocks", tuple(int(b) for b in self.blocks))
        self.validate()

    def validate(self) -> None:
        if self.T < 1:
            raise ConfigError("T must be >= 1")
        if self.tau < 1:
            raise ConfigError("tau must be >= 1")
        if self.omega < 2:
            raise ConfigError("omega must be >= 2")
        if not 0 < self.phi < 1:
            raise ConfigError("phi must satisfy 0 < phi < 1")
        if self.tau % self.omega:
            raise ConfigError(
                f"tau divisible by omega: fast stride tau/omega = {self.tau}/{self.omega} is not an integer")
        if self.depth not in BLOCK_COUNTS:
            raise ConfigError(f"depth must be one of {sorted(BLOCK_COUNTS)}, got {self.depth}")
        for name, allowed in (("lateral", LATERALS), ("fusion", FUSIONS), ("mode", MODES),
                              ("input_variant", INPUT_VARIANTS), ("head", HEADS)):
            if getattr(self, name) not in allowed:
                raise ConfigError(f"{name} must be one of {allowed}, got {getattr(self, name)!r}")
        if self.num_classes < 1:
            raise ConfigError("num_classes must be >= 1")
        if self.width < 1:
            raise ConfigError("width must be >= 1")
        if self.blocks is not None and (len(self.blocks) != 4 or min(self.blocks) < 1):
            raise ConfigError("blocks must list four positive block counts")
        if not 0 <= self.dropout < 1:
            raise ConfigError("dropout must lie in [0, 1)")
        if self.mode != "slowfast" and self.lateral != "none":
            raise ConfigError(f"mode={self.mode} forbids lateral connections (lateral={self.lateral})")
        if self.mode == "slowfast" and self.lateral != "none" and self.fusion == "sum":
            for stage, c_slow in zip(FUSION_STAGES, self.slow_fusion_channels()):
                c_lat = self.lateral_channels(stage)
                if c_lat != c_slow:
                    raise ConfigError(
                        f"sum fusion channel mismatch at {stage}: lateral gives {c_lat} channels, "
                        f"Slow pathway has {c_slow} (time-to-channel needs omega*phi = 1)")

    # -- derived quantities -------------------------------------------------

    @property
    def stage_blocks(self) -> tuple[int, ...]:
        return self.blocks if self.blocks is not None else BLOCK_COUNTS[self.depth]

    @property
    def fast_stride(self) -> int:
        return self.tau // self.omega

    @property
    def raw_frames(self) -> int:
        return self.T * self.tau

    @property
    def fast_width(self) -> int:
        return math.ceil(self.width * self.phi)

    @property
    def fast_in_channels(self) -> int:
        return 1 if self.input_variant in ("gray", "time-diff") else 3

    def with_changes(self, **changes) -> "ArchConfig":
        return dataclasses.replace(self, **changes)

    def stage_widths(self, pathway: str) -> list[tuple[int, int]]:
        """(inner, out) channel pairs of res2..res5."""
        w = self.width if pathway == "slow" else self.fast_width
        return [(w * 2 ** i, 4 * w * 2 ** i) for i in range(4)]

    def stem_width(self, pathway: str) -> int:
        return self.width if pathway == "slow" else self.fast_width

    def slow_fusion_channels(self) -> list[int]:
        outs = [o for _, o in self.stage_widths("slow")]
        return [self.width] + outs[:3]

    def lateral_channels(self, stage: str) -> int:
        fast = [self.fast_width] + [o for _, o in self.stage_widths("fast")][:3]
        c = fast[FUSION_STAGES.index(stage)]
        if self.lateral == "time-to-channel":
            return self.omega * c
        if self.lateral == "time-strided-sample":
            return c
        if self.lateral == "time-strided-conv":
            return 2 * c
        return 0

    def as_dict(self) -> dict[str, Any]:
        d = dataclasses.asdict(self)
        d["phi"] = str(self.phi)
        d["blocks"] = None if self.blocks is None else list(self.blocks)
        return d


@dataclass(frozen=True)
class LayerSpec:
    name: str
    kind: str
    pathway: str
    stage: str
    inputs: tuple[str, ...] = ()
    in_channels: int = 0
    out_channels: int = 0
    kernel: tuple[int, int, int] = (1, 1, 1)
    stride: tuple[int, int, int] = (1, 1, 1)
    padding: tuple[int, int, int] = (0, 0, 0)
    dilation: tuple[int, int, int] = (1, 1, 1)
    # lateral-transform: ttoc / tsample / tconv; data-layer: frame step
    op: str = ""
    # nearest-neighbour spatial upsampling applied after a lateral transform
    upsample: int = 1

    @property
    def learnable(self) -> bool:
        return self.kind in ("conv3d", "batchnorm", "fully-connected") or (
            self.kind == "lateral-transform" and self.op == "tconv")

    def param_shapes(self) -> dict[str, tuple[int, ...]]:
        if self.kind == "conv3d" or (self.kind == "lateral-transform" and self.op == "tconv"):
            return {"weight": (self.out_channels, self.in_channels) + tuple(self.kernel)}
        if self.kind == "batchnorm":
            return {"scale": (self.out_channels,), "shift": (self.out_channels,)}
        if self.kind == "fully-connected":
            return {"weight": (self.out_channels, self.in_channels), "bias": (self.out_channels,)}
        return {}

    def param_count(self) -> int:
        return sum(math.prod(s) for s in self.param_shapes().values())


@dataclass
class StageGraph:
    config: ArchConfig
    layers: list[LayerSpec] = field(default_factory=list)

    def __post_init__(self):
        self._index = {layer.name: layer for layer in self.layers}

    def add(self, layer: LayerSpec) -> str:
        if layer.name in self._index:
            raise ValueError(f"duplicate layer name {layer.name}")
        for src in layer.inputs:
            if src not in self._index:
                raise ValueError(f"{layer.name} consumes unknown layer {src}")
        self.layers.append(layer)
        self._index[layer.name] = layer
        return layer.name

    def __getitem__(self, name: str) -> LayerSpec:
        return self._index[name]

    def __iter__(self):
        return iter(self.layers)

    def __len__(self):
        return len(self.layers)

    @property
    def output(self) -> str:
        return self.layers[-1].name

    def edges(self) -> list[tuple[str, str]]:
        return [(src, layer.name) for layer in self.layers for src in layer.inputs]

    def lateral_edges(self) -> list[tuple[str, str]]:
        """(fast source, slow fusion node) pairs."""
        out = []
        for layer in self.layers:
            if layer.kind == "lateral-transform":
                for fuse in self.layers:
                    if layer.name in fuse.inputs:
                        out.append((layer.inputs[0], fuse.name))
        return out

    def stage_outputs(self) -> dict[tuple[str, str], str]:
        """(stage, pathway) -> name of the last pre-fusion node of that stage."""
        marks = {}
        for layer in self.layers:
            if layer.stage in STAGES and layer.pathway in ("slow", "fast") and layer.kind != "lateral-transform":
                if layer.kind in ("concat", "add") and layer.op == "fuse":
                    continue
                marks[(layer.stage, layer.pathway)] = layer.name
        return marks

    def learnable_layers(self) -> list[LayerSpec]:
        return [layer for layer in self.layers if layer.learnable]


def _pad(k: int, dilation: int = 1) -> int:
    return dilation * (k - 1) // 2


class _Builder:
    def __init__(self, config: ArchConfig):
        self.cfg = config
        self.graph = StageGraph(config)

    def conv(self, name, src, pathway, stage, cin, cout, kernel, stride=(1, 1, 1), dilation=(1, 1, 1)):
        padding = tuple(_pad(k, d) for k, d in zip(kernel, dilation))
        self.graph.add(LayerSpec(name, "conv3d", pathway, stage, (src,), cin, cout,
                                 tuple(kernel), tuple(stride), padding, tuple(dilation)))
        self.graph.add(LayerSpec(name + ".bn", "batchnorm", pathway, stage, (name,), cout, cout))
        return name + ".bn"

    def relu(self, name, src, pathway, stage, c):
        return self.graph.add(LayerSpec(name, "relu", pathway, stage, (src,), c, c))

    def bottleneck(self, prefix, src, pathway, stage, cin, inner, cout, t_kernel, spatial_stride, dilation):
        s = (1, spatial_stride, spatial_stride)
        x = self.conv(prefix + ".a", src, pathway, stage, cin, inner, (t_kernel, 1, 1))
        x = self.relu(prefix + ".a.relu", x, pathway, stage, inner)
        x = self.conv(prefix + ".b", x, pathway, stage, inner, inner, (1, 3, 3), s, (1, dilation, dilation))
        x = self.relu(prefix + ".b.relu", x, pathway, stage, inner)
        x = self.conv(prefix + ".c", x, pathway, stage, inner, cout, (1, 1, 1))
        shortcut = src
        if cin != cout or spatial_stride != 1:
            shortcut = self.conv(prefix + ".proj", src, pathway, stage, cin, cout, (1, 1, 1), s)
        x = self.graph.add(LayerSpec(prefix + ".add", "add", pathway, stage, (x, shortcut), cout, cout))
        return self.relu(prefix + ".out", x, pathway, stage, cout)

    def stem(self, pathway, in_channels):
        cfg = self.cfg
        step = cfg.tau if pathway == "slow" else cfg.fast_stride
        p = pathway
        x = self.graph.add(LayerSpec(f"{p}.data", "data-layer", p, "data", (), in_channels, in_channels,
                                     stride=(step, 1, 1), op=str(step)))
        t_kernel = 1 if p == "slow" else 5
        c = cfg.stem_width(p)
        x = self.conv(f"{p}.conv1", x, p, "conv1", in_channels, c, (t_kernel, 7, 7), (1, 2, 2))
        x = self.relu(f"{p}.conv1.relu", x, p, "conv1", c)
        x = self.graph.add(LayerSpec(f"{p}.pool1", "maxpool3d", p, "pool1", (x,), c, c,
                                     kernel=(1, 3, 3), stride=(1, 2, 2), padding=(0, 1, 1)))
        return x, c

    def stage(self, pathway, idx, src, cin):
        cfg = self.cfg
        name = f"res{idx + 2}"
        inner, cout = cfg.stage_widths(pathway)[idx]
        temporal = pathway == "fast" or idx >= 2
        detect_res5 = cfg.head == "detect" and idx == 3
        x = src
        for b in range(cfg.stage_blocks[idx]):
            stride = 2 if (b == 0 and idx > 0 and not detect_res5) else 1
            dilation = 2 if detect_res5 else 1
            x = self.bottleneck(f"{pathway}.{name}.{b}", x, pathway, name, cin, inner, cout,
                                3 if temporal else 1, stride, dilation)
            cin = cout
        return x, cout

    def lateral(self, stage, fast_src, c_fast):
        cfg = self.cfg
        name = f"lateral.{stage}"
        up = 2 if cfg.input_variant == "half-res" else 1
        if cfg.lateral == "time-to-channel":
            return self.graph.add(LayerSpec(name, "lateral-transform", "fast", stage, (fast_src,),
                                            c_fast, cfg.omega * c_fast, op="ttoc", upsample=up))
        if cfg.lateral == "time-strided-sample":
            return self.graph.add(LayerSpec(name, "lateral-transform", "fast", stage, (fast_src,),
                                            c_fast, c_fast, op="tsample", upsample=up))
        return self.graph.add(LayerSpec(name, "lateral-transform", "fast", stage, (fast_src,),
                                        c_fast, 2 * c_fast, kernel=(5, 1, 1), stride=(cfg.omega, 1, 1),
                                        padding=(2, 0, 0), op="tconv", upsample=up))

    def fuse(self, stage, slow_src, c_slow, lat, c_lat):
        cfg = self.cfg
        if cfg.fusion == "sum":
            name = self.graph.add(LayerSpec(f"slow.{stage}.fuse", "add", "slow", stage, (slow_src, lat),
                                            c_slow, c_slow, op="fuse"))
            return name, c_slow
        name = self.graph.add(LayerSpec(f"slow.{stage}.fuse", "concat", "slow", stage, (slow_src, lat),
                                        c_slow + c_lat, c_slow + c_lat, op="fuse"))
        return name, c_slow + c_lat

    def build(self) -> StageGraph:
        cfg = self.cfg
        pathways = {"slowfast": ("slow", "fast"), "slow-only": ("slow",), "fast-only": ("fast",)}[cfg.mode]
        heads = {}
        cur = {}
        for p in pathways:
            cur[p] = self.stem(p, 3 if p == "slow" else cfg.fast_in_channels)
        lateral = cfg.mode == "slowfast" and cfg.lateral != "none"
        for idx in range(-1, 4):
            if idx >= 0:
                for p in pathways:
                    cur[p] = self.stage(p, idx, *cur[p])
            stage = "pool1" if idx < 0 else f"res{idx + 2}"
            if lateral and stage in FUSION_STAGES:
                fast_src, c_fast = cur["fast"]
                lat = self.lateral(stage, fast_src, c_fast)
                c_lat = self.graph[lat].out_channels
                cur["slow"] = self.fuse(stage, *cur["slow"], lat, c_lat)
        feats = []
        total = 0
        for p in pathways:
            src, c = cur[p]
            heads[p] = self.graph.add(LayerSpec(f"{p}.gap", "global-avgpool", p, "head", (src,), c, c))
            feats.append(heads[p])
            total += c
        if len(feats) > 1:
            x = self.graph.add(LayerSpec("head.concat", "concat", "fused", "head", tuple(feats), total, total))
        else:
            x = feats[0]
        x = self.graph.add(LayerSpec("head.dropout", "dropout", "fused", "head", (x,), total, total))
        self.graph.add(LayerSpec("head.fc", "fully-connected", "fused", "head", (x,), total, cfg.num_classes))
        return self.graph


def build_graph(config: ArchConfig) -> StageGraph:
    """Materialize the layer DAG of ``config``."""
    config.validate()
    return _Builder(config).build()


# -- shapes --------------------------------------------------------------

@dataclass(frozen=True)
class FeatureShape:
    c: int
    t: int
    h: int
    w: int

    @property
    def s(self) -> int:
        return self.h


def _out_extent(n, k, s, p, d):
    return (n + 2 * p - d * (k - 1) - 1) // s + 1


def node_shapes(graph: StageGraph, raw_clip: tuple[int, int]) -> dict[str, FeatureShape]:
    """Per-node output shape (C, T, H, W) for a square raw clip (frames, side)."""
    frames, side = raw_clip
    cfg = graph.config
    if frames < cfg.raw_frames:
        raise ShapeError(f"raw clip of {frames} frames is shorter than T*tau = {cfg.raw_frames}")
    if side < 1:
        raise ShapeError("spatial side must be positive")
    shapes: dict[str, FeatureShape] = {}
    for layer in graph:
        if layer.kind == "data-layer":
            t = cfg.T if layer.pathway == "slow" else cfg.omega * cfg.T
            s = side // 2 if (layer.pathway == "fast" and cfg.input_variant == "half-res") else side
            shapes[layer.name] = FeatureShape(layer.out_channels, t, s, s)
            continue
        src = shapes[layer.inputs[0]]
        if layer.kind in ("conv3d", "maxpool3d") or (layer.kind == "lateral-transform" and layer.op == "tconv"):
            ext = [_out_extent(n, k, s, p, d) for n, k, s, p, d in
                   zip((src.t, src.h, src.w), layer.kernel, layer.stride, layer.padding, layer.dilation)]
            if min(ext) < 1:
                raise ShapeError(f"{layer.name}: input {src} too small for kernel {layer.kernel}")
            if layer.upsample > 1:
                ext = [ext[0], ext[1] * layer.upsample, ext[2] * layer.upsample]
            shapes[layer.name] = FeatureShape(layer.out_channels, *ext)
        elif layer.kind == "lateral-transform":
            if src.t % cfg.omega:
                raise ShapeError(f"{layer.name}: temporal extent {src.t} not divisible by omega")
            u = layer.upsample
            shapes[layer.name] = FeatureShape(layer.out_channels, src.t // cfg.omega, src.h * u, src.w * u)
        elif layer.kind in ("add", "concat") and layer.stage != "head":
            others = [shapes[i] for i in layer.inputs]
            if any((o.t, o.h, o.w) != (src.t, src.h, src.w) for o in others):
                raise ShapeError(f"{layer.name}: mismatched inputs {others}")
            shapes[layer.name] = FeatureShape(layer.out_channels, src.t, src.h, src.w)
        elif layer.kind in ("global-avgpool", "concat", "dropout", "fully-connected"):
            shapes[layer.name] = FeatureShape(layer.out_channels, 1, 1, 1)
        else:
            shapes[layer.name] = FeatureShape(layer.out_channels, src.t, src.h, src.w)
    return shapes


@dataclass
class ShapeReport:
    """stage -> pathway -> (T, S, C)."""

    stages: dict[str, dict[str, tuple[int, int, int]]]

    def rows(self) -> list[dict[str, Any]]:
        out = []
        for stage, per in self.stages.items():
            for pathway, (t, s, c) in per.items():
                out.append({"stage": stage, "pathway": pathway, "t": t, "s": s, "c": c})
        return out

    def to_tsv(self) -> str:
        lines = ["#stage\tpathway\tt\ts\tc"]
        lines += [f"{r['stage']}\t{r['pathway']}\t{r['t']}\t{r['s']}\t{r['c']}" for r in self.rows()]
        return "\n".join(lines) + "\n"

    def to_jsonl(self) -> str:
        return "".join(json.dumps(r, sort_keys=True) + "\n" for r in self.rows())


def infer_shapes(graph: StageGraph, raw_clip: tuple[int, int]) -> ShapeReport:
    shapes = node_shapes(graph, raw_clip)
    marks = graph.stage_outputs()
    stages: dict[str, dict[str, tuple[int, int, int]]] = {}
    for stage in STAGES:
        for pathway in ("slow", "fast"):
            if (stage, pathway) in marks:
                fs = shapes[marks[(stage, pathway)]]
                stages.setdefault(stage, {})[pathway] = (fs.t, fs.h, fs.c)
    return ShapeReport(stages)


# -- costs ---------------------------------------------------------------

@dataclass(frozen=True)
class LayerCost:
    name: str
    kind: str
    stage: str
    pathway: str
    madds: int
    params: int


@dataclass
class CostReport:
    entries: list[LayerCost]

    @property
    def total_madds(self) -> int:
        return sum(e.madds for e in self.entries)

    @property
    def total_params(self) -> int:
        return sum(e.params for e in self.entries)

    @property
    def gflops(self) -> float:
        return self.total_madds / 1e9

    def per_pathway(self) -> dict[str, tuple[int, int]]:
        out: dict[str, tuple[int, int]] = {}
        for e in self.entries:
            m, p = out.get(e.pathway, (0, 0))
            out[e.pathway] = (m + e.madds, p + e.params)
        return out

    def rows(self) -> list[dict[str, Any]]:
        return [{"stage": e.stage, "pathway": e.pathway, "layer": e.name, "kind": e.kind,
                 "madds": e.madds, "params": e.params} for e in self.entries]

    def to_tsv(self) -> str:
        lines = ["#layer\tkind\tstage\tpathway\tmadds\tparams"]
        for e in self.entries:
            lines.append(f"{e.name}\t{e.kind}\t{e.stage}\t{e.pathway}\t{e.madds}\t{e.params}")
        for pathway, (m, p) in sorted(self.per_pathway().items()):
            lines.append(f"total:{pathway}\t-\t-\t{pathway}\t{m}\t{p}")
        lines.append(f"total\t-\t-\tall\t{self.total_madds}\t{self.total_params}")
        lines.append(f"#gflops\t{self.gflops:.4f}")
        return "\n".join(lines) + "\n"

    def to_jsonl(self) -> str:
        rows = self.rows()
        rows.append({"stage": "total", "pathway": "all", "layer": "total", "kind": "total",
                     "madds": self.total_madds, "params": self.total_params})
        return "".join(json.dumps(r, sort_keys=True) + "\n" for r in rows)


def count_params(graph: StageGraph) -> CostReport:
    return CostReport([LayerCost(l.name, l.kind, l.stage, l.pathway, 0, l.param_count())
                       for l in graph if l.learnable])


def _layer_madds(layer: LayerSpec, out: FeatureShape) -> int:
    if layer.kind == "conv3d" or (layer.kind == "lateral-transform" and layer.op == "tconv"):
        return out.c * out.t * out.h * out.w * math.prod(layer.kernel) * layer.in_channels
    if layer.kind == "fully-connected":
        return layer.in_channels * layer.out_channels
    return 0


def count_flops(graph: StageGraph, raw_clip: tuple[int, int]) -> CostReport:
    """Multiply-adds of conv and fully-connected layers; everything else is free."""
    shapes = node_shapes(graph, raw_clip)
    entries = []
    for layer in graph:
        m = _layer_madds(layer, shapes[layer.name])
        if m or layer.learnable:
            entries.append(LayerCost(layer.name, layer.kind, layer.stage, layer.pathway, m, layer.param_count()))
    return CostReport(entries)


# -- sweeps --------------------------------------------------------------

@dataclass(frozen=True)
class SweepError:
    value: Any
    message: str

    @property
    def gflops(self) -> float:
        return math.inf


def _coerce(base: ArchConfig, axis: str, value) -> ArchConfig:
    changes = {axis: value}
    if axis == "mode" and value != "slowfast":
        changes["lateral"] = "none"
    return dataclasses.replace(base, **changes)


def sweep_variants(base: ArchConfig, axis: str, values: Iterable, raw_clip=(None, 256)):
    """One (config, CostReport) row per value, ascending in GFLOPs.

    Values that produce an invalid config yield ``(None, SweepError)`` rows,
    which sort last. Switching ``mode`` to a single pathway drops the lateral
    connection instead of failing.
    """
    names = {f.name for f in dataclasses.fields(ArchConfig)}
    if axis not in names:
        raise ConfigError(f"unknown sweep axis {axis!r}")
    rows = []
    for value in values:
        try:
            cfg = _coerce(base, axis, value)
            frames = raw_clip[0] if raw_clip[0] is not None else cfg.raw_frames
            rows.append((cfg, count_flops(build_graph(cfg), (frames, raw_clip[1]))))
        except (ConfigError, ShapeError) as exc:
            rows.append((None, SweepError(value, str(exc))))
    rows.sort(key=lambda r: r[1].gflops if isinstance(r[1], SweepError) else r[1].total_madds)
    return rows


def sweep_table(axis: str, rows) -> str:
    lines = [f"#{axis}\tgflops\tparams_m"]
    for cfg, rep in rows:
        if isinstance(rep, SweepError):
            lines.append(f"{rep.value}\terror\t{rep.message}")
        else:
            v = getattr(cfg, axis)
            lines.append(f"{v}\t{rep.gflops:.3f}\t{rep.total_params / 1e6:.3f}")
    return "\n".join(lines) + "\n"


# -- config file ---------------------------------------------------------

_ALIASES = {"input-variant": "input_variant", "num-classes": "num_classes", "t": "T"}


def _convert(key: str, raw: str):
    if key in ("T", "tau", "omega", "depth", "num_classes", "width"):
        return int(raw)
    if key == "phi":
        return Fraction(raw)
    if key == "dropout":
        return float(raw)
    if key == "blocks":
        return None if raw.lower() in ("", "none", "default") else tuple(int(x) for x in raw.replace(" ", "").split(","))
    return raw


def parse_overrides(pairs: Sequence[str], lineno_offset: int = 0, source: str = "override") -> dict[str, Any]:
    names = {f.name for f in dataclasses.fields(ArchConfig)}
    out: dict[str, Any] = {}
    for i, line in enumerate(pairs, start=1 + lineno_offset):
        text = line.split("#", 1)[0].strip()
        if not text:
            continue
        if "=" not in text:
            raise ConfigError(f"{source} line {i}: expected 'key = value', got {line.strip()!r}")
        key, raw = (s.strip() for s in text.split("=", 1))
        key = _ALIASES.get(key, key)
        if key not in names:
            raise ConfigError(f"{source} line {i}: unknown key {key!r}")
        try:
            out[key] = _convert(key, raw)
        except (ValueError, ZeroDivisionError) as exc:
            raise ConfigError(f"{source} line {i}: bad value for {key}: {raw!r} ({exc})") from None
    return out


def parse_config(text: str, overrides: Sequence[str] = (), source: str = "config") -> ArchConfig:
    """Parse ``key = value`` lines; later keys and overrides win."""
    values = parse_overrides(text.splitlines(), source=source)
    values.update(parse_overrides(overrides))
    try:
        return ArchConfig(**values)
    except ConfigError as exc:
        raise ConfigError(f"{source}: {exc}") from None


def load_config(path, overrides: Sequence[str] = ()) -> ArchConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read(), overrides, source=str(path))


def format_config(config: ArchConfig) -> str:
    lines = []
    for key, value in config.as_dict().items():
        if value is None:
            value = "default"
        elif isinstance(value, list):
            value = ",".join(str(v) for v in value)
        lines.append(f"{key} = {value}")
    return "\n".join(lines) + "\n"
