"""Person-box action detection: proposal handling, RoIAlign features, frame-level mAP."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .evaluation import MapReport, average_precision
from .tensor import sigmoid

PROPOSAL_THRESHOLD = 0.9
ROI_IOU_THRESHOLD = 0.75
MATCH_IOU = 0.5


class BoxError(ValueError):
    pass


@dataclass(frozen=True)
class Box:
    """Normalized (x0, y0, x1, y1) with 0 <= x0 < x1 <= 1 and likewise for y."""

    x0: float
    y0: float
    x1: float
    y1: float

    def __post_init__(self):
        for v in (self.x0, self.y0, self.x1, self.y1):
            if not (0.0 <= v <= 1.0) or math.isnan(v):
                raise BoxError(f"box coordinate {v} outside [0, 1]")
        if not (self.x0 < self.x1 and self.y0 < self.y1):
            raise BoxError(f"box corners out of order: {self.as_tuple()}")

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.x0, self.y0, self.x1, self.y1)

    @property
    def area(self) -> float:
        return (self.x1 - self.x0) * (self.y1 - self.y0)


@dataclass(frozen=True)
class Proposal:
    box: Box
    confidence: float

    def __post_init__(self):
        if not 0.0 <= self.confidence <= 1.0:
            raise BoxError(f"proposal confidence {self.confidence} outside [0, 1]")


@dataclass
class GroundTruth:
    box: Box
    labels: frozenset[int]


@dataclass
class DetectionFrame:
    """One evaluated key frame: scored boxes and annotated boxes."""

    frame_id: str
    boxes: list[Box]
    scores: np.ndarray  # (len(boxes), num_classes), sigmoid outputs
    truths: list[GroundTruth] = field(default_factory=list)

    def __post_init__(self):
        scores = np.asarray(self.scores, dtype=np.float64)
        if scores.ndim != 2 or scores.shape[0] != len(self.boxes):
            if scores.size or self.boxes:
                raise ValueError(f"frame {self.frame_id}: need one score row per box, got shape {scores.shape}")
            scores = scores.reshape(0, 0)
        self.scores = scores
        if self.scores.size and (self.scores.min() < 0 or self.scores.max() > 1):
            raise ValueError(f"frame {self.frame_id}: class scores must lie in [0, 1]")


def filter_proposals(proposals: Iterable[Proposal], threshold: float = PROPOSAL_THRESHOLD) -> list[Proposal]:
    return [p for p in proposals if p.confidence > threshold]


def iou(a: Box, b: Box) -> float:
    w = min(a.x1, b.x1) - max(a.x0, b.x0)
    h = min(a.y1, b.y1) - max(a.y0, b.y0)
    if w <= 0 or h <= 0:
        return 0.0
    inter = w * h
    return inter / (a.area + b.area - inter)


@dataclass
class RoiSample:
    box: Box
    labels: frozenset[int]
    from_proposal: bool


def select_training_rois(proposals: Sequence[Proposal], truths: Sequence[GroundTruth],
                         threshold: float = ROI_IOU_THRESHOLD) -> list[RoiSample]:
    """Every ground truth, plus proposals whose best IoU exceeds ``threshold``, labelled by that best match."""
    out = [RoiSample(g.box, g.labels, False) for g in truths]
    for p in proposals:
        if not truths:
            break
        overlaps = [iou(p.box, g.box) for g in truths]
        best = int(np.argmax(overlaps))
        if overlaps[best] > threshold:
            out.append(RoiSample(p.box, truths[best].labels, True))
    return out


# -- RoIAlign ------------------------------------------------------------

def _sample_axis(lo: float, hi: float, extent: int, bins: int, samples: int):
    """Interpolation matrix (bins*samples, extent) for evenly spaced sub-bin centres on one axis."""
    step = (hi - lo) / bins
    pos = lo + (np.arange(bins * samples) + 0.5) * (step / samples)
    # feature cell i covers [i, i+1); its value sits at i + 0.5
    pos = np.clip(pos - 0.5, 0.0, extent - 1)
    i0 = np.floor(pos).astype(np.int64)
    i1 = np.minimum(i0 + 1, extent - 1)
    frac = pos - i0
    mat = np.zeros((len(pos), extent))
    rows = np.arange(len(pos))
    np.add.at(mat, (rows, i0), 1.0 - frac)
    np.add.at(mat, (rows, i1), frac)
    return mat


def _clamped(box) -> tuple[float, float, float, float]:
    x0, y0, x1, y1 = box.as_tuple() if isinstance(box, Box) else tuple(float(v) for v in box)
    x0, x1 = min(max(x0, 0.0), 1.0), min(max(x1, 0.0), 1.0)
    y0, y1 = min(max(y0, 0.0), 1.0), min(max(y1, 0.0), 1.0)
    if x1 <= x0 or y1 <= y0:
        raise BoxError(f"box {box} has zero area after clamping to the frame")
    return x0, y0, x1, y1


def roi_align(feature: np.ndarray, box, output_size: int = 7, samples: int = 2) -> np.ndarray:
    """Per-frame RoIAlign of a (C, T, H, W) map; returns (C, T, out, out)."""
    feature = np.asarray(feature, dtype=np.float64)
    if feature.ndim != 4:
        raise BoxError(f"feature map must be (C, T, H, W), got {feature.shape}")
    if output_size < 1:
        raise BoxError("output size must be >= 1")
    _, _, H, W = feature.shape
    x0, y0, x1, y1 = _clamped(box)
    ay = _sample_axis(y0 * H, y1 * H, H, output_size, samples)
    ax = _sample_axis(x0 * W, x1 * W, W, output_size, samples)
    dense = np.einsum("yh,cthw,xw->ctyx", ay, feature, ax)
    C, T = feature.shape[:2]
    return dense.reshape(C, T, output_size, samples, output_size, samples).mean(axis=(3, 5))


def roi_features(feature: np.ndarray, box, output_size: int = 7, samples: int = 2) -> np.ndarray:
    """RoIAlign on every frame (the box is replicated in time), temporal mean, then spatial max: (C,)."""
    grid = roi_align(feature, box, output_size, samples).mean(axis=1)
    return grid.max(axis=(1, 2))


def detection_scores(net, inp, boxes: Sequence[Box], output_size: int = 7) -> np.ndarray:
    """Sigmoid class scores (len(boxes), K) for one clip, from a network built with ``head="detect"``."""
    from .net import backbone_features, pathway_order

    if inp.batch != 1:
        raise ValueError("detection_scores scores one clip at a time")
    feats = backbone_features(net, inp)
    order = pathway_order(net.graph)
    w = net.params["head.fc.weight"]
    b = net.params["head.fc.bias"]
    rows = []
    for box in boxes:
        vec = np.concatenate([roi_features(feats[p][0], box, output_size) for p in order])
        rows.append(vec @ w.T + b)
    if not rows:
        return np.zeros((0, w.shape[0]))
    return sigmoid(np.stack(rows))


# -- frame-level mAP -----------------------------------------------------

def match_class(frames: Sequence[DetectionFrame], cls: int, threshold: float = MATCH_IOU):
    """Greedy matching for one class. Returns (scores, true-positive flags, ground-truth count)."""
    dets = []
    for fi, fr in enumerate(frames):
        for bi, box in enumerate(fr.boxes):
            dets.append((fr.scores[bi, cls], fi, box))
    order = sorted(range(len(dets)), key=lambda i: -dets[i][0])  # stable: ties keep input order
    gts = {fi: [g.box for g in fr.truths if cls in g.labels] for fi, fr in enumerate(frames)}
    used = {fi: [False] * len(g) for fi, g in gts.items()}
    npos = sum(len(g) for g in gts.values())
    scores, hits = [], []
    for i in order:
        score, fi, box = dets[i]
        best, best_j = threshold, -1
        for j, g in enumerate(gts[fi]):
            if used[fi][j]:
                continue
            o = iou(box, g)
            if o >= best and (best_j < 0 or o > best):
                best, best_j = o, j
        if best_j >= 0:
            used[fi][best_j] = True
        scores.append(score)
        hits.append(best_j >= 0)
    return np.array(scores), np.array(hits, dtype=bool), npos


def frame_map(frames: Sequence[DetectionFrame], threshold: float = MATCH_IOU,
              num_classes: int | None = None) -> MapReport:
    """Per-class AP over all frames and their mean over classes with ground truth."""
    if num_classes is None:
        widths = [fr.scores.shape[1] for fr in frames if fr.boxes]
        labels = [c for fr in frames for g in fr.truths for c in g.labels]
        num_classes = max(widths + [max(labels) + 1 if labels else 0])
    for fr in frames:
        if fr.boxes and fr.scores.shape[1] < num_classes:
            raise ValueError(f"frame {fr.frame_id}: {fr.scores.shape[1]} class scores, expected {num_classes}")
    per_class, excluded = {}, []
    for c in range(num_classes):
        scores, hits, npos = match_class(frames, c, threshold)
        if npos == 0:
            excluded.append(c)
            continue
        # ranked list already in score order; keep it so ties follow input order
        per_class[c] = average_precision(-np.arange(len(scores), dtype=np.float64), hits, npos,
                                         group_ties=False) if len(scores) else 0.0
    mean = float(np.mean(list(per_class.values()))) if per_class else 0.0
    return MapReport(mean, per_class, excluded)


def ap_comparison_table(a: MapReport, b: MapReport, names: Sequence[str] | None = None,
                        headers: tuple[str, str] = ("slow-only", "slowfast")) -> str:
    """Per-class AP of two models side by side with the gain, as TSV."""
    lines = [f"#class\t{headers[0]}\t{headers[1]}\tgain"]
    for c in sorted(set(a.per_class) | set(b.per_class)):
        x, y = a.per_class.get(c, 0.0), b.per_class.get(c, 0.0)
        lines.append(f"{names[c] if names else c}\t{x:.6f}\t{y:.6f}\t{y - x:+.6f}")
    return "\n".join(lines) + "\n"


# -- interchange files ---------------------------------------------------

def _parse_line(line: str, lineno: int, path):
    parts = line.split()
    if len(parts) < 6:
        raise ValueError(f"{path}:{lineno}: expected 'frame_id x0 y0 x1 y1 <score|labels>', got {line!r}")
    try:
        box = Box(*(float(v) for v in parts[1:5]))
    except (ValueError, BoxError) as exc:
        raise ValueError(f"{path}:{lineno}: {exc}") from None
    return parts[0], box, parts[5:]


def _lines(path):
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.strip()
            if line and not line.startswith("#"):
                yield lineno, line


def read_proposals(path) -> dict[str, list[Proposal]]:
    """``frame_id x0 y0 x1 y1 confidence`` per line."""
    out: dict[str, list[Proposal]] = {}
    for lineno, line in _lines(path):
        fid, box, rest = _parse_line(line, lineno, path)
        try:
            out.setdefault(fid, []).append(Proposal(box, float(rest[0])))
        except (ValueError, BoxError) as exc:
            raise ValueError(f"{path}:{lineno}: {exc}") from None
    return out


def read_ground_truth(path) -> dict[str, list[GroundTruth]]:
    """``frame_id x0 y0 x1 y1 l1,l2,...`` per line."""
    out: dict[str, list[GroundTruth]] = {}
    for lineno, line in _lines(path):
        fid, box, rest = _parse_line(line, lineno, path)
        try:
            labels = frozenset(int(v) for v in rest[0].split(",") if v)
        except ValueError:
            raise ValueError(f"{path}:{lineno}: labels must be comma-separated integers") from None
        out.setdefault(fid, []).append(GroundTruth(box, labels))
    return out


def read_predictions(path) -> dict[str, tuple[list[Box], list[np.ndarray]]]:
    """``frame_id x0 y0 x1 y1 s_0 s_1 ... s_{K-1}`` per line (one class-score vector per box)."""
    out: dict[str, tuple[list[Box], list[np.ndarray]]] = {}
    width = None
    for lineno, line in _lines(path):
        fid, box, rest = _parse_line(line, lineno, path)
        try:
            vec = np.array([float(v) for v in rest])
        except ValueError:
            raise ValueError(f"{path}:{lineno}: scores must be numbers") from None
        if width is not None and len(vec) != width:
            raise ValueError(f"{path}:{lineno}: expected {width} class scores, got {len(vec)}")
        width = len(vec)
        boxes, scores = out.setdefault(fid, ([], []))
        boxes.append(box)
        scores.append(vec)
    return out


def build_frames(predictions, truths, num_classes: int | None = None) -> list[DetectionFrame]:
    """Join prediction and ground-truth maps on frame id (sorted for a stable order)."""
    if num_classes is None:
        num_classes = max([len(s[0]) for _, s in predictions.values() if s] + [0])
    frames = []
    for fid in sorted(set(predictions) | set(truths)):
        boxes, scores = predictions.get(fid, ([], []))
        arr = np.stack(scores) if scores else np.zeros((0, num_classes))
        frames.append(DetectionFrame(fid, list(boxes), arr, list(truths.get(fid, []))))
    return frames


def write_table(path, text: str):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text)
