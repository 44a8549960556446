"""Multi-view aggregation and classification metrics."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .tensor import sigmoid, softmax


@dataclass
class ViewScores:
    """Per-view class scores with the (clip, crop) identity of each row."""

    scores: np.ndarray
    clip_ids: np.ndarray
    crop_ids: np.ndarray

    @classmethod
    def grid(cls, scores, clips: int, crops: int) -> "ViewScores":
        scores = np.asarray(scores, dtype=np.float64)
        if scores.shape[0] != clips * crops:
            raise ValueError(f"expected {clips}x{crops} views, got {scores.shape[0]} rows")
        return cls(scores, np.repeat(np.arange(clips), crops), np.tile(np.arange(crops), clips))

    def permuted(self, perm) -> "ViewScores":
        return ViewScores(self.scores[perm], self.clip_ids[perm], self.crop_ids[perm])


def _exact_mean(rows: np.ndarray) -> np.ndarray:
    # fsum is exactly rounded, so the result does not depend on row order; offsets from
    # the column minimum make the mean of identical rows come back bit-exact
    out = []
    for col in rows.T:
        lo = col.min()
        out.append(lo + math.fsum(col - lo) / len(col))
    return np.array(out)


def aggregate_views(views: ViewScores, head: str = "softmax-mean") -> np.ndarray:
    scores = np.asarray(views.scores, dtype=np.float64)
    if scores.ndim != 2 or scores.shape[0] == 0:
        raise ValueError("aggregate_views needs a non-empty (views, classes) score matrix")
    if head == "softmax-mean":
        return _exact_mean(scores)
    if head == "sigmoid-temporal-max":
        per_clip = [_exact_mean(scores[views.clip_ids == c]) for c in np.unique(views.clip_ids)]
        return np.max(np.stack(per_clip), axis=0)
    raise ValueError(f"unknown aggregation {head!r}")


def topk_accuracy(scores, labels, k: int) -> float:
    """Percentage of rows whose label ranks within the top k; ties go to the lower class index."""
    if k < 1:
        raise ValueError("k must be >= 1")
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if len(labels) == 0:
        return 0.0
    true = scores[np.arange(len(labels)), labels][:, None]
    idx = np.arange(scores.shape[1])[None, :]
    rank = np.sum(scores > true, axis=1) + np.sum((scores == true) & (idx < labels[:, None]), axis=1)
    return float(100.0 * np.mean(rank < k))


def average_precision(scores, is_positive, num_positives: int | None = None, group_ties: bool = True) -> float:
    """All-point interpolated AP.

    Items are ranked by descending score. With ``group_ties`` equal scores
    form a single operating point; otherwise ties keep their input order and
    each item is its own point. ``num_positives`` defaults to the positives
    present, and may be larger when some ground truths were never detected.
    """
    scores = np.asarray(scores, dtype=np.float64)
    hits = np.asarray(is_positive, dtype=bool)
    npos = int(hits.sum()) if num_positives is None else int(num_positives)
    if npos == 0:
        raise ValueError("average precision is undefined without positives")
    if scores.size == 0:
        return 0.0
    order = np.argsort(-scores, kind="stable")
    s, h = scores[order], hits[order]
    tp = np.cumsum(h)
    fp = np.cumsum(~h)
    # keep the last item of every tie group
    ends = np.r_[s[1:] != s[:-1], True] if group_ties else np.ones(len(s), dtype=bool)
    tp, fp = tp[ends], fp[ends]
    recall = np.r_[0.0, tp / npos]
    precision = np.r_[1.0, tp / (tp + fp)]
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    return float(np.sum((recall[1:] - recall[:-1]) * envelope[1:]))


@dataclass
class MapReport:
    mean_ap: float
    per_class: dict[int, float]
    excluded: list[int]

    def to_tsv(self, names: Sequence[str] | None = None) -> str:
        lines = ["#class\tap"]
        for c, ap in sorted(self.per_class.items()):
            lines.append(f"{names[c] if names else c}\t{ap:.6f}")
        return "\n".join(lines) + "\n"

    def to_jsonl(self) -> str:
        rows = [{"metric": "mAP", "value": self.mean_ap}]
        rows += [{"metric": "AP", "class": c, "value": ap} for c, ap in sorted(self.per_class.items())]
        rows += [{"metric": "excluded", "class": c, "value": None} for c in self.excluded]
        return "".join(json.dumps(r, sort_keys=True) + "\n" for r in rows)


def multilabel_map(scores, label_sets: Sequence[Iterable[int]]) -> MapReport:
    """Mean over classes (with at least one positive video) of per-class AP."""
    scores = np.asarray(scores, dtype=np.float64)
    n, k = scores.shape
    truth = np.zeros((n, k), dtype=bool)
    for i, labels in enumerate(label_sets):
        for c in labels:
            truth[i, c] = True
    per_class, excluded = {}, []
    for c in range(k):
        if not truth[:, c].any():
            excluded.append(c)
            continue
        per_class[c] = average_precision(scores[:, c], truth[:, c])
    mean = float(np.mean(list(per_class.values()))) if per_class else 0.0
    return MapReport(mean, per_class, excluded)


def metric_lines(metrics: dict) -> str:
    return "".join(json.dumps({"metric": k, "value": v}, sort_keys=True) + "\n" for k, v in metrics.items())


# -- running a network over videos ----------------------------------------

def view_scores(net, video, side: int, clips: int = 10, crops: int = 3, batch: int = 16) -> ViewScores:
    from .data import batch_inputs, sample_test_views
    from .net import forward

    views = sample_test_views(video, net.config, side, clips, crops)
    prev = net.mode
    net.mode = "eval"
    rows = []
    try:
        for i in range(0, len(views), batch):
            logits = forward(net, batch_inputs(views[i:i + batch], net.config)).data
            rows.append(sigmoid(logits) if net.config.head == "classify-sigmoid" else softmax(logits))
    finally:
        net.mode = prev
    return ViewScores.grid(np.concatenate(rows), clips, crops)


def evaluate_videos(net, videos, side: int, clips: int = 10, crops: int = 3) -> dict:
    """Video-level scores and top-1/top-5 under the multi-view protocol."""
    head = "sigmoid-temporal-max" if net.config.head == "classify-sigmoid" else "softmax-mean"
    scores = np.stack([aggregate_views(view_scores(net, v, side, clips, crops), head) for v in videos])
    out = {"scores": scores}
    if net.config.head == "classify-sigmoid":
        out["mAP"] = multilabel_map(scores, [v.label if isinstance(v.label, tuple) else (v.label,)
                                             for v in videos]).mean_ap
    else:
        labels = [v.label for v in videos]
        out["top1"] = topk_accuracy(scores, labels, 1)
        out["top5"] = topk_accuracy(scores, labels, min(5, scores.shape[1]))
    return out
