import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from slowfast.data import batch_inputs, sample_test_views, RawVideo
from slowfast.detect import (Box, BoxError, DetectionFrame, GroundTruth, Proposal, ap_comparison_table, build_frames,
                             detection_scores, filter_proposals, frame_map, iou, match_class, read_ground_truth,
                             read_predictions, read_proposals, roi_features, select_training_rois)
from slowfast.net import NetworkInstance, tiny_config

from cases import detection_case, oracle_view
from oracles import box_iou, frame_map_brute, roi_dense

boxes = st.tuples(st.floats(0, 0.9), st.floats(0, 0.9), st.floats(0.01, 1), st.floats(0.01, 1)).map(
    lambda t: Box(t[0], t[1], min(1.0, t[0] + t[2] * (1 - t[0]) + 1e-3), min(1.0, t[1] + t[3] * (1 - t[1]) + 1e-3)))


def P(conf, box=(0, 0, 1, 1)):
    return Proposal(Box(*box), conf)


def test_filter_proposals():
    assert filter_proposals([P(0.9)]) == []
    assert filter_proposals([]) == []
    kept = filter_proposals([P(0.95), P(0.5), P(0.91)])
    assert [p.confidence for p in kept] == [0.95, 0.91]


def test_box_validation():
    for bad in [(0.5, 0, 0.5, 1), (0, 0, 1.2, 1), (0.6, 0, 0.4, 1), (float("nan"), 0, 1, 1)]:
        with pytest.raises(BoxError):
            Box(*bad)
    with pytest.raises(BoxError):
        Proposal(Box(0, 0, 1, 1), 1.5)


def test_iou_examples():
    b = Box(0.1, 0.2, 0.5, 0.7)
    assert iou(b, b) == 1.0
    assert iou(Box(0, 0, 0.2, 0.2), Box(0.5, 0.5, 1, 1)) == 0.0
    assert iou(Box(0, 0, 0.2, 0.2), Box(0.1, 0.1, 0.3, 0.3)) == pytest.approx(1 / 7, abs=1e-12)


@settings(max_examples=300, deadline=None)
@given(boxes, boxes)
def test_iou_properties(a, b):
    v = iou(a, b)
    assert v == iou(b, a) and 0.0 <= v <= 1.0
    assert v == pytest.approx(box_iou(a.as_tuple(), b.as_tuple()), abs=1e-12)
    gap = max(abs(x - y) for x, y in zip(a.as_tuple(), b.as_tuple()))
    if gap == 0:
        assert v == 1.0
    if abs(v - 1.0) <= 1e-12:
        assert gap <= 1e-9


def test_select_training_rois():
    gt = GroundTruth(Box(0.0, 0.0, 0.4, 1.0), frozenset({1}))
    # proposal covering 0.75 of the GT exactly
    exact = Proposal(Box(0.0, 0.0, 0.3, 1.0), 0.95)
    assert iou(exact.box, gt.box) == 0.75
    out = select_training_rois([exact], [gt])
    assert len(out) == 1 and not out[0].from_proposal
    assert [s.box for s in select_training_rois([], [gt])] == [gt.box]
    a = GroundTruth(Box(0.0, 0.0, 0.5, 1.0), frozenset({2}))
    b = GroundTruth(Box(0.0, 0.0, 0.45, 1.0), frozenset({7}))
    p = Proposal(Box(0.0, 0.0, 0.4, 1.0), 0.99)
    assert iou(p.box, a.box) == pytest.approx(0.8) and iou(p.box, b.box) == pytest.approx(0.4 / 0.45)
    out = select_training_rois([p], [a, b])
    assert out[-1].from_proposal and out[-1].labels == frozenset({7})


def test_roi_constant_map():
    f = np.full((3, 2, 6, 9), 2.5)
    assert np.array_equal(roi_features(f, Box(0.1, 0.2, 0.8, 0.6)), np.full(3, 2.5))


def test_roi_matches_dense_oracle(rng):
    f = rng.normal(size=(1, 4, 8, 8))
    for box in [Box(0, 0, 1, 1), Box(0.13, 0.3, 0.71, 0.95)]:
        ours = roi_features(f, box)
        assert np.max(np.abs(ours - roi_dense(f, box.as_tuple()))) <= 1e-10


def test_roi_temporal_replication(rng):
    f = rng.normal(size=(5, 1, 7, 6))
    box = Box(0.2, 0.1, 0.9, 0.8)
    one = roi_features(f, box)
    assert np.allclose(roi_features(np.repeat(f, 4, axis=1), box), one, rtol=0, atol=1e-12)


def test_degenerate_box_after_clamping():
    with pytest.raises(BoxError):
        roi_features(np.zeros((1, 1, 4, 4)), (0.5, 0.2, 0.5, 0.9))
    with pytest.raises(BoxError):
        roi_features(np.zeros((1, 1, 4, 4)), (1.2, 0.0, 1.5, 1.0))


def test_detection_scores_shapes():
    cfg = tiny_config(head="detect", num_classes=5)
    net = NetworkInstance.create(cfg, 0, mode="eval")
    v = RawVideo(np.random.default_rng(0).random((8, 32, 32, 3)), 0)
    inp = batch_inputs(sample_test_views(v, cfg, 32, 1, 1), cfg)
    s = detection_scores(net, inp, [Box(0, 0, 1, 1), Box(0.2, 0.2, 0.6, 0.9)])
    assert s.shape == (2, 5) and np.all((s > 0) & (s < 1))
    assert detection_scores(net, inp, []).shape == (0, 5)


def gt(box, *labels):
    return GroundTruth(Box(*box), frozenset(labels))


def test_frame_map_perfect_and_empty():
    truths = [gt((0, 0, 0.5, 0.5), 0), gt((0.5, 0.5, 1, 1), 1, 2)]
    scores = np.array([[1.0, 0, 0], [0, 1.0, 1.0]])
    perfect = [DetectionFrame("a", [t.box for t in truths], scores, truths)]
    assert frame_map(perfect).mean_ap == 1.0
    none = [DetectionFrame("a", [], np.zeros((0, 3)), truths)]
    rep = frame_map(none, num_classes=3)
    assert rep.mean_ap == 0.0 and rep.excluded == []
    wide = [DetectionFrame("a", perfect[0].boxes, np.pad(scores, ((0, 0), (0, 1))), truths)]
    rep = frame_map(wide)
    assert rep.excluded == [3] and rep.mean_ap == 1.0
    with pytest.raises(ValueError):
        frame_map(perfect, num_classes=4)


def test_frame_map_brute_force_agreement():
    checked = 0
    for seed in range(200):
        frames = detection_case(seed, classes=2)
        oracle = frame_map_brute(*oracle_view(frames), 2)
        rep = frame_map(frames, num_classes=2)
        assert set(rep.per_class) == set(oracle)
        for c, ap in oracle.items():
            assert rep.per_class[c] == pytest.approx(ap, abs=1e-12), seed
            checked += 1
    assert checked > 100


@pytest.mark.parametrize("seed", range(20))
def test_frame_map_monotone_and_unique_matches(seed):
    frames = detection_case(seed, max_det=100)
    base = frame_map(frames, num_classes=2)
    moved = [DetectionFrame(f.frame_id, f.boxes, f.scores ** 2 * 0.5 + 0.1, f.truths) for f in frames]
    assert frame_map(moved, num_classes=2).per_class == base.per_class
    for c in range(2):
        _, hits, npos = match_class(frames, c)
        assert hits.sum() <= npos


def test_interchange(tmp_path):
    (tmp_path / "gt.txt").write_text("# frame box labels\nf1 0 0 0.5 0.5 0,2\nf2 0.5 0.5 1 1 1\n")
    (tmp_path / "pred.txt").write_text("f1 0 0 0.5 0.5 0.9 0.1 0.8\nf2 0.5 0.5 1 1 0.2 0.7 0.1\n")
    (tmp_path / "prop.txt").write_text("f1 0 0 0.5 0.5 0.95\nf1 0.1 0.1 0.2 0.2 0.5\n")
    truths = read_ground_truth(tmp_path / "gt.txt")
    preds = read_predictions(tmp_path / "pred.txt")
    props = read_proposals(tmp_path / "prop.txt")
    assert truths["f1"][0].labels == frozenset({0, 2})
    assert len(filter_proposals(props["f1"])) == 1
    frames = build_frames(preds, truths)
    assert [f.frame_id for f in frames] == ["f1", "f2"]
    rep = frame_map(frames)
    assert rep.mean_ap == 1.0
    table = ap_comparison_table(rep, rep)
    assert table.splitlines()[0] == "#class\tslow-only\tslowfast\tgain"
    (tmp_path / "bad.txt").write_text("f1 0 0 0.5\n")
    with pytest.raises(ValueError, match=":1:"):
        read_ground_truth(tmp_path / "bad.txt")
    (tmp_path / "bad2.txt").write_text("f1 0 0 0.5 0.5 0.1 0.2\nf2 0 0 0.5 0.5 0.1\n")
    with pytest.raises(ValueError, match=":2:"):
        read_predictions(tmp_path / "bad2.txt")
