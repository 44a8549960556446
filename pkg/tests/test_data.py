import numpy as np
import pytest
from scipy import stats

from slowfast.arch import ArchConfig
from slowfast.data import (DataError, RawVideo, SyntheticGeometry, batch_inputs, clip_indices, crop_offsets,
                           decode_sfv, encode_sfv, generate_synthetic_corpus, half_res, motion_class, read_sfv,
                           render_clip, resize_bilinear, sample_test_views, sample_train_clip, shuffle_frames,
                           test_starts as window_starts, time_diff, to_gray, write_sfv)

R50 = ArchConfig()
SMALL = ArchConfig(T=2, tau=4, omega=2, width=4, blocks=(1, 1, 1, 1), num_classes=3)


def video(frames=64, h=12, w=16, seed=0):
    r = np.random.default_rng(seed)
    return RawVideo(r.random((frames, h, w, 3)), 1)


def test_single_window():
    v = video(64)
    pair = sample_train_clip(v, R50, np.random.default_rng(0), crop=8, scale_range=(12, 14))
    assert pair.start == 0 and pair.slow_indices == (0, 16, 32, 48)
    assert pair.fast_indices == tuple(range(0, 64, 2))


def test_too_short():
    with pytest.raises(DataError):
        sample_train_clip(video(63), R50, np.random.default_rng(0), crop=8, scale_range=(12, 12))
    with pytest.raises(DataError):
        sample_test_views(video(63), R50, 12)


def test_shared_geometry_and_flip():
    v = video(64)
    r = np.random.default_rng(3)
    for _ in range(20):
        pair = sample_train_clip(v, R50, r, crop=8, scale_range=(12, 16))
        # slow frame i is fast frame i*omega after the same geometry
        assert np.array_equal(pair.slow, pair.fast[::8])
        if pair.geometry.flip:
            g = pair.geometry
            raw = resize_bilinear(v.frames[[0]], g.height, g.width)[:, g.y0:g.y0 + 8, g.x0:g.x0 + 8]
            assert np.array_equal(pair.fast[0], raw[0, :, ::-1])
            return
    pytest.fail("no flipped sample drawn")


def test_slow_fast_alignment_raw():
    for start in range(0, 10):
        s, f = clip_indices(start, R50)
        assert [f[i * 8] for i in range(4)] == s


def test_start_uniformity():
    v = RawVideo(np.zeros((128, 4, 4, 3)), 0)
    r = np.random.default_rng(2024)
    starts = [sample_train_clip(v, R50, r, crop=4, scale_range=(4, 4)).start for _ in range(1000)]
    assert min(starts) >= 0 and max(starts) <= 64
    counts = np.bincount(starts, minlength=65)
    assert stats.chisquare(counts).pvalue > 0.01


def test_scale_range_and_crop():
    v = video(64, 30, 40)
    r = np.random.default_rng(0)
    for _ in range(30):
        pair = sample_train_clip(v, R50, r, crop=16, scale_range=(20, 24))
        assert 20 <= pair.geometry.scale <= 24
        assert pair.slow.shape == (4, 16, 16, 3) and pair.fast.shape == (32, 16, 16, 3)


def test_test_views_square_and_exact_length():
    v = RawVideo(np.random.default_rng(0).random((64, 16, 16, 3)), 0)
    views = sample_test_views(v, R50, 16)
    assert len(views) == 30
    for k in range(0, 30, 3):
        assert np.array_equal(views[k].slow, views[k + 1].slow) and np.array_equal(views[k].slow, views[k + 2].slow)
    assert all(np.array_equal(views[0].fast, w.fast) for w in views)


def test_landscape_offsets_and_portrait():
    assert [x for _, x in crop_offsets(256, 320, 256)] == [0, 32, 64]
    assert [y for y, _ in crop_offsets(320, 256, 256)] == [0, 32, 64]


def test_test_starts_equidistant_and_pure():
    starts = window_starts(200, R50)
    assert starts[0] == 0 and starts[-1] == 136 and len(starts) == 10
    gaps = np.diff(starts)
    assert gaps.max() - gaps.min() <= 1
    v = video(100)
    a = sample_test_views(v, R50, 12)
    b = sample_test_views(v, R50, 12)
    assert all(np.array_equal(x.slow, y.slow) and np.array_equal(x.fast, y.fast) for x, y in zip(a, b))
    assert not any(x.geometry.flip for x in a)


def test_weak_inputs():
    const = np.full((5, 4, 4, 3), 0.3)
    assert not time_diff(const).any()
    gray = np.full((2, 3, 3, 3), 0.6)
    assert np.allclose(to_gray(gray), 0.6, atol=1e-15) and to_gray(gray).shape == (2, 3, 3, 1)
    assert half_res(np.zeros((1, 224, 224, 3))).shape == (1, 112, 112, 3)
    r = np.random.default_rng(0).random((3, 6, 10, 3))
    assert half_res(r).shape == (3, 3, 5, 3)
    d = time_diff(r)
    assert not d[0].any() and np.allclose(d[2], r[2] - r[1]) and d.shape == r.shape


def test_resize_identity_and_constant():
    r = np.random.default_rng(1).random((2, 5, 7, 3))
    assert np.array_equal(resize_bilinear(r, 5, 7), r)
    assert np.allclose(resize_bilinear(np.full((1, 4, 4, 3), 0.25), 9, 13), 0.25)


def test_batch_inputs_variants():
    v = video(16, 8, 8)
    pairs = sample_test_views(v, SMALL, 8, 2, 1)
    inp = batch_inputs(pairs, SMALL)
    assert inp.slow.shape == (2, 3, 2, 8, 8) and inp.fast.shape == (2, 3, 4, 8, 8)
    inp = batch_inputs(pairs, SMALL.with_changes(input_variant="gray"))
    assert inp.fast.shape == (2, 1, 4, 8, 8)
    inp = batch_inputs(pairs, SMALL.with_changes(mode="slow-only", lateral="none"))
    assert inp.fast is None


def test_speed_classes_alias_on_slow_frames():
    g = SyntheticGeometry()
    r = np.random.default_rng(0)
    bg = r.random((g.side, g.side, 3))
    patch = r.random((g.patch, g.patch, 3))
    d0, s0 = motion_class(0, g)
    d2, s2 = motion_class(2, g)
    assert d0 == d2 and s0 != s2
    a = render_clip(bg, patch, (3, 5), (d0 * s0, 0), g.frames)
    b = render_clip(bg, patch, (3, 5), (d2 * s2, 0), g.frames)
    for t in range(0, g.frames, g.tau):
        assert np.array_equal(a[t], b[t])
    assert not np.array_equal(a[1], b[1])


def test_corpus_deterministic():
    a = generate_synthetic_corpus(7, 4, 3)
    b = generate_synthetic_corpus(7, 4, 3)
    assert all(np.array_equal(x.frames, y.frames) and x.label == y.label for x, y in zip(a, b))
    assert [v.label for v in a] == [0, 0, 0, 1, 1, 1, 2, 2, 2, 3, 3, 3]
    with pytest.raises(DataError):
        generate_synthetic_corpus(0, 1, 3)


def test_shuffled_corpus_appearance_is_chance():
    train = shuffle_frames(generate_synthetic_corpus(0, 4, 50), 9)
    val = shuffle_frames(generate_synthetic_corpus(1, 4, 50), 10)

    def feats(vs):
        return np.stack([v.frames.mean(axis=0).ravel() for v in vs]), np.array([v.label for v in vs])

    xt, yt = feats(train)
    xv, yv = feats(val)
    centroids = np.stack([xt[yt == k].mean(axis=0) for k in range(4)])
    pred = np.argmin(((xv[:, None] - centroids[None]) ** 2).sum(-1), axis=1)
    assert abs(100 * np.mean(pred == yv) - 25.0) <= 10.0


def test_sfv_round_trip(tmp_path):
    v = RawVideo(np.random.default_rng(0).random((3, 4, 5, 3)).astype(np.float32).astype(np.float64), 2,
                 boxes=[(1, (0.25, 0.5, 0.75, 1.0), (3, 4)), (2, (0.0, 0.0, 0.5, 0.5), (1,))])
    raw = encode_sfv(v)
    assert raw[:4] == b"SFV1"
    header = np.frombuffer(raw[4:28], dtype="<u4")
    assert list(header) == [1, 3, 4, 5, 3, 1]
    back = decode_sfv(raw)
    assert np.array_equal(back.frames, v.frames) and back.label == 2 and back.boxes == v.boxes
    path = tmp_path / "c.sfv"
    write_sfv(path, v)
    assert encode_sfv(read_sfv(path)) == raw
    multi = RawVideo(v.frames, (0, 5))
    assert decode_sfv(encode_sfv(multi)).label == (0, 5)
    with pytest.raises(DataError):
        decode_sfv(b"XXXX" + raw[4:])
