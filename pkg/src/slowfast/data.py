"""Clip sampling, augmentation, weak-input variants, synthetic motion videos and the SFV1 file format."""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .arch import ArchConfig


class DataError(ValueError):
    pass


@dataclass
class RawVideo:
    """Frames (F, H, W, C) in [0, 1] with a label and optional per-frame boxes."""

    frames: np.ndarray
    label: int | tuple[int, ...] = 0
    fps: float = 30.0
    # (t_index, (x0, y0, x1, y1) normalized, labels)
    boxes: list[tuple[int, tuple[float, float, float, float], tuple[int, ...]]] = field(default_factory=list)

    def __post_init__(self):
        self.frames = np.asarray(self.frames)
        if self.frames.ndim != 4:
            raise DataError(f"frames must be (F, H, W, C), got shape {self.frames.shape}")

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def height(self) -> int:
        return self.frames.shape[1]

    @property
    def width(self) -> int:
        return self.frames.shape[2]


@dataclass(frozen=True)
class CropGeometry:
    scale: int          # shorter side after resizing
    height: int         # resized frame size
    width: int
    y0: int
    x0: int
    size: int           # square crop side
    flip: bool


@dataclass
class ClipPair:
    slow: np.ndarray    # (T, S, S, C)
    fast: np.ndarray    # (omega*T, S, S, C)
    geometry: CropGeometry
    start: int = 0
    slow_indices: tuple[int, ...] = ()
    fast_indices: tuple[int, ...] = ()


# -- resampling ----------------------------------------------------------

def _linear_weights(n_in: int, n_out: int):
    # half-pixel centres: src = (dst + 0.5) * n_in / n_out - 0.5
    src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0, n_in - 1)
    lo = np.floor(src).astype(np.int64)
    hi = np.minimum(lo + 1, n_in - 1)
    frac = src - lo
    return lo, hi, frac


def resize_bilinear(frames: np.ndarray, height: int, width: int) -> np.ndarray:
    """Bilinear resize of (..., H, W, C) frames with half-pixel centres."""
    H, W = frames.shape[-3], frames.shape[-2]
    out = frames
    if H != height:
        lo, hi, f = _linear_weights(H, height)
        f = f[:, None, None]
        out = out[..., lo, :, :] * (1 - f) + out[..., hi, :, :] * f
    if W != width:
        lo, hi, f = _linear_weights(W, width)
        f = f[:, None]
        out = out[..., :, lo, :] * (1 - f) + out[..., :, hi, :] * f
    return np.asarray(out, dtype=np.float64)


def scaled_size(h: int, w: int, short: int) -> tuple[int, int]:
    if h <= w:
        return short, int(round(w * short / h))
    return int(round(h * short / w)), short


# -- index selection -----------------------------------------------------

def clip_indices(start: int, config: ArchConfig) -> tuple[list[int], list[int]]:
    slow = [start + i * config.tau for i in range(config.T)]
    fast = [start + j * config.fast_stride for j in range(config.omega * config.T)]
    return slow, fast


def _apply_geometry(frames: np.ndarray, g: CropGeometry) -> np.ndarray:
    out = resize_bilinear(frames, g.height, g.width)
    out = out[:, g.y0:g.y0 + g.size, g.x0:g.x0 + g.size]
    if g.flip:
        out = out[:, :, ::-1]
    return np.ascontiguousarray(out)


def sample_train_clip(video: RawVideo, config: ArchConfig, rng: np.random.Generator,
                      crop: int = 224, scale_range: tuple[int, int] = (256, 320)) -> ClipPair:
    """Random temporal window, shorter-side scale jitter, random square crop and flip."""
    need = config.raw_frames
    if video.num_frames < need:
        raise DataError(f"video has {video.num_frames} frames, needs at least T*tau = {need}")
    start = int(rng.integers(0, video.num_frames - need + 1))
    s_idx, f_idx = clip_indices(start, config)
    short = int(rng.integers(scale_range[0], scale_range[1] + 1))
    h, w = scaled_size(video.height, video.width, short)
    if h < crop or w < crop:
        raise DataError(f"scaled frame {h}x{w} smaller than crop {crop}")
    y0 = int(rng.integers(0, h - crop + 1))
    x0 = int(rng.integers(0, w - crop + 1))
    flip = bool(rng.integers(0, 2))
    g = CropGeometry(short, h, w, y0, x0, crop, flip)
    frames = video.frames.astype(np.float64)
    return ClipPair(_apply_geometry(frames[s_idx], g), _apply_geometry(frames[f_idx], g), g,
                    start, tuple(s_idx), tuple(f_idx))


def test_starts(num_frames: int, config: ArchConfig, clips: int = 10) -> list[int]:
    last = num_frames - config.raw_frames
    if last < 0:
        raise DataError(f"video has {num_frames} frames, needs at least T*tau = {config.raw_frames}")
    return [int(round(x)) for x in np.linspace(0, last, clips)]


def crop_offsets(h: int, w: int, size: int, crops: int = 3) -> list[tuple[int, int]]:
    """(y0, x0) of left/centre/right crops, or top/centre/bottom for portrait frames."""
    if crops == 1:
        return [((h - size) // 2, (w - size) // 2)]
    if w >= h:
        y = (h - size) // 2
        return [(y, int(round(i * (w - size) / (crops - 1)))) for i in range(crops)]
    x = (w - size) // 2
    return [(int(round(i * (h - size) / (crops - 1))), x) for i in range(crops)]


def sample_test_views(video: RawVideo, config: ArchConfig, side: int = 256,
                      clips: int = 10, crops: int = 3) -> list[ClipPair]:
    """Deterministic clips x crops views, clip-major order."""
    starts = test_starts(video.num_frames, config, clips)
    h, w = scaled_size(video.height, video.width, side)
    frames = video.frames.astype(np.float64)
    views = []
    for start in starts:
        s_idx, f_idx = clip_indices(start, config)
        slow = resize_bilinear(frames[s_idx], h, w)
        fast = resize_bilinear(frames[f_idx], h, w)
        for y0, x0 in crop_offsets(h, w, side, crops):
            g = CropGeometry(side, h, w, y0, x0, side, False)
            views.append(ClipPair(np.ascontiguousarray(slow[:, y0:y0 + side, x0:x0 + side]),
                                  np.ascontiguousarray(fast[:, y0:y0 + side, x0:x0 + side]),
                                  g, start, tuple(s_idx), tuple(f_idx)))
    return views


# -- weak spatial inputs -------------------------------------------------

LUMA = np.array([0.299, 0.587, 0.114])


def to_gray(frames: np.ndarray) -> np.ndarray:
    return (np.asarray(frames, dtype=np.float64) @ LUMA)[..., None]


def time_diff(frames: np.ndarray) -> np.ndarray:
    """frame[t] - frame[t-1]; the first frame's difference is zero."""
    frames = np.asarray(frames, dtype=np.float64)
    out = np.zeros_like(frames)
    out[1:] = frames[1:] - frames[:-1]
    return out


def half_res(frames: np.ndarray) -> np.ndarray:
    frames = np.asarray(frames, dtype=np.float64)
    return resize_bilinear(frames, frames.shape[-3] // 2, frames.shape[-2] // 2)


def fast_input(frames: np.ndarray, variant: str) -> np.ndarray:
    """Apply the configured weak-input variant to Fast pathway frames."""
    if variant == "rgb":
        return np.asarray(frames, dtype=np.float64)
    if variant == "gray":
        return to_gray(frames)
    if variant == "time-diff":
        return time_diff(to_gray(frames))
    if variant == "half-res":
        return half_res(frames)
    raise DataError(f"unknown input variant {variant!r}")


MEAN, STD = 0.45, 0.225


def to_network(frames: np.ndarray, normalize: bool = True) -> np.ndarray:
    """(T, H, W, C) frames -> (C, T, H, W) network layout."""
    x = np.asarray(frames, dtype=np.float64)
    if normalize:
        x = (x - MEAN) / STD
    return np.ascontiguousarray(x.transpose(3, 0, 1, 2))


def batch_inputs(pairs: Sequence[ClipPair], config: ArchConfig):
    """Stack ClipPairs into a PathwayInput for ``config.mode``."""
    from .net import PathwayInput

    slow = fast = None
    if config.mode != "fast-only":
        slow = np.stack([to_network(p.slow) for p in pairs])
    if config.mode != "slow-only":
        variant = config.input_variant
        fast = np.stack([to_network(fast_input(p.fast, variant), normalize=variant != "time-diff") for p in pairs])
    return PathwayInput(slow, fast)


# -- synthetic motion corpus ---------------------------------------------

@dataclass(frozen=True)
class SyntheticGeometry:
    frames: int = 40
    side: int = 32
    patch: int = 10
    tau: int = 8
    base_speed: int = 1


def motion_class(label: int, geometry: SyntheticGeometry) -> tuple[int, int]:
    """(direction sign, vertical speed in px/frame) of a class.

    Speeds of one direction differ by side/tau px/frame, so frames sampled
    every tau frames from a wrapping patch look the same for all of them;
    only denser sampling separates the speeds.
    """
    direction = 1 if label % 2 == 0 else -1
    level = label // 2
    return direction, geometry.base_speed + level * (geometry.side // geometry.tau)


def _texture(rng: np.random.Generator, h: int, w: int, cells: int) -> np.ndarray:
    coarse = rng.random((cells, cells, 3))
    reps = (math.ceil(h / cells), math.ceil(w / cells))
    return np.kron(coarse, np.ones(reps + (1,)))[:h, :w]


def render_clip(background: np.ndarray, patch: np.ndarray, start: tuple[int, int], velocity: tuple[int, int],
                frames: int) -> np.ndarray:
    """Composite a patch moving at ``velocity`` (dy, dx) px/frame over a static toroidal background."""
    H, W, _ = background.shape
    ph, pw, _ = patch.shape
    out = np.repeat(background[None], frames, axis=0)
    rows_p = np.arange(ph)
    cols_p = np.arange(pw)
    for t in range(frames):
        y = (start[0] + velocity[0] * t + rows_p) % H
        x = (start[1] + velocity[1] * t + cols_p) % W
        out[t][np.ix_(y, x)] = patch
    return out


def generate_synthetic_corpus(seed: int, num_classes: int, clips_per_class: int,
                              geometry: SyntheticGeometry = SyntheticGeometry()) -> list[RawVideo]:
    """Clips whose class is set only by the vertical direction and speed of a textured patch."""
    if num_classes < 2:
        raise DataError("num_classes must be >= 2")
    if geometry.side % geometry.tau:
        raise DataError("synthetic side must be a multiple of tau")
    rng = np.random.Generator(np.random.Philox(key=seed))
    videos = []
    g = geometry
    for label in range(num_classes):
        direction, speed = motion_class(label, g)
        for _ in range(clips_per_class):
            bg = _texture(rng, g.side, g.side, 8) * 0.6
            patch = 0.4 + 0.6 * _texture(rng, g.patch, g.patch, 2)
            start = (int(rng.integers(g.side)), int(rng.integers(g.side - g.patch + 1)))
            frames = render_clip(bg, patch, start, (direction * speed, 0), g.frames)
            videos.append(RawVideo(frames.astype(np.float32).astype(np.float64), label))
    return videos


def shuffle_frames(videos: Sequence[RawVideo], seed: int) -> list[RawVideo]:
    rng = np.random.Generator(np.random.Philox(key=seed))
    return [RawVideo(v.frames[rng.permutation(v.num_frames)], v.label, v.fps, list(v.boxes)) for v in videos]


# -- SFV1 raw clip format ------------------------------------------------

SFV_MAGIC = b"SFV1"
SFV_VERSION = 1


def encode_sfv(video: RawVideo) -> bytes:
    f = video.frames
    labels = (video.label,) if isinstance(video.label, (int, np.integer)) else tuple(video.label)
    parts = [SFV_MAGIC, struct.pack("<IIIIII", SFV_VERSION, *f.shape, len(labels))]
    parts.append(struct.pack(f"<{len(labels)}I", *labels))
    parts.append(np.ascontiguousarray(f, dtype="<f4").tobytes())
    if video.boxes:
        parts.append(struct.pack("<I", len(video.boxes)))
        for t, box, lab in video.boxes:
            parts.append(struct.pack("<I4f", t, *box))
            parts.append(struct.pack(f"<I{len(lab)}I", len(lab), *lab))
    return b"".join(parts)


def decode_sfv(data: bytes) -> RawVideo:
    if data[:4] != SFV_MAGIC:
        raise DataError("not an SFV1 clip")
    version, F, H, W, C, nlab = struct.unpack_from("<IIIIII", data, 4)
    if version != SFV_VERSION:
        raise DataError(f"unsupported SFV1 version {version}")
    off = 28
    labels = struct.unpack_from(f"<{nlab}I", data, off)
    off += 4 * nlab
    n = F * H * W * C
    frames = np.frombuffer(data, dtype="<f4", count=n, offset=off).reshape(F, H, W, C).astype(np.float64)
    off += 4 * n
    boxes = []
    if off < len(data):
        (count,) = struct.unpack_from("<I", data, off)
        off += 4
        for _ in range(count):
            t, x0, y0, x1, y1 = struct.unpack_from("<I4f", data, off)
            off += 20
            (k,) = struct.unpack_from("<I", data, off)
            off += 4
            lab = struct.unpack_from(f"<{k}I", data, off)
            off += 4 * k
            boxes.append((t, (x0, y0, x1, y1), tuple(lab)))
    label = labels[0] if len(labels) == 1 else tuple(labels)
    return RawVideo(frames, label, boxes=boxes)


def write_sfv(path, video: RawVideo):
    with open(path, "wb") as fh:
        fh.write(encode_sfv(video))


def read_sfv(path) -> RawVideo:
    with open(path, "rb") as fh:
        return decode_sfv(fh.read())
