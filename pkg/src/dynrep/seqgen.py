"""Synthetic stand-ins for short facial-action clips.

A sequence is a smooth blob whose amplitude, position and width are
driven by a scalar activation envelope over a fixed per-sequence
background texture.  Appearance at a frame depends only on the envelope
value and per-sequence constants, so symmetric envelopes yield exactly
symmetric frames and dynamics correlate with appearance.  Per-frame
labels are the envelope value (an intensity analogue in [0, 5]) and its
affine rescale to [-1, 1] (an affect analogue).
"""

import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

from . import numerics

FORMAT_VERSION = 1
ENVELOPE_KINDS = ("constant", "ramp", "raised-cosine", "onset-offset")
LABEL_NAMES = ("intensity", "affect")

# Blob geometry relative to min(H, W); amplitudes keep pixel values
# inside [0, 1] without clipping so ramp means stay strictly monotone.
# The transverse orbit makes the frame trajectory curve at window scale;
# without it adjacent frames are nearly collinear in pixel space and
# distance-to-center ranking degenerates.  The motion law (direction and
# orbit phase) is shared by all sequences: appearance then constrains
# short-term dynamics, so a still frame carries rankable motion
# information.  Texture, start position, color and envelope vary.
_BG_LO, _BG_HI = 0.08, 0.45
_BLOB_LO, _BLOB_SPAN = 0.12, 0.38
_SIGMA_FRAC = 0.07
_SIGMA_GROW = 0.35
_TRAVEL_FRAC = 0.22
_ORBIT_FRAC = 0.10
_ORBIT_CYCLES = 3.5
_TRAVEL_ANGLE = 0.9
_ORBIT_PHASE = 0.6


@dataclass(frozen=True)
class EnvelopeSpec:
    """Scalar activation profile e(t) with peak value `amplitude`.

    onset/offset are durations in frames on each side of the peak; they
    are ignored by the `constant` and `ramp` kinds.  `peak_frame` of
    None places the peak at the sequence midpoint.
    """

    kind: str
    onset: int = 0
    offset: int = 0
    amplitude: float = 4.0
    peak_frame: int | None = None

    def __post_init__(self):
        if self.kind not in ENVELOPE_KINDS:
            raise ValueError(
                f"unknown envelope kind {self.kind!r}; expected one of {ENVELOPE_KINDS}"
            )
        if self.kind == "raised-cosine" and self.onset != self.offset:
            raise ValueError(
                f"raised-cosine envelope is symmetric; onset {self.onset} != offset {self.offset}"
            )
        if self.amplitude < 0:
            raise ValueError(f"amplitude must be >= 0, got {self.amplitude}")

    def to_dict(self):
        return {
            "kind": self.kind,
            "onset": self.onset,
            "offset": self.offset,
            "amplitude": self.amplitude,
            "peak_frame": self.peak_frame,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def envelope_values(spec, length):
    """Evaluate e(t) for t in [0, length); raises if the profile does not fit."""
    if length < 1:
        raise ValueError(f"length must be >= 1, got {length}")
    t = np.arange(length, dtype=np.float64)
    if spec.kind == "constant":
        return np.full(length, spec.amplitude, dtype=np.float64)
    if spec.kind == "ramp":
        if length == 1:
            return np.zeros(1, dtype=np.float64)
        return spec.amplitude * t / (length - 1)
    peak = spec.peak_frame if spec.peak_frame is not None else length // 2
    if spec.onset < 1 or spec.offset < 1:
        raise ValueError(
            f"{spec.kind} envelope needs onset and offset >= 1, "
            f"got onset={spec.onset}, offset={spec.offset}"
        )
    if spec.onset + spec.offset + 1 > length:
        raise ValueError(
            f"envelope span {spec.onset + spec.offset + 1} exceeds sequence length {length}"
        )
    if peak - spec.onset < 0 or peak + spec.offset > length - 1:
        raise ValueError(
            f"envelope support [{peak - spec.onset}, {peak + spec.offset}] "
            f"falls outside frames [0, {length - 1}]"
        )
    # Evaluate on |t - peak| so both flanks of a symmetric profile are
    # bit-identical.
    k = np.abs(t - peak)
    e = np.zeros(length, dtype=np.float64)
    rise = (t <= peak) & (k <= spec.onset)
    fall = (t > peak) & (k <= spec.offset)
    e[rise] = 0.5 * spec.amplitude * (1.0 + np.cos(math.pi * k[rise] / spec.onset))
    e[fall] = 0.5 * spec.amplitude * (1.0 + np.cos(math.pi * k[fall] / spec.offset))
    return e


@dataclass
class Sequence:
    id: str
    frames: np.ndarray  # (L, C, H, W) float32 in [0, 1]
    fps: float = 25.0
    labels: np.ndarray | None = None  # (L, n_labels) float32
    label_names: tuple = ()
    envelope: EnvelopeSpec | None = None
    seed: int | None = None

    @property
    def length(self):
        return self.frames.shape[0]

    @property
    def frame_shape(self):
        return self.frames.shape[1:]


@dataclass
class Window:
    """2T+1 frames sampled at stride S around a center frame.

    frames[T] is the center; offset k in [-T, T] maps to source frame
    center_index + k*stride, so the window spans 2*T*stride + 1 source
    frames.
    """

    center_index: int
    half_width: int
    stride: int
    frames: np.ndarray  # (2T+1, C, H, W)

    @property
    def center(self):
        return self.frames[self.half_width]

    @property
    def size(self):
        return self.frames.shape[0]


def _smooth_field(rng, c, h, w):
    coarse = rng.random((c, 6, 6))
    return _bilerp(coarse, h, w)


def _bilerp(field, h, w):
    """Separable linear interpolation of a (C, h0, w0) grid onto (C, h, w)."""

    def axis_weights(n_out, n_in):
        pos = np.linspace(0.0, n_in - 1.0, n_out)
        i0 = np.floor(pos).astype(int)
        i1 = np.minimum(i0 + 1, n_in - 1)
        frac = pos - i0
        return i0, i1, frac

    r0, r1, rf = axis_weights(h, field.shape[1])
    rows = field[:, r0, :] * (1.0 - rf)[None, :, None] + field[:, r1, :] * rf[None, :, None]
    c0, c1, cf = axis_weights(w, field.shape[2])
    return rows[:, :, c0] * (1.0 - cf)[None, None, :] + rows[:, :, c1] * cf[None, None, :]


def generate_sequence(spec, seed, length, channels=3, height=64, width=64,
                      fps=25.0, seq_id=None, label_noise=0.0):
    """Deterministic sequence: same spec and seed give identical bytes.

    Raises if the envelope does not fit in `length` frames.
    """
    if length < 3:
        raise ValueError(f"length must be >= 3, got {length}")
    if height < 16 or width < 16:
        raise ValueError(f"frames must be at least 16x16, got {height}x{width}")
    e = envelope_values(spec, length)
    amp = spec.amplitude if spec.amplitude > 0 else 1.0
    e_norm = e / amp

    rng = numerics.make_rng(seed)
    bg = _BG_LO + (_BG_HI - _BG_LO) * _smooth_field(rng, channels, height, width)
    color = rng.uniform(0.6, 1.0, size=channels)
    side = min(height, width)
    sigma0 = _SIGMA_FRAC * side
    travel = _TRAVEL_FRAC * side
    orbit = _ORBIT_FRAC * side
    u = np.array([math.sin(_TRAVEL_ANGLE), math.cos(_TRAVEL_ANGLE)])
    u_perp = np.array([u[1], -u[0]])
    phase = _ORBIT_PHASE
    margin = 2.0 * sigma0 * (1.0 + _SIGMA_GROW)
    reach = np.maximum(u * travel, 0.0) + orbit * np.abs(u_perp)
    back = np.minimum(u * travel, 0.0) - orbit * np.abs(u_perp)
    lo = np.array([margin, margin]) - back
    hi = np.array([height - 1 - margin, width - 1 - margin]) - reach
    if np.any(hi < lo):
        raise ValueError(f"frames {height}x{width} too small for the blob trajectory")
    p0 = rng.uniform(lo, hi)

    yy = np.arange(height, dtype=np.float64)[:, None]
    xx = np.arange(width, dtype=np.float64)[None, :]
    frames = np.empty((length, channels, height, width), dtype=np.float32)
    rendered = {}
    for t in range(length):
        key = e_norm[t]
        if key not in rendered:
            alpha = _BLOB_LO + _BLOB_SPAN * key
            sigma = sigma0 * (1.0 + _SIGMA_GROW * key)
            swing = math.sin(2.0 * math.pi * _ORBIT_CYCLES * key + phase)
            py, px = p0 + u * (travel * key) + u_perp * (orbit * swing)
            g = np.exp(-((yy - py) ** 2 + (xx - px) ** 2) / (2.0 * sigma * sigma))
            frame = bg + alpha * color[:, None, None] * g[None, :, :]
            rendered[key] = np.clip(frame, 0.0, 1.0).astype(np.float32)
        frames[t] = rendered[key]

    labels = np.stack([e, (e / amp) * 2.0 - 1.0], axis=1)
    if label_noise > 0.0:
        labels = labels + rng.normal(0.0, label_noise, size=labels.shape)
    if seq_id is None:
        seq_id = f"seq_{seed:08x}"
    return Sequence(
        id=seq_id,
        frames=frames,
        fps=fps,
        labels=labels.astype(np.float32),
        label_names=LABEL_NAMES,
        envelope=spec,
        seed=seed,
    )


def sample_window(seq, t, half_width, stride):
    """Window of 2T+1 frames at source indices t + k*stride, k in [-T, T]."""
    if half_width < 0:
        raise ValueError(f"half_width must be >= 0, got {half_width}")
    if stride < 1:
        raise ValueError(f"stride must be >= 1, got {stride}")
    lo = t - half_width * stride
    hi = t + half_width * stride
    if lo < 0:
        raise ValueError(
            f"window start {lo} < 0 (t={t}, T={half_width}, S={stride})"
        )
    if hi >= seq.length:
        raise ValueError(
            f"window end {hi} >= sequence length {seq.length} "
            f"(t={t}, T={half_width}, S={stride})"
        )
    idx = np.arange(lo, hi + 1, stride)
    return Window(
        center_index=t,
        half_width=half_width,
        stride=stride,
        frames=seq.frames[idx],
    )


def valid_centers(length, half_width, stride):
    """Source indices t for which sample_window(t, T, S) is in range."""
    reach = half_width * stride
    return range(reach, length - reach)


def save_sequence(seq, path):
    """Write the bit-exact sequence container (manifest.json + raw floats)."""
    frames = np.ascontiguousarray(seq.frames, dtype=np.float32)
    if not np.isfinite(frames).all():
        raise ValueError("sequence frames contain non-finite values")
    os.makedirs(path, exist_ok=True)
    length, c, h, w = frames.shape
    manifest = {
        "format_version": FORMAT_VERSION,
        "id": seq.id,
        "L": length,
        "C": c,
        "H": h,
        "W": w,
        "fps": seq.fps,
        "label_names": list(seq.label_names),
        "envelope": seq.envelope.to_dict() if seq.envelope else None,
        "seed": seq.seed,
    }
    with open(os.path.join(path, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    with open(os.path.join(path, "frames.f32"), "wb") as fh:
        fh.write(frames.astype("<f4").tobytes())
    if seq.labels is not None:
        with open(os.path.join(path, "labels.f32"), "wb") as fh:
            fh.write(np.ascontiguousarray(seq.labels, dtype="<f4").tobytes())


def load_sequence(path, mmap=False):
    """Inverse of save_sequence; load(save(s)) is bit-exact.

    Raises on version mismatch, payload/manifest disagreement and
    non-finite or out-of-range values.  With mmap=True the frame payload
    is memory-mapped read-only instead of loaded.
    """
    manifest_path = os.path.join(path, "manifest.json")
    with open(manifest_path) as fh:
        manifest = json.load(fh)
    version = manifest.get("format_version")
    if version != FORMAT_VERSION:
        raise ValueError(
            f"unsupported container version {version!r}, expected {FORMAT_VERSION}"
        )
    length, c, h, w = (manifest[k] for k in ("L", "C", "H", "W"))
    frames_path = os.path.join(path, "frames.f32")
    expected = length * c * h * w * 4
    actual = os.path.getsize(frames_path)
    if actual != expected:
        raise ValueError(
            f"frame payload holds {actual} bytes but manifest implies {expected}"
        )
    if mmap:
        frames = np.memmap(frames_path, dtype="<f4", mode="r", shape=(length, c, h, w))
    else:
        frames = np.fromfile(frames_path, dtype="<f4").reshape(length, c, h, w)
        if not np.isfinite(frames).all():
            raise ValueError("frame payload contains non-finite values")
        if frames.min() < 0.0 or frames.max() > 1.0:
            raise ValueError("frame payload contains values outside [0, 1]")
    labels = None
    label_names = tuple(manifest.get("label_names") or ())
    labels_path = os.path.join(path, "labels.f32")
    if os.path.exists(labels_path):
        n_labels = len(label_names)
        expected = length * n_labels * 4
        actual = os.path.getsize(labels_path)
        if actual != expected:
            raise ValueError(
                f"label payload holds {actual} bytes but manifest implies {expected}"
            )
        labels = np.fromfile(labels_path, dtype="<f4").reshape(length, n_labels)
        if not np.isfinite(labels).all():
            raise ValueError("label payload contains non-finite values")
    envelope = manifest.get("envelope")
    return Sequence(
        id=manifest["id"],
        frames=frames,
        fps=manifest["fps"],
        labels=labels,
        label_names=label_names,
        envelope=EnvelopeSpec.from_dict(envelope) if envelope else None,
        seed=manifest.get("seed"),
    )
