"""Per-window direct solvers and baselines.

`solve_window` fits a kernel to a window whose frames are known, by
backtracked gradient descent until every pair margin of the rank loss
reaches its target; it plays the role of a test-time upper bound for
any method that must infer the kernel from the center frame alone.
`rank_pool` produces the closed-form forward/backward dynamic-image
baseline, and `build_target_store` materializes (center frame, target
kernel) pairs for reconstruction-loss training.
"""

import json
import os
from dataclasses import dataclass

import numpy as np

from . import rankcore, seqgen

TARGET_STORE_VERSION = 1


@dataclass(frozen=True)
class SolveConfig:
    max_steps: int = 500
    step_size: float = 1e-2
    gamma: float = 1e-3
    eps: float = 0.0
    theta: float | None = None  # None: margin_fraction of the mean frame norm
    margin_fraction: float = 1e-3
    init: str = "zeros"  # or "rankpool"
    include_center: bool = True
    min_step: float = 1e-12
    descent: str = "squared-hinge"  # or "hinge"

    def __post_init__(self):
        if self.step_size <= 0:
            raise ValueError(f"step_size must be > 0, got {self.step_size}")
        if self.max_steps < 1:
            raise ValueError(f"max_steps must be >= 1, got {self.max_steps}")
        if self.init not in ("zeros", "rankpool"):
            raise ValueError(f"init must be 'zeros' or 'rankpool', got {self.init!r}")
        if self.descent not in ("squared-hinge", "hinge"):
            raise ValueError(
                f"descent must be 'squared-hinge' or 'hinge', got {self.descent!r}"
            )


def resolve_theta(cfg, window):
    if cfg.theta is not None:
        return cfg.theta
    return rankcore.default_margin(window.frames, cfg.margin_fraction)


def _descent_loss_grad(d, frames, pairs, half_width, gamma, eps, theta, squared):
    """Objective value and gradient for the solver's descent loop.

    `squared` uses the squared hinge, which is differentiable at the
    kink; the plain hinge subgradient is kept as an option but jams at
    crowded-margin corners (a subgradient step need not descend there).
    """
    t = half_width
    scores = [float(np.dot(d.ravel(), f.ravel())) for f in frames]
    loss = gamma * float(np.dot(d.ravel(), d.ravel())) - eps
    coef = np.zeros(2 * t + 1)
    n_active = 0
    for p in pairs:
        gap = theta - (scores[t + p.a] - scores[t + p.b])
        if gap > 0.0:
            n_active += 1
            if squared:
                loss += gap * gap
                coef[t + p.a] -= 2.0 * gap
                coef[t + p.b] += 2.0 * gap
            else:
                loss += gap
                coef[t + p.a] -= 1.0
                coef[t + p.b] += 1.0
    grad = (2.0 * gamma) * d
    for k in range(2 * t + 1):
        if coef[k] != 0.0:
            grad = grad + coef[k] * frames[k]
    # floating cancellation floor: coefficient sums that cancel in exact
    # arithmetic (constant windows) leave noise of this order
    noise = 1e-12 * float(np.abs(coef).sum()) * float(np.max(np.abs(frames)))
    return loss, grad, n_active, noise


def solve_window(window, cfg=SolveConfig()):
    """Per-window kernel from backtracked gradient descent, plus its trace.

    Stops when every margin of the exact rank loss reaches theta, or
    after max_steps.  The descent objective defaults to the squared
    hinge (same feasible target, differentiable, so backtracked descent
    cannot jam at hinge corners); the returned trace lists that
    objective's values and is monotone non-increasing.  All arithmetic
    runs in float64 regardless of the frame dtype.
    """
    if window.half_width < 1:
        raise ValueError(f"solver needs half_width >= 1, got {window.half_width}")
    theta = resolve_theta(cfg, window)
    frames = window.frames.astype(np.float64)
    pairs = rankcore.enumerate_pairs(window.half_width, cfg.include_center)
    squared = cfg.descent == "squared-hinge"
    if cfg.init == "zeros":
        d = np.zeros(frames.shape[1:])
    else:
        d = rank_pool(frames, "forward").d
    loss, grad, n_active, noise = _descent_loss_grad(
        d, frames, pairs, window.half_width, cfg.gamma, cfg.eps, theta, squared
    )
    if not np.isfinite(loss):
        raise RuntimeError("non-finite loss at step 0")
    trace = [loss]
    lr = cfg.step_size
    for step in range(cfg.max_steps):
        if n_active == 0:
            break
        if float(np.max(np.abs(grad))) <= noise:
            break  # active pairs but zero gradient: stationary, unseparable
        stuck = False
        while True:
            d_new = d - lr * grad
            new = _descent_loss_grad(
                d_new, frames, pairs, window.half_width, cfg.gamma, cfg.eps, theta, squared
            )
            if not np.isfinite(new[0]):
                raise RuntimeError(f"non-finite loss at step {step}")
            if new[0] <= loss:
                break
            lr *= 0.5
            if lr < cfg.min_step:
                stuck = True
                break
        if stuck:
            break
        d, (loss, grad, n_active, noise) = d_new, new
        trace.append(loss)
        lr = min(lr * 2.0, 1e4 * cfg.step_size)
    return rankcore.DynRep(d=d, origin="oracle", level=window.half_width), trace


def rank_pool(frames, direction="forward"):
    """Approximate rank pooling: d = sum_r (2r - N - 1) V_r for r = 1..N.

    `backward` negates the coefficients, which equals pooling the
    time-reversed frames; the two results are exact negations.
    """
    frames = np.asarray(frames)
    n = frames.shape[0]
    if n < 2:
        raise ValueError(f"rank_pool needs at least 2 frames, got {n}")
    if direction not in ("forward", "backward"):
        raise ValueError(f"direction must be 'forward' or 'backward', got {direction!r}")
    sign = 1.0 if direction == "forward" else -1.0
    acc = np.zeros(frames.shape[1:], dtype=np.float64)
    for r in range(1, n + 1):
        acc += (sign * (2 * r - n - 1)) * frames[r - 1].astype(np.float64)
    return rankcore.DynRep(
        d=acc.astype(frames.dtype), origin="rank-pooling", level=(n - 1) // 2
    )


def ascending_accuracy(d, frames):
    """Fraction of ordered frame pairs (i < j) scored strictly ascending."""
    scores = [rankcore.score(d, f) for f in frames]
    n = len(scores)
    if n < 2:
        raise ValueError(f"need at least 2 frames, got {n}")
    correct = total = 0
    for i in range(n):
        for j in range(i + 1, n):
            total += 1
            if scores[i] < scores[j]:
                correct += 1
    return correct / total


def target_filename(seq_id, t):
    return f"dr_{seq_id}_{t}.f32"


def build_target_store(sequences, out_dir, half_width, stride,
                       method="rankpool", direction="forward", solve_cfg=None):
    """Materialize per-center target kernels for reconstruction training.

    Writes one raw float32 file per valid window center plus index.json.
    Targets come either from closed-form rank pooling over the window
    (`rankpool`, with the given direction) or from the per-window solver
    (`solve`).  Regeneration under identical inputs is bit-identical.
    """
    sequences = list(sequences)
    if not sequences:
        raise ValueError("empty split: no sequences to build targets from")
    if method not in ("rankpool", "solve"):
        raise ValueError(f"method must be 'rankpool' or 'solve', got {method!r}")
    os.makedirs(out_dir, exist_ok=True)
    entries = []
    for seq in sequences:
        for t in seqgen.valid_centers(seq.length, half_width, stride):
            window = seqgen.sample_window(seq, t, half_width, stride)
            if method == "rankpool":
                target = rank_pool(window.frames, direction)
            else:
                target, _ = solve_window(window, solve_cfg or SolveConfig())
            fname = target_filename(seq.id, t)
            with open(os.path.join(out_dir, fname), "wb") as fh:
                fh.write(np.ascontiguousarray(target.d, dtype="<f4").tobytes())
            entries.append({"seq": seq.id, "t": t, "file": fname})
    index = {
        "format_version": TARGET_STORE_VERSION,
        "T": half_width,
        "S": stride,
        "method": method,
        "direction": direction if method == "rankpool" else None,
        "frame_shape": list(sequences[0].frame_shape),
        "entries": entries,
    }
    with open(os.path.join(out_dir, "index.json"), "w") as fh:
        json.dump(index, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return index


class TargetStore:
    """Read access to a target-pair directory written by build_target_store."""

    def __init__(self, path):
        self.path = path
        with open(os.path.join(path, "index.json")) as fh:
            self.index = json.load(fh)
        version = self.index.get("format_version")
        if version != TARGET_STORE_VERSION:
            raise ValueError(
                f"unsupported target store version {version!r}, expected {TARGET_STORE_VERSION}"
            )
        self.frame_shape = tuple(self.index["frame_shape"])
        self.entries = self.index["entries"]

    def __len__(self):
        return len(self.entries)

    def load(self, i):
        """(seq_id, t, target kernel) for entry i."""
        entry = self.entries[i]
        raw = np.fromfile(os.path.join(self.path, entry["file"]), dtype="<f4")
        expected = int(np.prod(self.frame_shape))
        if raw.size != expected:
            raise ValueError(
                f"target {entry['file']} holds {raw.size} values, expected {expected}"
            )
        return entry["seq"], entry["t"], raw.reshape(self.frame_shape)
