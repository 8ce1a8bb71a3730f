"""Scores, pairwise margins, the hinge rank loss and ranking accuracy.

A dynamic representation (DR) is a frame-shaped kernel d whose inner
products with the frames of a window rank them by temporal distance
from the center: within each side of the window, the frame nearer the
center must score higher.  Pairs are expressed as offsets relative to
the center, so (a, b) with |a| < |b| and a, b on one side; pairs with
a = 0 are included by default (`include_center=False` restricts to
strictly one-sided pairs).
"""

from dataclasses import dataclass

import numpy as np

from . import numerics

ORIGINS = ("oracle", "network", "rank-pooling")


@dataclass(frozen=True)
class DynRep:
    """Frame-shaped scoring kernel; values are unconstrained reals."""

    d: np.ndarray  # (C, H, W)
    origin: str
    level: int  # window half-width T it was trained/solved for

    def __post_init__(self):
        if self.origin not in ORIGINS:
            raise ValueError(f"unknown origin {self.origin!r}; expected one of {ORIGINS}")
        if not np.isfinite(self.d).all():
            raise ValueError("DynRep values must be finite")


@dataclass(frozen=True)
class Pair:
    """Offset pair relative to the center: a is nearer, b is farther."""

    a: int
    b: int

    @property
    def side(self):
        return "past" if self.b < 0 else "future"


@dataclass
class RankLossReport:
    loss: float
    margins: dict  # (a, b) -> delta
    violated: list  # pairs with theta - delta > 0
    grad_d: np.ndarray
    gamma: float
    eps: float
    theta: float


def enumerate_pairs(half_width, include_center=True):
    """All ordered offset pairs of one window side, nearer frame first.

    With the center included there are T(T+1) pairs, T(T+1)/2 per side;
    excluding pairs with a = 0 leaves T(T-1).
    """
    if half_width < 0:
        raise ValueError(f"half_width must be >= 0, got {half_width}")
    t = half_width
    pairs = []
    for b in range(-t, 0):
        for a in range(b + 1, 1):
            if a == 0 and not include_center:
                continue
            pairs.append(Pair(a, b))
    for a in range(0, t):
        if a == 0 and not include_center:
            continue
        for b in range(a + 1, t + 1):
            pairs.append(Pair(a, b))
    return pairs


def _validate_pair(a, b, half_width, include_center):
    t = half_width
    if not (-t <= a <= t and -t <= b <= t):
        raise ValueError(f"pair ({a}, {b}) outside window offsets [-{t}, {t}]")
    if abs(a) >= abs(b):
        raise ValueError(f"pair ({a}, {b}) violates |a - t| < |b - t|")
    if a == 0:
        if not include_center:
            raise ValueError(
                f"pair ({a}, {b}) includes the center frame, excluded by include_center=False"
            )
        return
    if a * b <= 0:
        raise ValueError(
            f"pair ({a}, {b}) violates (a - t)(b - t) > 0: frames lie on opposite sides"
        )


def score(d, v):
    """Frobenius inner product between the kernel and a frame."""
    arr = d.d if isinstance(d, DynRep) else d
    return numerics.frobenius_inner(arr, v)


def window_scores(d, window):
    arr = d.d if isinstance(d, DynRep) else d
    return [numerics.frobenius_inner(arr, frame) for frame in window.frames]


def delta(d, window, a, b, include_center=True):
    """Score difference for a valid pair: score(V_a) - score(V_b)."""
    _validate_pair(a, b, window.half_width, include_center)
    t = window.half_width
    arr = d.d if isinstance(d, DynRep) else d
    return numerics.frobenius_inner(arr, window.frames[t + a]) - numerics.frobenius_inner(
        arr, window.frames[t + b]
    )


def center_frames(window):
    """Copy of the window with each frame shifted to zero mean.

    Optional conditioning step; it changes every margin by a d-dependent
    constant per pair, never the pair structure.
    """
    from .seqgen import Window

    frames = window.frames.astype(np.float64)
    means = frames.reshape(frames.shape[0], -1).mean(axis=1)
    centered = (frames - means[:, None, None, None]).astype(window.frames.dtype)
    return Window(
        center_index=window.center_index,
        half_width=window.half_width,
        stride=window.stride,
        frames=centered,
    )


def rank_loss(d, window, gamma, eps, theta, include_center=True, max_loss=None):
    """Hinge rank loss and its exact gradient with respect to d.

    loss = gamma*||d||^2 - eps + sum over pairs of max(0, theta - delta).
    The hinge is active (pair counted as violated, gradient contribution
    -(V_a - V_b)) exactly where theta - delta > 0.  `max_loss` optionally
    ceils the reported loss; where the ceiling binds the gradient is 0.
    """
    if gamma < 0 or theta < 0:
        raise ValueError(f"gamma and theta must be >= 0, got gamma={gamma}, theta={theta}")
    arr = np.asarray(d.d if isinstance(d, DynRep) else d)
    if not np.isfinite(arr).all():
        raise ValueError("rank_loss: kernel contains non-finite values")
    t = window.half_width
    scores = window_scores(arr, window)
    pairs = enumerate_pairs(t, include_center)
    margins = {}
    violated = []
    hinge_sum = 0.0
    coef = np.zeros(2 * t + 1, dtype=np.float64)
    for p in pairs:
        m = scores[t + p.a] - scores[t + p.b]
        margins[(p.a, p.b)] = m
        gap = theta - m
        if gap > 0.0:
            hinge_sum += gap
            violated.append(p)
            coef[t + p.a] -= 1.0
            coef[t + p.b] += 1.0
    reg = gamma * numerics.frobenius_inner(arr, arr)
    loss = reg - eps + hinge_sum
    if not np.isfinite(loss):
        raise ValueError("rank_loss: non-finite loss")
    clamped = max_loss is not None and loss > max_loss
    if clamped:
        loss = float(max_loss)
    grad = (2.0 * gamma) * arr.astype(np.float64)
    if not clamped:
        for k in range(2 * t + 1):
            if coef[k] != 0.0:
                grad += coef[k] * window.frames[k].astype(np.float64)
    else:
        grad[:] = 0.0
    return RankLossReport(
        loss=float(loss),
        margins=margins,
        violated=violated,
        grad_d=grad.astype(arr.dtype),
        gamma=gamma,
        eps=eps,
        theta=theta,
    )


def ranking_accuracy(d, window, include_center=True):
    """Fraction of pairs with a strictly positive margin; ties count as wrong."""
    t = window.half_width
    pairs = enumerate_pairs(t, include_center)
    if not pairs:
        raise ValueError(f"no pairs to rank for half_width {t}")
    scores = window_scores(d, window)
    correct = sum(1 for p in pairs if scores[t + p.a] - scores[t + p.b] > 0.0)
    return correct / len(pairs)


def default_margin(frames, fraction=0.01):
    """Data-scaled hinge margin: fraction of the mean frame Frobenius norm."""
    norms = [np.sqrt(numerics.frobenius_inner(f, f)) for f in frames]
    if not norms:
        raise ValueError("default_margin needs at least one frame")
    return fraction * float(np.mean(norms))
