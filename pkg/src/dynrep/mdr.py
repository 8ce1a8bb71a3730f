"""Multi-level representation assembly, the downstream regressor, and
the evaluation metrics (ICC(3,1), PCC, MSE).

A stack concatenates, channelwise, the input frame (level 0) with the
kernels produced by per-level models, in ascending level order.  Kernel
channels are z-scored with statistics estimated on the pretraining
split, since kernel scale is arbitrary; the statistics travel with the
regressor checkpoint.
"""

import json
from dataclasses import asdict, dataclass

import numpy as np

from . import numerics
from .nn import Adam, Conv2d, Linear

REGRESSOR_MAGIC = b"DRREG1"
REGRESSOR_VERSION = 1


# ---------------------------------------------------------------------------
# stacks


def check_levels(levels):
    levels = [int(t) for t in levels]
    if not levels:
        raise ValueError("levels must be non-empty")
    if any(b <= a for a, b in zip(levels, levels[1:])):
        raise ValueError(f"levels must be strictly ascending, got {levels}")
    if any(t < 0 for t in levels):
        raise ValueError(f"levels must be >= 0, got {levels}")
    return levels


def compute_level_stats(models, frames, levels):
    """Per-channel mean/std of each non-zero level's kernels over probe frames."""
    levels = check_levels(levels)
    stats = {}
    for t in levels:
        if t == 0:
            continue
        if t not in models:
            raise ValueError(f"no model available for level T={t}")
        outs = np.stack([models[t].forward(np.asarray(f, dtype=models[t].dtype)) for f in frames])
        mean = outs.mean(axis=(0, 2, 3), dtype=np.float64)
        std = outs.std(axis=(0, 2, 3), dtype=np.float64)
        stats[t] = (mean, np.maximum(std, 1e-6))
    return stats


def build_stack(frame, models, levels, stats=None):
    """Channel concatenation [level 0 frame?, kernel(T) ...] in ascending T.

    Every non-zero level needs an entry in `models`; `stats` of None
    skips standardization (used before statistics exist).
    """
    levels = check_levels(levels)
    frame = np.asarray(frame)
    parts = []
    for t in levels:
        if t == 0:
            parts.append(frame.astype(np.float32))
            continue
        if t not in models:
            raise ValueError(f"missing checkpoint for level T={t}")
        model = models[t]
        d = model.forward(np.asarray(frame, dtype=model.dtype)).astype(np.float32)
        if stats is not None and t in stats:
            mean, std = stats[t]
            d = ((d - mean[:, None, None]) / std[:, None, None]).astype(np.float32)
        parts.append(d)
    return np.concatenate(parts, axis=0)


# ---------------------------------------------------------------------------
# metrics


def icc_3_1(ratings):
    """Two-way mixed, consistency, single-measure intraclass correlation.

    `ratings` is an (n items, k raters) matrix, typically predictions
    and ground truth as k=2 raters.  Raises when between-item variance
    is zero (the coefficient is undefined there).
    """
    ratings = np.asarray(ratings, dtype=np.float64)
    if ratings.ndim != 2:
        raise ValueError(f"ratings must be 2-D (items x raters), got shape {ratings.shape}")
    n, k = ratings.shape
    if n < 3:
        raise ValueError(f"need at least 3 items, got {n}")
    if k < 2:
        raise ValueError(f"need at least 2 raters, got {k}")
    grand = ratings.mean()
    row_means = ratings.mean(axis=1)
    col_means = ratings.mean(axis=0)
    ss_rows = k * ((row_means - grand) ** 2).sum()
    if ss_rows == 0.0:
        raise ValueError("zero variance across items: ICC undefined")
    resid = ratings - row_means[:, None] - col_means[None, :] + grand
    ss_err = (resid**2).sum()
    bms = ss_rows / (n - 1)
    ems = ss_err / ((n - 1) * (k - 1))
    return float((bms - ems) / (bms + (k - 1) * ems))


def pcc(x, y):
    """Pearson correlation; raises when either argument has zero variance."""
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    if x.shape != y.shape:
        raise ValueError(f"length mismatch: {x.shape} vs {y.shape}")
    if x.size < 2:
        raise ValueError(f"need at least 2 points, got {x.size}")
    xc = x - x.mean()
    yc = y - y.mean()
    denom = np.sqrt((xc**2).sum() * (yc**2).sum())
    if denom == 0.0:
        raise ValueError("zero variance: PCC undefined")
    return float((xc * yc).sum() / denom)


def mse(x, y):
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    if x.shape != y.shape:
        raise ValueError(f"length mismatch: {x.shape} vs {y.shape}")
    return float(((x - y) ** 2).mean())


@dataclass
class MetricsReport:
    per_target: dict  # name -> {"icc": .., "pcc": .., "mse": ..}

    @property
    def aggregates(self):
        names = list(self.per_target)
        return {
            key: float(np.mean([self.per_target[n][key] for n in names]))
            for key in ("icc", "pcc", "mse")
        }

    def to_dict(self, config=None):
        return {
            "config": config,
            "per_target": self.per_target,
            "aggregates": self.aggregates,
        }


def evaluate_predictions(predictions, labels, target_names):
    """Per-target ICC(3,1)/PCC/MSE of an (n, targets) prediction matrix."""
    predictions = np.asarray(predictions, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    if predictions.shape != labels.shape:
        raise ValueError(
            f"shape mismatch: predictions {predictions.shape} vs labels {labels.shape}"
        )
    per_target = {}
    for j, name in enumerate(target_names):
        pair = np.stack([predictions[:, j], labels[:, j]], axis=1)
        per_target[name] = {
            "icc": icc_3_1(pair),
            "pcc": pcc(predictions[:, j], labels[:, j]),
            "mse": mse(predictions[:, j], labels[:, j]),
        }
    return MetricsReport(per_target)


# ---------------------------------------------------------------------------
# downstream regressor


@dataclass(frozen=True)
class RegressorConfig:
    widths: tuple = (16, 32)
    learning_rate: float = 1e-3
    betas: tuple = (0.9, 0.999)
    epochs: int = 6
    batch_size: int = 16
    seed: int = 0
    relu_slope: float = 0.1

    def __post_init__(self):
        object.__setattr__(self, "widths", tuple(self.widths))
        object.__setattr__(self, "betas", tuple(self.betas))

    def to_dict(self):
        return asdict(self)


class Regressor:
    """Two conv levels, global average pooling, one linear head row per target."""

    def __init__(self, in_channels, n_targets, cfg, dtype=np.float32):
        self.in_channels = in_channels
        self.n_targets = n_targets
        self.cfg = cfg
        self.dtype = np.dtype(dtype)
        w1, w2 = cfg.widths
        self.conv1 = Conv2d(in_channels, w1, rng=numerics.child_rng(cfg.seed, 10), dtype=dtype)
        self.conv2 = Conv2d(w1, w2, rng=numerics.child_rng(cfg.seed, 11), dtype=dtype)
        self.heads = Linear(w2, n_targets, rng=numerics.child_rng(cfg.seed, 12), dtype=dtype)
        self.levels = None
        self.level_stats = None
        self.target_names = None

    def named_layers(self):
        return [("conv1", self.conv1), ("conv2", self.conv2), ("heads", self.heads)]

    def param_pairs(self):
        pairs = []
        for _, layer in self.named_layers():
            pairs.extend(layer.param_pairs())
        return pairs

    def zero_grad(self):
        for _, layer in self.named_layers():
            layer.zero_grad()

    def parameter_count(self):
        return sum(p.size for p, _ in self.param_pairs())

    def forward(self, stack, cache=None):
        if stack.shape[0] != self.in_channels:
            raise ValueError(
                f"stack has {stack.shape[0]} channels, regressor expects {self.in_channels}"
            )
        x = np.ascontiguousarray(stack, dtype=self.dtype)
        slope = self.cfg.relu_slope
        record = cache is not None
        pre1 = self.conv1.forward(x)
        act1 = numerics.leaky_relu_forward(pre1, slope)
        pooled = numerics.avgpool2_forward(act1)
        pre2 = self.conv2.forward(pooled)
        act2 = numerics.leaky_relu_forward(pre2, slope)
        feat = act2.mean(axis=(1, 2))
        if record:
            cache.update(x=x, pre1=pre1, pooled=pooled, pre2=pre2, act2_shape=act2.shape)
        return self.heads.forward(feat.astype(self.dtype))

    def backward(self, grad_out, cache):
        slope = self.cfg.relu_slope
        _, h2, w2 = cache["act2_shape"]
        act2 = numerics.leaky_relu_forward(cache["pre2"], slope)
        feat = act2.mean(axis=(1, 2)).astype(self.dtype)
        g_feat = self.heads.backward(feat, np.asarray(grad_out, dtype=self.dtype))
        g_act2 = np.broadcast_to(
            (g_feat / self.dtype.type(h2 * w2))[:, None, None], cache["act2_shape"]
        ).astype(self.dtype)
        g = numerics.leaky_relu_backward(cache["pre2"], g_act2, slope)
        g = self.conv2.backward(cache["pooled"], g)
        g = numerics.avgpool2_backward(g)
        g = numerics.leaky_relu_backward(cache["pre1"], g, slope)
        return self.conv1.backward(cache["x"], g)


def train_regressor(stacks, labels, cfg, target_names=None, level_stats=None, levels=None):
    """Adam/MSE training of the small regressor; deterministic under seed.

    Returns (regressor, history) where history has per-epoch mean MSE.
    """
    stacks = np.asarray(stacks)
    labels = np.asarray(labels, dtype=np.float32)
    if stacks.ndim != 4:
        raise ValueError(f"stacks must be (n, C, H, W), got shape {stacks.shape}")
    if labels.ndim != 2 or labels.shape[0] != stacks.shape[0]:
        raise ValueError(
            f"labels shape {labels.shape} does not match {stacks.shape[0]} stacks"
        )
    if not np.isfinite(labels).all():
        raise ValueError("labels contain non-finite values")
    reg = Regressor(stacks.shape[1], labels.shape[1], cfg)
    reg.levels = list(levels) if levels is not None else None
    reg.level_stats = level_stats
    reg.target_names = list(target_names) if target_names else [
        f"target{j}" for j in range(labels.shape[1])
    ]
    optimizer = Adam(reg.param_pairs(), cfg.learning_rate, cfg.betas)
    history = []
    n = stacks.shape[0]
    for epoch in range(cfg.epochs):
        order = numerics.child_rng(cfg.seed, 20, epoch).permutation(n)
        total = 0.0
        for start in range(0, n, cfg.batch_size):
            batch = order[start : start + cfg.batch_size]
            reg.zero_grad()
            scale = 1.0 / len(batch)
            for i in batch:
                cache = {}
                pred = reg.forward(stacks[i], cache)
                diff = pred.astype(np.float64) - labels[i]
                loss = float((diff**2).mean())
                total += loss
                grad = (2.0 / diff.size) * diff * scale
                reg.backward(grad.astype(np.float32), cache)
            optimizer.step()
        history.append({"epoch": epoch, "mean_mse": total / n})
    return reg, history


def predict(reg, stacks):
    return np.stack([reg.forward(s) for s in np.asarray(stacks)])


# ---------------------------------------------------------------------------
# regressor checkpoints


def save_regressor(reg, path):
    blocks = []
    for name, layer in reg.named_layers():
        blocks.append({"name": f"{name}.w", "shape": list(layer.w.shape)})
        blocks.append({"name": f"{name}.b", "shape": list(layer.b.shape)})
    stats = None
    if getattr(reg, "level_stats", None):
        stats = {
            str(t): {"mean": m.tolist(), "std": s.tolist()}
            for t, (m, s) in reg.level_stats.items()
        }
    header = {
        "format_version": REGRESSOR_VERSION,
        "in_channels": reg.in_channels,
        "n_targets": reg.n_targets,
        "config": reg.cfg.to_dict(),
        "levels": getattr(reg, "levels", None),
        "level_stats": stats,
        "target_names": getattr(reg, "target_names", None),
        "blocks": blocks,
    }
    header_bytes = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(REGRESSOR_MAGIC)
        fh.write(len(header_bytes).to_bytes(8, "little"))
        fh.write(header_bytes)
        for p, _ in reg.param_pairs():
            fh.write(p.astype("<f4").tobytes())


def load_regressor(path):
    with open(path, "rb") as fh:
        magic = fh.read(len(REGRESSOR_MAGIC))
        if magic != REGRESSOR_MAGIC:
            raise ValueError(f"bad regressor magic {magic!r}")
        header_len = int.from_bytes(fh.read(8), "little")
        header = json.loads(fh.read(header_len))
        if header.get("format_version") != REGRESSOR_VERSION:
            raise ValueError(f"unsupported regressor version {header.get('format_version')!r}")
        cfg = RegressorConfig(**header["config"])
        reg = Regressor(header["in_channels"], header["n_targets"], cfg)
        raw = np.frombuffer(fh.read(), dtype="<f4")
        expected = reg.parameter_count()
        if raw.size != expected:
            raise ValueError(f"regressor payload holds {raw.size} floats, expected {expected}")
        offset = 0
        for p, _ in reg.param_pairs():
            p[...] = raw[offset : offset + p.size].reshape(p.shape)
            offset += p.size
        reg.levels = header.get("levels")
        reg.target_names = header.get("target_names")
        stats = header.get("level_stats")
        reg.level_stats = (
            {
                int(t): (np.asarray(d["mean"]), np.asarray(d["std"]))
                for t, d in stats.items()
            }
            if stats
            else None
        )
        return reg
