"""The learned still-to-kernel map: a small encoder-decoder with skip
connections and hand-written backpropagation.

Training is self-supervised: the network output for a center frame is
scored against the frames of its window by the rank loss, whose kernel
gradient is backpropagated through the network.  No target kernel is
ever constructed on that path.  The degraded baseline trains the same
architecture against precomputed target kernels with a mean-squared
reconstruction objective.
"""

import json
from dataclasses import asdict, dataclass

import numpy as np

from . import numerics, rankcore, seqgen
from .nn import Adam, Conv2d

CHECKPOINT_MAGIC = b"DRNET1"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class ModelSpec:
    """Encoder-decoder geometry; output shape always equals input shape."""

    channels: int = 3
    height: int = 64
    width: int = 64
    depth: int = 3
    widths: tuple = (8, 16, 32)
    skip_connections: bool = True
    relu_slope: float = 0.1

    def __post_init__(self):
        object.__setattr__(self, "widths", tuple(self.widths))
        if self.depth < 1:
            raise ValueError(f"depth must be >= 1, got {self.depth}")
        if len(self.widths) != self.depth:
            raise ValueError(
                f"widths {self.widths} must list one channel count per level (depth {self.depth})"
            )
        factor = 2 ** (self.depth - 1)
        if self.height % factor or self.width % factor:
            raise ValueError(
                f"spatial extents {self.height}x{self.width} must be divisible by {factor}"
            )

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**{**d, "widths": tuple(d["widths"])})


class DrNet:
    """Still frame (C,H,W) -> kernel (C,H,W).

    The final layer is zero-initialized so an untrained model outputs
    the zero kernel, the rank loss's neutral point.  forward() with the
    default arguments is pure; pass a dict as `cache` to record the
    activations that backward() consumes.
    """

    def __init__(self, spec, seed=0, dtype=np.float32, level=0):
        self.spec = spec
        self.seed = seed
        self.dtype = np.dtype(dtype)
        self.level = level
        w = spec.widths
        self.enc = []
        for i in range(spec.depth):
            cin = spec.channels if i == 0 else w[i - 1]
            self.enc.append(Conv2d(cin, w[i], rng=numerics.child_rng(seed, 0, i), dtype=dtype))
        self.dec = []
        for j in range(spec.depth - 1):
            cin = w[j + 1] + (w[j] if spec.skip_connections else 0)
            self.dec.append(Conv2d(cin, w[j], rng=numerics.child_rng(seed, 1, j), dtype=dtype))
        self.head = Conv2d(w[0], spec.channels, zero_init=True, dtype=dtype)

    def named_layers(self):
        layers = [(f"enc{i}", conv) for i, conv in enumerate(self.enc)]
        layers += [(f"dec{j}", conv) for j, conv in enumerate(self.dec)]
        layers.append(("head", self.head))
        return layers

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

    def _check_input(self, x):
        expected = (self.spec.channels, self.spec.height, self.spec.width)
        if tuple(x.shape) != expected:
            raise ValueError(f"input shape {tuple(x.shape)} does not match ModelSpec {expected}")

    def forward(self, x, cache=None):
        self._check_input(x)
        x = np.ascontiguousarray(x, dtype=self.dtype)
        slope = self.spec.relu_slope
        record = cache is not None
        a = x
        skips = []
        for i, conv in enumerate(self.enc):
            pre = conv.forward(a)
            if record:
                cache[f"enc{i}_in"], cache[f"enc{i}_pre"] = a, pre
            act = numerics.leaky_relu_forward(pre, slope)
            if i < self.spec.depth - 1:
                skips.append(act)
                a = numerics.avgpool2_forward(act)
            else:
                a = act
        for j in reversed(range(self.spec.depth - 1)):
            up = numerics.upsample2_forward(a)
            comb = np.concatenate([skips[j], up]) if self.spec.skip_connections else up
            pre = self.dec[j].forward(comb)
            if record:
                cache[f"dec{j}_in"], cache[f"dec{j}_pre"] = comb, pre
            a = numerics.leaky_relu_forward(pre, slope)
        if record:
            cache["head_in"] = a
        return self.head.forward(a)

    def backward(self, grad_d, cache):
        """Accumulate parameter gradients for a recorded forward pass."""
        slope = self.spec.relu_slope
        depth = self.spec.depth
        grad_d = np.ascontiguousarray(grad_d, dtype=self.dtype)
        g = self.head.backward(cache["head_in"], grad_d)
        skip_grads = [None] * (depth - 1)
        for j in range(depth - 1):
            g = numerics.leaky_relu_backward(cache[f"dec{j}_pre"], g, slope)
            g = self.dec[j].backward(cache[f"dec{j}_in"], g)
            if self.spec.skip_connections:
                skip_ch = self.spec.widths[j]
                skip_grads[j] = g[:skip_ch]
                g = g[skip_ch:]
            g = numerics.upsample2_backward(g)
        for i in reversed(range(depth)):
            if i < depth - 1:
                g = numerics.avgpool2_backward(g)
                if self.spec.skip_connections:
                    g = g + skip_grads[i]
            g = numerics.leaky_relu_backward(cache[f"enc{i}_pre"], g, slope)
            g = self.enc[i].backward(cache[f"enc{i}_in"], g)
        return g

    def infer(self, x):
        """Forward pass wrapped as a DynRep tagged with this model's level."""
        return rankcore.DynRep(d=self.forward(x), origin="network", level=self.level)


def forward(model, frame):
    """Deterministic kernel for a still frame, as a network-origin DynRep."""
    return model.infer(frame)


def pack_params(model):
    return np.concatenate([p.ravel() for p, _ in model.param_pairs()])


def pack_grads(model):
    return np.concatenate([g.ravel() for _, g in model.param_pairs()])


def set_params(model, vector):
    vector = np.asarray(vector)
    offset = 0
    for p, _ in model.param_pairs():
        p[...] = vector[offset : offset + p.size].reshape(p.shape).astype(p.dtype)
        offset += p.size
    if offset != vector.size:
        raise ValueError(f"parameter vector holds {vector.size} values, expected {offset}")


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(model, path, train_config=None, step_count=0, optimizer=None, extra=None):
    """Write magic + JSON header + little-endian float32 parameter payload.

    Only float32 models are checkpointable; the container stores f32.
    """
    if model.dtype != np.dtype(np.float32):
        raise ValueError(f"checkpoints store float32 parameters; model uses {model.dtype}")
    blocks = []
    for name, layer in model.named_layers():
        blocks.append({"name": f"{name}.w", "shape": list(layer.w.shape)})
        blocks.append({"name": f"{name}.b", "shape": list(layer.b.shape)})
    header = {
        "format_version": CHECKPOINT_VERSION,
        "model_spec": model.spec.to_dict(),
        "level": model.level,
        "seed": model.seed,
        "train_config": train_config,
        "step_count": step_count,
        "optimizer_state": optimizer is not None,
        "adam_t": optimizer.t if optimizer is not None else None,
        "blocks": blocks,
        "extra": extra,
    }
    payload = [p.astype("<f4").tobytes() for p, _ in model.param_pairs()]
    if optimizer is not None:
        payload += [m.astype("<f4").tobytes() for m in optimizer.m]
        payload += [v.astype("<f4").tobytes() for v in optimizer.v]
    header_bytes = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(len(header_bytes).to_bytes(8, "little"))
        fh.write(header_bytes)
        for chunk in payload:
            fh.write(chunk)


def load_checkpoint(path, expected_spec=None):
    """Rebuild the model (and meta dict) from a checkpoint file.

    Raises on magic/version mismatch, payload size mismatch, and on any
    ModelSpec field differing from expected_spec.
    """
    with open(path, "rb") as fh:
        magic = fh.read(len(CHECKPOINT_MAGIC))
        if magic != CHECKPOINT_MAGIC:
            raise ValueError(f"bad checkpoint magic {magic!r}, expected {CHECKPOINT_MAGIC!r}")
        header_len = int.from_bytes(fh.read(8), "little")
        header = json.loads(fh.read(header_len))
        if header.get("format_version") != CHECKPOINT_VERSION:
            raise ValueError(
                f"unsupported checkpoint version {header.get('format_version')!r}"
            )
        spec = ModelSpec.from_dict(header["model_spec"])
        if expected_spec is not None:
            for key, want in expected_spec.to_dict().items():
                got = getattr(spec, key)
                if got != want:
                    raise ValueError(
                        f"ModelSpec mismatch on field {key!r}: checkpoint has {got!r}, expected {want!r}"
                    )
        model = DrNet(spec, seed=header.get("seed", 0), level=header.get("level", 0))
        n_params = model.parameter_count()
        n_floats = n_params * (3 if header["optimizer_state"] else 1)
        raw = np.frombuffer(fh.read(), dtype="<f4")
        if raw.size != n_floats:
            raise ValueError(
                f"checkpoint payload holds {raw.size} floats, expected {n_floats}"
            )
        set_params(model, raw[:n_params])
        optimizer_state = None
        if header["optimizer_state"]:
            rest = raw[n_params:]
            sizes = [p.size for p, _ in model.param_pairs()]
            shapes = [p.shape for p, _ in model.param_pairs()]
            m, v, off = [], [], 0
            for shape, size in zip(shapes, sizes):
                m.append(rest[off : off + size].reshape(shape).copy())
                off += size
            for shape, size in zip(shapes, sizes):
                v.append(rest[off : off + size].reshape(shape).copy())
                off += size
            optimizer_state = {"m": m, "v": v, "t": header["adam_t"]}
        meta = {
            "train_config": header.get("train_config"),
            "step_count": header.get("step_count", 0),
            "optimizer_state": optimizer_state,
            "extra": header.get("extra"),
        }
        return model, meta


# ---------------------------------------------------------------------------
# training


@dataclass(frozen=True)
class TrainConfig:
    mode: str = "rank-loss"  # or "mse-target"
    half_width: int = 3  # T
    stride: int = 1  # S
    batch_size: int = 8
    learning_rate: float = 1e-3
    betas: tuple = (0.5, 0.9)
    gamma: float = 1e-3
    eps: float = 0.0
    theta: float | None = None  # None: margin_fraction * mean pretrain frame norm
    margin_fraction: float = 0.01
    epochs: int = 3
    seed: int = 0
    windows_per_seq: int | None = None
    include_center: bool = True
    center_frames: bool = False  # per-frame mean removal before scoring
    eval_windows: int = 128
    max_loss: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "betas", tuple(self.betas))
        if self.mode not in ("rank-loss", "mse-target"):
            raise ValueError(f"mode must be 'rank-loss' or 'mse-target', got {self.mode!r}")

    def to_dict(self):
        return asdict(self)


def resolve_theta(cfg, sequences, max_probe=64):
    """Data-scaled hinge margin from mid-sequence frames of the split."""
    if cfg.theta is not None:
        return cfg.theta
    probe = [seq.frames[seq.length // 2] for seq in sequences[:max_probe]]
    return rankcore.default_margin(probe, cfg.margin_fraction)


def _window_candidates(sequences, cfg, epoch):
    rng = numerics.child_rng(cfg.seed, 2, epoch)
    candidates = []
    for si, seq in enumerate(sequences):
        centers = list(seqgen.valid_centers(seq.length, cfg.half_width, cfg.stride))
        if not centers:
            raise ValueError(
                f"sequence {seq.id} too short for T={cfg.half_width}, S={cfg.stride}"
            )
        if cfg.windows_per_seq is not None and cfg.windows_per_seq < len(centers):
            picked = rng.choice(len(centers), size=cfg.windows_per_seq, replace=False)
            centers = [centers[i] for i in sorted(picked)]
        candidates.extend((si, t) for t in centers)
    order = rng.permutation(len(candidates))
    return [candidates[i] for i in order]


def sample_eval_windows(sequences, half_width, stride, count, seed):
    """Deterministic held-out (sequence index, center) evaluation set."""
    rng = numerics.child_rng(seed, 3)
    pool = []
    for si, seq in enumerate(sequences):
        pool.extend((si, t) for t in seqgen.valid_centers(seq.length, half_width, stride))
    if not pool:
        raise ValueError(f"no valid windows for T={half_width}, S={stride}")
    if count < len(pool):
        idx = rng.choice(len(pool), size=count, replace=False)
        pool = [pool[i] for i in sorted(idx)]
    return pool


def heldout_accuracy(model, sequences, half_width, stride, count, seed, center=False):
    """Mean ranking accuracy of model kernels over sampled held-out windows.

    The model always sees the raw center frame; `center` applies the
    per-frame mean removal to the scored window only, mirroring training
    with TrainConfig.center_frames.
    """
    picks = sample_eval_windows(sequences, half_width, stride, count, seed)
    accs = []
    for si, t in picks:
        window = seqgen.sample_window(sequences[si], t, half_width, stride)
        d = model.forward(np.asarray(window.center, dtype=model.dtype))
        if center:
            window = rankcore.center_frames(window)
        accs.append(rankcore.ranking_accuracy(d, window))
    return float(np.mean(accs))


def train(model, sequences, cfg, heldout=None, targets=None, log_path=None):
    """Adam training; returns {"epochs": [...], "theta": float | None}.

    rank-loss mode never touches `targets`: the window frames supervise
    the output directly.  mse-target mode requires a TargetStore and
    matches entries to `sequences` by id.
    """
    sequences = list(sequences)
    if not sequences:
        raise ValueError("empty training split")
    optimizer = Adam(model.param_pairs(), cfg.learning_rate, cfg.betas)
    theta = None
    if cfg.mode == "rank-loss":
        theta = resolve_theta(cfg, sequences)
    else:
        if targets is None:
            raise ValueError(
                "mse-target mode needs a target store; build one with "
                "oracle.build_target_store (CLI: solve-targets) first"
            )
        by_id = {seq.id: seq for seq in sequences}
        missing = [e["seq"] for e in targets.entries if e["seq"] not in by_id]
        if missing:
            raise ValueError(f"target store references unknown sequences: {sorted(set(missing))[:5]}")
    history = []
    log_fh = open(log_path, "w") if log_path else None
    try:
        step = 0
        for epoch in range(cfg.epochs):
            if cfg.mode == "rank-loss":
                items = _window_candidates(sequences, cfg, epoch)
            else:
                rng = numerics.child_rng(cfg.seed, 2, epoch)
                items = [int(i) for i in rng.permutation(len(targets.entries))]
                if cfg.windows_per_seq is not None:
                    items = items[: cfg.windows_per_seq * len(sequences)]
            total_loss = 0.0
            count = 0
            for start in range(0, len(items), cfg.batch_size):
                batch = items[start : start + cfg.batch_size]
                model.zero_grad()
                scale = model.dtype.type(1.0 / len(batch))
                for item in batch:
                    if cfg.mode == "rank-loss":
                        si, t = item
                        window = seqgen.sample_window(
                            sequences[si], t, cfg.half_width, cfg.stride
                        )
                        x = np.asarray(window.center, dtype=model.dtype)
                        if cfg.center_frames:
                            window = rankcore.center_frames(window)
                        cache = {}
                        d = model.forward(x, cache)
                        rep = rankcore.rank_loss(
                            d, window, cfg.gamma, cfg.eps, theta,
                            include_center=cfg.include_center, max_loss=cfg.max_loss,
                        )
                        loss, grad_out = rep.loss, rep.grad_d
                    else:
                        seq_id, t, target = targets.load(item)
                        x = np.asarray(by_id[seq_id].frames[t], dtype=model.dtype)
                        cache = {}
                        y = model.forward(x, cache)
                        diff = y - np.asarray(target, dtype=model.dtype)
                        loss = float(np.mean(diff.astype(np.float64) ** 2))
                        grad_out = (2.0 / diff.size) * diff
                    if not np.isfinite(loss):
                        raise RuntimeError(
                            f"non-finite loss in batch starting at item {start} (epoch {epoch})"
                        )
                    model.backward(grad_out * scale, cache)
                    total_loss += loss
                    count += 1
                optimizer.step()
                step += 1
            entry = {
                "epoch": epoch,
                "mean_loss": total_loss / count,
                "heldout_accuracy": (
                    heldout_accuracy(
                        model, heldout, cfg.half_width, cfg.stride,
                        cfg.eval_windows, cfg.seed, center=cfg.center_frames,
                    )
                    if heldout
                    else None
                ),
                "theta": theta,
            }
            history.append(entry)
            if log_fh:
                log_fh.write(json.dumps(entry, sort_keys=True) + "\n")
                log_fh.flush()
    finally:
        if log_fh:
            log_fh.close()
    return {"epochs": history, "theta": theta, "steps": step, "optimizer": optimizer}
