"""Reproducible experiment driver.

Every command reads one declarative JSON config (defaults are merged in
and echoed to the run manifest), writes its artifacts under --out, and
is byte-identical under reruns with the same config and seed; wall
clock appears only in the run manifest.  Errors leave a machine-readable
JSON object on stderr and a nonzero exit code.  DYNREP_THREADS controls
the worker count; outputs do not depend on it.
"""

import argparse
import copy
import datetime
import hashlib
import json
import multiprocessing
import os
import sys

import numpy as np

import dynrep

from . import drnet, mdr, numerics, oracle, rankcore, seqgen

DEFAULT_CONFIG = {
    "dataset": {
        "n_pretrain": 200,
        "n_train": 50,
        "n_test": 50,
        "length": 120,
        "channels": 3,
        "height": 64,
        "width": 64,
        "fps": 25.0,
        "seed": 0,
        "envelope_kinds": ["ramp", "raised-cosine", "onset-offset"],
        "amplitude": 4.0,
        "label_noise": 0.0,
    },
    "model": {
        "depth": 3,
        "widths": [8, 16, 32],
        "skip_connections": True,
        "relu_slope": 0.1,
    },
    "dr": {
        "batch_size": 8,
        "learning_rate": 1e-3,
        "betas": [0.5, 0.9],
        "gamma": 1e-3,
        "eps": 0.0,
        "theta": None,
        "margin_fraction": 0.01,
        "epochs": 3,
        "seed": 0,
        "windows_per_seq": 8,
        "include_center": True,
        "center_frames": False,
        "eval_windows": 128,
        "max_loss": None,
    },
    "solver": {
        "max_steps": 500,
        "step_size": 1e-2,
        "gamma": 1e-3,
        "eps": 0.0,
        "theta": None,
        "margin_fraction": 1e-3,
        "init": "zeros",
        "descent": "squared-hinge",
    },
    "targets": {
        "method": "rankpool",
        "direction": "forward",
    },
    "eval": {
        "windows": 200,
        "seed": 0,
    },
    "task": {
        "levels": [0, 3, 5],
        "n_train_frames": 2000,
        "n_test_frames": 1000,
        "label": None,
        "seed": 0,
        "stats_frames": 64,
        "regressor": {
            "widths": [16, 32],
            "learning_rate": 1e-3,
            "betas": [0.9, 0.999],
            "epochs": 6,
            "batch_size": 16,
            "seed": 0,
        },
    },
}


class ConfigError(ValueError):
    pass


def _merge(defaults, user, path=""):
    out = copy.deepcopy(defaults)
    for key, value in user.items():
        here = f"{path}.{key}" if path else key
        if key not in defaults:
            raise ConfigError(f"unknown config field {here!r}")
        if isinstance(defaults[key], dict) and not isinstance(value, dict):
            raise ConfigError(f"config field {here!r} must be an object")
        if isinstance(defaults[key], dict):
            out[key] = _merge(defaults[key], value, here)
        else:
            out[key] = value
    return out


def resolve_config(path=None):
    user = {}
    if path:
        with open(path) as fh:
            user = json.load(fh)
    cfg = _merge(DEFAULT_CONFIG, user)
    for kind in cfg["dataset"]["envelope_kinds"]:
        if kind not in seqgen.ENVELOPE_KINDS:
            raise ConfigError(
                f"invalid envelope kind {kind!r} in field 'dataset.envelope_kinds'; "
                f"expected one of {seqgen.ENVELOPE_KINDS}"
            )
    return cfg


def config_hash(cfg):
    return hashlib.sha256(
        json.dumps(cfg, sort_keys=True, separators=(",", ":")).encode()
    ).hexdigest()


def n_workers():
    try:
        return max(1, int(os.environ.get("DYNREP_THREADS", "1")))
    except ValueError:
        return 1


def pmap(fn, items):
    """Order-preserving map, optionally across worker processes."""
    workers = n_workers()
    if workers == 1 or len(items) < 2:
        return [fn(item) for item in items]
    with multiprocessing.Pool(workers) as pool:
        return pool.map(fn, items)


def write_manifest(out_dir, command, cfg, seed, outputs):
    manifest = {
        "command": command,
        "binary_version": f"dynrep {dynrep.__version__} ({numerics.kernel_backend()} kernels)",
        "config": cfg,
        "config_hash": config_hash(cfg),
        "seed": seed,
        "timestamp": datetime.datetime.now(datetime.timezone.utc).isoformat(),
        "outputs": sorted(outputs),
    }
    path = os.path.join(out_dir, f"{command}_manifest.json")
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def check_disjoint(name_a, ids_a, name_b, ids_b):
    shared = sorted(set(ids_a) & set(ids_b))
    if shared:
        raise RuntimeError(
            f"split leakage: sequences {shared[:5]} appear in both "
            f"{name_a} and {name_b}"
        )


# ---------------------------------------------------------------------------
# dataset handling

SPLITS = ("pretrain", "train", "test")


def _sequence_job(job):
    spec_dict, seed, length, channels, height, width, fps, seq_id, noise, out_dir = job
    seq = seqgen.generate_sequence(
        seqgen.EnvelopeSpec.from_dict(spec_dict), seed, length,
        channels=channels, height=height, width=width, fps=fps,
        seq_id=seq_id, label_noise=noise,
    )
    seqgen.save_sequence(seq, os.path.join(out_dir, seq_id))
    return seq_id


def _draw_envelope(rng, kinds, length, amplitude):
    """Envelope whose support spans the sequence: no long rest regions,
    so nearly every window carries motion."""
    kind = kinds[int(rng.integers(len(kinds)))]
    if kind in ("constant", "ramp"):
        return seqgen.EnvelopeSpec(kind, amplitude=amplitude)
    if kind == "raised-cosine":
        peak = (length - 1) // 2
        dur = min(peak, length - 1 - peak)
        return seqgen.EnvelopeSpec(kind, onset=dur, offset=dur,
                                   amplitude=amplitude, peak_frame=peak)
    peak = int(rng.integers(length // 3, 2 * length // 3))
    return seqgen.EnvelopeSpec(kind, onset=peak, offset=length - 1 - peak,
                               amplitude=amplitude, peak_frame=peak)


def cmd_gen_data(args):
    cfg = resolve_config(args.config)
    ds = cfg["dataset"]
    data_dir = os.path.join(args.out, "dataset")
    if os.path.isdir(data_dir) and os.listdir(data_dir) and not args.force:
        raise RuntimeError(f"output dataset directory {data_dir} is not empty (use --force)")
    os.makedirs(args.out, exist_ok=True)
    splits = {}
    jobs = []
    counts = {"pretrain": ds["n_pretrain"], "train": ds["n_train"], "test": ds["n_test"]}
    for split_idx, split in enumerate(SPLITS):
        split_dir = os.path.join(data_dir, split)
        os.makedirs(split_dir, exist_ok=True)
        ids = []
        for i in range(counts[split]):
            rng = numerics.child_rng(ds["seed"], 100 + split_idx, i)
            spec = _draw_envelope(rng, ds["envelope_kinds"], ds["length"], ds["amplitude"])
            seq_id = f"{split}_{i:04d}"
            seed = int(
                numerics.child_rng(ds["seed"], 200 + split_idx, i).integers(0, 2**62)
            )
            jobs.append((
                spec.to_dict(), seed, ds["length"], ds["channels"], ds["height"],
                ds["width"], ds["fps"], seq_id, ds["label_noise"], split_dir,
            ))
            ids.append(seq_id)
        splits[split] = ids
    pmap(_sequence_job, jobs)
    manifest = {"splits": splits, "dataset": ds}
    with open(os.path.join(data_dir, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    write_manifest(args.out, "gen-data", cfg, ds["seed"], ["dataset"])
    print(f"wrote {sum(len(v) for v in splits.values())} sequences to {data_dir}")


def load_split(data_dir, split):
    with open(os.path.join(data_dir, "manifest.json")) as fh:
        manifest = json.load(fh)
    if split not in manifest["splits"]:
        raise ValueError(f"unknown split {split!r}; dataset has {list(manifest['splits'])}")
    return [
        seqgen.load_sequence(os.path.join(data_dir, split, seq_id), mmap=True)
        for seq_id in manifest["splits"][split]
    ]


def _model_spec(cfg, seqs):
    c, h, w = seqs[0].frame_shape
    m = cfg["model"]
    return drnet.ModelSpec(
        channels=c, height=h, width=w, depth=m["depth"],
        widths=tuple(m["widths"]), skip_connections=m["skip_connections"],
        relu_slope=m["relu_slope"],
    )


# ---------------------------------------------------------------------------
# DR training and targets


def cmd_train_dr(args):
    cfg = resolve_config(args.config)
    mode = {"rank": "rank-loss", "mse": "mse-target"}[args.mode]
    pretrain = load_split(args.data, "pretrain")
    heldout = load_split(args.data, "train")
    spec = _model_spec(cfg, pretrain)
    dr = cfg["dr"]
    train_cfg = drnet.TrainConfig(
        mode=mode, half_width=args.T, stride=args.S,
        batch_size=dr["batch_size"], learning_rate=dr["learning_rate"],
        betas=tuple(dr["betas"]), gamma=dr["gamma"], eps=dr["eps"],
        theta=dr["theta"], margin_fraction=dr["margin_fraction"],
        epochs=dr["epochs"], seed=dr["seed"],
        windows_per_seq=dr["windows_per_seq"], include_center=dr["include_center"],
        center_frames=dr["center_frames"], eval_windows=dr["eval_windows"],
        max_loss=dr["max_loss"],
    )
    targets = None
    if mode == "mse-target":
        if not args.targets:
            raise RuntimeError(
                "train-dr --mode mse needs --targets pointing at a target store; "
                "run solve-targets first"
            )
        targets = oracle.TargetStore(args.targets)
    model = drnet.DrNet(spec, seed=dr["seed"], level=args.T)
    ckpt_dir = os.path.join(args.out, "checkpoints")
    os.makedirs(ckpt_dir, exist_ok=True)
    stem = f"dr_T{args.T}_S{args.S}_{args.mode}"
    log_path = os.path.join(ckpt_dir, f"{stem}_train_log.jsonl")
    result = drnet.train(
        model, pretrain, train_cfg, heldout=heldout, targets=targets, log_path=log_path
    )
    ckpt_path = os.path.join(ckpt_dir, f"{stem}.ckpt")
    drnet.save_checkpoint(
        model, ckpt_path, train_config=train_cfg.to_dict(), step_count=result["steps"],
        extra={
            "train_split_ids": [s.id for s in pretrain],
            "theta": result["theta"],
            "mode": mode,
            "T": args.T,
            "S": args.S,
        },
    )
    write_manifest(args.out, "train-dr", cfg, dr["seed"],
                   [os.path.relpath(p, args.out) for p in (ckpt_path, log_path)])
    last = result["epochs"][-1]
    print(f"wrote {ckpt_path}  (final loss {last['mean_loss']:.6g}, "
          f"heldout accuracy {last['heldout_accuracy']})")


def cmd_solve_targets(args):
    cfg = resolve_config(args.config)
    tg = cfg["targets"]
    method = args.method or tg["method"]
    direction = args.direction or tg["direction"]
    pretrain = load_split(args.data, "pretrain")
    solver = cfg["solver"]
    solve_cfg = oracle.SolveConfig(
        max_steps=solver["max_steps"], step_size=solver["step_size"],
        gamma=solver["gamma"], eps=solver["eps"], theta=solver["theta"],
        margin_fraction=solver["margin_fraction"], init=solver["init"],
        descent=solver["descent"],
    )
    out_dir = os.path.join(args.out, f"targets_T{args.T}_S{args.S}_{method}")
    oracle.build_target_store(
        pretrain, out_dir, args.T, args.S,
        method=method, direction=direction, solve_cfg=solve_cfg,
    )
    write_manifest(args.out, "solve-targets", cfg, cfg["dataset"]["seed"],
                   [os.path.relpath(out_dir, args.out)])
    print(f"wrote target store {out_dir}")


# ---------------------------------------------------------------------------
# ranking evaluation


def _parse_grid(text):
    try:
        values = [int(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise ValueError(f"grid {text!r} must be comma-separated integers") from exc
    if not values:
        raise ValueError("empty grid")
    return values


def _oracle_job(payload):
    frames, t_val, stride, solve_kwargs = payload
    window = seqgen.Window(center_index=t_val * stride, half_width=t_val,
                           stride=stride, frames=frames)
    d, _ = oracle.solve_window(window, oracle.SolveConfig(**solve_kwargs))
    return rankcore.ranking_accuracy(d, window)


def cmd_eval_rank(args):
    cfg = resolve_config(args.config)
    seqs = load_split(args.data, args.split)
    eval_cfg = cfg["eval"]
    methods = []
    model = None
    if args.checkpoint:
        model, meta = drnet.load_checkpoint(args.checkpoint)
        extra = meta.get("extra") or {}
        check_disjoint(
            "DR-training split", extra.get("train_split_ids", []),
            f"evaluation split {args.split!r}", [s.id for s in seqs],
        )
        methods.append(("network", os.path.basename(args.checkpoint)))
    if args.oracle:
        methods.append(("oracle", "oracle"))
    if args.rankpool:
        methods.append(("rankpool", f"rankpool-{args.direction or 'forward'}"))
    if args.random:
        methods.append(("random", "random"))
    if not methods:
        raise RuntimeError("eval-rank needs --checkpoint, --oracle, --rankpool or --random")

    solver = cfg["solver"]
    solve_kwargs = {
        "max_steps": solver["max_steps"], "step_size": solver["step_size"],
        "gamma": solver["gamma"], "eps": solver["eps"], "theta": solver["theta"],
        "margin_fraction": solver["margin_fraction"], "init": solver["init"],
        "descent": solver["descent"],
    }
    rows = []
    for method, label in methods:
        for t_val in _parse_grid(args.T_grid):
            for s_val in _parse_grid(args.S_grid):
                picks = drnet.sample_eval_windows(
                    seqs, t_val, s_val, eval_cfg["windows"], eval_cfg["seed"]
                )
                if method == "oracle":
                    payloads = [
                        (np.asarray(seqgen.sample_window(seqs[si], t, t_val, s_val).frames),
                         t_val, s_val, solve_kwargs)
                        for si, t in picks
                    ]
                    accs = pmap(_oracle_job, payloads)
                else:
                    accs = []
                    for idx, (si, t) in enumerate(picks):
                        window = seqgen.sample_window(seqs[si], t, t_val, s_val)
                        if method == "network":
                            d = model.forward(np.asarray(window.center, model.dtype))
                        elif method == "random":
                            d = numerics.child_rng(
                                eval_cfg["seed"], 40, t_val, s_val, idx
                            ).standard_normal(window.center.shape)
                        else:
                            d = oracle.rank_pool(
                                np.asarray(window.frames), args.direction or "forward"
                            )
                        accs.append(rankcore.ranking_accuracy(d, window))
                accs = np.asarray(accs, dtype=np.float64)
                half = float(1.96 * accs.std(ddof=1) / np.sqrt(len(accs))) if len(accs) > 1 else 0.0
                rows.append({
                    "method": label, "T": t_val, "S": s_val,
                    "accuracy": float(accs.mean()), "n_windows": len(accs),
                    "ci_half_width": half,
                })
    os.makedirs(args.out, exist_ok=True)
    tag = "_".join(label for _, label in methods).replace("/", "-")
    csv_path = os.path.join(args.out, f"eval_rank_{tag}.csv")
    with open(csv_path, "w") as fh:
        fh.write("method,T,S,accuracy,n_windows,ci_half_width\n")
        for row in rows:
            fh.write(
                f"{row['method']},{row['T']},{row['S']},{row['accuracy']!r},"
                f"{row['n_windows']},{row['ci_half_width']!r}\n"
            )
    write_manifest(args.out, "eval-rank", cfg, eval_cfg["seed"],
                   [os.path.relpath(csv_path, args.out)])
    print(f"wrote {csv_path} ({len(rows)} rows)")


# ---------------------------------------------------------------------------
# downstream task


def _load_level_models(levels, checkpoint_paths):
    nonzero = [t for t in levels if t != 0]
    paths = checkpoint_paths or []
    if len(paths) != len(nonzero):
        raise RuntimeError(
            f"levels {levels} need {len(nonzero)} checkpoints (one per non-zero level), "
            f"got {len(paths)}"
        )
    models = {}
    train_ids = set()
    for t, path in zip(nonzero, paths):
        model, meta = drnet.load_checkpoint(path)
        extra = meta.get("extra") or {}
        if extra.get("T") not in (None, t):
            raise RuntimeError(
                f"checkpoint {path} was trained for T={extra.get('T')}, requested level {t}"
            )
        models[t] = model
        train_ids.update(extra.get("train_split_ids", []))
    return models, train_ids


def _sample_frames(seqs, count, seed):
    pool = [(si, t) for si, seq in enumerate(seqs) for t in range(seq.length)]
    rng = numerics.child_rng(seed, 30)
    if count < len(pool):
        idx = rng.choice(len(pool), size=count, replace=False)
        pool = [pool[i] for i in sorted(idx)]
    return pool


def _label_columns(seqs, task_cfg):
    names = list(seqs[0].label_names)
    if task_cfg["label"] is None:
        return names, list(range(len(names)))
    if task_cfg["label"] not in names:
        raise ValueError(f"unknown label {task_cfg['label']!r}; dataset has {names}")
    return [task_cfg["label"]], [names.index(task_cfg["label"])]


def _build_stacks(seqs, picks, models, levels, stats):
    stacks = []
    for si, t in picks:
        frame = np.asarray(seqs[si].frames[t])
        stacks.append(mdr.build_stack(frame, models, levels, stats))
    return np.stack(stacks)


def cmd_train_task(args):
    cfg = resolve_config(args.config)
    task = cfg["task"]
    levels = mdr.check_levels(_parse_grid(args.levels))
    seqs = load_split(args.data, args.split)
    models, dr_train_ids = _load_level_models(levels, args.checkpoints)
    check_disjoint("DR-training split", dr_train_ids,
                   f"task split {args.split!r}", [s.id for s in seqs])
    stats = None
    if any(t != 0 for t in levels):
        pretrain = load_split(args.data, "pretrain")
        probe_picks = _sample_frames(pretrain, task["stats_frames"], task["seed"])
        probe = [np.asarray(pretrain[si].frames[t]) for si, t in probe_picks]
        stats = mdr.compute_level_stats(models, probe, levels)
    picks = _sample_frames(seqs, task["n_train_frames"], task["seed"])
    names, cols = _label_columns(seqs, task)
    stacks = _build_stacks(seqs, picks, models, levels, stats)
    labels = np.stack([np.asarray(seqs[si].labels[t])[cols] for si, t in picks])
    reg_cfg = mdr.RegressorConfig(
        widths=tuple(task["regressor"]["widths"]),
        learning_rate=task["regressor"]["learning_rate"],
        betas=tuple(task["regressor"]["betas"]),
        epochs=task["regressor"]["epochs"],
        batch_size=task["regressor"]["batch_size"],
        seed=task["regressor"]["seed"],
    )
    reg, history = mdr.train_regressor(
        stacks, labels, reg_cfg, target_names=names, level_stats=stats, levels=levels
    )
    task_dir = os.path.join(args.out, "task")
    os.makedirs(task_dir, exist_ok=True)
    stem = "regressor_levels" + "-".join(str(t) for t in levels)
    reg_path = os.path.join(task_dir, f"{stem}.ckpt")
    mdr.save_regressor(reg, reg_path)
    hist_path = os.path.join(task_dir, f"{stem}_history.json")
    with open(hist_path, "w") as fh:
        json.dump(history, fh, indent=2, sort_keys=True)
        fh.write("\n")
    write_manifest(args.out, "train-task", cfg, task["seed"],
                   [os.path.relpath(p, args.out) for p in (reg_path, hist_path)])
    print(f"wrote {reg_path} (train MSE {history[-1]['mean_mse']:.6g})")


def cmd_eval_task(args):
    cfg = resolve_config(args.config)
    task = cfg["task"]
    reg = mdr.load_regressor(args.regressor)
    levels = reg.levels or [0]
    seqs = load_split(args.data, args.split)
    models, dr_train_ids = _load_level_models(levels, args.checkpoints)
    check_disjoint("DR-training split", dr_train_ids,
                   f"task-test split {args.split!r}", [s.id for s in seqs])
    picks = _sample_frames(seqs, task["n_test_frames"], task["seed"] + 1)
    names = reg.target_names
    all_names = list(seqs[0].label_names)
    cols = [all_names.index(n) for n in names]
    stacks = _build_stacks(seqs, picks, models, levels, reg.level_stats)
    labels = np.stack([np.asarray(seqs[si].labels[t])[cols] for si, t in picks])
    preds = mdr.predict(reg, stacks)
    report = mdr.evaluate_predictions(preds, labels, names)
    os.makedirs(args.out, exist_ok=True)
    metrics_path = os.path.join(args.out, "metrics.json")
    with open(metrics_path, "w") as fh:
        json.dump(report.to_dict(config={"levels": levels, "split": args.split}),
                  fh, indent=2, sort_keys=True)
        fh.write("\n")
    csv_path = os.path.join(args.out, "metrics.csv")
    with open(csv_path, "w") as fh:
        fh.write("target,icc,pcc,mse\n")
        for name in names:
            m = report.per_target[name]
            fh.write(f"{name},{m['icc']!r},{m['pcc']!r},{m['mse']!r}\n")
        agg = report.aggregates
        fh.write(f"__aggregate__,{agg['icc']!r},{agg['pcc']!r},{agg['mse']!r}\n")
    write_manifest(args.out, "eval-task", cfg, task["seed"],
                   [os.path.relpath(p, args.out) for p in (metrics_path, csv_path)])
    print(f"wrote {metrics_path}")
    for name in names:
        m = report.per_target[name]
        print(f"  {name}: icc {m['icc']:.4f}  pcc {m['pcc']:.4f}  mse {m['mse']:.6g}")


def cmd_plot_data(args):
    cfg = resolve_config(args.config)
    series = []
    for fname in sorted(os.listdir(args.out)):
        if not (fname.startswith("eval_rank_") and fname.endswith(".csv")):
            continue
        with open(os.path.join(args.out, fname)) as fh:
            header = fh.readline().strip().split(",")
            for line in fh:
                row = dict(zip(header, line.strip().split(",")))
                series.append(row)
    if not series:
        raise RuntimeError(f"no eval_rank_*.csv files found in {args.out}; run eval-rank first")
    out_path = os.path.join(args.out, "plot_accuracy_vs_T.csv")
    series.sort(key=lambda r: (r["method"], int(r["S"]), int(r["T"])))
    with open(out_path, "w") as fh:
        fh.write("series,T,accuracy,ci_half_width\n")
        for row in series:
            fh.write(
                f"{row['method']}_S{row['S']},{row['T']},{row['accuracy']},"
                f"{row['ci_half_width']}\n"
            )
    write_manifest(args.out, "plot-data", cfg, 0, [os.path.relpath(out_path, args.out)])
    print(f"wrote {out_path} ({len(series)} points)")


# ---------------------------------------------------------------------------
# entry point


def build_parser():
    parser = argparse.ArgumentParser(
        prog="dynrep",
        description="synthetic-data experiments for still-frame dynamic representations",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, data=True):
        p.add_argument("--config", default=None, help="JSON experiment config")
        p.add_argument("--out", required=True, help="output directory")
        if data:
            p.add_argument("--data", required=True, help="dataset directory (from gen-data)")

    p = sub.add_parser("gen-data", help="generate the synthetic dataset splits")
    common(p, data=False)
    p.add_argument("--force", action="store_true", help="overwrite a non-empty dataset dir")
    p.set_defaults(fn=cmd_gen_data)

    p = sub.add_parser("train-dr", help="train a still-to-kernel model")
    common(p)
    p.add_argument("--T", type=int, required=True, help="window half-width")
    p.add_argument("--S", type=int, default=1, help="window stride")
    p.add_argument("--mode", choices=("rank", "mse"), default="rank")
    p.add_argument("--targets", default=None, help="target store (mse mode)")
    p.set_defaults(fn=cmd_train_dr)

    p = sub.add_parser("solve-targets", help="materialize per-window target kernels")
    common(p)
    p.add_argument("--T", type=int, required=True)
    p.add_argument("--S", type=int, default=1)
    p.add_argument("--method", choices=("rankpool", "solve"), default=None)
    p.add_argument("--direction", choices=("forward", "backward"), default=None)
    p.set_defaults(fn=cmd_solve_targets)

    p = sub.add_parser("eval-rank", help="pairwise ranking accuracy sweep")
    common(p)
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--oracle", action="store_true", help="per-window solver upper bound")
    p.add_argument("--rankpool", action="store_true", help="dynamic-image baseline")
    p.add_argument("--random", action="store_true", help="random-kernel chance control")
    p.add_argument("--direction", choices=("forward", "backward"), default=None)
    p.add_argument("--T-grid", dest="T_grid", default="3,5,7,9")
    p.add_argument("--S-grid", dest="S_grid", default="1,2,3,4")
    p.add_argument("--split", default="test")
    p.set_defaults(fn=cmd_eval_rank)

    p = sub.add_parser("train-task", help="train the downstream label regressor")
    common(p)
    p.add_argument("--levels", required=True, help="comma list, e.g. 0,3,5")
    p.add_argument("--checkpoints", nargs="*", default=None,
                   help="DR checkpoints, one per non-zero level, ascending")
    p.add_argument("--split", default="train")
    p.set_defaults(fn=cmd_train_task)

    p = sub.add_parser("eval-task", help="evaluate a trained regressor")
    common(p)
    p.add_argument("--regressor", required=True)
    p.add_argument("--checkpoints", nargs="*", default=None)
    p.add_argument("--split", default="test")
    p.set_defaults(fn=cmd_eval_task)

    p = sub.add_parser("plot-data", help="collect eval-rank CSVs into plot series")
    common(p, data=False)
    p.set_defaults(fn=cmd_plot_data)

    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        args.fn(args)
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}),
              file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
