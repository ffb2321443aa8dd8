"""Experiment harness: config, training loop, evaluation, and the
time-generalization protocols (seen/unseen splits, nonuniform sampling).
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field, asdict, replace
from pathlib import Path

import numpy as np

from . import tensor as T
from .batching import BatchSpec, EpochSampler
from .checkpoint import load_checkpoint, save_checkpoint
from .losses import LossSpec, lp_loss, mae, r2
from .optim import Adam
from .models import (
    FourierMIONet,
    FourierMIONetConfig,
    MIONetConfig,
    UFNO2d,
    UFNOConfig,
    VanillaMIONet,
    desk_fmionet_config,
    desk_mionet_config,
    desk_ufno_config,
    encode_times,
)
from .records import Normalizer
from .schedule import FULL_SCHEDULE_DAYS, NAMED_SUBSETS, N_SNAPSHOTS
from .tensor import Tensor

MODEL_KINDS = ("fmionet", "ufno", "mionet", "mionet-fnn")


class TrainingDivergedError(RuntimeError):
    pass


def lr_schedule(epoch: int, initial: float = 1e-3, decay: float = 0.9) -> float:
    """Exponentially decaying learning rate: initial * decay**epoch."""
    if not 0 < decay <= 1:
        raise ValueError("decay must lie in (0, 1]")
    return initial * decay ** epoch


def resolve_time_subset(subset) -> tuple:
    """Seen snapshot indices (0-based, sorted) from a preset name, an index
    iterable, or None (all 24)."""
    if subset is None:
        return tuple(range(N_SNAPSHOTS))
    if isinstance(subset, str):
        if subset not in NAMED_SUBSETS:
            raise ValueError(f"unknown time subset {subset!r}; "
                             f"choose from {sorted(NAMED_SUBSETS)}")
        return NAMED_SUBSETS[subset]
    idx = tuple(sorted(int(i) for i in subset))
    if not idx:
        raise ValueError("time subset is empty")
    if any(i < 0 or i >= N_SNAPSHOTS for i in idx):
        raise ValueError(f"time-subset indices must lie in [0, {N_SNAPSHOTS - 1}]")
    return idx


@dataclass
class ExperimentConfig:
    model: str = "fmionet"
    target: str = "sg"
    epochs: int = 40
    batch_case: int = 4
    batch_time: int = 8
    time_subset: object = None
    lr: float = 1e-3
    lr_decay: float = 0.9
    seed: int = 0
    val_cases: int = 0
    patience: int = 10
    max_seconds: float | None = None
    target_val_r2: float | None = None
    model_overrides: dict = field(default_factory=dict)
    eval_batch: int = 8

    def __post_init__(self):
        if self.model not in MODEL_KINDS:
            raise ValueError(f"unknown model {self.model!r}; choose from {MODEL_KINDS}")
        if self.target not in ("sg", "dp"):
            raise ValueError("target must be 'sg' or 'dp'")

    def to_dict(self) -> dict:
        d = asdict(self)
        if isinstance(d["time_subset"], tuple):
            d["time_subset"] = list(d["time_subset"])
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(d)
        if isinstance(d.get("time_subset"), list):
            d["time_subset"] = tuple(d["time_subset"])
        return cls(**d)


@dataclass
class SnapshotMetric:
    index: int
    time_days: float
    seen: bool
    r2: float
    mae: float


@dataclass
class MetricsReport:
    model: str
    target: str
    n_cases: int
    runtime_s: float
    per_snapshot: list
    r2_seen: float
    mae_seen: float
    r2_unseen: float
    mae_unseen: float
    r2_all: float
    mae_all: float

    def to_csv(self, path) -> None:
        lines = [
            "#fmionet-metrics v1 "
            f"model={self.model} target={self.target} n_cases={self.n_cases} "
            f"runtime_s={self.runtime_s!r} r2_seen={self.r2_seen!r} "
            f"mae_seen={self.mae_seen!r} r2_unseen={self.r2_unseen!r} "
            f"mae_unseen={self.mae_unseen!r} r2_all={self.r2_all!r} "
            f"mae_all={self.mae_all!r}",
            "snapshot_index,time_days,seen,r2,mae",
        ]
        for s in self.per_snapshot:
            lines.append(f"{s.index},{s.time_days!r},{int(s.seen)},{s.r2!r},{s.mae!r}")
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")

    @classmethod
    def from_csv(cls, path) -> "MetricsReport":
        lines = Path(path).read_text(encoding="utf-8").strip().splitlines()
        if not lines or not lines[0].startswith("#fmionet-metrics v1 "):
            raise ValueError(f"{path}: not a metrics CSV")
        meta = dict(kv.split("=", 1) for kv in lines[0].split()[2:])
        snaps = []
        for row in lines[2:]:
            idx, days, seen, r2v, maev = row.split(",")
            snaps.append(SnapshotMetric(int(idx), float(days), bool(int(seen)),
                                        float(r2v), float(maev)))
        return cls(model=meta["model"], target=meta["target"],
                   n_cases=int(meta["n_cases"]), runtime_s=float(meta["runtime_s"]),
                   per_snapshot=snaps,
                   r2_seen=float(meta["r2_seen"]), mae_seen=float(meta["mae_seen"]),
                   r2_unseen=float(meta["r2_unseen"]), mae_unseen=float(meta["mae_unseen"]),
                   r2_all=float(meta["r2_all"]), mae_all=float(meta["mae_all"]))


@dataclass
class TrainResult:
    checkpoint_path: str
    report: MetricsReport
    history: list
    stop_reason: str = "epochs"


# ------------------------------------------------------------------ data assembly

def case_arrays(records, normalizer: Normalizer, target: str) -> dict:
    """Model-ready arrays for a record list (normalized, float32)."""
    fields = np.stack([normalizer.field_channels(r) for r in records]).astype(np.float32)
    scalars = np.stack([normalizer.scalar_vector(r.scalars) for r in records]).astype(np.float32)
    y = np.stack([normalizer.target(r, target) for r in records]).astype(np.float32)
    masks = np.stack([r.mask for r in records]).astype(np.float32)
    times = np.asarray(records[0].times_days, dtype=np.float64)
    return {"fields": fields, "scalars": scalars, "y": y, "masks": masks, "times": times}


def ufno_inputs(fields: np.ndarray, scalars: np.ndarray) -> np.ndarray:
    """Broadcast the scalar vector into constant channels after the fields."""
    n, h, w, _ = fields.shape
    tiled = np.broadcast_to(scalars[:, None, None, :], (n, h, w, scalars.shape[1]))
    return np.concatenate([fields, tiled], axis=3).astype(np.float32)


# ------------------------------------------------------------------ model plumbing

def build_model(cfg: ExperimentConfig, grid_shape: tuple, n_snapshots: int = N_SNAPSHOTS):
    if cfg.model == "fmionet":
        mc = desk_fmionet_config(grid_shape, cfg.target)
        mc = replace(mc, **cfg.model_overrides)
        return FourierMIONet(mc, seed=cfg.seed), mc
    if cfg.model == "ufno":
        mc = desk_ufno_config(grid_shape, cfg.target)
        mc = replace(mc, n_snapshots=n_snapshots, **cfg.model_overrides)
        return UFNO2d(mc, seed=cfg.seed), mc
    mc = desk_mionet_config(grid_shape, fnn_merger=(cfg.model == "mionet-fnn"))
    mc = replace(mc, **cfg.model_overrides)
    return VanillaMIONet(mc, seed=cfg.seed), mc


_MODEL_CLASSES = {
    "fmionet": (FourierMIONetConfig, FourierMIONet),
    "ufno": (UFNOConfig, UFNO2d),
    "mionet": (MIONetConfig, VanillaMIONet),
    "mionet-fnn": (MIONetConfig, VanillaMIONet),
}


def model_from_checkpoint(path):
    """Rebuild (model, normalizer, experiment config, extra) from a file."""
    data = load_checkpoint(path)
    kind = data["config"]["model_kind"]
    cfg_cls, model_cls = _MODEL_CLASSES[kind]
    mc = cfg_cls.from_dict(data["config"]["model_config"])
    model = model_cls(mc, seed=0)
    named = model.named_parameters()
    if [n for n, _ in named] != [n for n, _ in data["params"]]:
        raise ValueError(f"{path}: parameter manifest does not match the "
                         f"{kind} architecture")
    for (_, p), (_, arr) in zip(named, data["params"]):
        if p.data.shape != arr.shape:
            raise ValueError(f"{path}: shape mismatch for {_}")
        p.data = arr.astype(p.data.dtype)
    norm = Normalizer.from_dict(data["config"]["normalizer"])
    exp = ExperimentConfig.from_dict(data["config"]["experiment"])
    return model, norm, exp, data


def predict_norm(model, kind: str, arrays: dict, case_idx, time_idx) -> np.ndarray:
    """(C, T, H, W) normalized-space predictions via the deterministic path."""
    days = arrays["times"][np.asarray(time_idx, dtype=int)]
    if kind == "ufno":
        inputs = ufno_inputs(arrays["fields"][case_idx], arrays["scalars"][case_idx])
        return model.predict(inputs)[:, np.asarray(time_idx, dtype=int)]
    return model.predict(arrays["fields"][case_idx], arrays["scalars"][case_idx], days)


# ------------------------------------------------------------------ training

def _forward_batch(model, kind, arrays, case_idx, time_idx, grid_shape):
    h, w = grid_shape
    c, t = len(case_idx), len(time_idx)
    if kind == "fmionet":
        days = arrays["times"][time_idx]
        out = model(Tensor(arrays["fields"][case_idx]),
                    Tensor(arrays["scalars"][case_idx]),
                    Tensor(encode_times(days, model.cfg.time_encoding).astype(np.float32)))
        return T.reshape(out, (c * t, h, w))
    if kind == "ufno":
        inputs = ufno_inputs(arrays["fields"][case_idx], arrays["scalars"][case_idx])
        out = model(Tensor(inputs))                      # (C, H, W, 24)
        out = T.transpose(out, (0, 3, 1, 2))
        out = T.getitem(out, (slice(None), np.asarray(time_idx, dtype=int)))
        return T.reshape(out, (c * t, h, w))
    days = arrays["times"][time_idx]
    coords = model.grid_coords(days).astype(np.float32)
    out = model(Tensor(arrays["fields"][case_idx]),
                Tensor(arrays["scalars"][case_idx]), Tensor(coords))
    return T.reshape(out, (c * t, h, w))


def _batch_targets(arrays, case_idx, time_idx, grid_shape):
    h, w = grid_shape
    c, t = len(case_idx), len(time_idx)
    y = arrays["y"][case_idx][:, time_idx].reshape(c * t, h, w)
    m = np.repeat(arrays["masks"][case_idx][:, None], t, axis=1).reshape(c * t, h, w)
    return y, m


def train(records, cfg: ExperimentConfig, out_dir,
          resume_from=None, loss_spec: LossSpec | None = None) -> TrainResult:
    """Train a surrogate on SampleRecords; returns checkpoint path, final
    metrics on the held-out cases (or training cases when val_cases == 0),
    and the per-epoch history.
    """
    t_start = time.perf_counter()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    loss_spec = loss_spec or LossSpec()
    if not records:
        raise ValueError("no records to train on")
    grid_shape = records[0].grid_shape
    seen = resolve_time_subset(cfg.time_subset)
    spec = BatchSpec(cfg.batch_case, cfg.batch_time).clamped(len(seen))

    split_rng = np.random.default_rng(cfg.seed)
    perm = split_rng.permutation(len(records))
    val_idx = perm[:cfg.val_cases]
    train_idx = perm[cfg.val_cases:]
    if train_idx.size == 0:
        raise ValueError("no training cases left after the validation split")

    normalizer = Normalizer.fit([records[i] for i in train_idx]) \
        if cfg.target == "dp" else Normalizer()
    arrays = case_arrays(records, normalizer, cfg.target)

    model, mc = build_model(cfg, grid_shape)
    opt = Adam(model.parameters(), lr=cfg.lr)
    train_rng = np.random.default_rng(cfg.seed + 1)
    start_epoch = 0
    history: list = []
    if resume_from is not None:
        _, normalizer, _, data = model_from_checkpoint(resume_from)
        for (_, p), (_, arr) in zip(model.named_parameters(), data["params"]):
            p.data = arr.astype(p.data.dtype)
        opt.load_state_buffers(data["opt_buffers"])
        opt.load_state_scalars(data["opt_scalars"])
        train_rng.bit_generator.state = data["rng_state"]
        start_epoch = int(data["extra"]["epoch"])
        history = list(data["extra"]["history"])
        arrays = case_arrays(records, normalizer, cfg.target)

    ckpt_config = {
        "model_kind": cfg.model,
        "model_config": mc.to_dict(),
        "experiment": cfg.to_dict(),
        "normalizer": normalizer.to_dict(),
        "grid_shape": list(grid_shape),
    }
    ckpt_path = out_dir / "model.fmck"
    epochs_done = start_epoch

    def save():
        save_checkpoint(
            ckpt_path, config=ckpt_config,
            params=[(n, p.data) for n, p in model.named_parameters()],
            opt_buffers=opt.state_buffers(), opt_scalars=opt.state_scalars(),
            rng_state=train_rng.bit_generator.state,
            extra={"epoch": epochs_done, "history": history})

    # monitoring runs on a capped case subset; final metrics use everything
    monitor_idx = (val_idx if val_idx.size else train_idx)[:12]

    def val_loss():
        total, count = 0.0, 0
        with T.no_grad():
            for s0 in range(0, monitor_idx.size, spec.batch_case):
                ci = monitor_idx[s0:s0 + spec.batch_case]
                for t0 in range(0, len(seen), spec.batch_time):
                    ti = np.asarray(seen[t0:t0 + spec.batch_time])
                    pred = _forward_batch(model, cfg.model, arrays, ci, ti, grid_shape)
                    y, m = _batch_targets(arrays, ci, ti, grid_shape)
                    total += lp_loss(pred, y, m, loss_spec).item() * len(ci)
                    count += len(ci)
        return total / max(count, 1)

    stop_reason = "epochs"
    best_val = np.inf
    since_best = 0
    for epoch in range(start_epoch, cfg.epochs):
        lr = lr_schedule(epoch, cfg.lr, cfg.lr_decay)
        sampler = EpochSampler(train_idx.size, seen, spec, train_rng)
        losses = []
        for cases, tchunk in sampler.epoch():
            ci = train_idx[cases]
            pred = _forward_batch(model, cfg.model, arrays, ci, tchunk, grid_shape)
            y, m = _batch_targets(arrays, ci, tchunk, grid_shape)
            loss = lp_loss(pred, y, m, loss_spec)
            value = loss.item()
            if not np.isfinite(value):
                raise TrainingDivergedError(
                    f"non-finite loss at epoch {epoch}, step {len(losses)} "
                    f"(lr={lr:.2e}, cases={ci.tolist()}, times={tchunk.tolist()})")
            loss.backward()
            opt.step(lr)
            opt.zero_grad()
            losses.append(value)
        vloss = val_loss()
        entry = {"epoch": epoch, "lr": lr, "train_loss": float(np.mean(losses)),
                 "val_loss": float(vloss),
                 "seconds": time.perf_counter() - t_start}
        if cfg.target_val_r2 is not None:
            # cheap probe each epoch; confirm on the full split before stopping
            probe = _quick_r2(model, cfg, arrays, monitor_idx, seen, grid_shape)
            entry["val_r2"] = probe
            if probe >= cfg.target_val_r2 - 0.02 and val_idx.size > monitor_idx.size:
                entry["val_r2"] = _quick_r2(model, cfg, arrays, val_idx, seen, grid_shape)
        history.append(entry)
        epochs_done = epoch + 1
        save()
        if vloss < best_val - 1e-6:
            best_val = vloss
            since_best = 0
        else:
            since_best += 1
        if cfg.target_val_r2 is not None and entry.get("val_r2", -np.inf) >= cfg.target_val_r2:
            stop_reason = "target_reached"
            break
        if since_best > cfg.patience:
            stop_reason = "patience"
            break
        if cfg.max_seconds is not None and time.perf_counter() - t_start > cfg.max_seconds:
            stop_reason = "time_budget"
            break

    eval_idx = val_idx if val_idx.size else train_idx
    report = evaluate_model(model, cfg.model, arrays, normalizer, eval_idx, seen,
                            cfg, runtime_s=time.perf_counter() - t_start)
    save()
    return TrainResult(checkpoint_path=str(ckpt_path), report=report,
                       history=history, stop_reason=stop_reason)


def _quick_r2(model, cfg, arrays, idx, seen, grid_shape) -> float:
    """Pooled R2 on seen snapshots via the fast batched forward (monitoring)."""
    preds, truths, masks = [], [], []
    with T.no_grad():
        for s0 in range(0, idx.size, cfg.eval_batch):
            ci = idx[s0:s0 + cfg.eval_batch]
            ti = np.asarray(seen)
            pred = _forward_batch(model, cfg.model, arrays, ci, ti, grid_shape).data
            y, m = _batch_targets(arrays, ci, ti, grid_shape)
            preds.append(pred)
            truths.append(y)
            masks.append(m)
    return r2(np.concatenate(truths), np.concatenate(preds), np.concatenate(masks) > 0)


# ------------------------------------------------------------------ evaluation

def evaluate_model(model, kind: str, arrays: dict, normalizer: Normalizer,
                   case_idx, seen, cfg: ExperimentConfig | None = None,
                   runtime_s: float = 0.0) -> MetricsReport:
    """Per-snapshot and aggregate metrics over all 24 snapshots, tagged
    seen/unseen, pooled across the given cases. Uses the deterministic
    prediction path and physical-unit values."""
    t0 = time.perf_counter()
    case_idx = np.asarray(case_idx, dtype=int)
    target = cfg.target if cfg is not None else "sg"
    eval_batch = cfg.eval_batch if cfg is not None else 8
    all_times = np.arange(len(arrays["times"]))
    preds = []
    for s0 in range(0, case_idx.size, eval_batch):
        ci = case_idx[s0:s0 + eval_batch]
        preds.append(predict_norm(model, kind, arrays, ci, all_times))
    pred = np.concatenate(preds).astype(np.float64)
    truth = arrays["y"][case_idx].astype(np.float64)
    pred_phys = normalizer.invert_target(pred, target)
    truth_phys = normalizer.invert_target(truth, target)
    masks = arrays["masks"][case_idx] > 0

    seen_set = set(int(i) for i in seen)
    snaps = []
    for i in all_times:
        snaps.append(SnapshotMetric(
            index=int(i), time_days=float(arrays["times"][i]), seen=int(i) in seen_set,
            r2=r2(truth_phys[:, i], pred_phys[:, i], masks),
            mae=mae(truth_phys[:, i], pred_phys[:, i], masks)))

    def pooled(indices):
        if not indices:
            return float("nan"), float("nan")
        sel = np.asarray(indices, dtype=int)
        m = np.repeat(masks[:, None], sel.size, axis=1)
        return (r2(truth_phys[:, sel], pred_phys[:, sel], m),
                mae(truth_phys[:, sel], pred_phys[:, sel], m))

    seen_list = sorted(seen_set)
    unseen_list = [int(i) for i in all_times if int(i) not in seen_set]
    r2_seen, mae_seen = pooled(seen_list)
    r2_unseen, mae_unseen = pooled(unseen_list)
    r2_all, mae_all = pooled(list(map(int, all_times)))
    return MetricsReport(
        model=kind, target=target, n_cases=int(case_idx.size),
        runtime_s=runtime_s or (time.perf_counter() - t0),
        per_snapshot=snaps, r2_seen=r2_seen, mae_seen=mae_seen,
        r2_unseen=r2_unseen, mae_unseen=mae_unseen, r2_all=r2_all, mae_all=mae_all)


def evaluate_unseen_time(checkpoint_path, records, case_idx=None,
                         seen=None) -> MetricsReport:
    """Reload a checkpoint and report per-snapshot metrics tagged seen/unseen
    (the seen set defaults to the one the checkpoint was trained with)."""
    model, normalizer, exp, data = model_from_checkpoint(checkpoint_path)
    seen = resolve_time_subset(exp.time_subset if seen is None else seen)
    arrays = case_arrays(records, normalizer, exp.target)
    if case_idx is None:
        case_idx = np.arange(len(records))
    return evaluate_model(model, exp.model, arrays, normalizer, case_idx, seen, exp)


def run_nonuniform_suite(records, base_cfg: ExperimentConfig, out_dir,
                         cases=("caseA", "caseB", "caseC", "caseD", "caseE", "caseF")):
    """Train one model per nonuniform sampling case and gather reports."""
    out_dir = Path(out_dir)
    results = {}
    for name in cases:
        seen = resolve_time_subset(name)
        cfg = replace(base_cfg, time_subset=name,
                      batch_time=min(base_cfg.batch_time, len(seen)))
        result = train(records, cfg, out_dir / name)
        results[name] = result
        result.report.to_csv(out_dir / name / "metrics.csv")
    rows = ["case,seen_indices,r2_all,r2_seen,r2_unseen,mae_all"]
    for name, result in results.items():
        rep = result.report
        idx = "|".join(str(i) for i in resolve_time_subset(name))
        rows.append(f"{name},{idx},{rep.r2_all!r},{rep.r2_seen!r},"
                    f"{rep.r2_unseen!r},{rep.mae_all!r}")
    (out_dir / "nonuniform_summary.csv").write_text("\n".join(rows) + "\n",
                                                    encoding="utf-8")
    return results
