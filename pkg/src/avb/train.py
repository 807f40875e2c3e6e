"""Single-run training: seeded shuffling, mini-batches, per-epoch validation,
classification-only early stopping, best-epoch checkpointing."""

from __future__ import annotations

import csv
import json
import time
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import losses, nn
from .dataio import Dataset, FeatureTable, OUTPUT_DIM, TYPE_CLASSES, TARGET_NAMES

CHECKPOINT_VERSION = 1


@dataclass
class TrainConfig:
    task: str
    feature_name: str = ""
    seed: int = 0
    learning_rate: float = 0.0005
    weight_decay: float = 0.01
    batch_size: int = 8
    max_epochs: int = 100
    patience: int = 10
    min_delta: float = 0.01
    precision: str = "f64"  # f64 | f32
    grad_clip: float | None = None
    keep_best: bool = True  # report/retain the best-validation epoch, not the last

    def __post_init__(self):
        self.task = self.task.lower()
        if self.task not in OUTPUT_DIM:
            raise ValueError(f"unknown task {self.task!r}")
        if self.precision not in ("f64", "f32"):
            raise ValueError("precision must be f64 or f32")

    @property
    def early_stopping(self) -> bool:
        return self.task == "type"

    @property
    def dtype(self):
        return np.float64 if self.precision == "f64" else np.float32

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(**d)


@dataclass
class RunResult:
    config: TrainConfig
    history: list[dict]  # per epoch: {"epoch", "train_loss", "val_score"}
    best_val_score: float
    best_epoch: int  # 1-based, first occurrence on ties
    wall_time: float
    per_dimension_ccc: list[float] | None  # regression tasks, at best epoch
    confusion: list[list[int]] | None      # classification, at best epoch
    early_stopped: bool
    best_params: nn.ModelParams
    specs: list[nn.LayerSpec]

    def manifest(self) -> dict:
        """Deterministic manifest content (wall time kept out on purpose)."""
        return {
            "config": self.config.to_dict(),
            "history": self.history,
            "best_val_score": self.best_val_score,
            "best_epoch": self.best_epoch,
            "early_stopped": self.early_stopped,
            "per_dimension_ccc": self.per_dimension_ccc,
            "confusion": self.confusion,
            "environment": environment_fingerprint(),
        }


def environment_fingerprint() -> dict:
    import platform
    return {
        "python": platform.python_version(),
        "numpy": np.__version__,
        "machine": platform.machine(),
    }


class EarlyStopping:
    """Stop after more than `patience` consecutive epochs without an
    improvement of at least `min_delta` over the best score seen."""

    def __init__(self, patience: int, min_delta: float):
        self.patience = patience
        self.min_delta = min_delta
        self.best = -np.inf
        self.wait = 0

    def update(self, score: float) -> bool:
        """Record an epoch score; returns True when training should stop."""
        if score >= self.best + self.min_delta:
            self.best = score
            self.wait = 0
        else:
            self.wait += 1
        return self.wait > self.patience


def evaluate(params: nn.ModelParams, specs: list[nn.LayerSpec],
             x: np.ndarray, y: np.ndarray, task: str) -> float:
    """Whole-partition score: mean per-dimension CCC, or UAR from argmax."""
    return evaluate_detailed(params, specs, x, y, task)[0]


def evaluate_detailed(params, specs, x, y, task):
    if len(x) == 0:
        raise ValueError("empty partition")
    task = task.lower()
    if task == "type":
        if np.any(np.asarray(y) < 0):
            raise ValueError("partition has unlabeled rows; use predict instead")
        out, _ = nn.forward(params, specs, x, mode="eval")
        pred = np.argmax(out, axis=1)
        cm = losses.confusion_matrix(y, pred, OUTPUT_DIM["type"])
        return losses.uar(cm), cm
    if np.any(~np.isfinite(np.asarray(y))):
        raise ValueError("partition has unlabeled rows; use predict instead")
    out, _ = nn.forward(params, specs, x, mode="eval")
    report = losses.ccc_per_column(out, y)
    return report.mean_ccc, report.per_dimension


def train_run(dataset: Dataset, config: TrainConfig) -> RunResult:
    """Train one (feature, task, seed) model; fully determined by its inputs."""
    task = config.task
    if dataset.task != task:
        raise ValueError(f"dataset task {dataset.task!r} != config task {task!r}")
    train_part = dataset.partitions["train"]
    val_part = dataset.partitions["val"]
    if len(train_part) == 0 or len(val_part) == 0:
        raise ValueError("train and val partitions must be nonempty")
    if not train_part.labeled or not val_part.labeled:
        raise ValueError("train/val partitions must be fully labeled")

    dtype = config.dtype
    dims = dataset.features.dims
    out_dim = OUTPUT_DIM[task]
    params, specs = nn.build_model(dims, out_dim, task, config.seed, dtype=dtype)
    state = nn.OptimizerState.init(
        params, learning_rate=config.learning_rate, weight_decay=config.weight_decay
    )
    rng = np.random.default_rng(config.seed)

    x_train = train_part.x.astype(dtype)
    y_train = train_part.y
    x_val = val_part.x.astype(dtype)
    y_val = val_part.y

    regression = task != "type"
    stopper = EarlyStopping(config.patience, config.min_delta) if config.early_stopping else None

    history: list[dict] = []
    best_score = -np.inf
    best_epoch = -1
    best_params = params.copy()
    early_stopped = False

    n = len(x_train)
    start = time.perf_counter()
    for epoch in range(1, config.max_epochs + 1):
        order = rng.permutation(n)
        epoch_loss = 0.0
        n_batches = 0
        for b0 in range(0, n, config.batch_size):
            idx = order[b0:b0 + config.batch_size]
            # a single sample cannot define a CCC; drop the short tail batch
            if regression and len(idx) < 2:
                continue
            xb = x_train[idx]
            yb = y_train[idx]
            try:
                out, trace = nn.forward(params, specs, xb, mode="train")
                if regression:
                    loss, out_grad = losses.ccc_loss_and_grad(out, yb)
                else:
                    loss, out_grad = losses.xent_loss_and_grad(out, yb)
                if not np.isfinite(loss):
                    raise nn.DivergenceError("non-finite loss")
                grads = nn.backward(params, specs, trace, out_grad.astype(dtype))
                if config.grad_clip is not None:
                    _clip_gradients(grads, config.grad_clip)
                nn.adamw_step(params, grads, state)
            except nn.DivergenceError as exc:
                raise nn.DivergenceError(
                    f"divergence at epoch {epoch}, batch {n_batches}: {exc}"
                ) from None
            epoch_loss += loss
            n_batches += 1
        val_score, _ = evaluate_detailed(params, specs, x_val, y_val, task)
        history.append({
            "epoch": epoch,
            "train_loss": epoch_loss / max(n_batches, 1),
            "val_score": val_score,
        })
        if val_score > best_score:
            best_score = val_score
            best_epoch = epoch
            best_params = params.copy()
        if stopper is not None and stopper.update(val_score):
            early_stopped = True
            break
    wall = time.perf_counter() - start

    reported = best_params if config.keep_best else params
    reported_epoch = best_epoch if config.keep_best else history[-1]["epoch"]
    reported_score = best_score if config.keep_best else history[-1]["val_score"]
    score, detail = evaluate_detailed(reported, specs, x_val, y_val, task)
    if regression:
        per_dim, confusion = list(detail), None
    else:
        per_dim, confusion = None, detail.tolist()
    return RunResult(
        config=config,
        history=history,
        best_val_score=float(reported_score),
        best_epoch=int(reported_epoch),
        wall_time=wall,
        per_dimension_ccc=per_dim,
        confusion=confusion,
        early_stopped=early_stopped,
        best_params=reported,
        specs=specs,
    )


def _clip_gradients(grads: nn.ModelParams, max_norm: float) -> None:
    total = 0.0
    for _, arr, _ in grads.tensors():
        total += float(np.sum(arr ** 2))
    norm = np.sqrt(total)
    if norm > max_norm:
        scale = max_norm / norm
        for _, arr, _ in grads.tensors():
            arr *= scale


# --- checkpoint / prediction I/O ---------------------------------------


def save_checkpoint(result: RunResult, path) -> None:
    payload = {
        "version": CHECKPOINT_VERSION,
        "config": result.config.to_dict(),
        "specs": [asdict(s) for s in result.specs],
        "params": {
            "weights": [w.tolist() for w in result.best_params.weights],
            "biases": [b.tolist() for b in result.best_params.biases],
            "ln_gain": [g.tolist() if g is not None else None for g in result.best_params.ln_gain],
            "ln_shift": [s.tolist() if s is not None else None for s in result.best_params.ln_shift],
        },
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, sort_keys=True, separators=(",", ":"))


def load_checkpoint(path) -> tuple[nn.ModelParams, list[nn.LayerSpec], TrainConfig]:
    with open(path, encoding="utf-8") as fh:
        payload = json.load(fh)
    if payload.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {payload.get('version')!r}")
    specs = [nn.LayerSpec(**s) for s in payload["specs"]]
    p = payload["params"]
    params = nn.ModelParams(
        weights=[np.array(w, dtype=np.float64) for w in p["weights"]],
        biases=[np.array(b, dtype=np.float64) for b in p["biases"]],
        ln_gain=[np.array(g, dtype=np.float64) if g is not None else None for g in p["ln_gain"]],
        ln_shift=[np.array(s, dtype=np.float64) if s is not None else None for s in p["ln_shift"]],
    )
    return params, specs, TrainConfig.from_dict(payload["config"])


def predict(params: nn.ModelParams, specs: list[nn.LayerSpec],
            features: FeatureTable, task: str, out_path) -> None:
    """Write per-utterance predictions as CSV."""
    task = task.lower()
    if features.dims != specs[0].in_dim:
        raise ValueError(f"feature dims {features.dims} != model input {specs[0].in_dim}")
    out, _ = nn.forward(params, specs, features.matrix, mode="eval")
    with open(out_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        if task == "type":
            writer.writerow(["file_id", "voc_type"] + [f"p_{c}" for c in TYPE_CLASSES])
            shifted = out - out.max(axis=1, keepdims=True)
            probs = np.exp(shifted)
            probs /= probs.sum(axis=1, keepdims=True)
            for uid, row in zip(features.ids, probs):
                cls = TYPE_CLASSES[int(np.argmax(row))]
                writer.writerow([uid, cls] + [repr(float(p)) for p in row])
        else:
            writer.writerow(["file_id"] + TARGET_NAMES[task])
            for uid, row in zip(features.ids, out):
                writer.writerow([uid] + [repr(float(v)) for v in row])


def write_run_artifacts(result: RunResult, run_dir) -> None:
    """Persist manifest.json (deterministic), timing.json, checkpoint.json."""
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    with open(run_dir / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(result.manifest(), fh, sort_keys=True, indent=1)
    with open(run_dir / "timing.json", "w", encoding="utf-8") as fh:
        json.dump({"wall_time_s": result.wall_time}, fh)
    save_checkpoint(result, run_dir / "checkpoint.json")
