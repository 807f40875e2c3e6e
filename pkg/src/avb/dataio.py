"""Feature/label table loading, validation, scaling, joining, and synthetic data.

On-disk formats:
  - feature CSV: header ``file_id,f0,...,f{D-1}``, one row per utterance
  - feature binary: magic ``AVBF``, version u32=1, N u32, D u32, then N
    records of (u16 id-length, id bytes, D little-endian float32)
  - label CSV: header ``file_id,split,<targets>``; the classification task
    uses a single ``voc_type`` column with class tokens
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

TASKS = ("high", "two", "culture", "type")

TYPE_CLASSES = ("gasp", "cry", "laugh", "scream", "groan", "grunt", "pant", "other")

EMOTIONS = (
    "amusement", "awe", "awkwardness", "distress", "excitement",
    "fear", "horror", "sadness", "surprise", "triumph",
)
CULTURES = ("china", "southafrica", "usa", "venezuela")

TARGET_NAMES = {
    "high": list(EMOTIONS),
    "two": ["valence", "arousal"],
    "culture": [f"{c}_{e}" for c in CULTURES for e in EMOTIONS],
    "type": ["voc_type"],
}

# output width of the network head per task (classes for "type")
OUTPUT_DIM = {"high": 10, "two": 2, "culture": 40, "type": 8}

SPLITS = ("train", "val", "test")

_BINARY_MAGIC = b"AVBF"
_BINARY_VERSION = 1


class DataError(ValueError):
    """Malformed or inconsistent table data."""


@dataclass
class FeatureTable:
    feature_name: str
    dims: int
    ids: list[str]
    matrix: np.ndarray  # (N, dims) float64

    def __post_init__(self):
        self.matrix = np.asarray(self.matrix, dtype=np.float64)
        if self.dims <= 0:
            raise DataError("dims must be positive")
        if self.matrix.shape != (len(self.ids), self.dims):
            raise DataError(
                f"matrix shape {self.matrix.shape} does not match "
                f"{len(self.ids)} rows x {self.dims} dims"
            )
        if not np.all(np.isfinite(self.matrix)):
            raise DataError("feature table contains non-finite values")
        if len(set(self.ids)) != len(self.ids):
            raise DataError("duplicate utterance ids in feature table")

    def __len__(self):
        return len(self.ids)


@dataclass
class LabelTable:
    task: str
    target_names: list[str]
    ids: list[str]
    splits: list[str]
    # regression: (N, K) float64, NaN rows for unlabeled test rows
    # type: (N,) int64 class indices, -1 for unlabeled test rows
    targets: np.ndarray

    def __post_init__(self):
        if self.task not in TASKS:
            raise DataError(f"unknown task {self.task!r}")
        if len(set(self.ids)) != len(self.ids):
            raise DataError("duplicate utterance ids in label table")
        if not (len(self.ids) == len(self.splits)):
            raise DataError("ids/splits length mismatch")
        for s in self.splits:
            if s not in SPLITS:
                raise DataError(f"unknown split {s!r}")

    def __len__(self):
        return len(self.ids)


@dataclass
class Partition:
    ids: list[str]
    x: np.ndarray
    y: np.ndarray  # NaN / -1 entries mark unlabeled (predict-only) rows

    def __len__(self):
        return len(self.ids)

    @property
    def labeled(self) -> bool:
        if len(self) == 0:
            return False
        if self.y.dtype.kind == "f":
            return bool(np.all(np.isfinite(self.y)))
        return bool(np.all(self.y >= 0))


@dataclass
class Dataset:
    features: FeatureTable
    labels: LabelTable
    partitions: dict[str, Partition]
    dropped_feature_ids: int = 0
    dropped_label_ids: int = 0

    @property
    def task(self) -> str:
        return self.labels.task


def scale_labels(raw) -> np.ndarray:
    """Map integer scores in [1, 100] onto [0, 1] via (v - 1) / 99."""
    arr = np.asarray(raw, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise DataError("non-finite raw score")
    if np.any(arr != np.round(arr)):
        raise DataError("raw scores must be integers")
    if np.any(arr < 1) or np.any(arr > 100):
        raise DataError("raw score outside [1, 100]")
    return (arr - 1.0) / 99.0


def load_features(path, feature_name: str | None = None) -> FeatureTable:
    """Load a feature table from CSV or the AVBF binary format (sniffed)."""
    path = Path(path)
    if feature_name is None:
        feature_name = path.stem
    with open(path, "rb") as fh:
        magic = fh.read(4)
    if magic == _BINARY_MAGIC:
        return _load_features_binary(path, feature_name)
    return _load_features_csv(path, feature_name)


def _load_features_csv(path: Path, feature_name: str) -> FeatureTable:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        if len(header) < 2 or header[0] != "file_id":
            raise DataError(f"{path}: malformed header (expected file_id,f0,...)")
        dims = len(header) - 1
        expected = [f"f{i}" for i in range(dims)]
        if header[1:] != expected:
            raise DataError(f"{path}: malformed header (feature columns must be f0..f{dims - 1})")
        ids: list[str] = []
        rows: list[list[float]] = []
        seen: set[str] = set()
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) - 1 != dims:
                raise DataError(
                    f"{path}: row {lineno}: expected {dims} values, got {len(row) - 1}"
                )
            uid = row[0]
            if uid in seen:
                raise DataError(f"{path}: row {lineno}: duplicate id {uid!r}")
            seen.add(uid)
            try:
                vec = [float(v) for v in row[1:]]
            except ValueError:
                raise DataError(f"{path}: row {lineno}: non-numeric value") from None
            if not all(np.isfinite(vec)):
                raise DataError(f"{path}: row {lineno}: non-finite value")
            ids.append(uid)
            rows.append(vec)
    matrix = np.array(rows, dtype=np.float64).reshape(len(ids), dims)
    return FeatureTable(feature_name=feature_name, dims=dims, ids=ids, matrix=matrix)


def _load_features_binary(path: Path, feature_name: str) -> FeatureTable:
    with open(path, "rb") as fh:
        head = fh.read(16)
        if len(head) < 16 or head[:4] != _BINARY_MAGIC:
            raise DataError(f"{path}: bad binary header")
        version, n, dims = struct.unpack("<III", head[4:16])
        if version != _BINARY_VERSION:
            raise DataError(f"{path}: unsupported binary version {version}")
        ids: list[str] = []
        matrix = np.empty((n, dims), dtype=np.float64)
        for i in range(n):
            raw = fh.read(2)
            if len(raw) < 2:
                raise DataError(f"{path}: record {i}: truncated")
            (id_len,) = struct.unpack("<H", raw)
            uid = fh.read(id_len).decode("utf-8")
            vec_bytes = fh.read(4 * dims)
            if len(vec_bytes) < 4 * dims:
                raise DataError(f"{path}: record {i}: truncated vector")
            ids.append(uid)
            matrix[i] = np.frombuffer(vec_bytes, dtype="<f4")
        if fh.read(1):
            raise DataError(f"{path}: trailing bytes after {n} records")
    # duplicate/finite checks happen in FeatureTable validation
    return FeatureTable(feature_name=feature_name, dims=int(dims), ids=ids, matrix=matrix)


def write_features(table: FeatureTable, path, binary: bool = False) -> None:
    path = Path(path)
    if binary:
        with open(path, "wb") as fh:
            fh.write(_BINARY_MAGIC)
            fh.write(struct.pack("<III", _BINARY_VERSION, len(table), table.dims))
            f32 = table.matrix.astype("<f4")
            for uid, vec in zip(table.ids, f32):
                raw = uid.encode("utf-8")
                fh.write(struct.pack("<H", len(raw)))
                fh.write(raw)
                fh.write(vec.tobytes())
        return
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["file_id"] + [f"f{i}" for i in range(table.dims)])
        for uid, vec in zip(table.ids, table.matrix):
            writer.writerow([uid] + [repr(float(v)) for v in vec])


def load_labels(path, task: str, scale: bool = False) -> LabelTable:
    """Load a label table; ``scale=True`` maps raw integer scores via scale_labels."""
    task = task.lower()
    if task not in TASKS:
        raise DataError(f"unknown task {task!r}")
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        if len(header) < 3 or header[0] != "file_id" or header[1] != "split":
            raise DataError(f"{path}: malformed header (expected file_id,split,<targets>)")
        target_names = header[2:]
        k = OUTPUT_DIM[task]
        if task == "type":
            if target_names != ["voc_type"]:
                raise DataError(f"{path}: type task requires a single voc_type column")
        elif len(target_names) != k:
            raise DataError(
                f"{path}: task {task!r} needs {k} target columns, found {len(target_names)}"
            )
        ids: list[str] = []
        splits: list[str] = []
        rows: list = []
        seen: set[str] = set()
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise DataError(f"{path}: row {lineno}: wrong column count")
            uid, split = row[0], row[1]
            if uid in seen:
                raise DataError(f"{path}: row {lineno}: duplicate id {uid!r}")
            seen.add(uid)
            if split not in SPLITS:
                raise DataError(f"{path}: row {lineno}: unknown split {split!r}")
            fields = row[2:]
            empty = all(f == "" for f in fields)
            if empty:
                if split != "test":
                    raise DataError(
                        f"{path}: row {lineno}: empty targets only allowed on the test split"
                    )
                rows.append(None)
            elif task == "type":
                token = fields[0]
                if token not in TYPE_CLASSES:
                    raise DataError(f"{path}: row {lineno}: unknown class {token!r}")
                rows.append(TYPE_CLASSES.index(token))
            else:
                try:
                    vals = np.array([float(v) for v in fields], dtype=np.float64)
                except ValueError:
                    raise DataError(f"{path}: row {lineno}: non-numeric target") from None
                if scale:
                    try:
                        vals = scale_labels(vals)
                    except DataError as exc:
                        raise DataError(f"{path}: row {lineno}: {exc}") from None
                if np.any(vals < 0.0) or np.any(vals > 1.0) or not np.all(np.isfinite(vals)):
                    raise DataError(f"{path}: row {lineno}: target outside [0, 1]")
                rows.append(vals)
            ids.append(uid)
            splits.append(split)
    n = len(ids)
    if task == "type":
        targets = np.full(n, -1, dtype=np.int64)
        for i, r in enumerate(rows):
            if r is not None:
                targets[i] = r
    else:
        targets = np.full((n, k), np.nan, dtype=np.float64)
        for i, r in enumerate(rows):
            if r is not None:
                targets[i] = r
    return LabelTable(task=task, target_names=target_names, ids=ids, splits=splits, targets=targets)


def write_labels(table: LabelTable, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["file_id", "split"] + table.target_names)
        for i, (uid, split) in enumerate(zip(table.ids, table.splits)):
            if table.task == "type":
                cls = int(table.targets[i])
                cols = [""] if cls < 0 else [TYPE_CLASSES[cls]]
            else:
                row = table.targets[i]
                if np.any(np.isnan(row)):
                    cols = [""] * len(table.target_names)
                else:
                    cols = [repr(float(v)) for v in row]
            writer.writerow([uid, split] + cols)


def join_split(features: FeatureTable, labels: LabelTable) -> Dataset:
    """Inner-join features and labels on utterance id, partitioned by split.

    Unmatched ids on either side are dropped and counted; empty train or
    val partitions are an error.
    """
    label_index = {uid: i for i, uid in enumerate(labels.ids)}
    feat_ids = set(features.ids)
    dropped_feat = sum(1 for uid in features.ids if uid not in label_index)
    dropped_lab = sum(1 for uid in labels.ids if uid not in feat_ids)
    parts: dict[str, tuple[list[str], list[int], list[int]]] = {
        s: ([], [], []) for s in SPLITS
    }
    for fi, uid in enumerate(features.ids):
        li = label_index.get(uid)
        if li is None:
            continue
        split = labels.splits[li]
        parts[split][0].append(uid)
        parts[split][1].append(fi)
        parts[split][2].append(li)
    partitions = {}
    for split, (ids, fidx, lidx) in parts.items():
        x = features.matrix[fidx] if fidx else np.empty((0, features.dims))
        y = labels.targets[lidx] if lidx else labels.targets[:0]
        partitions[split] = Partition(ids=ids, x=x, y=y)
    if len(partitions["train"]) == 0:
        raise DataError("join produced an empty train partition")
    if len(partitions["val"]) == 0:
        raise DataError("join produced an empty val partition")
    return Dataset(
        features=features,
        labels=labels,
        partitions=partitions,
        dropped_feature_ids=dropped_feat,
        dropped_label_ids=dropped_lab,
    )


def _margin_mask(z: np.ndarray, margin: float) -> np.ndarray:
    part = np.partition(z, -2, axis=1)
    return (part[:, -1] - part[:, -2]) >= margin


def make_synthetic(seed: int, n: int, dims: int, task: str) -> tuple[FeatureTable, LabelTable]:
    """Generate a deterministic synthetic dataset with learnable targets.

    Features are i.i.d. standard normal. Regression targets are
    logistic(W x + b) for a hidden seeded (W, b); classification targets are
    the argmax of a hidden 8-row linear map. Split is 80/20 train/val by
    index (every 5th row is val).
    """
    task = task.lower()
    if task not in TASKS:
        raise DataError(f"unknown task {task!r}")
    if n < 20:
        raise DataError("n must be >= 20")
    if dims < 2:
        raise DataError("dims must be >= 2")
    rng = np.random.default_rng(seed)
    k = OUTPUT_DIM[task]
    x = rng.standard_normal((n, dims))
    w = rng.standard_normal((dims, k)) * (1.5 / np.sqrt(dims))
    b = rng.standard_normal(k) * 0.1
    if task == "type":
        # keep only samples with a clear top-class margin so the synthetic
        # classification task is learnable at desk scale
        margin = 0.5
        kept = [x[_margin_mask(x @ w + b, margin)]]
        count = len(kept[0])
        while count < n:
            extra = rng.standard_normal((n, dims))
            keep = extra[_margin_mask(extra @ w + b, margin)]
            kept.append(keep)
            count += len(keep)
        x = np.vstack(kept)[:n]
        targets = np.argmax(x @ w + b, axis=1).astype(np.int64)
        target_names = ["voc_type"]
    else:
        z = x @ w + b
        targets = 1.0 / (1.0 + np.exp(-z))
        target_names = TARGET_NAMES[task]
    ids = [f"synth_{i:06d}" for i in range(n)]
    splits = ["val" if i % 5 == 4 else "train" for i in range(n)]
    feats = FeatureTable(feature_name=f"synth-d{dims}", dims=dims, ids=ids, matrix=x)
    labels = LabelTable(task=task, target_names=target_names, ids=list(ids), splits=splits, targets=targets)
    return feats, labels
