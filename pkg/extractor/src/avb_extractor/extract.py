"""Batch extraction of pooled embeddings into harness feature tables."""

from __future__ import annotations

import csv
import struct
import sys
from pathlib import Path

import numpy as np

from .audio import AudioError, load_wav_16k
from .backends import ExtractorSpec

_BINARY_MAGIC = b"AVBF"
_BINARY_VERSION = 1


def pool_mean(frames: np.ndarray) -> np.ndarray:
    return frames.mean(axis=0)


def extract(audio_dir, spec: ExtractorSpec, backend, out_path, binary: bool = False) -> int:
    """Extract one pooled vector per audio file; returns the row count.

    Files are processed in sorted directory order; undecodable files are
    skipped with a log line on stderr.
    """
    audio_dir = Path(audio_dir)
    files = sorted(p for p in audio_dir.iterdir() if p.suffix.lower() == ".wav")
    if not files:
        raise FileNotFoundError(f"no .wav files under {audio_dir}")
    ids: list[str] = []
    rows: list[np.ndarray] = []
    for path in files:
        try:
            waveform = load_wav_16k(path)
        except AudioError as exc:
            print(f"skipping undecodable file {path.stem}: {exc}", file=sys.stderr)
            continue
        frames, logits = backend.embed(waveform)
        vec = pool_mean(frames)
        if spec.emit_logits:
            vec = np.concatenate([vec, logits])
        if vec.shape != (spec.output_dims,) or not np.all(np.isfinite(vec)):
            raise RuntimeError(f"{path.stem}: bad embedding shape or non-finite values")
        ids.append(path.stem)
        rows.append(vec)
    if not rows:
        raise RuntimeError(f"no decodable audio under {audio_dir}")
    matrix = np.vstack(rows)
    if binary:
        _write_binary(out_path, ids, matrix)
    else:
        _write_csv(out_path, ids, matrix)
    return len(ids)


def _write_csv(path, ids, matrix: np.ndarray) -> None:
    dims = matrix.shape[1]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["file_id"] + [f"f{i}" for i in range(dims)])
        for uid, vec in zip(ids, matrix):
            writer.writerow([uid] + [repr(float(v)) for v in vec])


def _write_binary(path, ids, matrix: np.ndarray) -> None:
    n, dims = matrix.shape
    f32 = matrix.astype("<f4")
    with open(path, "wb") as fh:
        fh.write(_BINARY_MAGIC)
        fh.write(struct.pack("<III", _BINARY_VERSION, n, dims))
        for uid, vec in zip(ids, f32):
            raw = uid.encode("utf-8")
            fh.write(struct.pack("<H", len(raw)))
            fh.write(raw)
            fh.write(vec.tobytes())


def validate_table(path) -> tuple[int, int]:
    """Check header/dims/finiteness/uniqueness; returns (rows, dims)."""
    path = Path(path)
    with open(path, "rb") as fh:
        if fh.read(4) == _BINARY_MAGIC:
            return _validate_binary(path)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[0] != "file_id" or len(header) < 2:
            raise ValueError(f"{path}: malformed header")
        dims = len(header) - 1
        if header[1:] != [f"f{i}" for i in range(dims)]:
            raise ValueError(f"{path}: malformed feature column names")
        seen: set[str] = set()
        count = 0
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) - 1 != dims:
                raise ValueError(f"{path}: row {lineno}: expected {dims} values, got {len(row) - 1}")
            if row[0] in seen:
                raise ValueError(f"{path}: row {lineno}: duplicate id {row[0]!r}")
            seen.add(row[0])
            try:
                vals = [float(v) for v in row[1:]]
            except ValueError:
                raise ValueError(f"{path}: row {lineno}: non-numeric value") from None
            if not all(np.isfinite(vals)):
                raise ValueError(f"{path}: row {lineno}: non-finite value")
            count += 1
    return count, dims


def _validate_binary(path: Path) -> tuple[int, int]:
    with open(path, "rb") as fh:
        head = fh.read(16)
        version, n, dims = struct.unpack("<III", head[4:16])
        if version != _BINARY_VERSION:
            raise ValueError(f"{path}: unsupported version {version}")
        seen: set[str] = set()
        for i in range(n):
            raw = fh.read(2)
            if len(raw) < 2:
                raise ValueError(f"{path}: record {i}: truncated")
            (id_len,) = struct.unpack("<H", raw)
            uid = fh.read(id_len).decode("utf-8")
            if uid in seen:
                raise ValueError(f"{path}: record {i}: duplicate id {uid!r}")
            seen.add(uid)
            vec = fh.read(4 * dims)
            if len(vec) < 4 * dims:
                raise ValueError(f"{path}: record {i}: truncated vector")
            if not np.all(np.isfinite(np.frombuffer(vec, dtype="<f4"))):
                raise ValueError(f"{path}: record {i}: non-finite value")
    return n, dims
