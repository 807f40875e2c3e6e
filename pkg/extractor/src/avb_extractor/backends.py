"""Embedding backends: published wav2vec 2.0 models, plus an offline stub.

A backend turns a 16 kHz waveform into per-frame hidden states (T, 1024)
and, for the emotion-finetuned model, three affect logits reported in the
order (valence, arousal, dominance).
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

HIDDEN_DIM = 1024
LOGIT_NAMES = ("valence", "arousal", "dominance")

# published variants; the last two share a model and differ only in whether
# the affect logits are appended
VARIANT_MODELS = {
    "w2v2-lr": "facebook/wav2vec2-large-robust",
    "w2v2-lr-300": "facebook/wav2vec2-large-robust-ft-swbd-300h",
    "w2v2-lr-960": "facebook/wav2vec2-large-robust-ft-libri-960h",
    "w2v2-lr-er": "audeering/wav2vec2-large-robust-12-ft-emotion-msp-dim",
    "w2v2-lr-vad": "audeering/wav2vec2-large-robust-12-ft-emotion-msp-dim",
}
EMOTION_MODEL_ID = "audeering/wav2vec2-large-robust-12-ft-emotion-msp-dim"


class ModelFetchError(RuntimeError):
    """The model could not be downloaded or loaded."""


@dataclass(frozen=True)
class ExtractorSpec:
    model_id: str
    variant_name: str = ""
    pooling: str = "mean"
    emit_logits: bool = False

    def __post_init__(self):
        if self.pooling != "mean":
            raise ValueError("only mean-over-time pooling is supported")
        if self.emit_logits and self.model_id != EMOTION_MODEL_ID:
            raise ValueError("logits are only available from the emotion-finetuned model")

    @property
    def output_dims(self) -> int:
        return HIDDEN_DIM + (len(LOGIT_NAMES) if self.emit_logits else 0)

    @classmethod
    def for_variant(cls, variant_name: str) -> "ExtractorSpec":
        if variant_name not in VARIANT_MODELS:
            raise ValueError(f"unknown variant {variant_name!r}")
        return cls(
            model_id=VARIANT_MODELS[variant_name],
            variant_name=variant_name,
            emit_logits=variant_name == "w2v2-lr-vad",
        )


class StubBackend:
    """Deterministic offline backend: frames seeded by the waveform bytes.

    Used for tests and pipeline dry runs where the model hub is unreachable.
    Deterministic per file content, independent of batch composition.
    """

    revision = "stub-0"

    def __init__(self, spec: ExtractorSpec):
        self.spec = spec

    def embed(self, waveform: np.ndarray) -> tuple[np.ndarray, np.ndarray | None]:
        digest = hashlib.sha256(np.asarray(waveform, dtype=np.float64).tobytes()).digest()
        rng = np.random.default_rng(int.from_bytes(digest[:8], "little"))
        # one frame per 20 ms of 16 kHz audio, like the real encoder stride
        t = max(1, len(waveform) // 320)
        frames = rng.standard_normal((t, HIDDEN_DIM))
        logits = rng.uniform(0.0, 1.0, size=3) if self.spec.emit_logits else None
        return frames, logits


class HuggingFaceBackend:
    """Final-layer hidden states (and affect logits) from a published model."""

    def __init__(self, spec: ExtractorSpec, device: str = "cpu"):
        self.spec = spec
        try:
            import torch
            from transformers import AutoModelForAudioClassification, Wav2Vec2Model
        except ImportError as exc:
            raise ModelFetchError(f"transformers/torch unavailable: {exc}") from None
        self._torch = torch
        try:
            if spec.emit_logits:
                self._model = AutoModelForAudioClassification.from_pretrained(spec.model_id)
            else:
                self._model = Wav2Vec2Model.from_pretrained(spec.model_id)
        except Exception as exc:
            raise ModelFetchError(f"could not fetch {spec.model_id}: {exc}") from None
        self._model.eval().to(device)
        self.device = device
        self.revision = getattr(self._model.config, "_commit_hash", None) or "unknown"

    def embed(self, waveform: np.ndarray) -> tuple[np.ndarray, np.ndarray | None]:
        torch = self._torch
        x = torch.from_numpy(np.asarray(waveform, dtype=np.float32))[None, :].to(self.device)
        with torch.no_grad():
            if self.spec.emit_logits:
                out = self._model(x, output_hidden_states=True)
                frames = out.hidden_states[-1][0].cpu().numpy().astype(np.float64)
                raw = out.logits[0].cpu().numpy().astype(np.float64)
                # model head order is (arousal, dominance, valence)
                logits = np.array([raw[2], raw[0], raw[1]])
                return frames, logits
            out = self._model(x)
            return out.last_hidden_state[0].cpu().numpy().astype(np.float64), None


def make_backend(spec: ExtractorSpec, name: str = "hf"):
    if name == "stub":
        return StubBackend(spec)
    if name == "hf":
        return HuggingFaceBackend(spec)
    raise ValueError(f"unknown backend {name!r}")
