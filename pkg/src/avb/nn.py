"""Minimal feed-forward network: forward, exact backward, AdamW.

Architecture is fixed to the experiment's classifier: D -> 128 -> 64 -> 32
-> K, each hidden layer followed by per-sample layer normalization and
leaky ReLU, output head sigmoid (regression) or raw logits (classification,
softmax lives in the loss). All math in float64 by default.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

HIDDEN_WIDTHS = (128, 64, 32)

LEAKY_SLOPE = 0.01
LAYERNORM_EPS = 1e-5

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


class DivergenceError(RuntimeError):
    """Non-finite value encountered during training."""


@dataclass(frozen=True)
class LayerSpec:
    in_dim: int
    out_dim: int
    has_layernorm: bool
    activation: str  # leaky_relu | sigmoid | softmax_logits | identity

    def __post_init__(self):
        if self.in_dim <= 0 or self.out_dim <= 0:
            raise ValueError("layer dimensions must be positive")
        if self.activation not in ("leaky_relu", "sigmoid", "softmax_logits", "identity"):
            raise ValueError(f"unknown activation {self.activation!r}")


@dataclass
class ModelParams:
    """Per-layer weights/biases plus layernorm gain/shift (None when absent)."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]
    ln_gain: list[np.ndarray | None]
    ln_shift: list[np.ndarray | None]

    def tensors(self):
        """(name, array, decayed) triples; decay applies to weight matrices only."""
        out = []
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            out.append((f"w{i}", w, True))
            out.append((f"b{i}", b, False))
            if self.ln_gain[i] is not None:
                out.append((f"g{i}", self.ln_gain[i], False))
                out.append((f"s{i}", self.ln_shift[i], False))
        return out

    def copy(self) -> "ModelParams":
        return ModelParams(
            weights=[w.copy() for w in self.weights],
            biases=[b.copy() for b in self.biases],
            ln_gain=[g.copy() if g is not None else None for g in self.ln_gain],
            ln_shift=[s.copy() if s is not None else None for s in self.ln_shift],
        )

    def astype(self, dtype) -> "ModelParams":
        return ModelParams(
            weights=[w.astype(dtype) for w in self.weights],
            biases=[b.astype(dtype) for b in self.biases],
            ln_gain=[g.astype(dtype) if g is not None else None for g in self.ln_gain],
            ln_shift=[s.astype(dtype) if s is not None else None for s in self.ln_shift],
        )


@dataclass
class ForwardTrace:
    inputs: list[np.ndarray]          # layer input a_{l-1}, per layer
    preacts: list[np.ndarray]         # z = a W^T + b
    ln_normed: list[np.ndarray | None]   # zhat, layernorm output before gain/shift
    ln_inv_std: list[np.ndarray | None]  # 1/sqrt(var + eps), per sample
    activated: list[np.ndarray]       # layer output a_l


def build_specs(input_dim: int, output_dim: int, task: str,
                widths: tuple[int, ...] = HIDDEN_WIDTHS) -> list[LayerSpec]:
    head = "softmax_logits" if task == "type" else "sigmoid"
    dims = (input_dim,) + tuple(widths) + (output_dim,)
    specs = []
    for i in range(len(dims) - 1):
        last = i == len(dims) - 2
        specs.append(LayerSpec(
            in_dim=dims[i],
            out_dim=dims[i + 1],
            has_layernorm=not last,
            activation=head if last else "leaky_relu",
        ))
    return specs


def build_model(input_dim: int, output_dim: int, task: str, seed: int,
                widths: tuple[int, ...] = HIDDEN_WIDTHS,
                dtype=np.float64) -> tuple[ModelParams, list[LayerSpec]]:
    """Seeded init: Glorot-uniform weights, zero biases, unit layernorm gain."""
    if input_dim < 1 or output_dim < 1:
        raise ValueError("input_dim and output_dim must be >= 1")
    specs = build_specs(input_dim, output_dim, task, widths)
    rng = np.random.default_rng(seed)
    weights, biases, gains, shifts = [], [], [], []
    for spec in specs:
        bound = np.sqrt(6.0 / (spec.in_dim + spec.out_dim))
        weights.append(rng.uniform(-bound, bound, size=(spec.out_dim, spec.in_dim)).astype(dtype))
        biases.append(np.zeros(spec.out_dim, dtype=dtype))
        if spec.has_layernorm:
            gains.append(np.ones(spec.out_dim, dtype=dtype))
            shifts.append(np.zeros(spec.out_dim, dtype=dtype))
        else:
            gains.append(None)
            shifts.append(None)
    return ModelParams(weights, biases, gains, shifts), specs


def param_count(specs: list[LayerSpec]) -> int:
    total = 0
    for s in specs:
        total += s.out_dim * s.in_dim + s.out_dim
        if s.has_layernorm:
            total += 2 * s.out_dim
    return total


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def forward(params: ModelParams, specs: list[LayerSpec], batch: np.ndarray,
            mode: str = "eval") -> tuple[np.ndarray, ForwardTrace | None]:
    """Run the network on a (B, D) batch. Trace is populated only in train mode."""
    batch = np.asarray(batch)
    if batch.ndim != 2 or batch.shape[1] != specs[0].in_dim:
        raise ValueError(f"batch shape {batch.shape} does not match input dim {specs[0].in_dim}")
    train = mode == "train"
    trace = ForwardTrace([], [], [], [], []) if train else None
    a = batch
    for i, spec in enumerate(specs):
        z = a @ params.weights[i].T + params.biases[i]
        if spec.has_layernorm:
            mu = z.mean(axis=1, keepdims=True)
            var = z.var(axis=1, keepdims=True)
            inv_std = 1.0 / np.sqrt(var + LAYERNORM_EPS)
            zhat = (z - mu) * inv_std
            h = zhat * params.ln_gain[i] + params.ln_shift[i]
        else:
            inv_std = None
            zhat = None
            h = z
        if spec.activation == "leaky_relu":
            out = np.where(h > 0, h, LEAKY_SLOPE * h)
        elif spec.activation == "sigmoid":
            out = _sigmoid(h)
        else:  # softmax_logits / identity: raw values
            out = h
        if not np.all(np.isfinite(out)):
            raise DivergenceError(f"non-finite activation at layer {i}")
        if train:
            trace.inputs.append(a)
            trace.preacts.append(z)
            trace.ln_normed.append(zhat)
            trace.ln_inv_std.append(inv_std)
            trace.activated.append(out)
        a = out
    return a, trace


def backward(params: ModelParams, specs: list[LayerSpec], trace: ForwardTrace,
             output_grad: np.ndarray) -> ModelParams:
    """Exact gradients w.r.t. all parameters, shaped like ModelParams.

    ``output_grad`` is dLoss/dOutput for the network's final activation
    output (post-sigmoid for regression heads, raw logits for the
    classification head).
    """
    n_layers = len(specs)
    if output_grad.shape != trace.activated[-1].shape:
        raise ValueError("output_grad shape does not match traced output")
    g_w = [None] * n_layers
    g_b = [None] * n_layers
    g_gain: list[np.ndarray | None] = [None] * n_layers
    g_shift: list[np.ndarray | None] = [None] * n_layers
    da = np.asarray(output_grad, dtype=trace.activated[-1].dtype)
    for i in reversed(range(n_layers)):
        spec = specs[i]
        out = trace.activated[i]
        if spec.activation == "leaky_relu":
            # mask taken on the pre-activation input h; out sign matches h
            dh = da * np.where(out > 0, 1.0, LEAKY_SLOPE)
        elif spec.activation == "sigmoid":
            dh = da * out * (1.0 - out)
        else:
            dh = da
        if spec.has_layernorm:
            zhat = trace.ln_normed[i]
            inv_std = trace.ln_inv_std[i]
            g_gain[i] = (dh * zhat).sum(axis=0)
            g_shift[i] = dh.sum(axis=0)
            dzhat = dh * params.ln_gain[i]
            mean_d = dzhat.mean(axis=1, keepdims=True)
            mean_dz = (dzhat * zhat).mean(axis=1, keepdims=True)
            dz = inv_std * (dzhat - mean_d - zhat * mean_dz)
        else:
            dz = dh
        a_in = trace.inputs[i]
        g_w[i] = dz.T @ a_in
        g_b[i] = dz.sum(axis=0)
        da = dz @ params.weights[i]
    return ModelParams(weights=g_w, biases=g_b, ln_gain=g_gain, ln_shift=g_shift)


@dataclass
class OptimizerState:
    m: ModelParams
    v: ModelParams
    t: int = 0
    learning_rate: float = 0.0005
    weight_decay: float = 0.01
    beta1: float = ADAM_BETA1
    beta2: float = ADAM_BETA2
    eps: float = ADAM_EPS

    @classmethod
    def init(cls, params: ModelParams, learning_rate: float = 0.0005,
             weight_decay: float = 0.01, **kw) -> "OptimizerState":
        zeros = lambda arr: np.zeros_like(arr)
        m = ModelParams(
            [zeros(w) for w in params.weights],
            [zeros(b) for b in params.biases],
            [zeros(g) if g is not None else None for g in params.ln_gain],
            [zeros(s) if s is not None else None for s in params.ln_shift],
        )
        v = m.copy()
        return cls(m=m, v=v, learning_rate=learning_rate, weight_decay=weight_decay, **kw)


def adamw_step(params: ModelParams, grads: ModelParams, state: OptimizerState) -> None:
    """One decoupled-weight-decay Adam step, in place.

    Decay is applied directly to weight matrices (not through the gradient)
    and skips biases and layernorm parameters.
    """
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1 ** state.t
    bc2 = 1.0 - b2 ** state.t
    lr, wd, eps = state.learning_rate, state.weight_decay, state.eps

    def tensor_lists(p: ModelParams):
        for i in range(len(p.weights)):
            yield p.weights, i, True
            yield p.biases, i, False
            if p.ln_gain[i] is not None:
                yield p.ln_gain, i, False
                yield p.ln_shift, i, False

    for (plist, i, decayed), (glist, _, _), (mlist, _, _), (vlist, _, _) in zip(
        tensor_lists(params), tensor_lists(grads), tensor_lists(state.m), tensor_lists(state.v)
    ):
        theta, g = plist[i], glist[i]
        m = mlist[i]
        v = vlist[i]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * np.square(g)
        m_hat = m / bc1
        v_hat = v / bc2
        update = m_hat / (np.sqrt(v_hat) + eps)
        if decayed:
            update = update + wd * theta
        theta -= lr * update
        if not np.all(np.isfinite(theta)):
            raise DivergenceError("non-finite parameter after optimizer step")
