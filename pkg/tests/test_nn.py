import math

import numpy as np
import pytest

from avb import nn
from avb.nn import (
    LayerSpec, OptimizerState, adamw_step, backward, build_model,
    build_specs, forward, param_count,
)


def test_param_count_reference_architecture():
    # closed form: sum of (out*in + out) per layer plus 2*out per layernorm
    specs = build_specs(1024, 10, "high")
    expected = (
        1024 * 128 + 128 + 128 * 64 + 64 + 64 * 32 + 32 + 32 * 10 + 10
        + 2 * (128 + 64 + 32)
    )
    assert param_count(specs) == expected == 142314
    # enumeration over actual tensors agrees
    params, _ = build_model(1024, 10, "high", seed=0)
    assert sum(arr.size for _, arr, _ in params.tensors()) == expected


@pytest.mark.parametrize("d,k", [(5, 3), (17, 2), (1027, 10)])
def test_param_count_arbitrary_dims(d, k):
    params, specs = build_model(d, k, "two", seed=1)
    assert sum(arr.size for _, arr, _ in params.tensors()) == param_count(specs)


def test_build_model_deterministic_and_shapes():
    a, _ = build_model(1027, 10, "high", seed=11)
    b, _ = build_model(1027, 10, "high", seed=11)
    for (_, x, _), (_, y, _) in zip(a.tensors(), b.tensors()):
        np.testing.assert_array_equal(x, y)
    assert a.weights[0].shape == (128, 1027)
    c, _ = build_model(1027, 10, "high", seed=12)
    assert not np.array_equal(a.weights[0], c.weights[0])


def test_zero_params_sigmoid_head_gives_half():
    params, specs = build_model(4, 3, "two", seed=0, widths=(5, 4))
    for w in params.weights:
        w[:] = 0.0
    out, _ = forward(params, specs, np.random.default_rng(0).standard_normal((6, 4)))
    np.testing.assert_array_equal(out, np.full((6, 3), 0.5))


def test_layernorm_is_per_sample():
    params, specs = build_model(6, 2, "two", seed=3, widths=(5, 4))
    rng = np.random.default_rng(1)
    row = rng.standard_normal((1, 6))
    batch = np.vstack([row] + [rng.standard_normal((1, 6)) for _ in range(7)])
    out1, _ = forward(params, specs, row)
    out8, _ = forward(params, specs, batch)
    np.testing.assert_allclose(out8[0], out1[0], rtol=1e-12, atol=1e-14)
    # permuting rows permutes outputs
    perm = rng.permutation(8)
    out_perm, _ = forward(params, specs, batch[perm])
    np.testing.assert_array_equal(out_perm, out8[perm])


def _oracle_forward(params, specs, x):
    """Straight-line pure-Python reimplementation of the forward pass."""
    outputs = []
    for row in x:
        a = list(row)
        for i, spec in enumerate(specs):
            z = []
            for o in range(spec.out_dim):
                acc = float(params.biases[i][o])
                for j in range(spec.in_dim):
                    acc += float(params.weights[i][o, j]) * a[j]
                z.append(acc)
            if spec.has_layernorm:
                mu = sum(z) / len(z)
                var = sum((v - mu) ** 2 for v in z) / len(z)
                inv = 1.0 / math.sqrt(var + nn.LAYERNORM_EPS)
                z = [
                    (v - mu) * inv * float(params.ln_gain[i][o]) + float(params.ln_shift[i][o])
                    for o, v in enumerate(z)
                ]
            if spec.activation == "leaky_relu":
                a = [v if v > 0 else nn.LEAKY_SLOPE * v for v in z]
            elif spec.activation == "sigmoid":
                a = [1.0 / (1.0 + math.exp(-v)) for v in z]
            else:
                a = z
        outputs.append(a)
    return np.array(outputs)


def test_forward_matches_straight_line_oracle():
    params, specs = build_model(3, 1, "two", seed=9, widths=(4, 3, 2))
    x = np.random.default_rng(2).standard_normal((5, 3))
    out, _ = forward(params, specs, x)
    oracle = _oracle_forward(params, specs, x)
    np.testing.assert_allclose(out, oracle, atol=1e-12, rtol=0)


def test_forward_rejects_wrong_width():
    params, specs = build_model(4, 2, "two", seed=0, widths=(3,))
    with pytest.raises(ValueError):
        forward(params, specs, np.zeros((2, 5)))


def test_trace_only_in_train_mode():
    params, specs = build_model(4, 2, "two", seed=0, widths=(3,))
    x = np.zeros((2, 4))
    _, trace = forward(params, specs, x, mode="eval")
    assert trace is None
    _, trace = forward(params, specs, x, mode="train")
    assert trace is not None and len(trace.activated) == len(specs)


def _fd_check(task, seed, b=5, h=1e-5):
    rng = np.random.default_rng(seed)
    d = int(rng.integers(2, 6))
    # layernorm over 2 features is degenerate (output fixed up to sign) and
    # starves upstream gradients below finite-difference resolution
    widths = tuple(int(w) for w in rng.integers(3, 5, size=2))
    k = int(rng.integers(1, 4))
    params, specs = build_model(d, k, task, seed=seed, widths=widths)
    x = rng.standard_normal((b, d))
    coeff = rng.standard_normal((b, k))

    def scalar_loss():
        out, _ = forward(params, specs, x)
        return float((out * coeff).sum())

    out, trace = forward(params, specs, x, mode="train")
    grads = backward(params, specs, trace, coeff)
    # vector-norm relative error per tensor, robust to near-zero components
    worst = 0.0
    for (_, arr, _), (_, garr, _) in zip(params.tensors(), grads.tensors()):
        flat = arr.reshape(-1)
        fd = np.empty(flat.size)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            lp = scalar_loss()
            flat[i] = orig - h
            lm = scalar_loss()
            flat[i] = orig
            fd[i] = (lp - lm) / (2 * h)
        g = garr.reshape(-1)
        denom = max(np.linalg.norm(fd), np.linalg.norm(g))
        if denom < 1e-6:
            # below finite-difference resolution; require absolute agreement
            assert float(np.max(np.abs(fd - g))) < 1e-8
            continue
        worst = max(worst, float(np.linalg.norm(fd - g) / denom))
    return worst


@pytest.mark.parametrize("seed", range(6))
def test_backward_finite_differences_sigmoid_head(seed):
    assert _fd_check("two", seed) < 1e-5


@pytest.mark.parametrize("seed", range(3))
def test_backward_finite_differences_logit_head(seed):
    assert _fd_check("type", seed + 100) < 1e-5


def test_backward_zero_output_grad_gives_zero():
    params, specs = build_model(3, 2, "two", seed=0, widths=(4,))
    x = np.random.default_rng(0).standard_normal((4, 3))
    _, trace = forward(params, specs, x, mode="train")
    grads = backward(params, specs, trace, np.zeros((4, 2)))
    for _, arr, _ in grads.tensors():
        np.testing.assert_array_equal(arr, np.zeros_like(arr))


def test_leaky_relu_negative_slope_propagation():
    spec = [LayerSpec(1, 1, has_layernorm=False, activation="leaky_relu")]
    params = nn.ModelParams(
        weights=[np.array([[1.0]])], biases=[np.array([-2.0])],
        ln_gain=[None], ln_shift=[None],
    )
    x = np.array([[1.0]])  # pre-activation -1
    out, trace = forward(params, spec, x, mode="train")
    assert out[0, 0] == pytest.approx(-nn.LEAKY_SLOPE)
    grads = backward(params, spec, trace, np.array([[1.0]]))
    assert grads.weights[0][0, 0] == pytest.approx(nn.LEAKY_SLOPE * 1.0)


def test_adamw_pure_decay_step():
    params, specs = build_model(4, 2, "two", seed=5, widths=(3,))
    before = params.copy()
    state = OptimizerState.init(params, learning_rate=0.0005, weight_decay=0.01)
    zero = nn.ModelParams(
        [np.zeros_like(w) for w in params.weights],
        [np.zeros_like(b) for b in params.biases],
        [np.zeros_like(g) if g is not None else None for g in params.ln_gain],
        [np.zeros_like(s) if s is not None else None for s in params.ln_shift],
    )
    adamw_step(params, zero, state)
    assert state.t == 1
    factor = 1.0 - 0.0005 * 0.01
    for w_new, w_old in zip(params.weights, before.weights):
        np.testing.assert_allclose(w_new, w_old * factor, rtol=1e-14, atol=0)
    # biases and layernorm params are not decayed
    for b_new, b_old in zip(params.biases, before.biases):
        np.testing.assert_array_equal(b_new, b_old)
    np.testing.assert_array_equal(params.ln_gain[0], before.ln_gain[0])


def test_adamw_single_scalar_hand_stepped():
    theta0 = 0.7
    g = 1.0
    lr, wd = 0.0005, 0.01
    params = nn.ModelParams([np.array([[theta0]])], [np.array([0.0])], [None], [None])
    grads = nn.ModelParams([np.array([[g]])], [np.array([0.0])], [None], [None])
    state = OptimizerState.init(params, learning_rate=lr, weight_decay=wd)
    adamw_step(params, grads, state)
    # hand-executed update from zero state
    m = (1 - 0.9) * g
    v = (1 - 0.999) * g * g
    m_hat = m / (1 - 0.9)
    v_hat = v / (1 - 0.999)
    expected = theta0 - lr * (m_hat / (math.sqrt(v_hat) + nn.ADAM_EPS) + wd * theta0)
    assert params.weights[0][0, 0] == pytest.approx(expected, abs=1e-16)


def test_adamw_lambda_zero_is_plain_adam():
    rng = np.random.default_rng(8)
    theta = rng.standard_normal((3, 2))
    params = nn.ModelParams([theta.copy()], [np.zeros(3)], [None], [None])
    state = OptimizerState.init(params, learning_rate=0.01, weight_decay=0.0)
    m = np.zeros_like(theta)
    v = np.zeros_like(theta)
    ref = theta.copy()
    for t in range(1, 6):
        g = rng.standard_normal((3, 2))
        adamw_step(params, nn.ModelParams([g], [np.zeros(3)], [None], [None]), state)
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        ref -= 0.01 * (m / (1 - 0.9 ** t)) / (np.sqrt(v / (1 - 0.999 ** t)) + nn.ADAM_EPS)
    np.testing.assert_allclose(params.weights[0], ref, atol=1e-15)


def test_adamw_bit_identical_trajectories():
    def run():
        params, specs = build_model(5, 2, "two", seed=2, widths=(4, 3))
        state = OptimizerState.init(params)
        rng = np.random.default_rng(0)
        for _ in range(10):
            x = rng.standard_normal((6, 5))
            out, trace = forward(params, specs, x, mode="train")
            grads = backward(params, specs, trace, np.ones_like(out))
            adamw_step(params, grads, state)
        return params
    a, b = run(), run()
    for (_, x, _), (_, y, _) in zip(a.tensors(), b.tensors()):
        np.testing.assert_array_equal(x, y)
