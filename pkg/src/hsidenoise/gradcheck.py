"""Finite-difference verification of every backward rule.

Each check builds a scalar loss from float64 leaf tensors, backpropagates
once, and compares the analytic gradients against central differences
computed from forward evaluations only. The two routes share no code:
the finite-difference side never touches a backward closure.

Error metric: elementwise |analytic - numeric| / max(|analytic|,
|numeric|, 1), reduced with max. Loss surfaces here are O(1), so the
unit floor makes the metric behave like absolute error near zero while
staying relative for large entries.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .ssm import SsmParams, selective_scan
from .tensor import Tensor

FD_STEP = 1e-5
OP_TOL = 1e-4
MODEL_TOL = 1e-3


def max_rel_err(analytic: np.ndarray, numeric: np.ndarray) -> float:
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1.0)
    return float(np.max(np.abs(analytic - numeric) / denom)) if analytic.size else 0.0


def fd_grad(f, arrays: list[np.ndarray], idx: int, h: float = FD_STEP) -> np.ndarray:
    """Central-difference gradient of f(*arrays) w.r.t. arrays[idx]."""
    work = [a.copy() for a in arrays]
    grad = np.zeros_like(work[idx])
    flat_a = work[idx].reshape(-1)
    flat_g = grad.reshape(-1)
    for i in range(flat_a.size):
        keep = flat_a[i]
        flat_a[i] = keep + h
        fp = f(*work)
        flat_a[i] = keep - h
        fm = f(*work)
        flat_a[i] = keep
        flat_g[i] = (fp - fm) / (2.0 * h)
    return grad


def check(build, arrays: list[np.ndarray], h: float = FD_STEP) -> float:
    """Max relative error across all inputs of a scalar-valued graph.

    build(tensors) must return a scalar Tensor. Runs in float64.
    """
    arrays = [np.asarray(a, dtype=np.float64) for a in arrays]
    leaves = [Tensor(a, requires_grad=True, dtype=np.float64) for a in arrays]
    loss = build(leaves)
    loss.backward()

    def f(*arrs):
        frozen = [Tensor(a, requires_grad=False, dtype=np.float64) for a in arrs]
        return build(frozen).item()

    worst = 0.0
    for i, leaf in enumerate(leaves):
        numeric = fd_grad(f, arrays, i, h)
        analytic = leaf.grad if leaf.grad is not None else np.zeros_like(numeric)
        worst = max(worst, max_rel_err(analytic, numeric))
    return worst


def _op_cases(rng: np.random.Generator):
    a34 = rng.standard_normal((3, 4))
    b34 = rng.standard_normal((3, 4))
    m23 = rng.standard_normal((2, 3))
    m34 = rng.standard_normal((3, 4))
    x_chw = rng.standard_normal((2, 4, 5))
    w_conv = rng.standard_normal((3, 2, 3, 3)) * 0.5
    b_conv = rng.standard_normal(3) * 0.1
    x_cl = rng.standard_normal((3, 7))
    w_dw = rng.standard_normal((3, 3)) * 0.5
    g_ln = rng.standard_normal(4) * 0.5 + 1.0
    b_ln = rng.standard_normal(4) * 0.1
    vec_c = rng.standard_normal(2) * 0.5
    perm = rng.permutation(7)
    s0 = rng.standard_normal(1)

    return [
        ("add", lambda t: T.add(t[0], t[1]).sum(), [a34, b34]),
        ("sub", lambda t: T.sub(t[0], t[1]).sum(), [a34, b34]),
        ("mul", lambda t: T.mul(t[0], t[1]).sum(), [a34, b34]),
        ("neg", lambda t: T.neg(t[0]).sum(), [a34]),
        ("scale", lambda t: T.scale(t[0], 1.7).sum(), [a34]),
        ("smul", lambda t: T.smul(t[0], t[1]).sum(), [a34, s0]),
        ("matmul", lambda t: T.matmul(t[0], t[1]).sum(), [m23, m34]),
        ("transpose", lambda t: T.mul(T.transpose(t[0]), T.transpose(t[0])).sum(), [m23]),
        ("reshape", lambda t: T.mul(t[0].reshape((4, 3)), t[0].reshape((4, 3))).sum(), [a34]),
        ("sum", lambda t: T.mul(t[0], t[0]).sum(), [a34]),
        ("mean", lambda t: T.mul(t[0], t[0]).mean(), [a34]),
        ("add_channel_bias", lambda t: T.mul(T.add_channel_bias(t[0], t[1]),
                                             T.add_channel_bias(t[0], t[1])).sum(),
         [x_chw, vec_c]),
        ("scale_channels", lambda t: T.scale_channels(t[0], t[1]).sum(),
         [x_chw, vec_c]),
        ("channel_mean", lambda t: T.mul(T.channel_mean(t[0]),
                                         T.channel_mean(t[0])).sum(), [x_chw]),
        ("conv2d_same", lambda t: T.mul(T.conv2d_same(t[0], t[1], t[2]),
                                        T.conv2d_same(t[0], t[1], t[2])).sum(),
         [x_chw, w_conv, b_conv]),
        ("depthwise_conv1d", lambda t: T.mul(T.depthwise_conv1d(t[0], t[1]),
                                             T.depthwise_conv1d(t[0], t[1])).sum(),
         [x_cl, w_dw]),
        ("depthwise_conv1d_causal",
         lambda t: T.mul(T.depthwise_conv1d(t[0], t[1], mode="causal"),
                         T.depthwise_conv1d(t[0], t[1], mode="causal")).sum(),
         [x_cl, w_dw]),
        ("layer_norm", lambda t: T.mul(T.layer_norm(t[0], t[1], t[2]),
                                       T.layer_norm(t[0], t[1], t[2])).sum(),
         [a34, g_ln, b_ln]),
        ("silu", lambda t: T.mul(T.silu(t[0]), T.silu(t[0])).sum(), [a34]),
        ("sigmoid", lambda t: T.mul(T.sigmoid(t[0]), T.sigmoid(t[0])).sum(), [a34]),
        ("softplus", lambda t: T.mul(T.softplus(t[0]), T.softplus(t[0])).sum(), [a34]),
        ("permute_flat", lambda t: T.mul(T.permute_flat(t[0], perm),
                                         T.permute_flat(t[0], perm)).sum(), [x_cl]),
    ]


def _scan_case(rng: np.random.Generator):
    d_inner, state, length = 3, 2, 6
    x = rng.standard_normal((d_inner, length)) * 0.5
    a_log = rng.standard_normal((d_inner, state)) * 0.3
    d_skip = rng.standard_normal(d_inner)
    w_bc = rng.standard_normal((2 * state, d_inner)) * 0.4
    w_delta = rng.standard_normal((d_inner, d_inner)) * 0.3
    b_delta = rng.standard_normal(d_inner) - 1.0

    def build(t):
        params = SsmParams(a_log=t[1], d_skip=t[2], w_bc=t[3],
                           w_delta=t[4], b_delta=t[5])
        y = selective_scan(t[0], params, chunk_len=3)
        return T.mul(y, y).sum()

    return ("selective_scan", build, [x, a_log, d_skip, w_bc, w_delta, b_delta])


def run_op_suite(seed: int = 0) -> list[tuple[str, float, float]]:
    """(name, max relative error, tolerance) for every differentiable op."""
    rng = np.random.default_rng(seed)
    rows = []
    for name, build, arrays in _op_cases(rng):
        rows.append((name, check(build, arrays), OP_TOL))
    name, build, arrays = _scan_case(rng)
    rows.append((name, check(build, arrays), OP_TOL))
    return rows


def check_params(loss_fn, params: list[Tensor], h: float = FD_STEP) -> float:
    """Max relative error over live parameter tensors of a closed-over graph.

    loss_fn() must rebuild its graph from the current param.data on each
    call (forward passes see in-place perturbations). Analytic gradients
    come from one backward; numeric ones from central differences.
    """
    for p in params:
        p.zero_grad()
    loss_fn().backward()
    analytic = [p.grad.copy() if p.grad is not None else np.zeros_like(p.data)
                for p in params]
    worst = 0.0
    for p, ana in zip(params, analytic):
        flat = p.data.reshape(-1)
        numeric = np.zeros_like(flat)
        for i in range(flat.size):
            keep = flat[i]
            flat[i] = keep + h
            fp = loss_fn().item()
            flat[i] = keep - h
            fm = loss_fn().item()
            flat[i] = keep
            numeric[i] = (fp - fm) / (2.0 * h)
        worst = max(worst, max_rel_err(ana.reshape(-1), numeric))
    return worst


def run_model_suite(seed: int = 0) -> list[tuple[str, float, float]]:
    """End-to-end check: d(loss)/d(params) of a tiny model in float64."""
    from .model import DenoiserModel, ModelConfig

    cfg = ModelConfig(bands=4, hidden_dim=8, num_layers=1, blocks_per_layer=2,
                      state_dim=4, chunk_len=16, seed=seed)
    model = DenoiserModel(cfg, dtype=np.float64)
    rng = np.random.default_rng(seed + 1)
    patch = Tensor(rng.uniform(0.0, 1.0, size=(4, 8, 8)), dtype=np.float64)
    target = Tensor(rng.uniform(0.0, 1.0, size=(4, 8, 8)), dtype=np.float64)

    def loss_fn():
        diff = T.sub(model.forward(patch), target)
        return T.mul(diff, diff).mean()

    params = [p for _, p in model.parameters()]
    err = check_params(loss_fn, params)
    return [("model_end_to_end", err, MODEL_TOL)]


def run_all(seed: int = 0) -> list[tuple[str, float, float]]:
    return run_op_suite(seed) + run_model_suite(seed)
