"""Central finite-difference verification of the analytic gradients."""
import numpy as np

from ..volume import Volume
from . import model
from .params import EncoderConfig, init_params

MICRO_CONFIG = EncoderConfig(d_model=24, n_layers=2, n_heads=2, mlp_ratio=2, patch_dims=(4, 4, 4),
                             grid_dims=(2, 2, 2), d_joint=8, d_llm=16, n_queries=4, dtype="float64")
SAMPLE_ABOVE = 10_000
OBJECTIVES = ("mae", "flip", "align")


def relative_error(analytic, numeric, floor=1e-8):
    analytic, numeric = np.asarray(analytic), np.asarray(numeric)
    return np.abs(analytic - numeric) / np.maximum(np.abs(numeric), floor)


def central_difference(f, x, eps=1e-4, coords=None):
    """Numerical gradient of scalar ``f`` at array ``x`` (perturbed in place, then restored)."""
    flat = x.reshape(-1)
    coords = range(flat.size) if coords is None else coords
    out = {}
    for i in coords:
        orig = flat[i]
        flat[i] = orig + eps
        up = f()
        flat[i] = orig - eps
        down = f()
        flat[i] = orig
        out[int(i)] = (up - down) / (2 * eps)
    return out


def quadratic_check(eps=1e-4, seed=0):
    """Max relative error on ``f(x) = 0.5 x^T A x + b^T x``; central differences are exact here up to roundoff."""
    rng = np.random.default_rng(seed)
    a = rng.standard_normal((5, 5))
    a = a @ a.T + np.eye(5)
    b = rng.standard_normal(5)
    x = rng.standard_normal(5)
    numeric = central_difference(lambda: 0.5 * x @ a @ x + b @ x, x, eps)
    analytic = a @ x + b
    return float(max(relative_error(analytic[i], g) for i, g in numeric.items()))


def _problem(cfg, seed):
    """A random well-conditioned point: perturbed init, random volumes and text targets."""
    params = init_params(cfg, seed)
    rng = np.random.default_rng([seed, 1])
    for name, arr in params.tensors.items():
        arr += rng.normal(0.0, 0.1, arr.shape)
    vols = [Volume(rng.random(cfg.volume_dims), (1.0, 1.0, 1.0)) for _ in range(2)]
    text = rng.standard_normal((2, cfg.d_joint))
    return params, vols, text


def _tracer(objective, params, vols, text, seed):
    if objective == "mae":
        return lambda **kw: model.trace_mae(vols, params, 0.5, seed, **kw)
    if objective == "flip":
        return lambda **kw: model.trace_flip(vols, text, params, 0.5, model.DEFAULT_TAU, seed, **kw)
    return lambda **kw: model.trace_align(vols, text, params, **kw)


def _stacked_difference(trace, name, arr, coords, eps, chunk):
    """Central differences for ``coords`` of tensor ``name``, ``chunk`` coordinates per vectorised pass."""
    base = arr.reshape(-1)
    out = np.empty(len(coords))
    for start in range(0, len(coords), chunk):
        idx = coords[start:start + chunk]
        k = len(idx)
        stack = np.tile(base, (2 * k, 1))
        stack[np.arange(k), idx] += eps
        stack[np.arange(k, 2 * k), idx] -= eps
        losses = trace(track=False, _stacked=(name, stack.reshape((2 * k,) + arr.shape))).loss_node.value
        out[start:start + k] = (losses[:k] - losses[k:]) / (2 * eps)
    return out


def grad_check_detail(cfg=MICRO_CONFIG, seed=0, eps=1e-4, objectives=OBJECTIVES, chunk=128):
    """Per-objective, per-tensor max relative error.

    Every coordinate is checked, except in tensors with more than ``SAMPLE_ABOVE``
    entries, where a seeded 10% sample is used. Tensors outside an objective's
    graph are skipped.
    """
    params, vols, text = _problem(cfg, seed)
    result = {}
    for objective in objectives:
        trace = _tracer(objective, params, vols, text, seed)
        analytic = model.backward(trace())
        per_tensor = {}
        for name, grad in analytic.items():
            arr = params.tensors[name]
            coords = np.arange(arr.size)
            if arr.size > SAMPLE_ABOVE:
                rng = np.random.default_rng([seed, arr.size])
                coords = np.sort(rng.choice(arr.size, arr.size // 10, replace=False))
            numeric = _stacked_difference(trace, name, arr, coords, eps, chunk)
            per_tensor[name] = float(relative_error(grad.reshape(-1)[coords], numeric).max())
        result[objective] = per_tensor
    return result


def grad_check(cfg=MICRO_CONFIG, seed=0, eps=1e-4, objectives=OBJECTIVES):
    """Max relative error between analytic and central-difference gradients over all checked coordinates."""
    detail = grad_check_detail(cfg, seed, eps, objectives)
    return max(max(t.values()) for t in detail.values())


def epsilon_sweep(cfg=MICRO_CONFIG, seed=0, epsilons=(1e-3, 1e-4, 1e-5), objectives=("mae",)):
    return {eps: grad_check(cfg, seed, eps, objectives) for eps in epsilons}
