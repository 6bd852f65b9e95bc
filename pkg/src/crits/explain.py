"""Per-instance explanations.

The intrinsic explainer reads the exact local affine model off a forward
pass: the ReLU patterns select one affine map from pooled features to the
logit, and the max-pool winners select which input window each kernel
looked at. Projecting the kernels back onto those windows, weighted by the
pooled-feature coefficients, gives an input weight map ``w`` and bias ``b``
with ``sum(w * x) + b == z``. No gradients or sampling are involved.

Gradient baselines (vanilla input gradient, SmoothGrad, GradientSHAP-style
expected gradients) are computed from the model's own backward pass.
All maps are (m, T) arrays and explain the logit, not the probability.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from crits.model import CritsModel, ForwardTrace, ShapeMismatch, forward, forward_batch
from crits.train import backward_batch

__all__ = [
    "ExplainError",
    "TraceMismatch",
    "BadParams",
    "PoolWeights",
    "LinearSurrogate",
    "unwrap_rn",
    "deconvolve",
    "explain_intrinsic",
    "input_gradients",
    "grad_explain",
    "smoothgrad",
    "gradient_shap",
    "sample_baselines",
    "map_to_csv",
    "parse_map_csv",
]


class ExplainError(ValueError):
    pass


class TraceMismatch(ExplainError):
    pass


class BadParams(ExplainError):
    pass


@dataclass(frozen=True, eq=False)
class PoolWeights:
    """Affine map from pooled features to the logit: ``z = weights @ pooled + bias``."""

    weights: np.ndarray
    bias: float


@dataclass(frozen=True, eq=False)
class LinearSurrogate:
    weights: np.ndarray  # (m, T)
    bias: float
    relevance: np.ndarray  # weights * x
    trace: ForwardTrace

    def predict_logit(self, x) -> float:
        return float(np.sum(self.weights * np.asarray(x, dtype=np.float64)) + self.bias)

    def reconstruction_error(self, x) -> float:
        """``|sum(w*x) + b - z|`` at ``x`` against the recorded trace logit."""
        return abs(self.predict_logit(x) - self.trace.logit)

    @property
    def support(self) -> int:
        return int(np.count_nonzero(self.weights))


def unwrap_rn(model: CritsModel, trace: ForwardTrace) -> PoolWeights:
    """Compose the rectifier layers' affine maps under the trace's ReLU patterns.

    Walking from the output unit down, each layer contributes
    ``diag(pattern) @ W``; its bias enters through everything above it.
    """
    if len(trace.patterns) != model.n_layers:
        raise TraceMismatch(f"trace has {len(trace.patterns)} layers, model has {model.n_layers}")
    v = model.out_weight.copy()
    bias = model.out_bias
    for l in range(model.n_layers - 1, -1, -1):
        pattern = np.asarray(trace.patterns[l])
        if pattern.shape != model.biases[l].shape:
            raise TraceMismatch(f"layer {l} pattern shape {pattern.shape} != {model.biases[l].shape}")
        v = np.where(pattern, v, 0.0)
        bias += float(v @ model.biases[l])
        v = v @ model.weights[l]
    return PoolWeights(v, bias)


def deconvolve(model: CritsModel, trace: ForwardTrace, pw: PoolWeights, x) -> LinearSurrogate:
    """Project pooled-feature weights back onto the input.

    Each kernel is placed at its winning window (all channels) and scaled by
    its pooled-feature weight; overlapping windows add. The conv biases are
    constant offsets of the pooled features and fold into the surrogate bias.
    """
    cfg = model.config
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (cfg.m, cfg.T):
        raise ShapeMismatch(f"expected instance shape {(cfg.m, cfg.T)}, got {x.shape}")
    winners = np.asarray(trace.winners)
    if winners.shape != (cfg.kernel_count,) or pw.weights.shape != (cfg.kernel_count,):
        raise TraceMismatch("winners / pool weights do not match the kernel count")
    h = cfg.kernel_len
    w_tm = np.zeros((cfg.T, cfg.m))
    for k in range(cfg.kernel_count):
        t = int(winners[k])
        w_tm[t : t + h] += pw.weights[k] * model.kernels[k]
    w = np.ascontiguousarray(w_tm.T)
    bias = pw.bias + float(pw.weights @ model.conv_bias)
    return LinearSurrogate(w, bias, w * x, trace)


def explain_intrinsic(model: CritsModel, x) -> LinearSurrogate:
    """Exact local linear surrogate of the logit at ``x``."""
    trace = forward(model, x)
    return deconvolve(model, trace, unwrap_rn(model, trace), x)


def input_gradients(model: CritsModel, X, chunk: int = 512) -> np.ndarray:
    """Gradient of the logit w.r.t. each input in a (B, m, T) batch."""
    X = np.asarray(X, dtype=np.float64)
    out = []
    for i in range(0, X.shape[0], chunk):
        cache = forward_batch(model, X[i : i + chunk])
        _, dx = backward_batch(model, cache, np.ones(cache.logits.shape[0]), need_input=True)
        out.append(dx)
    return np.concatenate(out)


def grad_explain(model: CritsModel, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ShapeMismatch(f"expected a single (m, T) instance, got shape {x.shape}")
    return input_gradients(model, x[None])[0]


def smoothgrad(model: CritsModel, x, noise_std: float = 0.1, n: int = 50, seed: int = 0) -> np.ndarray:
    """Mean input gradient over ``n`` Gaussian-perturbed copies of ``x``."""
    if n < 1 or not noise_std >= 0:
        raise BadParams(f"need n >= 1 and noise_std >= 0, got n={n}, noise_std={noise_std}")
    x = np.asarray(x, dtype=np.float64)
    if noise_std == 0:
        # every copy coincides with x; averaging would only add rounding
        return grad_explain(model, x)
    rng = np.random.default_rng(seed)
    noisy = x[None] + noise_std * rng.standard_normal((n, *x.shape))
    return input_gradients(model, noisy).mean(axis=0)


def gradient_shap(model: CritsModel, x, baselines, n: int = 50, seed: int = 0) -> np.ndarray:
    """Expected-gradients attribution along random baseline-to-input paths.

    Each draw picks a baseline ``b`` uniformly and ``alpha ~ U[0, 1]`` and
    contributes ``(x - b) * grad z(alpha*x + (1-alpha)*b)``.
    """
    x = np.asarray(x, dtype=np.float64)
    baselines = np.asarray(baselines, dtype=np.float64)
    if baselines.ndim == x.ndim:
        baselines = baselines[None]
    if n < 1 or baselines.shape[0] == 0 or baselines.shape[1:] != x.shape:
        raise BadParams(f"need n >= 1 and baselines of shape (k, {x.shape}), got {baselines.shape}")
    rng = np.random.default_rng(seed)
    picks = rng.integers(0, baselines.shape[0], size=n)
    alpha = rng.uniform(0.0, 1.0, size=n)[:, None, None]
    b = baselines[picks]
    grads = input_gradients(model, alpha * x[None] + (1.0 - alpha) * b)
    return ((x[None] - b) * grads).mean(axis=0)


def sample_baselines(instances, k: int = 16, seed: int = 0) -> np.ndarray:
    """``k`` reference instances drawn without replacement (all if fewer)."""
    instances = np.asarray(instances, dtype=np.float64)
    rng = np.random.default_rng(seed)
    k = min(k, instances.shape[0])
    return instances[np.sort(rng.choice(instances.shape[0], size=k, replace=False))]


def map_to_csv(saliency: np.ndarray) -> str:
    """One row per channel, one column per time step."""
    saliency = np.atleast_2d(np.asarray(saliency, dtype=np.float64))
    return "".join(",".join(repr(float(v)) for v in row) + "\n" for row in saliency)


def parse_map_csv(text: str) -> np.ndarray:
    rows = [line for line in text.splitlines() if line.strip() and not line.startswith("#")]
    return np.array([[float(v) for v in row.split(",")] for row in rows], dtype=np.float64)
