"""Convolution -> global max-pool -> rectifier network -> sigmoid classifier.

The convolution has no activation: each filter's response is an affine
function of the input window it covers, so the whole network is piecewise
affine in the input once the max-pool winners and ReLU patterns are fixed.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from crits.data import NormStats

__all__ = [
    "ModelError",
    "BadConfig",
    "ShapeMismatch",
    "NonFiniteInput",
    "CorruptModel",
    "VersionMismatch",
    "ModelConfig",
    "CritsModel",
    "ForwardTrace",
    "BatchCache",
    "init_model",
    "forward",
    "forward_batch",
    "predict_proba",
    "predict_label",
    "sigmoid",
    "save_model",
    "load_model",
    "FORMAT_VERSION",
]

FORMAT_VERSION = 1


class ModelError(ValueError):
    pass


class BadConfig(ModelError):
    pass


class ShapeMismatch(ModelError):
    pass


class NonFiniteInput(ModelError):
    pass


class CorruptModel(ModelError):
    pass


class VersionMismatch(ModelError):
    pass


def sigmoid(z):
    """Numerically stable logistic function (scalar or array)."""
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class ModelConfig:
    kernel_len: int
    kernel_count: int
    hidden_sizes: tuple[int, ...]
    m: int
    T: int
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "hidden_sizes", tuple(int(s) for s in self.hidden_sizes))
        self.validate()

    def validate(self):
        if self.m < 1 or self.T < 1:
            raise BadConfig(f"input shape must be positive, got m={self.m}, T={self.T}")
        if not 1 <= self.kernel_len <= self.T:
            raise BadConfig(f"kernel_len must lie in [1, T={self.T}], got {self.kernel_len}")
        if self.kernel_count < 1:
            raise BadConfig(f"kernel_count must be >= 1, got {self.kernel_count}")
        if len(self.hidden_sizes) < 1:
            raise BadConfig("need at least one hidden layer")
        if any(s < 1 for s in self.hidden_sizes):
            raise BadConfig(f"hidden sizes must be >= 1, got {self.hidden_sizes}")

    @property
    def n_positions(self) -> int:
        return self.T - self.kernel_len + 1

    def to_dict(self) -> dict:
        return {
            "kernel_len": self.kernel_len,
            "kernel_count": self.kernel_count,
            "hidden_sizes": list(self.hidden_sizes),
            "m": self.m,
            "T": self.T,
            "seed": self.seed,
        }


@dataclass(frozen=True, eq=False)
class CritsModel:
    """Learnable parameters plus architecture metadata.

    Shapes: ``kernels`` (K, h, m); ``conv_bias`` (K,); ``weights[l]``
    (n_l, n_{l-1}) with n_0 = K; ``biases[l]`` (n_l,); ``out_weight``
    (n_L,); ``out_bias`` scalar.
    """

    config: ModelConfig
    kernels: np.ndarray
    conv_bias: np.ndarray
    weights: tuple[np.ndarray, ...]
    biases: tuple[np.ndarray, ...]
    out_weight: np.ndarray
    out_bias: float
    norm: NormStats | None = None

    def __post_init__(self):
        object.__setattr__(self, "weights", tuple(self.weights))
        object.__setattr__(self, "biases", tuple(self.biases))
        object.__setattr__(self, "out_bias", float(self.out_bias))
        self.check()

    def check(self):
        cfg = self.config
        K, h, m = cfg.kernel_count, cfg.kernel_len, cfg.m
        problems = []
        if self.kernels.shape != (K, h, m):
            problems.append(f"kernels {self.kernels.shape} != {(K, h, m)}")
        if self.conv_bias.shape != (K,):
            problems.append(f"conv_bias {self.conv_bias.shape} != {(K,)}")
        if len(self.weights) != len(cfg.hidden_sizes) or len(self.biases) != len(cfg.hidden_sizes):
            problems.append("layer count does not match hidden_sizes")
        else:
            fan_in = K
            for i, (W, b, size) in enumerate(zip(self.weights, self.biases, cfg.hidden_sizes)):
                if W.shape != (size, fan_in):
                    problems.append(f"layer {i} weight {W.shape} != {(size, fan_in)}")
                if b.shape != (size,):
                    problems.append(f"layer {i} bias {b.shape} != {(size,)}")
                fan_in = size
            if self.out_weight.shape != (fan_in,):
                problems.append(f"out_weight {self.out_weight.shape} != {(fan_in,)}")
        if self.norm is not None and self.norm.m != m:
            problems.append(f"norm stats cover {self.norm.m} channels, model expects {m}")
        if problems:
            raise CorruptModel("; ".join(problems))
        if not all(np.all(np.isfinite(p)) for p in self.params()):
            raise CorruptModel("non-finite parameter")

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    def params(self) -> list[np.ndarray]:
        """Parameter arrays in canonical order (out_bias as a 0-d array)."""
        return [
            self.kernels,
            self.conv_bias,
            *self.weights,
            *self.biases,
            self.out_weight,
            np.asarray(self.out_bias, dtype=np.float64),
        ]

    def param_names(self) -> list[str]:
        L = self.n_layers
        return (
            ["kernels", "conv_bias"]
            + [f"weights[{i}]" for i in range(L)]
            + [f"biases[{i}]" for i in range(L)]
            + ["out_weight", "out_bias"]
        )

    def with_params(self, params) -> "CritsModel":
        params = [np.array(p, dtype=np.float64) for p in params]
        L = self.n_layers
        return CritsModel(
            self.config,
            params[0],
            params[1],
            tuple(params[2 : 2 + L]),
            tuple(params[2 + L : 2 + 2 * L]),
            params[2 + 2 * L],
            float(params[3 + 2 * L]),
            self.norm,
        )

    def with_norm(self, norm: NormStats | None) -> "CritsModel":
        return CritsModel(
            self.config, self.kernels, self.conv_bias, self.weights, self.biases,
            self.out_weight, self.out_bias, norm,
        )


@dataclass(frozen=True, eq=False)
class ForwardTrace:
    """Everything a single forward pass decided.

    ``feature_map`` is (T-h+1, K). ``winners[k]`` is the smallest time index
    attaining the maximum of column k. ``patterns[l][j]`` is True iff the
    pre-activation of unit j in hidden layer l is strictly positive.
    """

    feature_map: np.ndarray
    pooled: np.ndarray
    winners: np.ndarray
    patterns: tuple[np.ndarray, ...]
    pre_activations: tuple[np.ndarray, ...]
    logit: float
    probability: float

    def same_region(self, other: "ForwardTrace") -> bool:
        """True when both traces select the same affine piece."""
        return np.array_equal(self.winners, other.winners) and all(
            np.array_equal(a, b) for a, b in zip(self.patterns, other.patterns)
        )


@dataclass
class BatchCache:
    """Intermediate values of a batched forward pass, kept for backprop."""

    windows: np.ndarray  # (B, m, P, h)
    feature_map: np.ndarray  # (B, P, K)
    winners: np.ndarray  # (B, K)
    pooled: np.ndarray  # (B, K)
    pre: list  # per layer (B, n_l)
    acts: list  # per layer (B, n_l), acts[-1] feeds the output unit
    logits: np.ndarray  # (B,)


def init_model(config: ModelConfig, norm: NormStats | None = None) -> CritsModel:
    """He-scaled uniform weights (std sqrt(2/fan_in)), zero biases."""
    config.validate()
    rng = np.random.default_rng(config.seed)

    def he_uniform(shape, fan_in):
        bound = np.sqrt(6.0 / fan_in)
        return rng.uniform(-bound, bound, size=shape)

    K, h, m = config.kernel_count, config.kernel_len, config.m
    kernels = he_uniform((K, h, m), h * m)
    weights, biases = [], []
    fan_in = K
    for size in config.hidden_sizes:
        weights.append(he_uniform((size, fan_in), fan_in))
        biases.append(np.zeros(size))
        fan_in = size
    out_weight = he_uniform((fan_in,), fan_in)
    return CritsModel(config, kernels, np.zeros(K), tuple(weights), tuple(biases), out_weight, 0.0, norm)


def _check_input(model: CritsModel, X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    cfg = model.config
    if X.ndim != 3 or X.shape[1:] != (cfg.m, cfg.T):
        raise ShapeMismatch(f"expected input shape (B, {cfg.m}, {cfg.T}), got {X.shape}")
    if not np.all(np.isfinite(X)):
        raise NonFiniteInput("input contains NaN or infinite values")
    return X


def forward_batch(model: CritsModel, X) -> BatchCache:
    """Vectorized forward pass over a batch ``X`` of shape (B, m, T)."""
    X = _check_input(model, X)
    B = X.shape[0]
    cfg = model.config
    windows = sliding_window_view(X, cfg.kernel_len, axis=2)  # (B, m, P, h)
    P = cfg.n_positions
    flat = windows.transpose(0, 2, 1, 3).reshape(B, P, cfg.m * cfg.kernel_len)
    kmat = model.kernels.transpose(2, 1, 0).reshape(cfg.m * cfg.kernel_len, cfg.kernel_count)
    F = flat @ kmat + model.conv_bias
    winners = np.argmax(F, axis=1)  # first maximal index
    pooled = np.take_along_axis(F, winners[:, None, :], axis=1)[:, 0, :]
    pre, acts = [], []
    a = pooled
    for W, b in zip(model.weights, model.biases):
        s = a @ W.T + b
        a = np.where(s > 0, s, 0.0)
        pre.append(s)
        acts.append(a)
    logits = a @ model.out_weight + model.out_bias
    return BatchCache(windows, F, winners.reshape(B, -1), pooled, pre, acts, logits)


def forward(model: CritsModel, x) -> ForwardTrace:
    """Forward pass for one (m, T) instance, recording winners and patterns."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ShapeMismatch(f"expected a single (m, T) instance, got shape {x.shape}")
    c = forward_batch(model, x[None])
    z = float(c.logits[0])
    pre = tuple(s[0] for s in c.pre)
    return ForwardTrace(
        feature_map=c.feature_map[0],
        pooled=c.pooled[0],
        winners=c.winners[0],
        patterns=tuple(s > 0 for s in pre),
        pre_activations=pre,
        logit=z,
        probability=sigmoid(z),
    )


def predict_proba(model: CritsModel, x) -> float | np.ndarray:
    """Probability of class 1 for one (m, T) instance or a (B, m, T) batch."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 2:
        return forward(model, x).probability
    return sigmoid(forward_batch(model, x).logits)


def predict_label(model: CritsModel, x) -> int | np.ndarray:
    p = predict_proba(model, x)
    if np.ndim(p) == 0:
        return int(p >= 0.5)
    return (p >= 0.5).astype(np.int64)


# --------------------------------------------------------------------------
# serialization
# --------------------------------------------------------------------------


def _encode(arr) -> dict:
    arr = np.asarray(arr, dtype=np.float64)
    # repr() gives the shortest decimal string that round-trips binary64
    return {"shape": list(arr.shape), "values": [repr(float(v)) for v in arr.reshape(-1)]}


def _decode(obj, name) -> np.ndarray:
    try:
        shape = tuple(int(s) for s in obj["shape"])
        values = np.array([float(v) for v in obj["values"]], dtype=np.float64)
        return values.reshape(shape)
    except (KeyError, TypeError, ValueError) as exc:
        raise CorruptModel(f"cannot decode array {name!r}: {exc}") from None


def save_model(model: CritsModel, path) -> None:
    doc = {
        "version": FORMAT_VERSION,
        "config": model.config.to_dict(),
        "norm": None
        if model.norm is None
        else {"mean": _encode(model.norm.mean), "std": _encode(model.norm.std)},
        "params": {name: _encode(p) for name, p in zip(model.param_names(), model.params())},
    }
    Path(path).write_text(json.dumps(doc, indent=1) + "\n", encoding="utf-8")


def load_model(path) -> CritsModel:
    text = Path(path).read_text(encoding="utf-8")
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise CorruptModel(f"{path}: not a valid model document ({exc.msg})") from None
    if not isinstance(doc, dict) or "version" not in doc:
        raise CorruptModel(f"{path}: missing version field")
    if doc["version"] != FORMAT_VERSION:
        raise VersionMismatch(f"{path}: model format version {doc['version']!r}, expected {FORMAT_VERSION}")
    try:
        cfg = doc["config"]
        config = ModelConfig(
            kernel_len=int(cfg["kernel_len"]),
            kernel_count=int(cfg["kernel_count"]),
            hidden_sizes=tuple(cfg["hidden_sizes"]),
            m=int(cfg["m"]),
            T=int(cfg["T"]),
            seed=int(cfg.get("seed", 0)),
        )
        L = len(config.hidden_sizes)
        p = doc["params"]
        norm = None
        if doc.get("norm") is not None:
            norm = NormStats(_decode(doc["norm"]["mean"], "mean"), _decode(doc["norm"]["std"], "std"))
        return CritsModel(
            config,
            _decode(p["kernels"], "kernels"),
            _decode(p["conv_bias"], "conv_bias"),
            tuple(_decode(p[f"weights[{i}]"], f"weights[{i}]") for i in range(L)),
            tuple(_decode(p[f"biases[{i}]"], f"biases[{i}]") for i in range(L)),
            _decode(p["out_weight"], "out_weight"),
            float(_decode(p["out_bias"], "out_bias")),
            norm,
        )
    except (KeyError, TypeError, BadConfig) as exc:
        raise CorruptModel(f"{path}: {exc}") from None
    except ValueError as exc:
        if isinstance(exc, CorruptModel):
            raise
        raise CorruptModel(f"{path}: {exc}") from None
