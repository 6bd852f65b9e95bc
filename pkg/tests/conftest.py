import time

import numpy as np
import pytest

from crits.data import apply_norm, fit_norm, split_indices, synth_bump
from crits.model import CritsModel, ModelConfig, forward, init_model
from crits.train import TrainConfig, train_model

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def hand_model():
    """K=1, h=2, kernel [1, -1], one hidden unit of weight 2, output weight 1, bias 0.5."""
    cfg = ModelConfig(kernel_len=2, kernel_count=1, hidden_sizes=(1,), m=1, T=4)
    return CritsModel(
        cfg,
        kernels=np.array([[[1.0], [-1.0]]]),
        conv_bias=np.zeros(1),
        weights=(np.array([[2.0]]),),
        biases=(np.zeros(1),),
        out_weight=np.array([1.0]),
        out_bias=0.5,
    )


HAND_X = np.array([[0.0, 1.0, 3.0, 2.0]])


def random_model(rng, m, T, K, L, h=None, max_width=16, bias_scale=0.5):
    """He-initialised model with non-zero biases everywhere."""
    if h is None:
        h = int(rng.integers(1, min(T, 16) + 1))
    hidden = tuple(int(v) for v in rng.integers(1, max_width + 1, size=L))
    model = init_model(ModelConfig(h, K, hidden, m, T, seed=int(rng.integers(2**31))))
    params = model.params()
    L_ = model.n_layers
    bias_slots = [1, *range(2 + L_, 2 + 2 * L_), 3 + 2 * L_]
    new = [p.copy() for p in params]
    for i in bias_slots:
        new[i] = new[i] + bias_scale * rng.standard_normal(np.shape(new[i]))
    return model.with_params(new)


def brute_logit(model, x):
    """Loop-based forward pass sharing no code with the library."""
    cfg = model.config
    h, K, m, T = cfg.kernel_len, cfg.kernel_count, cfg.m, cfg.T
    pooled = []
    for k in range(K):
        best = None
        for t in range(T - h + 1):
            s = model.conv_bias[k]
            for tau in range(h):
                for c in range(m):
                    s += model.kernels[k, tau, c] * x[c, t + tau]
            if best is None or s > best:
                best = s
        pooled.append(best)
    a = pooled
    for W, b in zip(model.weights, model.biases):
        a = [max(0.0, sum(W[j, i] * a[i] for i in range(len(a))) + b[j]) for j in range(W.shape[0])]
    return sum(model.out_weight[j] * a[j] for j in range(len(a))) + model.out_bias


def region_margin(model, x):
    """Distance of x's trace from the nearest pooling tie or ReLU kink."""
    tr = forward(model, x)
    F = np.sort(tr.feature_map, axis=0)
    gaps = F[-1] - F[-2] if F.shape[0] > 1 else np.array([np.inf])
    pre = np.concatenate([np.abs(p) for p in tr.pre_activations])
    return min(gaps.min(), pre.min())


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def synth_setup():
    """Trained model on the synthetic bump task (fixed seeds)."""
    bump_len = 8
    ds, mask = synth_bump(400, 1, 64, bump_len, 3.0, seed=7)
    tr, te = split_indices(ds.labels, 0.2, seed=7)
    train_raw, test_raw = ds.subset(tr), ds.subset(te)
    stats = fit_norm(train_raw)
    train, test = apply_norm(stats, train_raw), apply_norm(stats, test_raw)
    cfg = ModelConfig(kernel_len=8, kernel_count=8, hidden_sizes=(16,), m=1, T=64, seed=0)
    start = time.perf_counter()
    model, history = train_model(cfg, TrainConfig(epochs=100, patience=100, seed=0), train, test)
    seconds = time.perf_counter() - start
    return {
        "model": model,
        "history": history,
        "train": train,
        "test": test,
        "test_mask": mask[te],
        "bump_len": bump_len,
        "train_seconds": seconds,
    }
