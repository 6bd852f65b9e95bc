"""Cross-entropy training with hand-written backprop and Adam, plus random search."""

from __future__ import annotations

import io
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from crits.data import TimeSeriesDataset
from crits.model import (
    BatchCache,
    CritsModel,
    ModelConfig,
    ShapeMismatch,
    forward,
    forward_batch,
    init_model,
    sigmoid,
)

__all__ = [
    "TrainConfig",
    "AdamState",
    "SearchSpace",
    "SearchRecord",
    "SearchResult",
    "bce_loss",
    "bce_from_logits",
    "backward",
    "backward_batch",
    "adam_step",
    "train_model",
    "evaluate",
    "f1_score",
    "sample_config",
    "random_search",
    "grad_check",
    "grad_check_details",
    "history_to_csv",
    "search_log_to_csv",
]

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 32
    epochs: int = 200
    seed: int = 0
    patience: int = 30

    def __post_init__(self):
        if not self.lr > 0:
            raise ValueError(f"lr must be > 0, got {self.lr}")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("Adam betas must lie in [0, 1)")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.epochs < 0:
            raise ValueError(f"epochs must be >= 0, got {self.epochs}")


# --------------------------------------------------------------------------
# loss and gradients
# --------------------------------------------------------------------------


def bce_from_logits(z, y):
    """Binary cross-entropy ``softplus(z) - y*z``; finite for every finite z."""
    z = np.asarray(z, dtype=np.float64)
    out = np.logaddexp(0.0, z) - np.asarray(y, dtype=np.float64) * z
    return out if out.ndim else float(out)


def bce_loss(p, y):
    """Binary cross-entropy of probability ``p`` against label ``y``."""
    p = np.asarray(p, dtype=np.float64)
    if np.any((p <= 0) | (p >= 1)):
        raise ValueError("probability must lie strictly inside (0, 1)")
    return bce_from_logits(np.log(p) - np.log1p(-p), y)


def backward_batch(model: CritsModel, cache: BatchCache, dz, need_input: bool = False):
    """Backpropagate ``dz`` (d objective / d logit, shape (B,)) through a cached pass.

    Returns ``(param_grads, input_grad)``; parameter gradients are summed
    over the batch and follow :meth:`CritsModel.params` order. Max-pool
    routes each filter's gradient to its recorded winner only, and ReLU
    units pass gradient only where the pre-activation was strictly positive.
    """
    dz = np.asarray(dz, dtype=np.float64).reshape(-1)
    B = cache.logits.shape[0]
    if dz.shape != (B,):
        raise ShapeMismatch(f"dz has shape {dz.shape}, batch size is {B}")
    L = model.n_layers

    d_out_w = cache.acts[-1].T @ dz
    d_out_b = np.asarray(dz.sum())
    g = dz[:, None] * model.out_weight[None, :]
    dW = [None] * L
    db = [None] * L
    for l in range(L - 1, -1, -1):
        g = np.where(cache.pre[l] > 0, g, 0.0)
        below = cache.acts[l - 1] if l > 0 else cache.pooled
        dW[l] = g.T @ below
        db[l] = g.sum(axis=0)
        g = g @ model.weights[l]
    # g: (B, K) gradient w.r.t. pooled values
    d_conv_b = g.sum(axis=0)
    won = np.take_along_axis(cache.windows, cache.winners[:, None, :, None], axis=2)  # (B, m, K, h)
    d_kernels = np.einsum("bk,bckh->khc", g, won)

    dx = None
    if need_input:
        cfg = model.config
        h = cfg.kernel_len
        dx_tm = np.zeros((B, cfg.T, cfg.m))
        pos = cache.winners[:, :, None] + np.arange(h)  # (B, K, h)
        contrib = g[:, :, None, None] * model.kernels[None]  # (B, K, h, m)
        rows = np.broadcast_to(np.arange(B)[:, None, None], pos.shape)
        np.add.at(dx_tm, (rows, pos), contrib)
        dx = dx_tm.transpose(0, 2, 1)
    grads = [d_kernels, d_conv_b, *dW, *db, d_out_w, d_out_b]
    return grads, dx


def backward(model: CritsModel, x, y) -> list[np.ndarray]:
    """Exact gradient of ``bce_loss(forward(model, x).probability, y)`` per parameter."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ShapeMismatch(f"expected a single (m, T) instance, got shape {x.shape}")
    cache = forward_batch(model, x[None])
    p = sigmoid(cache.logits)
    grads, _ = backward_batch(model, cache, p - float(y))
    return grads


# --------------------------------------------------------------------------
# Adam
# --------------------------------------------------------------------------


@dataclass
class AdamState:
    m: list
    v: list

    @classmethod
    def zeros_like(cls, params) -> "AdamState":
        return cls([np.zeros_like(p, dtype=np.float64) for p in params],
                   [np.zeros_like(p, dtype=np.float64) for p in params])


def adam_step(params, grads, state: AdamState, config: TrainConfig, t: int):
    """One bias-corrected Adam update; returns new ``(params, state)``."""
    if t < 1:
        raise ValueError("Adam step counter starts at 1")
    b1, b2 = config.beta1, config.beta2
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    new_p, new_m, new_v = [], [], []
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * (g * g)
        m_hat = m / c1
        v_hat = v / c2
        new_p.append(p - config.lr * m_hat / (np.sqrt(v_hat) + config.eps))
        new_m.append(m)
        new_v.append(v)
    return new_p, AdamState(new_m, new_v)


# --------------------------------------------------------------------------
# training loop
# --------------------------------------------------------------------------


def f1_score(labels, predictions) -> float:
    """F1 of class 1; 0.0 whenever precision or recall is undefined or zero."""
    y = np.asarray(labels).astype(np.int64)
    yhat = np.asarray(predictions).astype(np.int64)
    if y.shape != yhat.shape:
        raise ValueError(f"length mismatch: {y.shape} vs {yhat.shape}")
    tp = int(np.sum((y == 1) & (yhat == 1)))
    fp = int(np.sum((y == 0) & (yhat == 1)))
    fn = int(np.sum((y == 1) & (yhat == 0)))
    if tp == 0:
        return 0.0
    precision = tp / (tp + fp)
    recall = tp / (tp + fn)
    return 2 * precision * recall / (precision + recall)


def evaluate(model: CritsModel, data: TimeSeriesDataset, batch_size: int = 256) -> tuple[float, float]:
    """Mean cross-entropy and F1 of ``model`` on ``data``."""
    logits = np.concatenate(
        [forward_batch(model, data.instances[i : i + batch_size]).logits
         for i in range(0, data.n, batch_size)]
    )
    loss = float(np.mean(bce_from_logits(logits, data.labels)))
    return loss, f1_score(data.labels, (sigmoid(logits) >= 0.5).astype(np.int64))


def train_model(
    config: ModelConfig,
    tconfig: TrainConfig,
    train: TimeSeriesDataset,
    test: TimeSeriesDataset,
    model: CritsModel | None = None,
):
    """Mini-batch Adam on mean binary cross-entropy.

    Returns the snapshot with the lowest test loss and a history list with
    one dict per epoch (epoch 0 is the untrained model).
    """
    if (train.m, train.T) != (config.m, config.T) or (test.m, test.T) != (config.m, config.T):
        raise ShapeMismatch(
            f"datasets {(train.m, train.T)}/{(test.m, test.T)} do not match config {(config.m, config.T)}"
        )
    if model is None:
        model = init_model(config)
    rng = np.random.default_rng(tconfig.seed)
    params = [p.copy() for p in model.params()]
    state = AdamState.zeros_like(params)
    step = 0

    def record(epoch, current):
        tr_loss, tr_f1 = evaluate(current, train)
        te_loss, te_f1 = evaluate(current, test)
        return {"epoch": epoch, "train_loss": tr_loss, "test_loss": te_loss,
                "train_f1": tr_f1, "test_f1": te_f1}

    history = [record(0, model)]
    best, best_loss, stale = model, history[0]["test_loss"], 0
    X, y = train.instances, train.labels
    for epoch in range(1, tconfig.epochs + 1):
        order = rng.permutation(train.n)
        for start in range(0, train.n, tconfig.batch_size):
            idx = order[start : start + tconfig.batch_size]
            current = model.with_params(params)
            cache = forward_batch(current, X[idx])
            dz = (sigmoid(cache.logits) - y[idx]) / idx.size
            grads, _ = backward_batch(current, cache, dz)
            step += 1
            params, state = adam_step(params, grads, state, tconfig, step)
        model = model.with_params(params)
        row = record(epoch, model)
        history.append(row)
        log.debug("epoch %d train_loss %.5f test_loss %.5f test_f1 %.4f",
                  epoch, row["train_loss"], row["test_loss"], row["test_f1"])
        if row["test_loss"] < best_loss:
            best, best_loss, stale = model, row["test_loss"], 0
        else:
            stale += 1
            if stale >= tconfig.patience:
                break
    return best, history


def history_to_csv(history) -> str:
    buf = io.StringIO()
    buf.write("epoch,train_loss,test_loss,train_f1,test_f1\n")
    for row in history:
        buf.write(f"{row['epoch']},{row['train_loss']!r},{row['test_loss']!r},"
                  f"{row['train_f1']!r},{row['test_f1']!r}\n")
    return buf.getvalue()


# --------------------------------------------------------------------------
# gradient verification
# --------------------------------------------------------------------------


def grad_check_details(model: CritsModel, x, y, step: float = 1e-6, grads=None) -> tuple[float, int, int]:
    """Like :func:`grad_check` but also returns ``(checked, skipped)`` coordinate counts."""
    if not step > 0:
        raise ValueError("step must be positive")
    x = np.asarray(x, dtype=np.float64)
    if grads is None:
        grads = backward(model, x, y)
    base = forward(model, x)
    params = [p.copy() for p in model.params()]

    def probe():
        tr = forward(model.with_params(params), x)
        return bce_from_logits(tr.logit, y), tr

    worst, checked, skipped = 0.0, 0, 0
    for p, g in zip(params, grads):
        flat = p.reshape(-1)
        gflat = np.asarray(g).reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            lp, tp = probe()
            flat[i] = orig - step
            lm, tm = probe()
            flat[i] = orig
            if not (tp.same_region(base) and tm.same_region(base)):
                skipped += 1
                continue
            numeric = (lp - lm) / (2 * step)
            worst = max(worst, abs(numeric - gflat[i]) / max(1.0, abs(gflat[i])))
            checked += 1
    return worst, checked, skipped


def grad_check(model: CritsModel, x, y, step: float = 1e-6, grads=None) -> float:
    """Largest relative error between analytic and central-difference gradients.

    The error for a coordinate is ``|numeric - analytic| / max(1, |analytic|)``.
    Coordinates whose ``+-step`` perturbation changes any max-pool winner or
    ReLU pattern are skipped. ``grads`` overrides the analytic gradient (used
    to check that the harness notices a wrong one).
    """
    return grad_check_details(model, x, y, step, grads)[0]


# --------------------------------------------------------------------------
# random search
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class SearchSpace:
    kernel_len: tuple[int, int, int] = (3, 16, 1)
    kernel_count: tuple[int, int, int] = (16, 256, 16)
    layers: tuple[int, int, int] = (3, 5, 1)
    neurons: tuple[int, int, int] = (20, 200, 10)
    samples: int = 500
    trials: int = 2

    @staticmethod
    def grid(bounds) -> np.ndarray:
        lo, hi, step = bounds
        return np.arange(lo, hi + 1, step, dtype=np.int64)


@dataclass
class SearchRecord:
    sample_index: int
    config: ModelConfig
    trial_f1s: list
    mean_f1: float


@dataclass
class SearchResult:
    best_config: ModelConfig
    best_f1: float
    log: list = field(default_factory=list)


def _derived_seed(*keys) -> int:
    return int(np.random.SeedSequence(list(keys)).generate_state(1)[0])


def sample_config(space: SearchSpace, m: int, T: int, seed: int, index: int) -> ModelConfig:
    """Draw configuration ``index`` of the search with master ``seed``.

    Kernel lengths longer than the series are excluded from the grid.
    """
    rng = np.random.default_rng([seed, index])
    lens = SearchSpace.grid(space.kernel_len)
    lens = lens[lens <= T]
    if lens.size == 0:
        raise ValueError(f"no kernel length in {space.kernel_len} fits series length {T}")
    h = int(rng.choice(lens))
    K = int(rng.choice(SearchSpace.grid(space.kernel_count)))
    n_layers = int(rng.choice(SearchSpace.grid(space.layers)))
    hidden = tuple(int(v) for v in rng.choice(SearchSpace.grid(space.neurons), size=n_layers))
    return ModelConfig(h, K, hidden, m, T, seed=_derived_seed(seed, index))


def _run_sample(args):
    index, config, space, train, test, seed, tconfig = args
    f1s = []
    for trial in range(space.trials):
        trial_seed = _derived_seed(seed, index, trial)
        cfg = replace(config, seed=trial_seed)
        model, _ = train_model(cfg, replace(tconfig, seed=trial_seed), train, test)
        f1s.append(evaluate(model, test)[1])
    return SearchRecord(index, config, f1s, float(np.mean(f1s)))


def random_search(
    space: SearchSpace,
    train: TimeSeriesDataset,
    test: TimeSeriesDataset,
    seed: int = 0,
    tconfig: TrainConfig | None = None,
    workers: int = 1,
) -> SearchResult:
    """Random hyperparameter search ranked by mean test F1 over trials.

    Trials re-seed initialization and batch order on the fixed split. Each
    sample's seeds derive from ``(seed, sample_index)`` so parallel and
    sequential runs agree; ties keep the earliest sample.
    """
    if space.samples < 1 or space.trials < 1:
        raise ValueError("samples and trials must be >= 1")
    tconfig = tconfig or TrainConfig()
    jobs = [
        (i, sample_config(space, train.m, train.T, seed, i), space, train, test, seed, tconfig)
        for i in range(space.samples)
    ]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            records = list(pool.map(_run_sample, jobs))
    else:
        records = [_run_sample(job) for job in jobs]
    best = max(records, key=lambda r: (r.mean_f1, -r.sample_index))
    return SearchResult(best.config, best.mean_f1, records)


def search_log_to_csv(result: SearchResult) -> str:
    buf = io.StringIO()
    buf.write("sample_index,h,K,hidden_sizes,trial_f1s,mean_f1\n")
    for r in result.log:
        hidden = ";".join(str(s) for s in r.config.hidden_sizes)
        f1s = ";".join(repr(float(v)) for v in r.trial_f1s)
        buf.write(f"{r.sample_index},{r.config.kernel_len},{r.config.kernel_count},"
                  f"{hidden},{f1s},{r.mean_f1!r}\n")
    return buf.getvalue()

