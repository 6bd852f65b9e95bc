"""Explanation-quality metrics and the repeated-sampling evaluation protocol.

Alignment is the RMSE of the change in predicted probability after the
most relevant cells are perturbed. Input-sensitivity is the RMSE between
an explanation and the explanation of a Gaussian-noised copy. Sparsity is
the fraction of map entries with magnitude above 0.01.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field

import numpy as np

from crits.data import TimeSeriesDataset
from crits.explain import (
    BadParams,
    explain_intrinsic,
    grad_explain,
    gradient_shap,
    smoothgrad,
)
from crits.model import CritsModel, ShapeMismatch, forward_batch, predict_proba, sigmoid

__all__ = [
    "PERTURBATIONS",
    "NOISE_GRID",
    "SPARSITY_THRESHOLD",
    "PerturbMethod",
    "Explainer",
    "make_explainer",
    "EXPLAINER_KINDS",
    "EvalReport",
    "select_cells",
    "perturb",
    "alignment",
    "input_sensitivity",
    "sparsity",
    "run_protocol",
    "parse_report_csv",
]

PERTURBATIONS = ("zero", "inverse", "swap", "mean")
NOISE_GRID = (1e-5, 1e-4, 1e-3, 1e-2, 1e-1)
SPARSITY_THRESHOLD = 0.01


@dataclass(frozen=True)
class PerturbMethod:
    """How relevance-ranked cells are perturbed.

    ``q`` is the fraction of the m*T cells selected. ``window`` is the
    subsequence length used by swap and mean; ``None`` means "use the
    model's kernel length" and is resolved by :func:`alignment`.
    """

    kind: str
    q: float = 0.1
    window: int | None = None

    def __post_init__(self):
        if self.kind not in PERTURBATIONS:
            raise BadParams(f"unknown perturbation {self.kind!r}; expected one of {PERTURBATIONS}")
        if not 0 < self.q <= 1:
            raise BadParams(f"q must lie in (0, 1], got {self.q}")
        if self.window is not None and self.window < 2:
            raise BadParams(f"window must be >= 2, got {self.window}")

    def resolved(self, model: CritsModel) -> "PerturbMethod":
        if self.window is not None:
            return self
        return PerturbMethod(self.kind, self.q, max(2, model.config.kernel_len))


# --------------------------------------------------------------------------
# explainers
# --------------------------------------------------------------------------

EXPLAINER_KINDS = ("intrinsic", "gradient", "smoothgrad", "gradient_shap", "uniform", "random")


@dataclass(frozen=True, eq=False)
class Explainer:
    """A named explanation method with fixed hyperparameters.

    ``explain`` returns the method's native map (weights for intrinsic,
    gradients for gradient/smoothgrad, attributions for gradient_shap);
    ``ranking`` returns the relevance used to pick cells to perturb.
    ``uniform`` ranks all cells equally, so ties put the earliest cells
    first. ``random`` draws i.i.d. U(0, 1) relevance per seed, which picks
    cells uniformly at random and is the location-free control.
    """

    name: str
    kind: str
    noise_std: float = 0.1
    n_samples: int = 50
    baselines: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in EXPLAINER_KINDS:
            raise BadParams(f"unknown explainer {self.kind!r}; expected one of {EXPLAINER_KINDS}")
        if self.kind == "gradient_shap" and self.baselines is None:
            raise BadParams("gradient_shap needs baselines")

    @property
    def stochastic(self) -> bool:
        return self.kind in ("smoothgrad", "gradient_shap", "random")

    def explain(self, model: CritsModel, x, seed: int = 0) -> np.ndarray:
        if self.kind == "intrinsic":
            return explain_intrinsic(model, x).weights
        if self.kind == "gradient":
            return grad_explain(model, x)
        if self.kind == "smoothgrad":
            return smoothgrad(model, x, self.noise_std, self.n_samples, seed)
        if self.kind == "gradient_shap":
            return gradient_shap(model, x, self.baselines, self.n_samples, seed)
        if self.kind == "random":
            return np.random.default_rng(seed).random(np.shape(x))
        return np.ones(np.shape(x))

    def ranking(self, model: CritsModel, x, seed: int = 0) -> np.ndarray:
        if self.kind == "intrinsic":
            return np.abs(explain_intrinsic(model, x).relevance)
        return np.abs(self.explain(model, x, seed))


def make_explainer(name: str, baselines=None, noise_std: float = 0.1, n_samples: int = 50) -> Explainer:
    return Explainer(name, name, noise_std, n_samples,
                     None if baselines is None else np.asarray(baselines, dtype=np.float64))


# --------------------------------------------------------------------------
# perturbations
# --------------------------------------------------------------------------


def select_cells(relevance, q: float) -> np.ndarray:
    """Flat (channel-major) indices of the top ``ceil(q*m*T)`` cells by |relevance|.

    Ties go to the smaller flat index.
    """
    flat = np.abs(np.asarray(relevance, dtype=np.float64)).reshape(-1)
    count = min(flat.size, max(1, math.ceil(q * flat.size - 1e-9)))
    return np.argsort(-flat, kind="stable")[:count]


def _merged_windows(times, window: int, T: int) -> list[tuple[int, int]]:
    spans = []
    for t in sorted(set(int(v) for v in times)):
        lo = t - window // 2
        start, end = max(0, lo), min(T, lo + window)
        if spans and start < spans[-1][1]:
            spans[-1] = (spans[-1][0], max(spans[-1][1], end))
        else:
            spans.append((start, end))
    return spans


def perturb(x, relevance, method: PerturbMethod) -> np.ndarray:
    """Perturb the most relevant cells of ``x`` according to ``method``.

    zero sets selected cells to 0; inverse maps a selected value v to
    ``max(channel) - v``; swap reverses, and mean flattens to its mean, a
    window of ``method.window`` steps centred on each selected cell
    (clipped to the series, overlapping windows merged first).
    """
    x = np.asarray(x, dtype=np.float64)
    relevance = np.asarray(relevance, dtype=np.float64)
    if x.ndim != 2 or relevance.shape != x.shape:
        raise ShapeMismatch(f"relevance shape {relevance.shape} does not match instance {x.shape}")
    m, T = x.shape
    cells = select_cells(relevance, method.q)
    ch, tt = np.divmod(cells, T)
    out = x.copy()
    if method.kind == "zero":
        out[ch, tt] = 0.0
    elif method.kind == "inverse":
        out[ch, tt] = x.max(axis=1)[ch] - x[ch, tt]
    else:
        if method.window is None:
            raise BadParams(f"{method.kind} perturbation needs a window length")
        for c in np.unique(ch):
            for start, end in _merged_windows(tt[ch == c], method.window, T):
                seg = x[c, start:end]
                out[c, start:end] = seg[::-1] if method.kind == "swap" else seg.mean()
    return out


# --------------------------------------------------------------------------
# metrics
# --------------------------------------------------------------------------


def _instance_seed(*keys) -> int:
    return int(np.random.SeedSequence([int(k) for k in keys]).generate_state(1)[0])


def alignment(model: CritsModel, explainer: Explainer, instances, method: PerturbMethod, seeds=None) -> float:
    """RMSE of ``p(x) - p(perturbed x)`` over ``instances``."""
    X = np.asarray(instances, dtype=np.float64)
    if X.ndim == 2:
        X = X[None]
    if X.shape[0] == 0:
        raise BadParams("alignment needs at least one instance")
    method = method.resolved(model)
    if seeds is None:
        seeds = range(X.shape[0])
    perturbed = np.stack([perturb(x, explainer.ranking(model, x, s), method) for x, s in zip(X, seeds)])
    shift = predict_proba(model, X) - predict_proba(model, perturbed)
    return float(np.sqrt(np.mean(shift**2)))


def input_sensitivity(
    model: CritsModel, explainer: Explainer, x, noise_std: float, seed: int = 0, explainer_seed: int | None = None
) -> float:
    """RMSE between the explanation of ``x`` and of ``x + N(0, noise_std^2)``.

    The noise draw depends only on ``seed``, so different noise levels with
    the same seed scale one common direction. Stochastic explainers reuse
    ``explainer_seed`` (default ``seed``) for both calls.
    """
    if not noise_std >= 0:
        raise BadParams(f"noise_std must be >= 0, got {noise_std}")
    x = np.asarray(x, dtype=np.float64)
    es = seed if explainer_seed is None else explainer_seed
    noise = np.random.default_rng(seed).standard_normal(x.shape)
    a = explainer.explain(model, x, es)
    b = explainer.explain(model, x + noise_std * noise, es)
    return float(np.sqrt(np.mean((a - b) ** 2)))


def sparsity(saliency) -> float:
    """Fraction of entries with magnitude strictly above 0.01."""
    saliency = np.asarray(saliency, dtype=np.float64)
    return float(np.count_nonzero(np.abs(saliency) > SPARSITY_THRESHOLD) / saliency.size)


# --------------------------------------------------------------------------
# protocol
# --------------------------------------------------------------------------


@dataclass
class EvalReport:
    """Long-format metric table plus protocol metadata.

    Each record is ``(explainer, dataset, metric, setting, repetition, value)``
    where ``setting`` is the perturbation name for alignment, ``noise=<std>``
    for input-sensitivity and ``instance=<index>`` for sparsity.
    """

    records: list = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    def add(self, explainer, dataset, metric, setting, repetition, value):
        self.records.append((explainer, dataset, metric, str(setting), int(repetition), float(value)))

    @property
    def explainers(self) -> list[str]:
        return sorted({r[0] for r in self.records})

    def values(self, explainer: str, metric: str, setting: str | None = None) -> np.ndarray:
        return np.array([
            r[5] for r in self.records
            if r[0] == explainer and r[2] == metric and (setting is None or r[3] == setting)
        ])

    def sorted_records(self) -> list:
        return sorted(self.records, key=lambda r: (r[0], r[1], r[2], _setting_key(r[3]), r[4]))

    def to_csv(self) -> str:
        buf = io.StringIO()
        for key in sorted(self.metadata):
            buf.write(f"# {key}={self.metadata[key]}\n")
        buf.write("explainer,dataset,metric,setting,repetition,value\n")
        for e, d, metric, s, rep, v in self.sorted_records():
            buf.write(f"{e},{d},{metric},{s},{rep},{v!r}\n")
        return buf.getvalue()


def _setting_key(setting: str):
    if setting in PERTURBATIONS:
        return (0, PERTURBATIONS.index(setting), 0.0)
    name, _, value = setting.partition("=")
    try:
        return (1, name, float(value))
    except ValueError:
        return (2, setting, 0.0)


def parse_report_csv(text: str) -> EvalReport:
    report = EvalReport()
    header_seen = False
    for line in text.splitlines():
        if not line.strip():
            continue
        if line.startswith("#"):
            key, _, value = line[1:].strip().partition("=")
            report.metadata[key] = value
            continue
        if not header_seen:
            header_seen = True
            continue
        e, d, metric, s, rep, v = line.split(",")
        report.add(e, d, metric, s, int(rep), float(v))
    return report


def run_protocol(
    model: CritsModel,
    explainers,
    test: TimeSeriesDataset,
    seed: int = 0,
    q: float = 0.1,
    window: int | None = None,
    noise_grid=NOISE_GRID,
    n_instances: int = 50,
    repetitions: int = 5,
    methods=PERTURBATIONS,
) -> EvalReport:
    """Repeated evaluation on random test subsets.

    Every repetition draws ``n_instances`` test instances without
    replacement (all of them if the test set is smaller) and records, per
    explainer, the alignment for each perturbation, the mean
    input-sensitivity for each noise level and the per-instance sparsity.
    Seeds derive from ``(seed, repetition, instance index)``, so results do
    not depend on the order explainers are given in.
    """
    explainers = list(explainers)
    names = [e.name for e in explainers]
    if len(set(names)) != len(names):
        raise BadParams(f"duplicate explainer names: {names}")
    window = window if window is not None else max(2, model.config.kernel_len)
    perturbations = [PerturbMethod(k, q, window) for k in methods]
    n_draw = min(n_instances, test.n)
    report = EvalReport(metadata={
        "dataset": test.name,
        "instances_per_repetition": n_draw,
        "instances_requested": n_instances,
        "repetitions": repetitions,
        "seed": seed,
        "q": q,
        "window": window,
        "noise_grid": ";".join(repr(float(s)) for s in noise_grid),
        "explainers": ";".join(sorted(names)),
        "ranking": "intrinsic=|w*x|;others=|map|",
        "sparsity_threshold": SPARSITY_THRESHOLD,
    })
    for rep in range(1, repetitions + 1):
        rng = np.random.default_rng([seed, rep])
        idx = np.sort(rng.choice(test.n, size=n_draw, replace=False))
        X = test.instances[idx]
        seeds = [_instance_seed(seed, rep, i) for i in idx]
        p_orig = sigmoid(forward_batch(model, X).logits)
        for explainer in explainers:
            rankings = [explainer.ranking(model, x, s) for x, s in zip(X, seeds)]
            for method in perturbations:
                perturbed = np.stack([perturb(x, r, method) for x, r in zip(X, rankings)])
                shift = p_orig - sigmoid(forward_batch(model, perturbed).logits)
                report.add(explainer.name, test.name, "alignment", method.kind, rep,
                           np.sqrt(np.mean(shift**2)))
            base_maps = [explainer.explain(model, x, s) for x, s in zip(X, seeds)]
            for i, smap in zip(idx, base_maps):
                report.add(explainer.name, test.name, "sparsity", f"instance={i}", rep, sparsity(smap))
            for sigma in noise_grid:
                errs = []
                for x, s, base in zip(X, seeds, base_maps):
                    noise = np.random.default_rng(s).standard_normal(x.shape)
                    moved = explainer.explain(model, x + sigma * noise, s)
                    errs.append(np.sqrt(np.mean((base - moved) ** 2)))
                report.add(explainer.name, test.name, "input_sensitivity", f"noise={float(sigma)!r}", rep,
                           np.mean(errs))
    return report
