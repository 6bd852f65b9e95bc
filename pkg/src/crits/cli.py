"""``crits`` command line: synth, train, search, explain, eval, report.

Every command writes its artifacts plus a ``manifest.txt`` (resolved
arguments and SHA-256 of each artifact) into ``--out``. All randomness
flows from ``--seed``.
"""

from __future__ import annotations

import argparse
import hashlib
import logging
import sys
from pathlib import Path

from crits import __version__
from crits.data import (
    TimeSeriesDataset,
    apply_norm,
    fit_norm,
    load_dataset,
    mask_to_csv,
    split_indices,
    synth_bump,
    to_csv,
)
from crits.evaluation import (
    EXPLAINER_KINDS,
    NOISE_GRID,
    make_explainer,
    parse_report_csv,
    run_protocol,
)
from crits.explain import map_to_csv, parse_map_csv, sample_baselines
from crits.model import ModelConfig, load_model, save_model
from crits.report import heatmap_svg, report_svgs
from crits.train import (
    SearchSpace,
    TrainConfig,
    history_to_csv,
    random_search,
    search_log_to_csv,
    train_model,
)

log = logging.getLogger("crits")


class CliError(Exception):
    pass


def _int_list(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _float_list(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _explainer_list(text: str) -> tuple[str, ...]:
    names = tuple(v.strip() for v in text.split(",") if v.strip())
    bad = [n for n in names if n not in EXPLAINER_KINDS]
    if bad or not names:
        raise argparse.ArgumentTypeError(f"unknown explainer(s) {bad}; choose from {','.join(EXPLAINER_KINDS)}")
    return names


def _read_data(paths: str, fmt: str | None) -> TimeSeriesDataset:
    """Load one or more comma-separated files and concatenate them."""
    data = None
    for part in paths.split(","):
        path = Path(part)
        if not path.is_file():
            raise CliError(f"data file not found: {path}")
        ds = load_dataset(path, fmt)
        data = ds if data is None else data.concat(ds)
    return data


class Run:
    """Collects artifacts for one command and writes the manifest."""

    def __init__(self, command: str, args: argparse.Namespace):
        self.out = Path(args.out)
        self.out.mkdir(parents=True, exist_ok=True)
        self.entries = {"command": command, "crits_version": __version__}
        for key, value in sorted(vars(args).items()):
            if key in ("func", "command", "verbose"):
                continue
            if isinstance(value, tuple):
                value = ",".join(str(v) for v in value)
            self.entries[f"arg.{key}"] = value
        self.artifacts = {}

    def write(self, name: str, text: str) -> Path:
        path = self.out / name
        path.write_text(text, encoding="utf-8")
        self.artifacts[name] = hashlib.sha256(text.encode("utf-8")).hexdigest()
        return path

    def note(self, key: str, value):
        self.entries[key] = value

    def finish(self):
        lines = [f"{k}={self.entries[k]}" for k in sorted(self.entries)]
        lines += [f"artifact.{name}=sha256:{digest}" for name, digest in sorted(self.artifacts.items())]
        (self.out / "manifest.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")


# --------------------------------------------------------------------------
# commands
# --------------------------------------------------------------------------


def cmd_synth(args) -> int:
    run = Run("synth", args)
    ds, mask = synth_bump(args.n, args.m, args.length, args.bump_len, args.snr, args.seed)
    run.write("data.csv", to_csv(ds))
    run.write("mask.csv", mask_to_csv(mask))
    run.finish()
    print(f"wrote {ds.n} instances (m={ds.m}, T={ds.T}) to {run.out}")
    return 0


def _split_and_norm(args, data):
    train_idx, test_idx = split_indices(data.labels, args.test_fraction, args.seed)
    train_raw, test_raw = data.subset(train_idx), data.subset(test_idx)
    stats = fit_norm(train_raw)
    return train_raw, test_raw, stats, apply_norm(stats, train_raw), apply_norm(stats, test_raw)


def _train_config(args) -> TrainConfig:
    return TrainConfig(lr=args.lr, batch_size=args.batch_size, epochs=args.epochs,
                       seed=args.seed, patience=args.patience)


def cmd_train(args) -> int:
    data = _read_data(args.data, args.format)
    run = Run("train", args)
    train_raw, test_raw, stats, train, test = _split_and_norm(args, data)
    config = ModelConfig(args.kernel_len, args.kernels, args.hidden, data.m, data.T, seed=args.seed)
    model, history = train_model(config, _train_config(args), train, test)
    model = model.with_norm(stats)
    save_model(model, run.out / "model.json")
    run.artifacts["model.json"] = hashlib.sha256((run.out / "model.json").read_bytes()).hexdigest()
    run.write("history.csv", history_to_csv(history))
    run.write("train.csv", to_csv(train_raw))
    run.write("test.csv", to_csv(test_raw))
    best = min(history, key=lambda r: r["test_loss"])
    run.note("result.best_epoch", best["epoch"])
    run.note("result.test_f1", repr(best["test_f1"]))
    run.note("result.test_loss", repr(best["test_loss"]))
    run.finish()
    print(f"best epoch {best['epoch']}: test loss {best['test_loss']:.4f}, test F1 {best['test_f1']:.4f}")
    return 0


def cmd_search(args) -> int:
    data = _read_data(args.data, args.format)
    run = Run("search", args)
    _, _, _, train, test = _split_and_norm(args, data)
    space = SearchSpace(samples=args.samples, trials=args.trials)
    result = random_search(space, train, test, args.seed, _train_config(args), workers=args.workers)
    run.write("search_log.csv", search_log_to_csv(result))
    best = result.best_config
    run.note("result.best_kernel_len", best.kernel_len)
    run.note("result.best_kernels", best.kernel_count)
    run.note("result.best_hidden", ",".join(str(s) for s in best.hidden_sizes))
    run.note("result.best_f1", repr(result.best_f1))
    run.finish()
    print(f"best: h={best.kernel_len} K={best.kernel_count} hidden={best.hidden_sizes} mean F1 {result.best_f1:.4f}")
    return 0


def _prepared(args):
    model = load_model(args.model)
    data = _read_data(args.data, args.format)
    if (data.m, data.T) != (model.config.m, model.config.T):
        raise CliError(f"data shape (m={data.m}, T={data.T}) does not match model "
                       f"(m={model.config.m}, T={model.config.T})")
    if model.norm is not None:
        data = apply_norm(model.norm, data)
    background = data
    if getattr(args, "background", None):
        background = _read_data(args.background, args.format)
        if model.norm is not None:
            background = apply_norm(model.norm, background)
    return model, data, background


def _explainers(args, background):
    baselines = sample_baselines(background.instances, args.baselines, args.seed)
    return [make_explainer(name, baselines, args.noise_std, args.n_samples) for name in args.explainer]


def cmd_explain(args) -> int:
    model, data, background = _prepared(args)
    run = Run("explain", args)
    bad = [i for i in args.instances if not 0 <= i < data.n]
    if bad:
        raise CliError(f"instance index out of range 0..{data.n - 1}: {bad}")
    for explainer in _explainers(args, background):
        for i in args.instances:
            x = data.instances[i]
            smap = explainer.explain(model, x, args.seed)
            stem = f"{explainer.name}_inst{i}"
            run.write(f"{stem}.csv", map_to_csv(smap))
            run.write(f"{stem}.svg", heatmap_svg(smap, f"{explainer.name} - instance {i} "
                                                        f"(label {int(data.labels[i])})", series=x))
    run.note("map_semantics", "intrinsic=weights;gradient,smoothgrad=logit gradients;"
                              "gradient_shap=attributions;uniform=ones")
    run.finish()
    print(f"wrote {len(run.artifacts)} files to {run.out}")
    return 0


def cmd_eval(args) -> int:
    model, data, background = _prepared(args)
    run = Run("eval", args)
    report = run_protocol(
        model, _explainers(args, background), data, seed=args.seed, q=args.q, window=args.window,
        noise_grid=args.noise_grid, n_instances=args.n_instances, repetitions=args.repetitions,
    )
    run.write("eval_report.csv", report.to_csv())
    for metric, svg in report_svgs(report).items():
        run.write(f"{metric}.svg", svg)
    run.finish()
    for name in report.explainers:
        al = {k: report.values(name, "alignment", k).mean() for k in ("zero", "inverse", "swap", "mean")}
        print(name, " ".join(f"A[{k}]={v:.4f}" for k, v in al.items()),
              f"S={report.values(name, 'sparsity').mean():.4f}")
    return 0


def cmd_report(args) -> int:
    path = Path(args.data)
    if not path.is_file():
        raise CliError(f"input file not found: {path}")
    text = path.read_text(encoding="utf-8")
    run = Run("report", args)
    body = [ln for ln in text.splitlines() if ln.strip() and not ln.startswith("#")]
    if body and body[0].startswith("explainer,dataset,metric"):
        for metric, svg in report_svgs(parse_report_csv(text)).items():
            run.write(f"{metric}.svg", svg)
    else:
        run.write(f"{path.stem}.svg", heatmap_svg(parse_map_csv(text), path.stem))
    run.finish()
    print(f"wrote {len(run.artifacts)} SVG file(s) to {run.out}")
    return 0


# --------------------------------------------------------------------------
# argument parsing
# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="crits",
        description="Train convolutional rectifier time-series classifiers and extract exact "
                    "per-instance linear explanations.",
        formatter_class=argparse.ArgumentDefaultsHelpFormatter,
    )
    parser.add_argument("--version", action="version", version=f"crits {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")
    sub.required = True
    fmt = argparse.ArgumentDefaultsHelpFormatter

    def common(p, data=True):
        if data:
            p.add_argument("--data", required=True, help="dataset file(s), comma-separated and concatenated")
            p.add_argument("--format", choices=("ts", "csv"), default=None,
                           help="input format (default: from file suffix)")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", type=int, default=0, help="master random seed")

    def training(p):
        p.add_argument("--epochs", type=int, default=200)
        p.add_argument("--lr", type=float, default=1e-3, help="Adam learning rate")
        p.add_argument("--batch-size", type=int, default=32)
        p.add_argument("--patience", type=int, default=30, help="epochs without test-loss improvement")
        p.add_argument("--test-fraction", type=float, default=0.2)

    def explaining(p, default):
        p.add_argument("--model", required=True, help="model file written by 'crits train'")
        p.add_argument("--explainer", type=_explainer_list, default=default,
                       help=f"comma list from {','.join(EXPLAINER_KINDS)}")
        p.add_argument("--noise-std", type=float, default=0.1, help="SmoothGrad noise level")
        p.add_argument("--n-samples", type=int, default=50, help="SmoothGrad / GradientSHAP draws")
        p.add_argument("--baselines", type=int, default=16, help="GradientSHAP reference instances")
        p.add_argument("--background", default=None,
                       help="file(s) to draw GradientSHAP baselines from (default: --data)")

    p = sub.add_parser("synth", help="write a synthetic bump dataset and its ground-truth mask", formatter_class=fmt)
    common(p, data=False)
    p.add_argument("--n", type=int, default=400)
    p.add_argument("--m", type=int, default=1)
    p.add_argument("--length", type=int, default=64, help="series length T")
    p.add_argument("--bump-len", type=int, default=8)
    p.add_argument("--snr", type=float, default=3.0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="fit a model on a stratified split", formatter_class=fmt)
    common(p)
    training(p)
    p.add_argument("--kernel-len", type=int, default=8)
    p.add_argument("--kernels", type=int, default=16)
    p.add_argument("--hidden", type=_int_list, default=(32, 16), help="hidden layer sizes")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("search", help="random hyperparameter search", formatter_class=fmt)
    common(p)
    training(p)
    p.add_argument("--samples", type=int, default=500)
    p.add_argument("--trials", type=int, default=2)
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_search)

    p = sub.add_parser("explain", help="explain selected instances", formatter_class=fmt)
    common(p)
    explaining(p, ("intrinsic",))
    p.add_argument("--instances", type=_int_list, default=(0,), help="instance indices")
    p.set_defaults(func=cmd_explain)

    p = sub.add_parser("eval", help="alignment / input-sensitivity / sparsity protocol", formatter_class=fmt)
    common(p)
    explaining(p, ("intrinsic", "smoothgrad", "gradient_shap"))
    p.add_argument("--q", type=float, default=0.1, help="fraction of cells perturbed")
    p.add_argument("--window", type=int, default=None, help="swap/mean window (default: kernel length)")
    p.add_argument("--noise-grid", type=_float_list, default=NOISE_GRID)
    p.add_argument("--n-instances", type=int, default=50)
    p.add_argument("--repetitions", type=int, default=5)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("report", help="render an eval report or saliency CSV to SVG", formatter_class=fmt)
    p.add_argument("--data", required=True, help="eval_report.csv or a saliency-map CSV")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(name)s: %(message)s")
    try:
        return args.func(args)
    except (CliError, OSError, ValueError) as exc:
        print(f"crits {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
