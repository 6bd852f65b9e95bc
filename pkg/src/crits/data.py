"""Dataset ingestion, normalization, splitting and synthetic data.

Instances are stored as a single ``(N, m, T)`` float64 array (channels first,
time last) with binary labels in ``{0, 1}``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

__all__ = [
    "DataError",
    "MalformedHeader",
    "RaggedSeries",
    "NonBinaryLabels",
    "NumericParse",
    "ShapeMismatch",
    "ChannelMismatch",
    "ClassTooSmall",
    "BadShape",
    "TimeSeriesDataset",
    "NormStats",
    "parse_ts",
    "parse_csv",
    "to_csv",
    "load_dataset",
    "fit_norm",
    "apply_norm",
    "split_indices",
    "stratified_split",
    "synth_bump",
    "mask_to_csv",
    "parse_mask_csv",
]

STD_FLOOR = 1e-12


class DataError(ValueError):
    """Base class for ingestion and dataset-contract errors."""


class MalformedHeader(DataError):
    pass


class RaggedSeries(DataError):
    pass


class NonBinaryLabels(DataError):
    pass


class NumericParse(DataError):
    def __init__(self, message: str, line: int | None = None, column: int | None = None):
        where = ""
        if line is not None:
            where = f"line {line}" + (f", column {column}" if column is not None else "")
            message = f"{where}: {message}"
        super().__init__(message)
        self.line = line
        self.column = column


class ShapeMismatch(DataError):
    pass


class ChannelMismatch(DataError):
    pass


class ClassTooSmall(DataError):
    pass


class BadShape(DataError):
    pass


@dataclass(frozen=True, eq=False)
class TimeSeriesDataset:
    """Equal-length binary-labelled time series.

    ``instances`` has shape ``(N, m, T)``; ``labels`` has shape ``(N,)``.
    Both arrays are made read-only on construction.
    """

    instances: np.ndarray
    labels: np.ndarray
    name: str = "dataset"
    class_names: tuple[str, str] = ("0", "1")

    def __post_init__(self):
        X = np.array(self.instances, dtype=np.float64)
        y = np.array(self.labels)
        if X.ndim != 3:
            raise BadShape(f"instances must have shape (N, m, T), got {X.shape}")
        n, m, t = X.shape
        if n < 1 or m < 1 or t < 2:
            raise BadShape(f"need N >= 1, m >= 1, T >= 2; got N={n}, m={m}, T={t}")
        if y.shape != (n,):
            raise BadShape(f"labels must have shape ({n},), got {y.shape}")
        if not np.all((y == 0) | (y == 1)):
            raise NonBinaryLabels(f"labels must be 0/1, found {sorted(set(y.tolist()))[:5]}")
        y = y.astype(np.int64)
        X.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "instances", X)
        object.__setattr__(self, "labels", y)

    @property
    def n(self) -> int:
        return self.instances.shape[0]

    @property
    def m(self) -> int:
        return self.instances.shape[1]

    @property
    def T(self) -> int:
        return self.instances.shape[2]

    def __len__(self) -> int:
        return self.n

    def subset(self, indices, name: str | None = None) -> "TimeSeriesDataset":
        idx = np.asarray(indices, dtype=np.int64)
        return TimeSeriesDataset(
            self.instances[idx], self.labels[idx], name or self.name, self.class_names
        )

    def concat(self, other: "TimeSeriesDataset") -> "TimeSeriesDataset":
        if (other.m, other.T) != (self.m, self.T):
            raise ShapeMismatch(f"cannot concatenate shapes {(self.m, self.T)} and {(other.m, other.T)}")
        return TimeSeriesDataset(
            np.concatenate([self.instances, other.instances]),
            np.concatenate([self.labels, other.labels]),
            self.name,
            self.class_names,
        )


@dataclass(frozen=True, eq=False)
class NormStats:
    mean: np.ndarray
    std: np.ndarray = field()

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=np.float64).reshape(-1)
        std = np.asarray(self.std, dtype=np.float64).reshape(-1)
        if mean.shape != std.shape:
            raise ChannelMismatch("mean and std must have the same length")
        if np.any(~(std > 0)):
            raise DataError("standard deviations must be positive")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "std", std)

    @property
    def m(self) -> int:
        return self.mean.shape[0]


# --------------------------------------------------------------------------
# .ts format
# --------------------------------------------------------------------------


def _parse_float(token: str, line: int, column: int) -> float:
    tok = token.strip()
    try:
        value = float(tok)
    except ValueError:
        raise NumericParse(f"cannot parse value {tok!r}", line, column) from None
    if not math.isfinite(value):
        raise NumericParse(f"non-finite value {tok!r}", line, column)
    return value


def _label_map(labels: list[str], declared: list[str] | None) -> tuple[dict[str, int], tuple[str, str]]:
    universe = sorted(set(declared) if declared else set(labels))
    if len(universe) > 2:
        raise NonBinaryLabels(f"expected at most two classes, found {len(universe)}: {universe[:6]}")
    if len(universe) == 1:
        universe = universe + [universe[0] + "_other"]
    return {lab: i for i, lab in enumerate(universe)}, (universe[0], universe[1])


def parse_ts(text: str, name: str | None = None) -> TimeSeriesDataset:
    """Parse a UEA/UCR ``.ts`` document.

    Header directives are read up to ``@data``; every following non-empty,
    non-comment line is one instance whose ``:``-separated fields are the
    channels, the last field being the class label. Labels are mapped to
    ``{0, 1}`` in sorted order.

    Raises
    ------
    MalformedHeader
        ``@data`` or ``@classLabel`` is missing, or a label is undeclared.
    RaggedSeries
        Channel lengths differ within or across instances.
    NonBinaryLabels
        More than two classes.
    NumericParse
        A value does not parse as a finite decimal number.
    """
    problem = name
    declared: list[str] | None = None
    has_class_label = False
    series_length: int | None = None
    in_data = False
    rows: list[list[list[float]]] = []
    raw_labels: list[str] = []

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if not in_data:
            if not line.startswith("@"):
                raise MalformedHeader(f"line {lineno}: unexpected content before @data")
            parts = line.split()
            key = parts[0].lower()
            if key == "@problemname" and len(parts) > 1 and problem is None:
                problem = parts[1]
            elif key == "@classlabel":
                if len(parts) < 2 or parts[1].lower() not in ("true", "false"):
                    raise MalformedHeader(f"line {lineno}: bad @classLabel directive")
                if parts[1].lower() == "false":
                    raise MalformedHeader("dataset has no class labels (@classLabel false)")
                has_class_label = True
                declared = parts[2:] or None
            elif key == "@serieslength" and len(parts) > 1:
                try:
                    series_length = int(parts[1])
                except ValueError:
                    raise MalformedHeader(f"line {lineno}: bad @seriesLength {parts[1]!r}") from None
            elif key == "@data":
                in_data = True
            continue

        fields = line.split(":")
        if len(fields) < 2:
            raise NumericParse("instance has no class label field", lineno)
        label = fields[-1].strip()
        channels = []
        col = 0
        for field_text in fields[:-1]:
            values = []
            for tok in field_text.split(","):
                col += 1
                values.append(_parse_float(tok, lineno, col))
            channels.append(values)
        lengths = {len(c) for c in channels}
        if len(lengths) != 1:
            raise RaggedSeries(f"line {lineno}: channel lengths differ: {sorted(lengths)}")
        if rows and (len(channels) != len(rows[0]) or len(channels[0]) != len(rows[0][0])):
            raise RaggedSeries(
                f"line {lineno}: shape {len(channels)}x{len(channels[0])} differs from "
                f"first instance {len(rows[0])}x{len(rows[0][0])}"
            )
        rows.append(channels)
        raw_labels.append(label)

    if not in_data:
        raise MalformedHeader("missing @data directive")
    if not has_class_label:
        raise MalformedHeader("missing @classLabel directive")
    if not rows:
        raise MalformedHeader("no instances after @data")
    if series_length is not None and len(rows[0][0]) != series_length:
        raise RaggedSeries(f"@seriesLength {series_length} but instances have length {len(rows[0][0])}")

    mapping, class_names = _label_map(raw_labels, declared)
    try:
        y = np.array([mapping[lab] for lab in raw_labels], dtype=np.int64)
    except KeyError as exc:
        raise MalformedHeader(f"label {exc.args[0]!r} not declared in @classLabel") from None
    return TimeSeriesDataset(np.array(rows, dtype=np.float64), y, problem or "dataset", class_names)


# --------------------------------------------------------------------------
# CSV format
# --------------------------------------------------------------------------


def _csv_header_layout(line: str) -> tuple[int, int] | None:
    body = line.lstrip("#").split()
    kv = dict(item.split("=", 1) for item in body if "=" in item)
    if "m" in kv and "T" in kv:
        try:
            return int(kv["m"]), int(kv["T"])
        except ValueError:
            return None
    return None


def parse_csv(text: str, layout: tuple[int, int] | None = None, name: str = "dataset") -> TimeSeriesDataset:
    """Parse rows of ``m*T`` channel-major values followed by a 0/1 label.

    ``layout`` is ``(m, T)``. When omitted it is read from a leading
    ``# m=<m> T=<T>`` header line; failing that, a single channel is assumed.
    """
    rows: list[list[float]] = []
    labels: list[int] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            found = _csv_header_layout(line)
            if found is not None and layout is None:
                layout = found
            continue
        tokens = line.split(",")
        values = [_parse_float(tok, lineno, col) for col, tok in enumerate(tokens, start=1)]
        if layout is None:
            layout = (1, len(values) - 1)
        m, t = layout
        if len(values) != m * t + 1:
            raise ShapeMismatch(f"line {lineno}: expected {m * t + 1} fields (m={m}, T={t}), got {len(values)}")
        label = values[-1]
        if label not in (0.0, 1.0):
            raise NonBinaryLabels(f"line {lineno}: label {tokens[-1].strip()!r} is not 0 or 1")
        rows.append(values[:-1])
        labels.append(int(label))
    if not rows:
        raise ShapeMismatch("no data rows")
    m, t = layout
    X = np.array(rows, dtype=np.float64).reshape(len(rows), m, t)
    return TimeSeriesDataset(X, np.array(labels, dtype=np.int64), name)


def _fmt(value: float) -> str:
    return repr(float(value))


def to_csv(dataset: TimeSeriesDataset) -> str:
    """Serialize to the CSV layout read by :func:`parse_csv` (round-trip exact)."""
    lines = [f"# m={dataset.m} T={dataset.T}"]
    flat = dataset.instances.reshape(dataset.n, -1)
    for row, label in zip(flat, dataset.labels):
        lines.append(",".join(_fmt(v) for v in row) + f",{int(label)}")
    return "\n".join(lines) + "\n"


def load_dataset(path, fmt: str | None = None) -> TimeSeriesDataset:
    """Read a ``.ts`` or ``.csv`` file; ``fmt`` defaults to the file suffix."""
    path = Path(path)
    if fmt is None:
        fmt = "ts" if path.suffix.lower() == ".ts" else "csv"
    text = path.read_text(encoding="utf-8")
    if fmt == "ts":
        return parse_ts(text, name=path.stem)
    if fmt == "csv":
        return parse_csv(text, name=path.stem)
    raise ValueError(f"unknown format {fmt!r} (expected 'ts' or 'csv')")


# --------------------------------------------------------------------------
# normalization
# --------------------------------------------------------------------------


def fit_norm(train: TimeSeriesDataset) -> NormStats:
    """Per-channel mean and population std over all instances and time steps."""
    X = train.instances
    mean = X.mean(axis=(0, 2))
    std = X.std(axis=(0, 2))
    std = np.where(std < STD_FLOOR, 1.0, std)
    return NormStats(mean, std)


def apply_norm(stats: NormStats, dataset: TimeSeriesDataset) -> TimeSeriesDataset:
    if stats.m != dataset.m:
        raise ChannelMismatch(f"stats cover {stats.m} channels, dataset has {dataset.m}")
    X = (dataset.instances - stats.mean[None, :, None]) / stats.std[None, :, None]
    return TimeSeriesDataset(X, dataset.labels, dataset.name, dataset.class_names)


# --------------------------------------------------------------------------
# splitting
# --------------------------------------------------------------------------


def split_indices(labels, test_fraction: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Stratified train/test index partition.

    Each class contributes ``round(test_fraction * n_c)`` (half rounds up)
    test instances, clamped so both sides keep at least one.
    """
    if not 0.0 < test_fraction < 1.0:
        raise ValueError(f"test_fraction must lie in (0, 1), got {test_fraction}")
    labels = np.asarray(labels)
    rng = np.random.default_rng(seed)
    train_idx, test_idx = [], []
    for cls in (0, 1):
        members = np.flatnonzero(labels == cls)
        if members.size == 0:
            continue
        if members.size < 2:
            raise ClassTooSmall(f"class {cls} has {members.size} instance(s); need at least 2")
        n_test = int(math.floor(test_fraction * members.size + 0.5))
        n_test = min(max(n_test, 1), members.size - 1)
        perm = rng.permutation(members)
        test_idx.append(perm[:n_test])
        train_idx.append(perm[n_test:])
    return np.sort(np.concatenate(train_idx)), np.sort(np.concatenate(test_idx))


def stratified_split(
    dataset: TimeSeriesDataset, test_fraction: float = 0.2, seed: int = 0
) -> tuple[TimeSeriesDataset, TimeSeriesDataset]:
    train_idx, test_idx = split_indices(dataset.labels, test_fraction, seed)
    return dataset.subset(train_idx), dataset.subset(test_idx)


# --------------------------------------------------------------------------
# synthetic ground truth
# --------------------------------------------------------------------------


def synth_bump(
    n: int, m: int, T: int, bump_len: int, snr: float, seed: int
) -> tuple[TimeSeriesDataset, np.ndarray]:
    """White-noise series where class 1 carries a half-sine bump on channel 0.

    Returns the dataset and a boolean ``(n, m, T)`` mask marking each bump.
    Classes are balanced and interleaved in a seeded random order.
    """
    if n < 2 or n % 2:
        raise BadShape(f"n must be even and >= 2, got {n}")
    if m < 1 or T < 4:
        raise BadShape(f"need m >= 1 and T >= 4, got m={m}, T={T}")
    if not 2 <= bump_len <= T / 2:
        raise BadShape(f"bump_len must lie in [2, T/2], got {bump_len} for T={T}")
    rng = np.random.default_rng(seed)
    labels = rng.permutation(np.repeat(np.array([0, 1], dtype=np.int64), n // 2))
    X = rng.standard_normal((n, m, T))
    starts = rng.integers(0, T - bump_len + 1, size=n)
    shape = snr * np.sin(np.pi * np.arange(1, bump_len + 1) / (bump_len + 1))
    mask = np.zeros((n, m, T), dtype=bool)
    for i in np.flatnonzero(labels == 1):
        s = starts[i]
        X[i, 0, s : s + bump_len] += shape
        mask[i, 0, s : s + bump_len] = True
    name = f"synth_bump_n{n}_m{m}_T{T}_len{bump_len}_snr{snr:g}"
    return TimeSeriesDataset(X, labels, name), mask


def mask_to_csv(mask: np.ndarray) -> str:
    n, m, t = mask.shape
    lines = [f"# m={m} T={t}"]
    for row in mask.reshape(n, -1):
        lines.append(",".join("1" if v else "0" for v in row))
    return "\n".join(lines) + "\n"


def parse_mask_csv(text: str) -> np.ndarray:
    layout = None
    rows = []
    for line in text.splitlines():
        line = line.strip()
        if not line:
            continue
        if line.startswith("#"):
            layout = _csv_header_layout(line) or layout
            continue
        rows.append([tok.strip() == "1" for tok in line.split(",")])
    arr = np.array(rows, dtype=bool)
    if layout is None:
        return arr[:, None, :]
    return arr.reshape(len(rows), *layout)
