"""Series ingestion, normalization, windowing and synthetic data generation."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

STD_FLOOR = 1e-8
ANOMALY_KINDS = ("spike", "level-shift", "segment-noise")
# single-point events land one per window at the default ratio and L=100
DEFAULT_KINDS = ("spike",)


class DataError(ValueError):
    """Raised for malformed or inconsistent input data."""


@dataclass
class RawSeries:
    values: np.ndarray
    labels: Optional[np.ndarray] = None
    channel_names: Optional[list[str]] = None

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim == 1:
            values = values[:, None]
        if values.ndim != 2 or values.shape[0] < 1 or values.shape[1] < 1:
            raise DataError(f"values must be a non-empty T x n matrix, got shape {values.shape}")
        if not np.all(np.isfinite(values)):
            raise DataError("values contain NaN or Inf")
        self.values = values
        if self.labels is not None:
            labels = np.asarray(self.labels)
            if labels.shape != (values.shape[0],):
                raise DataError(f"labels length {labels.shape} does not match T={values.shape[0]}")
            if not np.all((labels == 0) | (labels == 1)):
                raise DataError("labels must be 0 or 1")
            self.labels = labels.astype(np.int64)
        if self.channel_names is not None and len(self.channel_names) != values.shape[1]:
            raise DataError("channel_names length does not match channel count")

    @property
    def T(self) -> int:
        return self.values.shape[0]

    @property
    def n(self) -> int:
        return self.values.shape[1]

    def slice(self, start: int, stop: int) -> "RawSeries":
        labels = None if self.labels is None else self.labels[start:stop]
        return RawSeries(self.values[start:stop], labels, self.channel_names)


@dataclass
class NormalizationStats:
    mean: np.ndarray
    std: np.ndarray

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "NormalizationStats":
        return cls(np.asarray(d["mean"], dtype=np.float64), np.asarray(d["std"], dtype=np.float64))


@dataclass
class SubSeriesBatch:
    windows: np.ndarray  # N x L x n
    origin_index: np.ndarray
    L: int
    pad: int = 0  # rows of padding appended to the last window (score mode)
    source_length: int = 0

    def __len__(self) -> int:
        return self.windows.shape[0]


def load_csv(path, has_labels: bool = False, header: bool = False) -> RawSeries:
    """Read a headerless CSV with one row per timestamp.

    With ``has_labels`` the final column is parsed as a 0/1 anomaly label.
    Errors name the 1-based row and column of the offending cell.
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"no such file: {path}")
    rows: list[list[float]] = []
    labels: list[int] = []
    width = None
    names = None
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        for lineno, row in enumerate(reader, start=1):
            if header and lineno == 1:
                names = [c.strip() for c in row]
                continue
            if not row or all(not c.strip() for c in row):
                continue
            if width is None:
                width = len(row)
            elif len(row) != width:
                raise DataError(f"{path}: row {lineno} has {len(row)} columns, expected {width}")
            cells = row[:-1] if has_labels else row
            parsed = []
            for col, cell in enumerate(cells, start=1):
                try:
                    v = float(cell)
                except ValueError:
                    raise DataError(f"{path}: cannot parse {cell!r} at row {lineno}, column {col}") from None
                if not math.isfinite(v):
                    raise DataError(f"{path}: non-finite value at row {lineno}, column {col}")
                parsed.append(v)
            if has_labels:
                raw = row[-1].strip()
                try:
                    lab = float(raw)
                except ValueError:
                    raise DataError(f"{path}: bad label {raw!r} at row {lineno}") from None
                if lab not in (0.0, 1.0):
                    raise DataError(f"{path}: label {raw!r} at row {lineno} is not 0 or 1")
                labels.append(int(lab))
            rows.append(parsed)
    if not rows:
        raise DataError(f"{path}: no data rows")
    if has_labels and width is not None and width < 2:
        raise DataError(f"{path}: label column requested but only one column present")
    if names is not None:
        names = names[:-1] if has_labels else names
        if len(names) != len(rows[0]):
            names = None
    return RawSeries(np.array(rows), np.array(labels) if has_labels else None, names)


def save_csv(series: RawSeries, path) -> None:
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        for t in range(series.T):
            row = [repr(float(v)) for v in series.values[t]]
            if series.labels is not None:
                row.append(str(int(series.labels[t])))
            writer.writerow(row)


def fit_normalizer(train: RawSeries) -> NormalizationStats:
    if train.T < 1:
        raise DataError("cannot fit normalizer on an empty series")
    mean = train.values.mean(axis=0)
    std = np.maximum(train.values.std(axis=0), STD_FLOOR)
    return NormalizationStats(mean, std)


def normalize(series: RawSeries, stats: NormalizationStats) -> RawSeries:
    if stats.mean.shape[0] != series.n:
        raise DataError(f"channel mismatch: stats have {stats.mean.shape[0]} channels, series has {series.n}")
    return RawSeries((series.values - stats.mean) / stats.std, series.labels, series.channel_names)


def denormalize(series: RawSeries, stats: NormalizationStats) -> RawSeries:
    if stats.mean.shape[0] != series.n:
        raise DataError(f"channel mismatch: stats have {stats.mean.shape[0]} channels, series has {series.n}")
    return RawSeries(series.values * stats.std + stats.mean, series.labels, series.channel_names)


def window(series: RawSeries, L: int, mode: str = "train") -> SubSeriesBatch:
    """Cut a series into non-overlapping windows of length ``L``.

    Train mode drops the trailing remainder. Score mode pads the final
    partial window by repeating the last row and records the pad so scores
    can be truncated back to ``T``.
    """
    if L < 1:
        raise DataError("window length must be >= 1")
    if mode not in ("train", "score"):
        raise ValueError(f"unknown window mode {mode!r}")
    T = series.T
    values = series.values
    if mode == "train":
        if T < L:
            raise DataError(f"series length {T} is shorter than window length {L}")
        count = T // L
        windows = values[: count * L].reshape(count, L, series.n)
        return SubSeriesBatch(windows.copy(), np.arange(count) * L, L, 0, T)
    count = math.ceil(T / L)
    pad = count * L - T
    if pad:
        values = np.concatenate([values, np.repeat(values[-1:], pad, axis=0)], axis=0)
    windows = values.reshape(count, L, series.n)
    return SubSeriesBatch(windows.copy(), np.arange(count) * L, L, pad, T)


def split_train_val(train: RawSeries, ratio: float = 0.8) -> tuple[RawSeries, RawSeries]:
    if train.T < 2:
        raise DataError("need at least two rows to split")
    cut = math.floor(ratio * train.T)
    if cut < 1 or cut >= train.T:
        raise DataError(f"ratio {ratio} leaves an empty train or validation split")
    return train.slice(0, cut), train.slice(cut, train.T)


@dataclass
class SyntheticSpec:
    """Generator settings. ``T`` is the train length; the test split follows it."""

    T: int = 20000
    n: int = 8
    test_T: int = 10000
    base_frequencies: Optional[list[float]] = None
    noise_std: float = 0.05
    anomaly_ratio: float = 0.01
    anomaly_kinds: Sequence[str] = DEFAULT_KINDS
    seed: int = 0

    def validate(self) -> None:
        if not 0 < self.anomaly_ratio < 1:
            raise DataError(f"anomaly_ratio must lie in (0, 1), got {self.anomaly_ratio}")
        if self.T < 1 or self.test_T < 1 or self.n < 1:
            raise DataError("T, test_T and n must be positive")
        if self.noise_std < 0:
            raise DataError("noise_std must be >= 0")
        if not self.anomaly_kinds:
            raise DataError("at least one anomaly kind is required")
        for k in self.anomaly_kinds:
            if k not in ANOMALY_KINDS:
                raise DataError(f"unknown anomaly kind {k!r}; choose from {ANOMALY_KINDS}")
        if self.base_frequencies is not None and len(self.base_frequencies) != self.n:
            raise DataError("base_frequencies needs one entry per channel")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["anomaly_kinds"] = list(self.anomaly_kinds)
        return d


@dataclass
class SyntheticData:
    train: RawSeries
    test: RawSeries
    clean_test: np.ndarray
    events: list[dict] = field(default_factory=list)


_EVENT_LENGTH = {"spike": (1, 1), "level-shift": (3, 6), "segment-noise": (3, 6)}


def _clean_signal(spec: SyntheticSpec, rng: np.random.Generator) -> np.ndarray:
    total = spec.T + spec.test_T
    t = np.arange(total, dtype=np.float64)
    if spec.base_frequencies is not None:
        freqs = np.asarray(spec.base_frequencies, dtype=np.float64)
    else:
        freqs = 1.0 / rng.uniform(25.0, 100.0, size=spec.n)
    phase = rng.uniform(0, 2 * np.pi, size=(2, spec.n))
    amp2 = rng.uniform(0.2, 0.5, size=spec.n)
    # mix a shared latent rhythm into every channel for inter-channel correlation
    shared = np.sin(2 * np.pi * t / 50.0)[:, None] * rng.uniform(0.2, 0.5, size=spec.n)
    x = (
        np.sin(2 * np.pi * freqs * t[:, None] + phase[0])
        + amp2 * np.sin(4 * np.pi * freqs * t[:, None] + phase[1])
        + shared
    )
    return x


def generate_synthetic(spec: SyntheticSpec) -> SyntheticData:
    """Build an anomaly-free train split and a labeled test split.

    Anomaly events are spread over the test span: it is cut into equal
    strata, one per event, and each event lands at a random offset inside
    its own stratum. The number of events is chosen so that the labeled
    timestamp count matches ``anomaly_ratio * test_T`` up to event rounding.
    """
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    clean = _clean_signal(spec, rng)
    noise = rng.normal(0.0, spec.noise_std, size=clean.shape)
    series = clean + noise

    train_vals = series[: spec.T].copy()
    test_vals = series[spec.T :].copy()
    clean_test = clean[spec.T :].copy()
    labels = np.zeros(spec.test_T, dtype=np.int64)

    budget = max(1, round(spec.anomaly_ratio * spec.test_T))
    kinds = list(spec.anomaly_kinds)
    plan: list[tuple[str, int]] = []
    used = 0
    while used < budget:
        kind = kinds[int(rng.integers(len(kinds)))]
        lo, hi = _EVENT_LENGTH[kind]
        length = int(min(rng.integers(lo, hi + 1), budget - used))
        plan.append((kind, length))
        used += length

    stratum = spec.test_T / len(plan)
    scale = max(5.0 * spec.noise_std, 1.0)
    events = []
    for k, (kind, length) in enumerate(plan):
        lo = int(math.floor(k * stratum))
        hi = int(math.floor((k + 1) * stratum)) - length
        start = int(rng.integers(lo, max(lo, hi) + 1))
        stop = min(start + length, spec.test_T)
        n_hit = int(rng.integers(1, max(2, spec.n // 2) + 1))
        channels = np.sort(rng.choice(spec.n, size=n_hit, replace=False))
        sign = rng.choice([-1.0, 1.0], size=n_hit)
        if kind == "spike":
            mag = rng.uniform(5.0, 8.0, size=n_hit) * scale
            test_vals[start:stop, channels] = clean_test[start:stop, channels] + sign * mag
        elif kind == "level-shift":
            mag = rng.uniform(2.0, 3.5, size=n_hit) * scale
            test_vals[start:stop, channels] += sign * mag
        else:
            burst = rng.normal(0.0, 1.0, size=(stop - start, n_hit)) * 1.5 * scale
            test_vals[start:stop, channels] += burst
        labels[start:stop] = 1
        events.append({"kind": kind, "start": start, "stop": stop, "channels": channels.tolist()})

    names = [f"ch{i}" for i in range(spec.n)]
    return SyntheticData(
        RawSeries(train_vals, None, names),
        RawSeries(test_vals, labels, names),
        clean_test,
        events,
    )
