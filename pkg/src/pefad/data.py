"""Dataset ingestion, normalisation, windowing and the synthetic benchmark."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import ConfigError, InputError

ANOMALY_KINDS = ("spike", "level_shift", "variance_burst")


@dataclass
class RawDataset:
    train: np.ndarray                 # (steps, D)
    test: np.ndarray                  # (steps, D)
    test_labels: np.ndarray           # (steps,), 0/1
    train_labels: np.ndarray | None = None   # only known for generated, contaminated data

    def __post_init__(self):
        if self.train.ndim != 2 or self.test.ndim != 2:
            raise InputError("train and test must be 2-D (steps, D)")
        if self.train.shape[1] != self.test.shape[1]:
            raise InputError(f"train has {self.train.shape[1]} dims but test has {self.test.shape[1]}")
        if len(self.test_labels) != len(self.test):
            raise InputError(f"{len(self.test_labels)} labels for {len(self.test)} test steps")

    @property
    def dim(self) -> int:
        return self.train.shape[1]


@dataclass(frozen=True)
class NormStats:
    mean: np.ndarray
    std: np.ndarray


# --------------------------------------------------------------------------- #
# CSV

def _read_matrix(path: Path) -> np.ndarray:
    if not path.exists():
        raise InputError(f"file not found: {path}")
    # rows and columns in messages are 1-based and exclude the header
    with path.open(newline="") as fh:
        rows = list(csv.reader(fh))
    if len(rows) < 2:
        raise InputError(f"{path}: no data rows")
    header, body = rows[0], rows[1:]
    out = np.empty((len(body), len(header)))
    for r, row in enumerate(body, start=1):
        if len(row) != len(header):
            raise InputError(f"{path}: row {r} has {len(row)} columns, expected {len(header)}")
        for c, cell in enumerate(row):
            try:
                out[r - 1, c] = float(cell)
            except ValueError:
                raise InputError(f"{path}: non-numeric cell {cell!r} at row {r}, column {c + 1}") from None
    return out


def _read_labels(path: Path) -> np.ndarray:
    if not path.exists():
        raise InputError(f"file not found: {path}")
    lines = [ln.strip() for ln in path.read_text().splitlines() if ln.strip()]
    if not lines:
        raise InputError(f"{path}: label file is empty")
    labels = []
    for i, ln in enumerate(lines, start=1):
        if ln not in ("0", "1"):
            raise InputError(f"{path}: line {i} is {ln!r}, expected 0 or 1")
        labels.append(int(ln))
    return np.array(labels, dtype=np.int64)


def load_csv(train_path, test_path, label_path) -> RawDataset:
    train = _read_matrix(Path(train_path))
    test = _read_matrix(Path(test_path))
    labels = _read_labels(Path(label_path))
    return RawDataset(train, test, labels)


def write_matrix(path, values: np.ndarray) -> None:
    values = np.asarray(values)
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f"dim_{d}" for d in range(values.shape[1])])
        w.writerows([[repr(float(v)) for v in row] for row in values])


def save_csv(dataset: RawDataset, train_path, test_path, label_path) -> None:
    write_matrix(train_path, dataset.train)
    write_matrix(test_path, dataset.test)
    Path(label_path).write_text("".join(f"{int(v)}\n" for v in dataset.test_labels))


# --------------------------------------------------------------------------- #
# preprocessing

def fit_stats(train: np.ndarray) -> NormStats:
    if len(train) == 0:
        raise InputError("cannot normalise an empty training split")
    std = train.std(axis=0)
    return NormStats(train.mean(axis=0), np.where(std == 0, 1.0, std))


def normalize(dataset: RawDataset, stats: NormStats | None = None) -> tuple[RawDataset, NormStats]:
    """Per-dimension z-score using training statistics (std 0 -> divide by 1)."""
    stats = fit_stats(dataset.train) if stats is None else stats
    out = replace(dataset,
                  train=(dataset.train - stats.mean) / stats.std,
                  test=(dataset.test - stats.mean) / stats.std)
    return out, stats


def make_windows(series, w: int) -> np.ndarray:
    x = np.asarray(series, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    if len(x) < w:
        raise InputError(f"series of {len(x)} steps is shorter than window {w}")
    n = len(x) // w
    return x[: n * w].reshape(n, w, x.shape[1])


# --------------------------------------------------------------------------- #
# synthetic benchmark

@dataclass(frozen=True)
class SynthBenchConfig:
    n_clients: int = 4
    train_steps: int = 4000
    test_steps: int = 2000
    dim: int = 1
    anomaly_kinds: tuple[str, ...] = ("spike",)
    anomaly_rate: float = 0.01
    contaminate_train: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.n_clients < 1:
            raise ConfigError("bench.n_clients must be >= 1")
        if self.dim < 1 or self.train_steps < 1 or self.test_steps < 1:
            raise ConfigError("bench.dim, train_steps and test_steps must be >= 1")
        # rate 0 is accepted so label-free series can be generated
        if not 0 <= self.anomaly_rate <= 0.2:
            raise ConfigError(f"bench.anomaly_rate must be in [0, 0.2], got {self.anomaly_rate}")
        bad = set(self.anomaly_kinds) - set(ANOMALY_KINDS)
        if bad or not self.anomaly_kinds:
            raise ConfigError(f"bench.anomaly_kinds must be drawn from {ANOMALY_KINDS}, got {self.anomaly_kinds}")


@dataclass(frozen=True)
class ClientPattern:
    period: float
    amplitude: float
    phase: float
    noise: float


@dataclass
class SynthClient:
    dataset: RawDataset
    pattern: ClientPattern
    clean_train: np.ndarray
    clean_test: np.ndarray = field(repr=False)


def client_pattern(client_id: int, rng: np.random.Generator) -> ClientPattern:
    # period and amplitude grow with the id so every pair of clients differs
    return ClientPattern(
        period=24.0 + 9.0 * client_id + rng.uniform(0, 3),
        amplitude=1.0 + 0.35 * client_id + rng.uniform(0, 0.2),
        phase=rng.uniform(0, 2 * np.pi),
        noise=0.05 + rng.uniform(0, 0.03),
    )


def _signal(p: ClientPattern, t: np.ndarray, dim: int) -> np.ndarray:
    cols = []
    for d in range(dim):
        base = np.sin(2 * np.pi * t / p.period + p.phase + 0.7 * d)
        harmonic = 0.3 * np.sin(4 * np.pi * t / p.period + 1.3 * d)
        cols.append(p.amplitude * (1.0 + 0.1 * d) * (base + harmonic))
    return np.stack(cols, axis=1)


def _free(occupied: np.ndarray, start: int, length: int) -> bool:
    lo, hi = max(start - 1, 0), min(start + length + 1, len(occupied))
    return not occupied[lo:hi].any()


def inject_anomalies(clean: np.ndarray, noise: np.ndarray, kinds, rate: float, sigma: np.ndarray,
                     rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Perturb ``clean`` at seeded positions; labels mark exactly the perturbed steps."""
    n = len(clean)
    out = clean.copy()
    labels = np.zeros(n, dtype=np.int64)
    budget = int(np.floor(rate * n + 0.5))
    attempts = 0
    while budget > 0 and attempts < 10_000:
        attempts += 1
        kind = kinds[int(rng.integers(len(kinds)))]
        length = 1 if kind == "spike" else min(int(rng.integers(20, 51)), budget)
        start = int(rng.integers(0, n - length + 1))
        if not _free(labels, start, length):
            continue
        seg = slice(start, start + length)
        sign = 1.0 if rng.random() < 0.5 else -1.0
        if kind == "spike":
            out[seg] += sign * rng.uniform(5, 8) * sigma
        elif kind == "level_shift":
            out[seg] += sign * rng.uniform(2, 4) * sigma
        else:
            out[seg] += 3.0 * noise[seg]   # noise becomes 4x its clean amplitude
        labels[seg] = 1
        budget -= length
    return out, labels


def synth_client(config: SynthBenchConfig, client_id: int) -> SynthClient:
    rng = np.random.default_rng([config.seed, client_id])
    pattern = client_pattern(client_id, rng)
    t_train = np.arange(config.train_steps, dtype=np.float64)
    t_test = np.arange(config.train_steps, config.train_steps + config.test_steps, dtype=np.float64)
    noise_train = pattern.noise * rng.standard_normal((config.train_steps, config.dim))
    noise_test = pattern.noise * rng.standard_normal((config.test_steps, config.dim))
    clean_train = _signal(pattern, t_train, config.dim) + noise_train
    clean_test = _signal(pattern, t_test, config.dim) + noise_test
    sigma = clean_train.std(axis=0)

    test, test_labels = inject_anomalies(clean_test, noise_test, config.anomaly_kinds,
                                         config.anomaly_rate, sigma, rng)
    train, train_labels = clean_train, None
    if config.contaminate_train:
        train, train_labels = inject_anomalies(clean_train, noise_train, config.anomaly_kinds,
                                               config.anomaly_rate, sigma, rng)
    return SynthClient(RawDataset(train, test, test_labels, train_labels), pattern, clean_train, clean_test)


def synth_benchmark(config: SynthBenchConfig) -> list[RawDataset]:
    return [synth_client(config, i).dataset for i in range(config.n_clients)]
