"""Named benchmark datasets and shape-matched synthetic surrogates.

The real files are not shipped.  :func:`load_benchmark` looks for them in
``$MIRRAMS_DATA_DIR`` (default ``./data``) under the file names the UCI
archive uses, and parses them with the bundled schemas.  When a file is
absent it raises :class:`DatasetUnavailable`.

:func:`make_surrogate` builds a synthetic stand-in with the same row count,
feature count and class balance.  Features are noisy views of shared latent
factors, half of them turned into skewed counts; the label is a thresholded
mix of a linear and a small nonlinear function of the latents.  The noise
and nonlinearity levels were picked so that the zero-imputation logistic
baseline scores close to its reported values on the real data, which is
the only calibration applied.  Surrogate results say nothing about the real
datasets.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from .data import CONTINUOUS, LABEL, Column, Schema, TabularDataset, load_csv, parse_schema, stratified_order


class DatasetUnavailable(FileNotFoundError):
    pass


@dataclass(frozen=True)
class BenchmarkInfo:
    name: str
    files: tuple[str, ...]
    n: int
    p: int
    positive_pct: float
    subsample: int | None = None
    noise: float = 0.5
    nonlinearity: float = 0.3
    skew_fraction: float = 0.5


BENCHMARKS = {
    "qsar_bio": BenchmarkInfo("qsar_bio", ("qsar_bio.csv", "biodeg.csv"), 1055, 41, 33.74, noise=0.5),
    "htru2": BenchmarkInfo("htru2", ("htru2.csv", "HTRU_2.csv"), 17898, 8, 9.16, subsample=4000, noise=0.3),
}


def data_dir() -> Path:
    return Path(os.environ.get("MIRRAMS_DATA_DIR", "data"))


def bundled_schema(name: str) -> Schema:
    text = resources.files("mirrams").joinpath("schemas", f"{name}.schema").read_text()
    return parse_schema(text)


def find_file(name: str, directory: str | Path | None = None) -> Path:
    info = BENCHMARKS[name]
    root = data_dir() if directory is None else Path(directory)
    for fname in info.files:
        if (root / fname).is_file():
            return root / fname
    raise DatasetUnavailable(
        f"{name}: none of {', '.join(info.files)} found in {root.resolve()} "
        f"(set MIRRAMS_DATA_DIR to the directory holding the UCI file)"
    )


def stratified_subsample(ds: TabularDataset, n: int, seed: int = 0) -> TabularDataset:
    """``n`` rows keeping the class balance, in original row order."""
    if n >= ds.n:
        return ds
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x5B]))
    return ds.subset(np.sort(stratified_order(ds.y, rng)[:n]))


def load_benchmark(name: str, directory: str | Path | None = None, subsample: bool = True,
                   seed: int = 0) -> TabularDataset:
    """Load a named benchmark (subsampled to its desk size unless told not to)."""
    if name not in BENCHMARKS:
        raise KeyError(f"unknown benchmark {name!r}; known: {sorted(BENCHMARKS)}")
    ds, _ = load_csv(find_file(name, directory), bundled_schema(name))
    info = BENCHMARKS[name]
    if subsample and info.subsample:
        ds = stratified_subsample(ds, info.subsample, seed)
    return ds


def make_surrogate(name: str, seed: int = 0) -> TabularDataset:
    """Synthetic stand-in matching a benchmark's size, width and class balance."""
    info = BENCHMARKS[name]
    n = info.subsample or info.n
    return _latent_task(n, info.p, info.positive_pct / 100.0, info.noise, info.nonlinearity,
                        info.skew_fraction, seed)


def _latent_task(n, p, positive, noise, nonlinearity, skew_fraction, seed, redundancy=0.8):
    rng = np.random.default_rng(seed)
    k = max(2, p // 3)
    z = rng.standard_normal((n, k))
    load = rng.standard_normal((k, p)) / np.sqrt(k)
    raw = redundancy * z @ load + np.sqrt(1 - redundancy**2) * rng.standard_normal((n, p))
    x = raw.copy()
    for j in rng.choice(p, int(round(skew_fraction * p)), replace=False):
        x[:, j] = np.floor(np.exp(1.2 * raw[:, j]))
    w1, w2 = rng.standard_normal((k, 16)), rng.standard_normal(16)
    linear = z @ rng.standard_normal(k) / np.sqrt(k)
    bent = np.tanh(1.5 * z @ w1 / np.sqrt(k)) @ w2 / 4
    s = (1 - nonlinearity) * linear + nonlinearity * bent
    s = s / s.std() + noise * rng.standard_normal(n)
    y = (s > np.quantile(s, 1 - positive)).astype(np.int64)
    cols = tuple(Column(f"x{j}", CONTINUOUS) for j in range(p)) + (Column("label", LABEL, ("0", "1")),)
    return TabularDataset(Schema(cols, positive="1"), x, np.zeros((n, 0), dtype=np.int64),
                          np.ones((n, p), dtype=bool), y)
