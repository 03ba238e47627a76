"""Training loop, model selection, grid search and multi-seed experiments.

All randomness of a run comes from one integer seed, split into named
streams (shuffling, dropout of the main pass, dropout of the auxiliary
passes, extra masks).  Keeping the streams separate means the extra loss
terms never perturb the draws of the plain cross-entropy path, so a run
with both weights at zero is exactly ordinary cross-entropy training.
"""

from __future__ import annotations

import logging
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Sequence

import numpy as np

from .baseline import ZeroImputeLogistic
from .data import SplitSpec, TabularDataset, fit_apply_preprocessor, split_indices, stratified_order
from .metrics import accuracy, auc, mean_std
from .missingness import BernoulliMasker, ShiftScenario, sample_shift_masks
from .model import MirramsModel, ModelConfig
from .objective import LossConfig, TrainingLog, total_loss
from .tensor import Adam, NonFiniteError, backward

log = logging.getLogger("mirrams")


class TrainingDiverged(RuntimeError):
    """A loss or gradient became non-finite; ``step`` says where."""

    def __init__(self, step: int, cause: str):
        super().__init__(f"training diverged at step {step}: {cause}")
        self.step = step


@dataclass(frozen=True)
class TrainConfig:
    """Optimizer and schedule settings.

    ``max_epochs`` defaults to the desk budget; pass 1000 for the full one.
    Early stopping halts after ``patience`` epochs without a new best
    validation score.
    """

    lr: float = 1e-4
    batch_size: int = 256
    max_epochs: int = 200
    patience: int = 30
    seed: int = 0

    def __post_init__(self):
        if self.lr <= 0 or self.batch_size < 1 or self.max_epochs < 0 or self.patience < 1:
            raise ValueError(f"invalid training config: {self}")

    @classmethod
    def for_width(cls, p: int, **kw) -> "TrainConfig":
        """Default batch size rule: 64 when there are more than 100 features."""
        kw.setdefault("batch_size", 64 if p > 100 else 256)
        return cls(**kw)


@dataclass
class RngStreams:
    shuffle: np.random.Generator
    dropout: np.random.Generator
    aux_dropout: np.random.Generator
    masker: BernoulliMasker


def rng_streams(seed: int, r: float = 0.0) -> RngStreams:
    """Independent generators for one run, all derived from ``seed``."""
    ss = np.random.SeedSequence(seed)
    shuffle, drop, aux, mask = ss.spawn(4)
    masker_seed = int(mask.generate_state(1)[0])
    return RngStreams(np.random.default_rng(shuffle), np.random.default_rng(drop),
                      np.random.default_rng(aux), BernoulliMasker(r, masker_seed))


def epoch_batches(n: int, batch_size: int, rng: np.random.Generator) -> list[np.ndarray]:
    """Shuffled row indices cut into consecutive batches (the last may be short)."""
    order = rng.permutation(n)
    return [order[i:i + batch_size] for i in range(0, n, batch_size)]


def ssl_batches(n_lab: int, n_unl: int, batch_size: int, rng: np.random.Generator):
    """Paired labeled/unlabeled batches for one epoch.

    The epoch has ``ceil((n_lab + n_unl) / batch_size)`` steps (but never
    more than ``n_lab``), and each partition is cut into that many nearly
    equal pieces, so per-step sizes are proportional to partition sizes.
    """
    steps = max(1, min(math.ceil((n_lab + n_unl) / batch_size), n_lab))
    lab = np.array_split(rng.permutation(n_lab), steps)
    unl = np.array_split(rng.permutation(n_unl), steps)
    return list(zip(lab, unl))


def score(model: MirramsModel, ds: TabularDataset) -> float:
    """Selection score: AUC for binary tasks, accuracy otherwise."""
    pred = model.predict(ds)
    if model.config.n_classes == 2:
        return auc(pred.positive_score, ds.y)
    return accuracy(pred.labels, ds.y)


@dataclass
class TrainResult:
    model: MirramsModel
    log: TrainingLog
    epochs: list[dict] = field(default_factory=list)
    best_epoch: int = 0
    best_val: float = float("nan")
    seconds: float = 0.0


def train(
    model: MirramsModel,
    train_set: TabularDataset,
    val_set: TabularDataset | None,
    loss: LossConfig = LossConfig(),
    config: TrainConfig = TrainConfig(),
    unlabeled: TabularDataset | None = None,
    log_path=None,
) -> TrainResult:
    """Fit ``model`` in place and return it at its best validation epoch.

    Each dataset's ``mask`` is its training-missingness mask.  With
    ``unlabeled`` given, training runs in semi-supervised mode and the
    unlabeled partition must carry no labels.  Zero epochs return the model
    untouched.
    """
    if unlabeled is not None and unlabeled.y is not None:
        raise ValueError("unlabeled partition must not carry labels")
    streams = rng_streams(config.seed, loss.r)
    opt = Adam(lr=config.lr)
    history = TrainingLog(log_path)
    result = TrainResult(model, history)
    if config.max_epochs == 0:
        return result

    start = time.perf_counter()
    best_state = model.state()
    best_val, best_epoch, step = -np.inf, 0, 0
    for epoch in range(1, config.max_epochs + 1):
        if unlabeled is None:
            pairs = [(b, None) for b in epoch_batches(train_set.n, config.batch_size, streams.shuffle)]
        else:
            pairs = ssl_batches(train_set.n, unlabeled.n, config.batch_size, streams.shuffle)
        first = len(history)
        for lab_rows, unl_rows in pairs:
            step += 1
            batch = train_set.subset(lab_rows)
            ubatch = None if unl_rows is None else unlabeled.subset(unl_rows)
            try:
                report = total_loss(loss, model, batch, streams.masker, ubatch,
                                    rng=streams.dropout, aux_rng=streams.aux_dropout)
                grads = backward(report.graph, model.params)
            except NonFiniteError as exc:
                log.error("divergence at step %d: %s", step, exc)
                raise TrainingDiverged(step, str(exc)) from exc
            opt.step(model.params, grads)
            history.append(step, report)

        rows = history.rows[first:]
        summary = {"epoch": epoch}
        for key in ("l1", "l2", "l3", "pass_rate", "total"):
            summary[key] = float(np.mean([r[key] for r in rows]))
        if val_set is not None:
            summary["val"] = score(model, val_set)
            if summary["val"] > best_val:
                best_val, best_epoch, best_state = summary["val"], epoch, model.state()
        result.epochs.append(summary)
        if val_set is not None and epoch - best_epoch >= config.patience:
            break

    if val_set is None:
        best_epoch, best_state = len(result.epochs), model.state()
    else:
        model.load_state(best_state)
    result.best_epoch = best_epoch
    result.best_val = float(best_val) if val_set is not None else float("nan")
    result.seconds = time.perf_counter() - start
    return result


@dataclass(frozen=True)
class EvalResult:
    auc: float
    accuracy: float


def evaluate(model, test_set: TabularDataset) -> EvalResult:
    """Test AUC and accuracy; ``model`` may be a MIRRAMS model or the baseline."""
    if isinstance(model, ZeroImputeLogistic):
        scores = model.predict_proba(test_set)
        labels = (scores >= 0.5).astype(np.int64)
    else:
        pred = model.predict(test_set)
        scores, labels = pred.positive_score, pred.labels
    return EvalResult(auc(scores, test_set.y), accuracy(labels, test_set.y))


def summarize(values: Sequence[float]) -> dict:
    m, s = mean_std(values)
    return {"values": [float(v) for v in values], "mean": m, "std": s}


# -- grid search ---------------------------------------------------------------


@dataclass
class GridCell:
    config: LossConfig
    val: float = float("nan")
    best_epoch: int = 0
    error: str | None = None
    selected: bool = False
    seconds: float = 0.0


@dataclass
class GridResult:
    cells: list[GridCell]
    best: LossConfig
    model: MirramsModel
    train_result: TrainResult

    def table(self) -> list[dict]:
        rows = []
        for c in self.cells:
            row = c.config.to_dict()
            row.update(val=c.val, best_epoch=c.best_epoch, selected=int(c.selected),
                       error=c.error or "", seconds=round(c.seconds, 3))
            rows.append(row)
        return rows


def default_threads() -> int:
    try:
        return max(1, int(os.environ.get("MIRRAMS_THREADS", "1")))
    except ValueError:
        return 1


def grid_search(
    grid: Sequence[LossConfig],
    init: MirramsModel,
    train_set: TabularDataset,
    val_set: TabularDataset,
    config: TrainConfig = TrainConfig(),
    unlabeled: TabularDataset | None = None,
    threads: int | None = None,
) -> GridResult:
    """Train one copy of ``init`` per grid cell and keep the best by validation score.

    Every cell starts from the same initial parameters and the same run
    seed.  A cell that fails is recorded with its error; the search only
    fails when every cell does.  Ties go to the earlier cell.
    """
    grid = list(grid)
    if not grid:
        raise ValueError("grid is empty")

    def run(cfg):
        t0 = time.perf_counter()
        try:
            res = train(init.copy(), train_set, val_set, cfg, config, unlabeled)
        except (TrainingDiverged, ValueError, FloatingPointError) as exc:
            return GridCell(cfg, error=str(exc), seconds=time.perf_counter() - t0), None
        return GridCell(cfg, res.best_val, res.best_epoch, seconds=time.perf_counter() - t0), res

    threads = default_threads() if threads is None else threads
    if threads > 1 and len(grid) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            outcomes = list(pool.map(run, grid))
    else:
        outcomes = [run(cfg) for cfg in grid]

    best_i = None
    for i, (cell, _) in enumerate(outcomes):
        if cell.error is None and (best_i is None or cell.val > outcomes[best_i][0].val):
            best_i = i
    if best_i is None:
        raise RuntimeError("every grid cell failed: " + "; ".join(c.error for c, _ in outcomes))
    outcomes[best_i][0].selected = True
    best = outcomes[best_i][1]
    return GridResult([c for c, _ in outcomes], grid[best_i], best.model, best)


# -- experiments -------------------------------------------------------------------


@dataclass(frozen=True)
class ExperimentSpec:
    """Everything needed to rerun a multi-seed experiment.

    Seeds vary model initialization and training randomness; the split,
    scenario permutations and masks are fixed by ``split_seed`` and
    ``scenario_seed`` so every seed sees the same data.
    """

    grid: tuple[LossConfig, ...]
    seeds: tuple[int, ...] = (0, 1, 2)
    rho: float = 0.7
    alpha_tr: float = 0.1
    alpha_ts: tuple[float, ...] = (0.1,)
    mode: str = "supervised"
    labeled_frac: float = 0.1
    preset: str | None = "desk"
    train: TrainConfig = TrainConfig()
    split_seed: int = 0
    scenario_seed: int = 0
    dataset: str = ""

    def __post_init__(self):
        object.__setattr__(self, "grid", tuple(self.grid))
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        object.__setattr__(self, "alpha_ts", tuple(float(a) for a in self.alpha_ts))
        if not self.grid:
            raise ValueError("grid is empty")
        if not self.seeds:
            raise ValueError("no seeds given")
        if self.mode not in ("supervised", "ssl", "labeled-only"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if not 0.0 < self.labeled_frac < 1.0:
            raise ValueError("labeled fraction must lie in (0, 1)")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["grid"] = [c.to_dict() for c in self.grid]
        d["seeds"] = list(self.seeds)
        d["alpha_ts"] = list(self.alpha_ts)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentSpec":
        d = dict(d)
        d["grid"] = tuple(LossConfig(**c) for c in d["grid"])
        d["train"] = TrainConfig(**d["train"])
        return cls(**d)


@dataclass
class PreparedData:
    """Standardized, masked partitions of one dataset under one scenario."""

    train: TabularDataset
    val: TabularDataset
    tests: dict[float, TabularDataset]
    scenario: ShiftScenario
    unlabeled: TabularDataset | None = None
    split: list[np.ndarray] = field(default_factory=list)


def prepare(data: TabularDataset, spec: ExperimentSpec) -> PreparedData:
    """Split, standardize and mask ``data``; test masks per requested ``alpha_ts``.

    In SSL and labeled-only modes a stratified ``labeled_frac`` of the
    training rows keeps its labels; in SSL mode the rest is returned as the
    unlabeled partition with labels removed.
    """
    parts = split_indices(data.y, SplitSpec(seed=spec.split_seed))
    tr, va, te = (data.subset(idx) for idx in parts)
    _, tr, va, te = fit_apply_preprocessor(tr, va, te)
    scen = ShiftScenario(data.p, spec.rho, spec.alpha_tr, spec.alpha_ts[0], spec.scenario_seed)
    tr = tr.apply_mask(sample_shift_masks(scen.train_copula(), tr.n))
    va = va.apply_mask(sample_shift_masks(scen.validation_copula(), va.n))
    tests = {a: te.apply_mask(sample_shift_masks(scen.test_copula(a), te.n)) for a in spec.alpha_ts}
    unl = None
    if spec.mode != "supervised":
        rng = np.random.default_rng(np.random.SeedSequence([spec.split_seed, 0x55]))
        order = stratified_order(tr.y, rng)
        k = max(2, int(round(spec.labeled_frac * tr.n)))
        lab_rows, unl_rows = np.sort(order[:k]), np.sort(order[k:])
        if spec.mode == "ssl":
            unl = tr.subset(unl_rows).drop_labels()
        tr = tr.subset(lab_rows)
    return PreparedData(tr, va, tests, scen, unl, parts)


def model_seed(seed: int) -> int:
    return int(np.random.SeedSequence([seed, 0x1A17]).generate_state(1)[0])


@dataclass
class SeedOutcome:
    seed: int
    selected: LossConfig
    val: float
    test: dict[float, EvalResult]
    grid: list[dict]
    best_epoch: int
    seconds: float


@dataclass
class ExperimentResult:
    spec: ExperimentSpec
    outcomes: list[SeedOutcome]

    def test_auc(self, alpha_ts: float) -> np.ndarray:
        return np.array([o.test[alpha_ts].auc for o in self.outcomes])

    def val_auc(self) -> np.ndarray:
        return np.array([o.val for o in self.outcomes])

    def summary(self) -> dict:
        return {f"{a:g}": summarize(self.test_auc(a)) for a in self.spec.alpha_ts}


def run_experiment(data: TabularDataset, spec: ExperimentSpec, prepared: PreparedData | None = None,
                   threads: int | None = None, on_seed=None) -> ExperimentResult:
    """Grid search per seed, then test the selected model at every ``alpha_ts``.

    Test partitions are touched only after selection.  ``on_seed(seed,
    grid_result)`` is called after each seed, e.g. to save the model.
    """
    prep = prepare(data, spec) if prepared is None else prepared
    outcomes = []
    for seed in spec.seeds:
        t0 = time.perf_counter()
        init = MirramsModel(ModelConfig.for_dataset(prep.train, spec.preset), seed=model_seed(seed))
        cfg = replace(spec.train, seed=seed)
        res = grid_search(spec.grid, init, prep.train, prep.val, cfg, prep.unlabeled, threads)
        tests = {a: evaluate(res.model, ds) for a, ds in prep.tests.items()}
        if on_seed is not None:
            on_seed(seed, res)
        outcomes.append(SeedOutcome(seed, res.best, res.train_result.best_val, tests, res.table(),
                                    res.train_result.best_epoch, time.perf_counter() - t0))
        log.info("seed %d: selected %s, val %.4f, test %s", seed, res.best.label(),
                 res.train_result.best_val, {a: round(r.auc, 4) for a, r in tests.items()})
    return ExperimentResult(spec, outcomes)


def run_baseline(data: TabularDataset, spec: ExperimentSpec,
                 prepared: PreparedData | None = None) -> dict[float, EvalResult]:
    """Zero-imputation logistic regression on the same partitions and masks."""
    prep = prepare(data, spec) if prepared is None else prepared
    clf = ZeroImputeLogistic().fit(prep.train)
    return {a: evaluate(clf, ds) for a, ds in prep.tests.items()}


