"""Desk-scale experiment protocols for the robustness, ablation and SSL checks.

Each protocol takes a dataset, runs a fixed recipe over several seeds and
returns plain numbers plus the verdict of its pass rule.  The recipes use
the ``desk`` preset, learning rate 3e-4 and at most 200 epochs, which keeps
a full protocol within minutes on one core.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np

from .data import TabularDataset
from .objective import LossConfig, loss_grid
from .trainer import ExperimentSpec, TrainConfig, prepare, run_baseline, run_experiment

DESK_TRAIN = TrainConfig(lr=3e-4, batch_size=256, max_epochs=200, patience=30)
DESK_GRID = tuple(loss_grid(r=(0.1, 0.3), lambda1=(1.0, 5.0), lambda2=(1.0, 5.0), tau=(0.9,)))
PLAIN = LossConfig()
FIXED = LossConfig(lambda1=1.0, lambda2=1.0, tau=0.9, r=0.3)
SEEDS = (0, 1, 2)


def _spec(grid, **kw) -> ExperimentSpec:
    base = dict(grid=tuple(grid), seeds=SEEDS, rho=0.7, alpha_tr=0.1, preset="desk", train=DESK_TRAIN)
    return ExperimentSpec(**(base | kw))


@dataclass
class RobustnessResult:
    """Test AUCs per seed at ``alpha_ts`` 0.1 and 0.3 for three methods."""

    mirrams: dict[float, list[float]]
    plain: dict[float, list[float]]
    baseline: dict[float, float]
    selected: list[dict] = field(default_factory=list)
    seconds: float = 0.0

    @staticmethod
    def _drop(aucs: dict[float, list[float]]) -> float:
        return float(np.mean(aucs[0.1]) - np.mean(aucs[0.3]))

    @property
    def drop_mirrams(self) -> float:
        return self._drop(self.mirrams)

    @property
    def drop_plain(self) -> float:
        return self._drop(self.plain)

    @property
    def degradation_gap(self) -> float:
        """How much less AUC the selected model loses than plain CE (positive is better)."""
        return self.drop_plain - self.drop_mirrams

    @property
    def margin_over_baseline(self) -> float:
        return float(np.mean(self.mirrams[0.3]) - self.baseline[0.3])

    def passed(self, min_gap: float = 0.01, min_margin: float = 0.03) -> bool:
        return self.degradation_gap >= min_gap and self.margin_over_baseline >= min_margin

    def to_dict(self) -> dict:
        return {"mirrams": self.mirrams, "plain": self.plain, "baseline": self.baseline,
                "selected": self.selected, "drop_mirrams": self.drop_mirrams,
                "drop_plain": self.drop_plain, "degradation_gap": self.degradation_gap,
                "margin_over_baseline": self.margin_over_baseline, "seconds": self.seconds}


def robustness(data: TabularDataset, grid=DESK_GRID, seeds=SEEDS, train=DESK_TRAIN,
               threads: int | None = None) -> RobustnessResult:
    """Grid-selected MIRRAMS against plain CE and zero-imputation logistic regression.

    Scenario: ``alpha_tr = 0.1``, ``rho = 0.7``, tests at ``alpha_ts`` 0.1
    and 0.3.  All three methods see the same split and masks.
    """
    t0 = time.perf_counter()
    spec = _spec(grid, seeds=seeds, alpha_ts=(0.1, 0.3), train=train)
    prep = prepare(data, spec)
    ours = run_experiment(data, spec, prepared=prep, threads=threads)
    plain = run_experiment(data, replace(spec, grid=(PLAIN,)), prepared=prep)
    base = run_baseline(data, spec, prepared=prep)
    return RobustnessResult(
        mirrams={a: ours.test_auc(a).tolist() for a in spec.alpha_ts},
        plain={a: plain.test_auc(a).tolist() for a in spec.alpha_ts},
        baseline={a: r.auc for a, r in base.items()},
        selected=[o.selected.to_dict() for o in ours.outcomes],
        seconds=time.perf_counter() - t0,
    )


@dataclass
class MaskingAblationResult:
    """Validation AUC per seed with and without extra masking."""

    with_masking: list[float]
    without: list[float]
    test_with: list[float] = field(default_factory=list)
    test_without: list[float] = field(default_factory=list)
    seconds: float = 0.0

    @property
    def mean_gain(self) -> float:
        return float(np.mean(self.with_masking) - np.mean(self.without))

    @property
    def seeds_improved(self) -> int:
        return int(sum(a > b for a, b in zip(self.with_masking, self.without)))

    def passed(self, min_gain: float = 0.01, min_seeds: int = 2) -> bool:
        return self.mean_gain >= min_gain and self.seeds_improved >= min_seeds

    def to_dict(self) -> dict:
        return {"with_masking": self.with_masking, "without": self.without, "test_with": self.test_with,
                "test_without": self.test_without, "mean_gain": self.mean_gain,
                "seeds_improved": self.seeds_improved, "seconds": self.seconds}


def masking_ablation(data: TabularDataset, base: LossConfig = FIXED, r: float = 0.3, seeds=SEEDS,
                     train=DESK_TRAIN) -> MaskingAblationResult:
    """Compare ``r`` against ``r = 0`` with the other loss settings held fixed.

    Scenario ``(alpha_tr, alpha_ts) = (0.1, 0.2)``; the verdict uses the
    validation AUC, the test AUC at 0.2 is reported alongside.
    """
    t0 = time.perf_counter()
    spec = _spec((replace(base, r=r),), seeds=seeds, alpha_ts=(0.2,), train=train)
    prep = prepare(data, spec)
    on = run_experiment(data, spec, prepared=prep)
    off = run_experiment(data, replace(spec, grid=(replace(base, r=0.0),)), prepared=prep)
    return MaskingAblationResult(on.val_auc().tolist(), off.val_auc().tolist(),
                                 on.test_auc(0.2).tolist(), off.test_auc(0.2).tolist(),
                                 time.perf_counter() - t0)


@dataclass
class SslResult:
    """Mean test AUC at ``alpha_ts = 0.2`` for the three training regimes."""

    ssl: list[float]
    supervised: list[float]
    labeled_only: list[float]
    seconds: float = 0.0

    @property
    def gap_to_supervised(self) -> float:
        return float(np.mean(self.supervised) - np.mean(self.ssl))

    @property
    def gain_over_labeled_only(self) -> float:
        return float(np.mean(self.ssl) - np.mean(self.labeled_only))

    def passed(self, max_gap: float = 0.05) -> bool:
        return self.gap_to_supervised <= max_gap and self.gain_over_labeled_only > 0

    def to_dict(self) -> dict:
        return {"ssl": self.ssl, "supervised": self.supervised, "labeled_only": self.labeled_only,
                "gap_to_supervised": self.gap_to_supervised,
                "gain_over_labeled_only": self.gain_over_labeled_only, "seconds": self.seconds}


def ssl_comparison(data: TabularDataset, loss: LossConfig = FIXED, labeled_frac: float = 0.1,
                   seeds=SEEDS, train=DESK_TRAIN) -> SslResult:
    """SSL-MIRRAMS with ``labeled_frac`` labels against full supervision and labeled-only CE."""
    t0 = time.perf_counter()
    common = dict(seeds=seeds, alpha_ts=(0.2,), labeled_frac=labeled_frac, train=train)
    ssl = run_experiment(data, _spec((loss,), mode="ssl", **common))
    full = run_experiment(data, _spec((loss,), **common))
    lab = run_experiment(data, _spec((PLAIN,), mode="labeled-only", **common))
    return SslResult(ssl.test_auc(0.2).tolist(), full.test_auc(0.2).tolist(), lab.test_auc(0.2).tolist(),
                     time.perf_counter() - t0)
