"""The three MIRRAMS loss terms and their weighted sum.

``L1`` is cross-entropy on inputs carrying the training missingness.  ``L2``
is cross-entropy after an extra Bernoulli mask is layered on top.  ``L3``
asks the prediction on the extra-masked view to agree with the model's own
confident prediction on the training view, using detached pseudo-labels.
The objective is ``L1 + lambda1 * L2 + lambda2 * L3``.

In semi-supervised mode ``L3`` runs on an unlabeled batch instead of the
labeled one, which turns it into a confidence-thresholded consistency loss.
"""

from __future__ import annotations

import csv
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

from .data import TabularDataset
from .missingness import BernoulliMasker, compose_masks
from .model import MirramsModel
from .tensor import NonFiniteError, Tensor, cross_entropy

R_GRID = (0.0, 0.1, 0.2, 0.3, 0.4)
LAMBDA_GRID = (0.0, 1.0, 5.0, 10.0, 15.0, 20.0)
TAU_GRID = (0.8, 0.9, 0.95, 0.99)

LOG_COLUMNS = ("step", "l1", "l2", "l3", "pass_rate", "total")


@dataclass(frozen=True)
class LossConfig:
    """Weights and knobs of the objective.

    Parameters
    ----------
    lambda1, lambda2 : float
        Weights of ``L2`` and ``L3``; both must be non-negative.
    tau : float
        Confidence threshold in (0, 1].
    r : float
        Extra masking ratio in [0, 1).
    share_mask : bool
        Use one extra-mask draw (and one forward pass) for both ``L2`` and
        ``L3``.  When False each term draws its own mask.
    """

    lambda1: float = 0.0
    lambda2: float = 0.0
    tau: float = 0.9
    r: float = 0.0
    share_mask: bool = True

    def __post_init__(self):
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ValueError("loss weights must be non-negative")
        if not 0.0 < self.tau <= 1.0:
            raise ValueError(f"tau must lie in (0, 1], got {self.tau}")
        if not 0.0 <= self.r < 1.0:
            raise ValueError(f"r must lie in [0, 1), got {self.r}")

    @property
    def is_plain(self) -> bool:
        """True when the objective reduces to ordinary cross-entropy."""
        return self.lambda1 == 0.0 and self.lambda2 == 0.0

    def label(self) -> str:
        return f"r={self.r:g},l1={self.lambda1:g},l2={self.lambda2:g},tau={self.tau:g}"

    def to_dict(self) -> dict:
        return asdict(self)


def loss_grid(
    r: Iterable[float] = R_GRID,
    lambda1: Iterable[float] = LAMBDA_GRID,
    lambda2: Iterable[float] = LAMBDA_GRID,
    tau: Iterable[float] = TAU_GRID,
) -> list[LossConfig]:
    """Cartesian product of the given values, in row-major order."""
    cells = [
        LossConfig(lambda1=a, lambda2=b, tau=t, r=m)
        for m in r
        for a in lambda1
        for b in lambda2
        for t in tau
    ]
    if not cells:
        raise ValueError("loss grid is empty")
    return cells


@dataclass(frozen=True)
class LossReport:
    """Per-term values of one objective evaluation.

    ``graph`` holds the differentiable total and is excluded from equality.
    """

    l1: float
    l2: float
    l3: float
    pass_rate: float
    total: float
    graph: Tensor | None = field(default=None, compare=False, repr=False)

    def row(self, step: int) -> dict:
        return {"step": step, "l1": self.l1, "l2": self.l2, "l3": self.l3,
                "pass_rate": self.pass_rate, "total": self.total}


def _finite(loss: Tensor, term: str) -> Tensor:
    if not np.isfinite(loss.data).all():
        raise NonFiniteError(f"{term}: non-finite loss")
    return loss


def _labels(batch: TabularDataset) -> np.ndarray:
    if batch.y is None:
        raise ValueError("this loss term needs a labeled batch")
    return batch.y


def loss_l1(model: MirramsModel, batch: TabularDataset, mask: np.ndarray | None = None,
            rng: np.random.Generator | None = None) -> Tensor:
    """Mean cross-entropy on the training-missingness view.

    ``mask`` defaults to the batch's own mask; ``rng`` enables dropout.
    """
    return _finite(cross_entropy(model.logits(batch, mask, rng), _labels(batch)), "L1")


def loss_l2(model: MirramsModel, batch: TabularDataset, mask: np.ndarray | None = None,
            masker: BernoulliMasker | None = None, rng: np.random.Generator | None = None,
            extra: np.ndarray | None = None) -> Tensor:
    """Mean cross-entropy after an extra Bernoulli mask.

    One fresh mask row per batch row is drawn from ``masker`` unless
    ``extra`` supplies it.  With ``r = 0`` the extra mask is all ones and
    the forward path is exactly that of :func:`loss_l1`.
    """
    mask = batch.mask if mask is None else np.asarray(mask, dtype=bool)
    if extra is None:
        if masker is None:
            raise ValueError("loss_l2 needs a masker or an explicit extra mask")
        extra = masker.sample(batch.n, batch.p)
    logits = model.logits(batch, compose_masks(mask, extra), rng)
    return _finite(cross_entropy(logits, _labels(batch)), "L2")


def pseudo_labels(probs: np.ndarray, tau: float) -> tuple[np.ndarray, np.ndarray]:
    """Argmax labels and the rows whose top probability reaches ``tau``."""
    probs = np.asarray(probs, dtype=np.float64)
    return probs.argmax(axis=1), probs.max(axis=1) >= tau


def loss_l3(model: MirramsModel, batch: TabularDataset, mask: np.ndarray | None = None,
            masker: BernoulliMasker | None = None, tau: float = 0.9,
            rng: np.random.Generator | None = None, extra: np.ndarray | None = None,
            reference: Tensor | None = None) -> tuple[Tensor, float]:
    """Thresholded agreement between the training view and the masked view.

    Labels are never read.  Pseudo-labels come from ``reference`` (logits
    of the training view) when given, otherwise from a fresh forward pass;
    either way they are constants, so no gradient flows through them.  Rows
    below ``tau`` contribute zero but still count in the mean.

    ``tau`` is not range-checked here so tests can make it unreachable.

    Returns
    -------
    loss : Tensor
    pass_rate : float
        Fraction of rows with confidence at least ``tau``.
    """
    mask = batch.mask if mask is None else np.asarray(mask, dtype=bool)
    if reference is None:
        reference = model.logits(batch, mask, rng)
    probs = _softmax_rows(reference.data)
    targets, passed = pseudo_labels(probs, tau)
    if extra is None:
        if masker is None:
            raise ValueError("loss_l3 needs a masker or an explicit extra mask")
        extra = masker.sample(batch.n, batch.p)
    logits = model.logits(batch, compose_masks(mask, extra), rng)
    loss = cross_entropy(logits, targets, weights=passed.astype(np.float64))
    return _finite(loss, "L3"), float(passed.mean()) if passed.size else 0.0


def _softmax_rows(z: np.ndarray) -> np.ndarray:
    e = np.exp(z - z.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def total_loss(
    config: LossConfig,
    model: MirramsModel,
    labeled: TabularDataset,
    masker: BernoulliMasker,
    unlabeled: TabularDataset | None = None,
    rng: np.random.Generator | None = None,
    aux_rng: np.random.Generator | None = None,
) -> LossReport:
    """Evaluate ``L1 + lambda1 * L2 + lambda2 * L3`` on one step's batches.

    Each batch carries its training mask.  ``rng`` drives dropout in the
    ``L1`` pass, ``aux_rng`` in every other pass, so the ``L1`` stream is
    the same whatever the weights.  A term with weight 0 is still reported
    but does not enter the graph, so gradients match plain cross-entropy
    exactly when both weights are 0.

    Supervised mode (``unlabeled`` is None): ``L3`` uses the labeled inputs
    with labels ignored; its pseudo-labels come from the ``L1`` forward
    pass, and with ``share_mask`` the ``L2`` and ``L3`` terms share one
    extra mask and one forward pass.  Semi-supervised mode: ``L3`` runs on
    ``unlabeled``, which must carry no labels.
    """
    logits = model.logits(labeled, None, rng)
    l1 = _finite(cross_entropy(logits, _labels(labeled)), "L1")

    if unlabeled is None:
        if config.share_mask:
            extra = masker.sample(labeled.n, labeled.p)
            view = model.logits(labeled, compose_masks(labeled.mask, extra), aux_rng)
            l2 = _finite(cross_entropy(view, labeled.y), "L2")
            targets, passed = pseudo_labels(_softmax_rows(logits.data), config.tau)
            l3 = _finite(cross_entropy(view, targets, weights=passed.astype(np.float64)), "L3")
            pass_rate = float(passed.mean())
        else:
            l2 = loss_l2(model, labeled, masker=masker, rng=aux_rng)
            l3, pass_rate = loss_l3(model, labeled, masker=masker, tau=config.tau,
                                    rng=aux_rng, reference=logits)
    else:
        if unlabeled.y is not None:
            raise ValueError("the unlabeled batch must not carry labels")
        l2 = loss_l2(model, labeled, masker=masker, rng=aux_rng)
        l3, pass_rate = loss_l3(model, unlabeled, masker=masker, tau=config.tau, rng=aux_rng)

    graph = l1
    if config.lambda1:
        graph = graph + l2 * config.lambda1
    if config.lambda2:
        graph = graph + l3 * config.lambda2
    v1, v2, v3 = l1.item(), l2.item(), l3.item()
    total = v1 + config.lambda1 * v2 + config.lambda2 * v3
    return LossReport(v1, v2, v3, pass_rate, total, graph)


class TrainingLog:
    """Per-step loss rows, optionally mirrored to a CSV file as they arrive."""

    def __init__(self, path: str | Path | None = None):
        self.rows: list[dict] = []
        self.path = Path(path) if path is not None else None
        if self.path is not None:
            with self.path.open("w", newline="") as fh:
                csv.writer(fh).writerow(LOG_COLUMNS)

    def append(self, step: int, report: LossReport) -> None:
        row = report.row(step)
        self.rows.append(row)
        if self.path is not None:
            with self.path.open("a", newline="") as fh:
                csv.writer(fh).writerow([_fmt(row[c]) for c in LOG_COLUMNS])

    def write_csv(self, path) -> None:
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(LOG_COLUMNS)
            w.writerows([_fmt(r[c]) for c in LOG_COLUMNS] for r in self.rows)

    def column(self, name: str) -> np.ndarray:
        return np.array([r[name] for r in self.rows], dtype=np.float64)

    def __len__(self) -> int:
        return len(self.rows)


def _fmt(v) -> str:
    return str(v) if isinstance(v, int) else repr(float(v))


def read_training_log(path) -> list[dict]:
    with Path(path).open(newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != LOG_COLUMNS:
            raise ValueError(f"{path}: not a training log (columns {reader.fieldnames})")
        return [{k: (int(v) if k == "step" else float(v)) for k, v in row.items()} for row in reader]
