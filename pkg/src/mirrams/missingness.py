"""Missingness masks: correlated AR(1) copula masks and independent Bernoulli masking.

Masks are boolean ``(n, p)`` arrays where True (1) means *observed*.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import ndtri


class CovarianceError(ValueError):
    """The (permuted) AR(1) covariance is not positive definite."""


def ar1_covariance(p: int, rho: float) -> np.ndarray:
    idx = np.arange(p)
    return rho ** np.abs(idx[:, None] - idx[None, :]).astype(np.float64)


@dataclass(frozen=True)
class Ar1Copula:
    """Gaussian copula with covariance ``P Sigma P^T``, ``Sigma_ij = rho^|i-j|``.

    Entry (i, j) of a sampled mask is missing iff ``z_ij <= Phi^-1(alpha)``,
    which makes every column's marginal missing rate exactly ``alpha``.
    """

    p: int
    rho: float
    alpha: float
    permutation: tuple[int, ...] | None = None
    seed: int = 0

    def __post_init__(self):
        if self.p < 1:
            raise ValueError("p must be positive")
        if not 0.0 <= self.alpha < 1.0:
            raise ValueError(f"alpha must lie in [0, 1), got {self.alpha}")
        if not 0.0 <= self.rho < 1.0:
            raise ValueError(f"rho must lie in [0, 1), got {self.rho}")
        perm = tuple(range(self.p)) if self.permutation is None else tuple(int(i) for i in self.permutation)
        if sorted(perm) != list(range(self.p)):
            raise ValueError("permutation must be a bijection on range(p)")
        object.__setattr__(self, "permutation", perm)

    @property
    def threshold(self) -> float:
        return float(ndtri(self.alpha)) if self.alpha > 0 else -np.inf

    def covariance(self) -> np.ndarray:
        perm = np.asarray(self.permutation)
        return ar1_covariance(self.p, self.rho)[np.ix_(perm, perm)]

    def cholesky(self) -> np.ndarray:
        try:
            return np.linalg.cholesky(self.covariance())
        except np.linalg.LinAlgError:
            raise CovarianceError(
                f"AR(1) covariance with rho={self.rho}, p={self.p} is not positive definite"
            ) from None


def sample_shift_masks(copula: Ar1Copula, n: int, rng: np.random.Generator | None = None) -> np.ndarray:
    """Draw ``n`` correlated masks from the copula (seeded by ``copula.seed`` unless ``rng`` given)."""
    chol = copula.cholesky()
    if copula.alpha == 0.0:
        return np.ones((n, copula.p), dtype=bool)
    rng = np.random.default_rng(copula.seed) if rng is None else rng
    z = rng.standard_normal((n, copula.p)) @ chol.T
    return ~(z <= copula.threshold)


@dataclass
class BernoulliMasker:
    """Independently masks each entry with probability ``r``.

    Holds its own generator, so consecutive ``sample`` calls give fresh draws
    while the whole sequence is fixed by ``seed``.
    """

    r: float
    seed: int = 0
    rng: np.random.Generator = field(init=False, repr=False)

    def __post_init__(self):
        if not 0.0 <= self.r < 1.0:
            raise ValueError(f"masking ratio r must lie in [0, 1), got {self.r}")
        self.rng = np.random.default_rng(self.seed)

    def sample(self, n: int, p: int) -> np.ndarray:
        if self.r == 0.0:
            return np.ones((n, p), dtype=bool)
        return self.rng.random((n, p)) >= self.r


def sample_bernoulli_masks(masker: BernoulliMasker, n: int, p: int) -> np.ndarray:
    return masker.sample(n, p)


def compose_masks(outer: np.ndarray, inner: np.ndarray) -> np.ndarray:
    """Elementwise AND: an entry stays observed only if observed in both."""
    outer = np.asarray(outer, dtype=bool)
    inner = np.asarray(inner, dtype=bool)
    if outer.shape != inner.shape:
        raise ValueError(f"compose_masks: shapes {outer.shape} and {inner.shape} differ")
    return outer & inner


def save_mask(path, mask: np.ndarray) -> None:
    np.savetxt(path, np.asarray(mask, dtype=np.uint8), fmt="%d", delimiter=",")


def load_mask(path) -> np.ndarray:
    arr = np.loadtxt(path, delimiter=",", dtype=np.int64, ndmin=2)
    if not np.isin(arr, (0, 1)).all():
        raise ValueError(f"{path}: mask file must contain only 0/1")
    return arr.astype(bool)


@dataclass(frozen=True)
class ShiftScenario:
    """Train/test missingness shift: shared AR(1) base, two permutations.

    Train and validation masks come from the training copula; test masks from
    the test copula.  Permutations and mask streams are derived from ``seed``.
    """

    p: int
    rho: float = 0.7
    alpha_tr: float = 0.1
    alpha_ts: float = 0.1
    seed: int = 0
    perm_tr: tuple[int, ...] | None = None
    perm_ts: tuple[int, ...] | None = None

    def __post_init__(self):
        if self.perm_tr is None or self.perm_ts is None:
            rng = np.random.default_rng(np.random.SeedSequence([self.seed, 0x5EED]))
            perm_tr = tuple(int(i) for i in rng.permutation(self.p))
            perm_ts = tuple(int(i) for i in rng.permutation(self.p))
            if self.perm_tr is None:
                object.__setattr__(self, "perm_tr", perm_tr)
            if self.perm_ts is None:
                object.__setattr__(self, "perm_ts", perm_ts)

    def _seed(self, stream: int, alpha: float) -> int:
        return int(np.random.SeedSequence([self.seed, stream, int(round(alpha * 1e6))]).generate_state(1)[0])

    def train_copula(self) -> Ar1Copula:
        return Ar1Copula(self.p, self.rho, self.alpha_tr, self.perm_tr, self._seed(1, self.alpha_tr))

    def validation_copula(self) -> Ar1Copula:
        return Ar1Copula(self.p, self.rho, self.alpha_tr, self.perm_tr, self._seed(2, self.alpha_tr))

    def test_copula(self, alpha_ts: float | None = None) -> Ar1Copula:
        a = self.alpha_ts if alpha_ts is None else alpha_ts
        return Ar1Copula(self.p, self.rho, a, self.perm_ts, self._seed(3, a))

    def masks(self, n_train: int, n_val: int, n_test: int, alpha_ts: float | None = None):
        return (
            sample_shift_masks(self.train_copula(), n_train),
            sample_shift_masks(self.validation_copula(), n_val),
            sample_shift_masks(self.test_copula(alpha_ts), n_test),
        )

    def to_dict(self) -> dict:
        d = asdict(self)
        d["perm_tr"] = list(self.perm_tr)
        d["perm_ts"] = list(self.perm_ts)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ShiftScenario":
        d = dict(d)
        for k in ("perm_tr", "perm_ts"):
            if d.get(k) is not None:
                d[k] = tuple(d[k])
        return cls(**d)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))

    @classmethod
    def load(cls, path) -> "ShiftScenario":
        return cls.from_dict(json.loads(Path(path).read_text()))
