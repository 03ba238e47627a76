"""Zero-imputation logistic regression, the reference point for robustness runs.

Missing continuous entries become 0, which after standardization is the
training mean; missing categorical entries get an all-zero one-hot row.
"""

from __future__ import annotations

import numpy as np
from scipy.optimize import minimize
from scipy.special import expit, log_expit

from .data import TabularDataset


def design_matrix(ds: TabularDataset) -> np.ndarray:
    """Zero-imputed continuous block followed by one-hot categorical blocks."""
    pc = ds.x_cont.shape[1]
    blocks = [np.where(ds.mask[:, :pc], ds.x_cont, 0.0)]
    for j, col in enumerate(ds.schema.categorical):
        onehot = np.zeros((ds.n, len(col.vocabulary) + 1))
        onehot[np.arange(ds.n), ds.x_cat[:, j]] = 1.0
        onehot[~ds.mask[:, pc + j]] = 0.0
        blocks.append(onehot)
    return np.hstack(blocks)


class ZeroImputeLogistic:
    """L2-regularized binary logistic regression fitted by L-BFGS.

    Parameters
    ----------
    l2 : float
        Ridge penalty on the weights (not the intercept), scaled per row.
    max_iter : int
        L-BFGS iteration cap.
    """

    def __init__(self, l2: float = 1e-3, max_iter: int = 1000):
        self.l2 = l2
        self.max_iter = max_iter
        self.coef: np.ndarray | None = None
        self.intercept = 0.0

    def fit(self, ds: TabularDataset) -> "ZeroImputeLogistic":
        if ds.y is None or ds.n_classes != 2:
            raise ValueError("logistic baseline needs binary labels")
        x, y = design_matrix(ds), ds.y.astype(np.float64)
        n, k = x.shape

        def objective(theta):
            w, b = theta[:k], theta[k]
            z = x @ w + b
            # log(1 + e^z) - y z, written via log-sigmoid for stability.
            loss = -(y * log_expit(z) + (1 - y) * log_expit(-z)).mean() + 0.5 * self.l2 * (w @ w)
            resid = (expit(z) - y) / n
            return loss, np.r_[x.T @ resid + self.l2 * w, resid.sum()]

        res = minimize(objective, np.zeros(k + 1), jac=True, method="L-BFGS-B",
                       options={"maxiter": self.max_iter})
        self.coef, self.intercept = res.x[:k], float(res.x[k])
        return self

    def decision_function(self, ds: TabularDataset) -> np.ndarray:
        if self.coef is None:
            raise RuntimeError("baseline is not fitted")
        return design_matrix(ds) @ self.coef + self.intercept

    def predict_proba(self, ds: TabularDataset) -> np.ndarray:
        return expit(self.decision_function(ds))
