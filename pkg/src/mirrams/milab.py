"""Exact information-theoretic quantities on small discrete systems.

Used to check, by enumeration, that coarsening a variable ``U`` through a
deterministic map ``xi`` loses exactly the ``U``-averaged KL divergence
between ``P(V|u)`` and ``P(V|xi(u))`` worth of information about ``V``, and
never more than the worst-case KL.  All quantities are in nats.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

MAX_ALPHABET = 64
_TOL = 1e-12


class InvalidDistribution(ValueError):
    pass


class SupportError(ValueError):
    """KL divergence requested where q vanishes but p does not."""


@dataclass(frozen=True)
class DiscreteJoint:
    """Joint probability table ``p[u, v]``."""

    table: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.table, dtype=np.float64)
        if t.ndim != 2 or min(t.shape) < 1 or max(t.shape) > MAX_ALPHABET:
            raise InvalidDistribution(f"joint table must be 2-D with sides in 1..{MAX_ALPHABET}")
        if (t < 0).any() or not np.isfinite(t).all():
            raise InvalidDistribution("joint table has negative or non-finite entries")
        if abs(t.sum() - 1.0) > _TOL:
            raise InvalidDistribution(f"joint table sums to {t.sum()!r}, not 1")
        object.__setattr__(self, "table", t)

    @property
    def p_u(self) -> np.ndarray:
        return self.table.sum(axis=1)

    @property
    def p_v(self) -> np.ndarray:
        return self.table.sum(axis=0)

    def conditional_v_given_u(self) -> np.ndarray:
        """Rows ``P(V | U=u)``; rows with p(u)=0 are left as zeros."""
        pu = self.p_u
        out = np.zeros_like(self.table)
        nz = pu > 0
        out[nz] = self.table[nz] / pu[nz, None]
        return out

    def transpose(self) -> "DiscreteJoint":
        return DiscreteJoint(self.table.T.copy())


@dataclass(frozen=True)
class DeterministicMap:
    """Function table ``xi: {0..|U|-1} -> {0..|W|-1}``."""

    table: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.table)
        if t.ndim != 1 or t.size == 0 or not np.issubdtype(t.dtype, np.integer) or (t < 0).any():
            raise InvalidDistribution("map must be a non-empty 1-D table of non-negative ints")
        object.__setattr__(self, "table", t.astype(np.int64))

    @property
    def n_out(self) -> int:
        return int(self.table.max()) + 1


def entropy(p) -> float:
    """Shannon entropy with 0 log 0 := 0."""
    p = np.asarray(p, dtype=np.float64).reshape(-1)
    nz = p[p > 0]
    return float(-(nz * np.log(nz)).sum())


def conditional_entropy(joint: DiscreteJoint) -> float:
    """H(V | U) = sum_{u,v} p(u,v) log(p(u) / p(u,v))."""
    t = joint.table
    pu = np.broadcast_to(joint.p_u[:, None], t.shape)
    nz = t > 0
    return float((t[nz] * np.log(pu[nz] / t[nz])).sum())


def mutual_information(joint: DiscreteJoint) -> float:
    """I(U; V) = H(V) - H(V | U)."""
    return entropy(joint.p_v) - conditional_entropy(joint)


def mutual_information_direct(joint: DiscreteJoint) -> float:
    """Double sum of p(u,v) log(p(u,v) / (p(u) p(v))); independent of the entropy route."""
    t = joint.table
    pu, pv = joint.p_u, joint.p_v
    total = 0.0
    for i in range(t.shape[0]):
        for j in range(t.shape[1]):
            if t[i, j] > 0:
                total += t[i, j] * np.log(t[i, j] / (pu[i] * pv[j]))
    return float(total)


def kl_divergence(p, q) -> float:
    """D_KL(p || q) = sum p log(p / q)."""
    p = np.asarray(p, dtype=np.float64).reshape(-1)
    q = np.asarray(q, dtype=np.float64).reshape(-1)
    if p.shape != q.shape:
        raise ValueError(f"kl_divergence: shapes {p.shape} and {q.shape} differ")
    nz = p > 0
    if (q[nz] <= 0).any():
        raise SupportError("kl_divergence: q(v) = 0 where p(v) > 0")
    return float((p[nz] * np.log(p[nz] / q[nz])).sum())


def bits(nats: float) -> float:
    return nats / np.log(2.0)


def push_forward(joint: DiscreteJoint, xi: DeterministicMap) -> DiscreteJoint:
    """Joint table of (xi(U), V), by exact marginalization over preimages."""
    if xi.table.size != joint.table.shape[0]:
        raise ValueError("map domain does not match the U alphabet")
    out = np.zeros((xi.n_out, joint.table.shape[1]))
    np.add.at(out, xi.table, joint.table)
    return DiscreteJoint(out)


@dataclass(frozen=True)
class PropositionReport:
    mi_u: float
    mi_xi: float
    delta: float
    expected_kl: float
    max_kl: float
    identity_gap: float
    holds: bool
    data_processing_ok: bool

    @property
    def passed(self) -> bool:
        return self.holds and self.data_processing_ok


def verify_proposition(joint: DiscreteJoint, xi: DeterministicMap, tol: float = 1e-10) -> PropositionReport:
    """Check Delta = E_U[KL] <= max_u KL and I(xi(U);V) <= I(U;V).

    ``Delta = |I(U;V) - I(xi(U);V)|``; the KL terms compare P(V|u) with
    P(V|xi(u)) over u in the support of U.
    """
    coarse = push_forward(joint, xi)
    mi_u = mutual_information(joint)
    mi_xi = mutual_information(coarse)
    delta = abs(mi_u - mi_xi)

    pu = joint.p_u
    cond_u = joint.conditional_v_given_u()
    cond_w = coarse.conditional_v_given_u()
    kls = np.zeros(pu.size)
    for u in np.flatnonzero(pu > 0):
        kls[u] = kl_divergence(cond_u[u], cond_w[xi.table[u]])
    support = pu > 0
    expected_kl = float((pu * kls).sum())
    max_kl = float(kls[support].max())

    identity_gap = abs(delta - expected_kl)
    holds = identity_gap <= tol and delta <= expected_kl + tol and expected_kl <= max_kl + tol
    dpi = mi_xi <= mi_u + tol and delta >= 0.0
    return PropositionReport(mi_u, mi_xi, delta, expected_kl, max_kl, identity_gap, holds, dpi)


def random_system(
    rng: np.random.Generator, max_u: int = 8, max_v: int = 6, zero_prob: float = 0.2
) -> tuple[DiscreteJoint, DeterministicMap]:
    """A random joint over |U| <= max_u, |V| <= max_v and a random map on U.

    Some cells are zeroed so supports are not always full.
    """
    nu = int(rng.integers(1, max_u + 1))
    nv = int(rng.integers(1, max_v + 1))
    t = rng.dirichlet(np.ones(nu * nv)).reshape(nu, nv)
    t[rng.random(t.shape) < zero_prob] = 0.0
    if t.sum() == 0:
        t[0, 0] = 1.0
    t /= t.sum()
    n_out = int(rng.integers(1, nu + 1))
    xi = rng.integers(0, n_out, size=nu)
    return DiscreteJoint(t), DeterministicMap(xi)


def run_suite(n_systems: int = 200, seed: int = 0, max_u: int = 8, max_v: int = 6, tol: float = 1e-10):
    """Verify ``n_systems`` random systems; returns the list of reports."""
    rng = np.random.default_rng(seed)
    return [verify_proposition(*random_system(rng, max_u, max_v), tol=tol) for _ in range(n_systems)]
