"""Gibbs, mean-field and Bethe free energies.

Conventions: ``0 ln 0 = 0``; each undirected edge contributes once.  With
``F = -ln Z`` the Gibbs free energy satisfies ``G(b) = F + KL(b || p)``, so
``G >= F`` with equality at the true distribution.
"""

from __future__ import annotations

import numpy as np

from .model import BeliefState, PairwiseMRF, log_joint_unnormalized


def xlogx(a) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    out = np.zeros_like(a)
    pos = a > 0
    out[pos] = a[pos] * np.log(a[pos])
    return out


def neg_entropy(a) -> float:
    """``sum a ln a``."""
    return float(np.sum(xlogx(a)))


def _node_beliefs(beliefs):
    if isinstance(beliefs, BeliefState):
        return beliefs.node_beliefs
    return list(beliefs)


def kl_divergence(beta, p) -> float:
    """``sum beta ln(beta / p)`` for ``p`` strictly positive."""
    beta = np.asarray(beta, dtype=float)
    p = np.asarray(p, dtype=float)
    if beta.shape != p.shape:
        raise ValueError(f"shape mismatch: {beta.shape} vs {p.shape}")
    if np.any(p <= 0):
        raise ValueError("reference distribution must be strictly positive")
    pos = beta > 0
    return float(np.sum(beta[pos] * (np.log(beta[pos]) - np.log(p[pos]))))


def gibbs_free_energy(mrf: PairwiseMRF, joint, cap: int | None = None) -> float:
    """``G(b) = sum_x b(x) E(x) + sum_x b(x) ln b(x)`` over the full state space."""
    joint = np.asarray(joint, dtype=float)
    if joint.shape != mrf.cardinalities:
        raise ValueError(f"joint belief shape {joint.shape} != {mrf.cardinalities}")
    if np.any(joint < 0) or abs(joint.sum() - 1.0) > 1e-9:
        raise ValueError("joint belief must be a normalized distribution")
    mrf.check()
    energy_table = -log_joint_unnormalized(mrf, cap)
    return float(np.sum(joint * energy_table)) + neg_entropy(joint)


def mean_field_energy(mrf: PairwiseMRF, beliefs) -> float:
    """Average energy of the product distribution ``prod_k b_k``."""
    b = _node_beliefs(beliefs)
    u = -sum(float(bk @ np.log(psi)) for bk, psi in zip(b, mrf.node_potentials))
    u -= sum(float(b[i] @ np.log(pot) @ b[j]) for i, j, pot in mrf.edges)
    return u


def mean_field_free_energy(mrf: PairwiseMRF, beliefs) -> float:
    """``U - H`` for a fully factorized trial distribution (node beliefs only)."""
    b = _node_beliefs(beliefs)
    return mean_field_energy(mrf, b) + sum(neg_entropy(bk) for bk in b)


def bethe_energy(mrf: PairwiseMRF, beliefs: BeliefState) -> float:
    b = beliefs.node_beliefs
    u = -sum(float(bk @ np.log(psi)) for bk, psi in zip(b, mrf.node_potentials))
    for i, j, pot in mrf.edges:
        u -= float(np.sum(beliefs.edge_beliefs[(i, j)] * np.log(pot)))
    return u


def bethe_free_energy(mrf: PairwiseMRF, beliefs: BeliefState) -> float:
    """Bethe free energy; evaluation does not require edge/node consistency.

    Node entropies carry the coefficient ``1 - q_k`` so an isolated node
    (``q_k = 0``) contributes its ordinary entropy, as in the mean-field case.
    """
    if mrf.edges and not beliefs.edge_beliefs:
        raise ValueError("Bethe free energy needs edge beliefs")
    for i, j, _ in mrf.edges:
        if (i, j) not in beliefs.edge_beliefs:
            raise ValueError(f"missing edge belief for ({i},{j})")
    g = bethe_energy(mrf, beliefs)
    for k, bk in enumerate(beliefs.node_beliefs):
        g += (1 - mrf.degree(k)) * neg_entropy(bk)
    for i, j, _ in mrf.edges:
        g += neg_entropy(beliefs.edge_beliefs[(i, j)])
    return g


def product_joint(node_beliefs) -> np.ndarray:
    """Dense joint of the product distribution ``prod_k b_k``."""
    out = np.ones(())
    for b in node_beliefs:
        out = np.multiply.outer(out, np.asarray(b, dtype=float))
    return out
