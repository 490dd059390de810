"""Pairwise Markov random fields and the brute-force enumeration oracle.

A :class:`PairwiseMRF` holds strictly positive node potentials ``psi_k`` and
edge potentials ``psi_ij``.  The joint distribution is

    P(x) = (1/Z) prod_k psi_k(x_k) prod_(i,j) psi_ij(x_i, x_j)

and the energy of a configuration is ``E(x) = -ln(Z P(x))``.  Everything that
needs ``Z`` enumerates the full product state space, so it is only available
below a state cap (default 10**7 joint states, overridable through the
``BELIEFNET_STATE_CAP`` environment variable).
"""

from __future__ import annotations

import itertools
import os
from dataclasses import dataclass
from functools import cached_property
from typing import Sequence

import numpy as np
from scipy.special import logsumexp

DEFAULT_STATE_CAP = 10**7


class ModelError(ValueError):
    """Raised when a model fails validation."""

    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


class StateCapExceeded(RuntimeError):
    """Raised when an enumeration would exceed the joint state cap."""


def state_cap() -> int:
    raw = os.environ.get("BELIEFNET_STATE_CAP")
    if raw is None:
        return DEFAULT_STATE_CAP
    return int(float(raw))


def _frozen(a) -> np.ndarray:
    arr = np.array(a, dtype=float)
    arr.setflags(write=False)
    return arr


class PairwiseMRF:
    """Undirected model with node and edge potentials only.

    Parameters
    ----------
    node_potentials : sequence of 1-d arrays
        ``node_potentials[k]`` has length ``n_k``.
    edges : sequence of ``(i, j, matrix)``
        Edge potential of shape ``(n_i, n_j)``.  Edges given as ``i > j`` are
        stored transposed so that the canonical orientation is ``i < j``.
    labels : sequence, optional
        External node ids, used only for I/O.  Defaults to ``0..N-1``.

    Construction never raises on malformed content; call :func:`validate` for
    a report or :meth:`check` to raise.
    """

    def __init__(self, node_potentials, edges=(), labels=None):
        nodes = tuple(_frozen(p) for p in node_potentials)
        canon = []
        for i, j, pot in edges:
            i, j = int(i), int(j)
            pot = np.array(pot, dtype=float)
            if pot.ndim != 2:
                pot = np.atleast_2d(pot)
            if i > j:
                i, j, pot = j, i, pot.T
            canon.append((i, j, _frozen(pot)))
        if labels is None:
            labels = tuple(range(len(nodes)))
        self.node_potentials = nodes
        self.edges = tuple(canon)
        self.labels = tuple(labels)

    def __eq__(self, other):
        if not isinstance(other, PairwiseMRF):
            return NotImplemented
        return (
            self.labels == other.labels
            and len(self.node_potentials) == len(other.node_potentials)
            and all(np.array_equal(a, b) for a, b in zip(self.node_potentials, other.node_potentials))
            and [e[:2] for e in self.edges] == [e[:2] for e in other.edges]
            and all(np.array_equal(a[2], b[2]) for a, b in zip(self.edges, other.edges))
        )

    __hash__ = object.__hash__

    def __repr__(self):
        return f"PairwiseMRF(cards={self.cardinalities}, edges={[e[:2] for e in self.edges]})"

    # structure -----------------------------------------------------------

    @property
    def num_nodes(self) -> int:
        return len(self.node_potentials)

    @property
    def cardinalities(self) -> tuple[int, ...]:
        return tuple(len(p) for p in self.node_potentials)

    @cached_property
    def edge_index(self) -> dict[tuple[int, int], np.ndarray]:
        return {(i, j): pot for i, j, pot in self.edges}

    @cached_property
    def neighbors(self) -> tuple[tuple[int, ...], ...]:
        adj: list[list[int]] = [[] for _ in range(self.num_nodes)]
        for i, j, _ in self.edges:
            adj[i].append(j)
            adj[j].append(i)
        return tuple(tuple(sorted(set(a))) for a in adj)

    def degree(self, k: int) -> int:
        return len(self.neighbors[k])

    def edge_potential(self, i: int, j: int) -> np.ndarray:
        """Potential oriented with rows indexing ``x_i``."""
        if i < j:
            return self.edge_index[(i, j)]
        return self.edge_index[(j, i)].T

    def has_edge(self, i: int, j: int) -> bool:
        return (min(i, j), max(i, j)) in self.edge_index

    @property
    def num_states(self) -> int:
        return int(np.prod(self.cardinalities, dtype=object))

    def check(self) -> "PairwiseMRF":
        problems = validate(self)
        if problems:
            raise ModelError(problems)
        return self

    def relabel(self, order: Sequence[int]) -> "PairwiseMRF":
        """Return the model with node ``order[m]`` placed at index ``m``."""
        pos = {old: new for new, old in enumerate(order)}
        nodes = [self.node_potentials[old] for old in order]
        edges = [(pos[i], pos[j], pot) for i, j, pot in self.edges]
        return PairwiseMRF(nodes, edges, [self.labels[old] for old in order])

    def is_tree(self) -> bool:
        """True for forests (no cycles); connectivity is not required."""
        parent = list(range(self.num_nodes))

        def find(a):
            while parent[a] != a:
                parent[a] = parent[parent[a]]
                a = parent[a]
            return a

        for i, j, _ in self.edges:
            ri, rj = find(i), find(j)
            if ri == rj:
                return False
            parent[ri] = rj
        return True


@dataclass
class BeliefState:
    """Node beliefs and, optionally, edge beliefs keyed by canonical ``(i, j)``."""

    node_beliefs: list
    edge_beliefs: dict | None = None

    def edge_belief(self, i: int, j: int) -> np.ndarray:
        if i < j:
            return self.edge_beliefs[(i, j)]
        return self.edge_beliefs[(j, i)].T

    def consistency_residual(self) -> float:
        """Largest violation of ``b_ij 1 = b_i`` and ``1^T b_ij = b_j``."""
        if not self.edge_beliefs:
            return 0.0
        worst = 0.0
        for (i, j), b in self.edge_beliefs.items():
            worst = max(
                worst,
                float(np.max(np.abs(b.sum(axis=1) - self.node_beliefs[i]))),
                float(np.max(np.abs(b.sum(axis=0) - self.node_beliefs[j]))),
            )
        return worst


@dataclass(frozen=True)
class JointTable:
    """Dense joint distribution with its normalizer."""

    table: np.ndarray
    log_z: float

    @property
    def Z(self) -> float:
        return float(np.exp(self.log_z))

    @property
    def free_energy(self) -> float:
        return -self.log_z


def validate(mrf: PairwiseMRF) -> list[str]:
    """Return a list of human-readable violations; empty iff well formed."""
    problems = []
    cards = []
    for k, pot in enumerate(mrf.node_potentials):
        if pot.ndim != 1:
            problems.append(f"node {k} potential must be a vector")
            cards.append(None)
            continue
        cards.append(len(pot))
        if len(pot) < 2:
            problems.append(f"node {k} cardinality {len(pot)} < 2")
        if not np.all(np.isfinite(pot)) or np.any(pot <= 0):
            problems.append(f"nonpositive potential at node {k}")
    seen = set()
    for i, j, pot in mrf.edges:
        if i == j:
            problems.append(f"self-loop at node {i}")
            continue
        if i < 0 or j >= mrf.num_nodes:
            problems.append(f"edge ({i},{j}) references unknown node")
            continue
        if (i, j) in seen:
            problems.append(f"duplicate edge ({i},{j})")
        seen.add((i, j))
        if cards[i] is not None and cards[j] is not None and pot.shape != (cards[i], cards[j]):
            problems.append(
                f"shape mismatch at edge ({i},{j}): {pot.shape} vs ({cards[i]}, {cards[j]})"
            )
        if not np.all(np.isfinite(pot)) or np.any(pot <= 0):
            problems.append(f"nonpositive potential at edge ({i},{j})")
    return problems


def _as_assignment(mrf: PairwiseMRF, x) -> tuple[int, ...]:
    x = tuple(int(v) for v in x)
    if len(x) != mrf.num_nodes:
        raise ValueError(f"assignment has length {len(x)}, model has {mrf.num_nodes} nodes")
    for k, (v, n) in enumerate(zip(x, mrf.cardinalities)):
        if not 0 <= v < n:
            raise ValueError(f"state {v} out of range for node {k} with cardinality {n}")
    return x


def energy(mrf: PairwiseMRF, x) -> float:
    """``-sum_k ln psi_k(x_k) - sum_(i,j) ln psi_ij(x_i, x_j)``."""
    x = _as_assignment(mrf, x)
    e = -sum(np.log(pot[x[k]]) for k, pot in enumerate(mrf.node_potentials))
    e -= sum(np.log(pot[x[i], x[j]]) for i, j, pot in mrf.edges)
    return float(e)


def log_joint_unnormalized(mrf: PairwiseMRF, cap: int | None = None) -> np.ndarray:
    """Dense array of ``-E(x)`` over the product state space."""
    cap = state_cap() if cap is None else cap
    if mrf.num_states > cap:
        raise StateCapExceeded(f"{mrf.num_states} joint states exceed cap {cap}")
    n = mrf.num_nodes
    shape = mrf.cardinalities
    out = np.zeros(shape)
    for k, pot in enumerate(mrf.node_potentials):
        idx = [1] * n
        idx[k] = shape[k]
        out = out + np.log(pot).reshape(idx)
    for i, j, pot in mrf.edges:
        idx = [1] * n
        idx[i], idx[j] = shape[i], shape[j]
        out = out + np.log(pot).reshape(idx)
    return out


def joint_table(mrf: PairwiseMRF, cap: int | None = None) -> JointTable:
    mrf.check()
    logp = log_joint_unnormalized(mrf, cap)
    log_z = float(logsumexp(logp))
    return JointTable(np.exp(logp - log_z), log_z)


def partition_function(mrf: PairwiseMRF, cap: int | None = None) -> tuple[float, float]:
    """Return ``(Z, F)`` with ``F = -ln Z``."""
    jt = joint_table(mrf, cap)
    return jt.Z, jt.free_energy


def joint_probability(mrf: PairwiseMRF, x, cap: int | None = None) -> float:
    x = _as_assignment(mrf, x)
    jt = joint_table(mrf, cap)
    return float(np.exp(-energy(mrf, x) - jt.log_z))


def marginals_from_table(mrf: PairwiseMRF, table: np.ndarray) -> BeliefState:
    n = mrf.num_nodes
    nodes = []
    for k in range(n):
        axes = tuple(a for a in range(n) if a != k)
        nodes.append(table.sum(axis=axes))
    edges = {}
    for i, j, _ in mrf.edges:
        axes = tuple(a for a in range(n) if a not in (i, j))
        edges[(i, j)] = table.sum(axis=axes)
    return BeliefState(nodes, edges)


def exact_marginals(mrf: PairwiseMRF, cap: int | None = None) -> BeliefState:
    """Node and pairwise marginals of the joint, by enumeration."""
    return marginals_from_table(mrf, joint_table(mrf, cap).table)


def map_assignment(mrf: PairwiseMRF, cap: int | None = None) -> tuple[tuple[int, ...], bool]:
    """Joint maximizer by enumeration and whether it is unique.

    Ties are detected with a relative tolerance of 1e-12 on the log scale.
    """
    mrf.check()
    logp = log_joint_unnormalized(mrf, cap)
    flat = logp.ravel()
    best = int(np.argmax(flat))
    top = flat[best]
    unique = int(np.sum(flat >= top - 1e-12 * max(1.0, abs(top)))) == 1
    return tuple(int(v) for v in np.unravel_index(best, logp.shape)), unique


def all_assignments(mrf: PairwiseMRF):
    return itertools.product(*(range(n) for n in mrf.cardinalities))


def random_tree(rng: np.random.Generator, max_nodes: int = 10, card=(2, 4), scale: float = 1.0,
                min_nodes: int = 1) -> PairwiseMRF:
    """Random tree with log-potentials uniform on ``[-scale, scale]``."""
    n = int(rng.integers(min_nodes, max_nodes + 1))
    cards = rng.integers(card[0], card[1] + 1, size=n)
    nodes = [np.exp(rng.uniform(-scale, scale, size=c)) for c in cards]
    edges = []
    for k in range(1, n):
        parent = int(rng.integers(0, k))
        edges.append((parent, k, np.exp(rng.uniform(-scale, scale, size=(cards[parent], cards[k])))))
    return PairwiseMRF(nodes, edges)


def random_graph(rng: np.random.Generator, n: int, p: float, card=(2, 3),
                 scale: float = 1.0) -> PairwiseMRF:
    """Erdos-Renyi style random model; may contain cycles and be disconnected."""
    cards = rng.integers(card[0], card[1] + 1, size=n)
    nodes = [np.exp(rng.uniform(-scale, scale, size=c)) for c in cards]
    edges = []
    for i in range(n):
        for j in range(i + 1, n):
            if rng.random() < p:
                edges.append((i, j, np.exp(rng.uniform(-scale, scale, size=(cards[i], cards[j])))))
    return PairwiseMRF(nodes, edges)
