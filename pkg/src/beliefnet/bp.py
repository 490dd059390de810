"""Sum-product and max-product belief propagation on pairwise MRFs.

Messages are stored per directed edge and normalized after every update.  The
synchronous schedule is double-buffered: every message of round ``t`` is
computed from the round ``t-1`` messages only.  The asynchronous schedule
sweeps nodes in a given order and overwrites a node's outgoing messages in
place, so later nodes in the sweep already see them.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .model import BeliefState, PairwiseMRF

SUM = "sum"
MAX = "max"


class MessageStore:
    """Normalized messages ``mu[(l, k)]`` sent from node ``l`` to node ``k``."""

    def __init__(self, mrf: PairwiseMRF, messages: dict | None = None):
        self.mrf = mrf
        if messages is None:
            cards = mrf.cardinalities
            messages = {}
            for i, j, _ in mrf.edges:
                messages[(i, j)] = np.full(cards[j], 1.0 / cards[j])
                messages[(j, i)] = np.full(cards[i], 1.0 / cards[i])
        self.messages = messages

    def __getitem__(self, key) -> np.ndarray:
        return self.messages[key]

    def __setitem__(self, key, value):
        self.messages[key] = value

    def __iter__(self):
        return iter(self.messages)

    def copy(self) -> "MessageStore":
        return MessageStore(self.mrf, {k: v.copy() for k, v in self.messages.items()})

    def directed_edges(self) -> list[tuple[int, int]]:
        """Directed edges in a fixed order (canonical edge order, forward first)."""
        out = []
        for i, j, _ in self.mrf.edges:
            out.append((i, j))
            out.append((j, i))
        return out


@dataclass
class Schedule:
    """Message update schedule.

    ``mode`` is ``"synchronous"`` (flooding) or ``"asynchronous"`` (node
    sweep in ``order``; defaults to ``0..N-1``).  ``damping`` mixes the
    previous message back in: ``new = (1 - damping) * update + damping * old``.
    """

    mode: str = "synchronous"
    order: tuple | None = None
    damping: float = 0.0

    def __post_init__(self):
        if self.mode not in ("synchronous", "asynchronous"):
            raise ValueError(f"unknown schedule mode {self.mode!r}")
        if not 0.0 <= self.damping < 1.0:
            raise ValueError("damping must lie in [0, 1)")


@dataclass
class BPResult:
    beliefs: BeliefState
    converged: bool
    iterations: int
    residual_trace: list = field(default_factory=list)
    messages: MessageStore | None = None
    mode: str = SUM


def _incoming_product(mrf: PairwiseMRF, msgs: MessageStore, frm: int, exclude: int | None) -> np.ndarray:
    prod = np.array(mrf.node_potentials[frm], dtype=float)
    for u in mrf.neighbors[frm]:
        if u != exclude:
            prod = prod * msgs[(u, frm)]
    return prod


def _update(mrf, msgs, frm, to, mode):
    if not mrf.has_edge(frm, to):
        raise ValueError(f"({frm}, {to}) is not an edge")
    pot = mrf.edge_potential(frm, to)
    h = _incoming_product(mrf, msgs, frm, exclude=to)
    if mode == SUM:
        out = h @ pot
    elif mode == MAX:
        out = np.max(h[:, None] * pot, axis=0)
    else:
        raise ValueError(f"unknown BP mode {mode!r}")
    return out / out.sum()


def sum_product_update(mrf: PairwiseMRF, msgs: MessageStore, frm: int, to: int) -> np.ndarray:
    """Sum-product message from ``frm`` to ``to``, normalized to sum to one."""
    return _update(mrf, msgs, frm, to, SUM)


def max_product_update(mrf: PairwiseMRF, msgs: MessageStore, frm: int, to: int) -> np.ndarray:
    """Max-product message from ``frm`` to ``to``, normalized to sum to one."""
    return _update(mrf, msgs, frm, to, MAX)


def belief(mrf: PairwiseMRF, msgs: MessageStore, k: int) -> np.ndarray:
    b = _incoming_product(mrf, msgs, k, exclude=None)
    return b / b.sum()


def edge_beliefs(mrf: PairwiseMRF, msgs: MessageStore) -> dict:
    """Pairwise beliefs ``b_ij ~ psi_ij psi_i psi_j prod(other incoming)``."""
    out = {}
    for i, j, pot in mrf.edges:
        hi = _incoming_product(mrf, msgs, i, exclude=j)
        hj = _incoming_product(mrf, msgs, j, exclude=i)
        b = hi[:, None] * pot * hj[None, :]
        out[(i, j)] = b / b.sum()
    return out


def run_bp(
    mrf: PairwiseMRF,
    mode: str = SUM,
    schedule: Schedule | None = None,
    max_iters: int = 500,
    tol: float = 1e-8,
) -> BPResult:
    """Iterate message updates from uniform messages until the largest
    message change (infinity norm over all directed edges) is at most ``tol``.

    The returned result is honest about loopy failures: ``converged`` is False
    when ``max_iters`` rounds pass without reaching ``tol``.
    """
    if max_iters < 1:
        raise ValueError("max_iters must be >= 1")
    if tol <= 0:
        raise ValueError("tol must be positive")
    mrf.check()
    schedule = schedule or Schedule()
    lam = schedule.damping
    msgs = MessageStore(mrf)
    directed = msgs.directed_edges()
    if schedule.mode == "asynchronous":
        order = tuple(range(mrf.num_nodes)) if schedule.order is None else tuple(schedule.order)
        if sorted(order) != list(range(mrf.num_nodes)):
            raise ValueError("asynchronous order must be a permutation of the nodes")

    trace = []
    converged = False
    it = 0
    for it in range(1, max_iters + 1):
        residual = 0.0
        if schedule.mode == "synchronous":
            new = {}
            for frm, to in directed:
                m = _update(mrf, msgs, frm, to, mode)
                if lam:
                    m = (1.0 - lam) * m + lam * msgs[(frm, to)]
                new[(frm, to)] = m
            for key, m in new.items():
                residual = max(residual, float(np.max(np.abs(m - msgs[key]))))
            msgs = MessageStore(mrf, new)
        else:
            for frm in order:
                for to in mrf.neighbors[frm]:
                    m = _update(mrf, msgs, frm, to, mode)
                    if lam:
                        m = (1.0 - lam) * m + lam * msgs[(frm, to)]
                    residual = max(residual, float(np.max(np.abs(m - msgs[(frm, to)]))))
                    msgs[(frm, to)] = m
        trace.append(residual)
        if residual <= tol:
            converged = True
            break

    beliefs = BeliefState([belief(mrf, msgs, k) for k in range(mrf.num_nodes)])
    return BPResult(beliefs, converged, it, trace, msgs, mode)


def map_decode(result) -> tuple[int, ...]:
    """Per-node argmax of the beliefs; ties go to the lowest state index.

    Accepts a :class:`BPResult`, a :class:`BeliefState` or a list of vectors.
    """
    if isinstance(result, BPResult):
        result = result.beliefs
    if isinstance(result, BeliefState):
        result = result.node_beliefs
    return tuple(int(np.argmax(b)) for b in result)
