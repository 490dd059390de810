"""Dual decomposition for separable programs with consistency constraints.

Equality form::

    maximize   sum_k l_k(x_k, y_k)
    subject to (x_k, y_k) in F_k,   y_k = C_k z

Relaxing ``y_k = C_k z`` with prices ``v_k`` splits the problem into agent
slaves ``sup l_k(x_k, y_k) - <v_k, y_k>`` and a master that minimizes the sum
of slave values over the subspace ``{v : sum_k C_k^T v_k = 0}``.  The master
step is a projected subgradient step ``v <- U (v + alpha_n y)`` with
``U = I - C (C^T C)^{-1} C^T`` computed once.

Coupled-inequality form::

    maximize   sum_k l_k(x_k)
    subject to x_k in F_k,   sum_k C_k x_k + d >= 0

with prices ``v >= 0`` updated by ``v <- (v - alpha_n (sum_k C_k x_k + d))_+``.

Belief consensus (all agents share one belief over a common state set) is the
equality form with ``C_k = I``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Any, Callable

import numpy as np
from scipy.special import softmax

from .optimize import entropic_minimize

log = logging.getLogger(__name__)

PSD_TOL = 1e-10


class SlaveError(RuntimeError):
    def __init__(self, agent: int, cause: Exception):
        self.agent = agent
        super().__init__(f"agent {agent} slave failed: {cause}")


class PreconditionError(ValueError):
    """A solver precondition (e.g. a convexity certificate) does not hold."""


@dataclass
class StepRule:
    """``constant``: alpha_n = alpha0; ``diminishing``: alpha_n = alpha0 / sqrt(n)."""

    kind: str = "diminishing"
    alpha0: float = 1.0

    def __post_init__(self):
        if self.kind not in ("constant", "diminishing"):
            raise ValueError(f"unknown step rule {self.kind!r}")
        if self.alpha0 <= 0:
            raise ValueError("alpha0 must be positive")

    def __call__(self, n: int) -> float:
        if self.kind == "constant":
            return self.alpha0
        return self.alpha0 / math.sqrt(n)


@dataclass
class LocalProblem:
    """One agent.

    ``solve(price)`` returns ``(x, y)`` maximizing ``payoff(x, y) - <price, y>``
    over the agent's feasible set; ``dim`` is the length of ``y``.  ``C`` maps
    the global variable to ``y`` (identity when omitted).
    """

    solve: Callable[[np.ndarray], tuple]
    payoff: Callable[[Any, np.ndarray], float]
    dim: int
    C: np.ndarray | None = None


class ConsensusProblem:
    def __init__(self, agents: list[LocalProblem]):
        if not agents:
            raise ValueError("need at least one agent")
        self.agents = agents
        blocks = []
        for a in agents:
            C = np.eye(a.dim) if a.C is None else np.atleast_2d(np.asarray(a.C, dtype=float))
            if C.shape[0] != a.dim:
                raise ValueError(f"C has {C.shape[0]} rows, agent output has {a.dim}")
            blocks.append(C)
        zdims = {C.shape[1] for C in blocks}
        if len(zdims) != 1:
            raise ValueError("all consistency maps must share the global dimension")
        self.C_blocks = blocks
        self.C = np.vstack(blocks)
        self.offsets = np.cumsum([0] + [a.dim for a in agents])
        CtC = self.C.T @ self.C
        if np.linalg.matrix_rank(CtC) < CtC.shape[0]:
            raise np.linalg.LinAlgError("C^T C is singular: consistency map is rank deficient")
        self._CtC_inv_Ct = np.linalg.solve(CtC, self.C.T)
        self.U = np.eye(self.C.shape[0]) - self.C @ self._CtC_inv_Ct

    @property
    def size(self) -> int:
        return int(self.offsets[-1])

    def split(self, v: np.ndarray) -> list[np.ndarray]:
        return [v[self.offsets[k]:self.offsets[k + 1]] for k in range(len(self.agents))]

    def global_estimate(self, y: np.ndarray) -> np.ndarray:
        """Least-squares ``z`` for stacked ``y``; the mean when every ``C_k = I``."""
        return self._CtC_inv_Ct @ y


@dataclass
class ConsensusTrace:
    dual_value: list = field(default_factory=list)
    residual: list = field(default_factory=list)
    step: list = field(default_factory=list)
    price_violation: list = field(default_factory=list)
    diverged: bool = False

    def rows(self):
        """``(iteration, dual_value, residual, step)``; step is blank on the last row."""
        for n, (d, r) in enumerate(zip(self.dual_value, self.residual)):
            yield n, d, r, self.step[n] if n < len(self.step) else ""


@dataclass
class ConsensusResult:
    z: np.ndarray
    xs: list
    ys: list
    prices: np.ndarray
    trace: ConsensusTrace
    converged: bool
    iterations: int


def solve_slave(problem: ConsensusProblem, k: int, price: np.ndarray):
    try:
        return problem.agents[k].solve(np.asarray(price, dtype=float))
    except Exception as exc:
        raise SlaveError(k, exc) from exc


def master_update(prices: np.ndarray, y: np.ndarray, alpha: float, U: np.ndarray) -> np.ndarray:
    """Projected subgradient step on the master problem.

    The subgradient of the dual is ``-y``, so the step is ``v + alpha * y``
    followed by projection onto the null space of ``C^T``.
    """
    return U @ (prices + alpha * y)


def _diverging(residuals: list) -> bool:
    return len(residuals) > 50 and residuals[-1] > 10.0 * residuals[-51]


def run_dual_decomposition(problem: ConsensusProblem, step_rule: StepRule | None = None,
                           max_iters: int = 10000, residual_tol: float = 1e-6,
                           prices=None) -> ConsensusResult:
    """Alternate agent slave solves and master price updates.

    Stops when ``max_k ||y_k - C_k z||_inf <= residual_tol`` (checked before
    each price update, so consensual starting points stop at iteration 0),
    when ``max_iters`` price updates have been made, or when the residual has
    grown tenfold over 50 iterations (``trace.diverged``).
    """
    step_rule = step_rule or StepRule()
    v = np.zeros(problem.size) if prices is None else problem.U @ np.asarray(prices, dtype=float)
    trace = ConsensusTrace()
    converged = False
    n = 0
    while True:
        sols = [solve_slave(problem, k, vk) for k, vk in enumerate(problem.split(v))]
        xs = [s[0] for s in sols]
        ys = [np.asarray(s[1], dtype=float) for s in sols]
        y = np.concatenate(ys)
        z = problem.global_estimate(y)
        dual = sum(
            problem.agents[k].payoff(xs[k], ys[k]) - float(vk @ ys[k])
            for k, vk in enumerate(problem.split(v))
        )
        residual = max(float(np.max(np.abs(yk - Ck @ z))) for yk, Ck in zip(ys, problem.C_blocks))
        trace.dual_value.append(float(dual))
        trace.residual.append(residual)
        trace.price_violation.append(float(np.max(np.abs(problem.C.T @ v))) if v.size else 0.0)
        if residual <= residual_tol:
            converged = True
            break
        if _diverging(trace.residual):
            trace.diverged = True
            log.warning("dual decomposition diverging at iteration %d", n)
            break
        if n >= max_iters:
            break
        n += 1
        alpha = step_rule(n)
        trace.step.append(alpha)
        v = master_update(v, y, alpha, problem.U)
    return ConsensusResult(z, xs, ys, v, trace, converged, n)


# coupled inequalities -----------------------------------------------------


@dataclass
class InequalityResult:
    xs: list
    prices: np.ndarray
    trace: ConsensusTrace
    feasibility: list
    converged: bool
    iterations: int


def run_coupled_inequality(agents: list[LocalProblem], C: list, offset=None,
                           step_rule: StepRule | None = None, max_iters: int = 10000,
                           tol: float = 1e-10, prices=None) -> InequalityResult:
    """Projected dual subgradient for ``sum_k C_k x_k + offset >= 0``.

    Each ``agents[k].solve(price)`` maximizes ``payoff(x) - <price, x>``; the
    agent's price is ``-C_k^T v``.  ``feasibility`` records
    ``min(0, min(sum_k C_k x_k + offset))`` per iteration.  Stops when the
    price change falls to ``tol`` with the iterate feasible within ``tol``.
    """
    step_rule = step_rule or StepRule()
    C = [np.atleast_2d(np.asarray(c, dtype=float)) for c in C]
    m = C[0].shape[0]
    d = np.zeros(m) if offset is None else np.asarray(offset, dtype=float).reshape(m)
    v = np.zeros(m) if prices is None else np.asarray(prices, dtype=float).copy()
    if np.any(v < 0):
        raise ValueError("initial prices must be nonnegative")
    trace = ConsensusTrace()
    feas = []
    converged = False
    n = 0
    for n in range(1, max_iters + 1):
        xs = []
        for k, (agent, Ck) in enumerate(zip(agents, C)):
            try:
                x, _ = agent.solve(-Ck.T @ v)
            except Exception as exc:
                raise SlaveError(k, exc) from exc
            xs.append(np.atleast_1d(np.asarray(x, dtype=float)))
        slack = sum(Ck @ x for Ck, x in zip(C, xs)) + d
        dual = sum(a.payoff(x, x) + float(v @ (Ck @ x)) for a, Ck, x in zip(agents, C, xs)) + float(v @ d)
        alpha = step_rule(n)
        v_new = np.maximum(v - alpha * slack, 0.0)
        change = float(np.max(np.abs(v_new - v)))
        v = v_new
        viol = min(0.0, float(np.min(slack)))
        feas.append(viol)
        trace.dual_value.append(float(dual))
        trace.residual.append(-viol)
        trace.step.append(alpha)
        if change <= tol and viol >= -tol:
            converged = True
            break
    return InequalityResult(xs, v, trace, feas, converged, n)


# belief consensus ---------------------------------------------------------


@dataclass
class ConsensusParams:
    step_rule: StepRule = field(default_factory=StepRule)
    max_iters: int = 10000
    tol: float = 1e-8
    assume_copositive: bool = False
    slave_tol: float = 1e-13


def normalize_compatibility(pot: np.ndarray) -> np.ndarray:
    """Scale a compatibility matrix so its entries lie in (0, 1]."""
    return np.asarray(pot, dtype=float) / np.max(pot)


def is_psd(M: np.ndarray, tol: float = PSD_TOL) -> bool:
    Ms = 0.5 * (M + M.T)
    return bool(np.min(np.linalg.eigvalsh(Ms)) >= -tol)


def _entropic_slave_softmax(log_psi: np.ndarray, weight: float):
    def solve(v):
        b = softmax((log_psi - v) / weight)
        return b, b

    def payoff(_, b):
        pos = b > 0
        return float(b @ log_psi) - weight * float(np.sum(b[pos] * np.log(b[pos])))

    return solve, payoff


def mfe_consensus(psis: list, Ms: list, params: ConsensusParams | None = None) -> ConsensusResult:
    """Mean-field belief consensus.

    Agent ``i`` minimizes ``-b^T ln psi_i + b^T M_i b + b^T ln b`` and all
    agents must agree on ``b``.  Every ``M_i`` must be certified positive
    semidefinite, or the caller asserts simplex-conditional semidefiniteness
    with ``params.assume_copositive`` (not verifiable in general).
    """
    params = params or ConsensusParams()
    n = len(psis[0])
    agents = []
    for i, (psi, M) in enumerate(zip(psis, Ms)):
        psi = np.asarray(psi, dtype=float)
        M = np.asarray(M, dtype=float)
        if len(psi) != n or M.shape != (n, n):
            raise ValueError(f"agent {i}: cardinality mismatch")
        if not is_psd(M):
            if not params.assume_copositive:
                raise PreconditionError(
                    f"agent {i}: coupling matrix is indefinite (case 3, which needs a "
                    "semidefinite relaxation, is not supported)"
                )
            log.warning("agent %d: indefinite coupling accepted on caller's copositivity assertion", i)
        log_psi = np.log(psi)
        if not np.any(M):
            solve, payoff = _entropic_slave_softmax(log_psi, 1.0)
        else:
            def solve(v, log_psi=log_psi, M=M):
                b, _ = entropic_minimize(-log_psi + v, M, 1.0, tol=params.slave_tol)
                return b, b

            def payoff(_, b, log_psi=log_psi, M=M):
                pos = b > 0
                return float(b @ log_psi - b @ M @ b - np.sum(b[pos] * np.log(b[pos])))
        agents.append(LocalProblem(solve, payoff, n))
    problem = ConsensusProblem(agents)
    return run_dual_decomposition(problem, params.step_rule, params.max_iters, params.tol)


def bethe_consensus(psis: list, a_vectors: list | None = None, params: ConsensusParams | None = None,
                    entropy_weights: list | None = None) -> ConsensusResult:
    """Bethe belief consensus with diagonal pairwise beliefs.

    Agent ``i`` minimizes ``-b^T (ln psi_i + a_i) + w_i b^T ln b`` subject to
    all agents agreeing on ``b``; its slave has the closed form
    ``softmax((ln psi_i + a_i - v_i) / w_i)``.  The weights default to
    ``1/N`` so that the agents' entropies add up to a single entropy term and
    the consensus optimum is ``b ~ prod_i psi_i exp(a_i)``.
    """
    params = params or ConsensusParams()
    N = len(psis)
    n = len(psis[0])
    if any(len(p) != n for p in psis):
        raise ValueError("all agents must share the same hypothesis set")
    if a_vectors is None:
        a_vectors = [np.zeros(n)] * N
    if entropy_weights is None:
        entropy_weights = [1.0 / N] * N
    agents = []
    for psi, a, w in zip(psis, a_vectors, entropy_weights):
        solve, payoff = _entropic_slave_softmax(np.log(np.asarray(psi, float)) + np.asarray(a, float), w)
        agents.append(LocalProblem(solve, payoff, n))
    problem = ConsensusProblem(agents)
    return run_dual_decomposition(problem, params.step_rule, params.max_iters, params.tol)


def agent_models(mrf) -> tuple[list, list, list]:
    """Per-agent ``(psi_i, M_i, a_i)`` for a model with a common cardinality.

    ``M_i = -sum_j ln psi_ij`` uses compatibilities normalized into (0, 1];
    ``a_i = sum_j ln diag(psi_ij)``.
    """
    cards = set(mrf.cardinalities)
    if len(cards) != 1:
        raise ValueError("belief consensus needs a homogeneous state set")
    n = cards.pop()
    psis, Ms, As = [], [], []
    for i in range(mrf.num_nodes):
        M = np.zeros((n, n))
        a = np.zeros(n)
        for j in mrf.neighbors[i]:
            pot = mrf.edge_potential(i, j)
            M -= np.log(normalize_compatibility(pot))
            a += np.log(np.diag(pot))
        psis.append(np.array(mrf.node_potentials[i]))
        Ms.append(M)
        As.append(a)
    return psis, Ms, As
