"""Distributed Bayesian hypothesis testing for fault detection and diagnosis.

Every agent holds the same hypothesis bank and a local likelihood vector
``p(y_k | h)``.  With conditionally independent measurements the centralized
posterior is ``prior(h) prod_k p(y_k | h)``, which is the reference every
distributed method is checked against.

The MRF encoding puts ``prior^(1/N) * p(y_k | h)`` on node ``k`` and an
epsilon-smoothed equality constraint (1 on the diagonal, ``epsilon`` off it)
on every topology edge, so the product over nodes carries the prior exactly
once and the edges force all agents toward one shared hypothesis.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import bp
from .consensus import ConsensusParams, StepRule, agent_models, bethe_consensus, mfe_consensus
from .model import PairwiseMRF

METHODS = ("bp-sum", "bp-max", "mfe-consensus", "bethe-consensus")


@dataclass
class HypothesisBank:
    labels: list
    prior: np.ndarray = None

    def __post_init__(self):
        self.labels = list(self.labels)
        h = len(self.labels)
        if h < 2:
            raise ValueError("need at least two hypotheses")
        if self.prior is None:
            self.prior = np.full(h, 1.0 / h)
        self.prior = np.asarray(self.prior, dtype=float)
        if self.prior.shape != (h,):
            raise ValueError(f"prior has length {len(self.prior)}, expected {h}")
        if np.any(self.prior < 0) or abs(self.prior.sum() - 1.0) > 1e-9:
            raise ValueError("prior must be a probability vector")

    def __len__(self):
        return len(self.labels)


@dataclass
class LocalEvidence:
    agent: object
    likelihood: np.ndarray

    def __post_init__(self):
        self.likelihood = np.asarray(self.likelihood, dtype=float)
        if np.any(self.likelihood <= 0) or not np.all(np.isfinite(self.likelihood)):
            raise ValueError(f"agent {self.agent}: likelihoods must be strictly positive")


@dataclass
class FddParams:
    epsilon: float = 1e-6
    bp_tol: float = 1e-10
    bp_max_iters: int = 500
    consensus: ConsensusParams | None = None


def default_consensus_params(method: str, n_agents: int) -> ConsensusParams:
    """Constant steps at the inverse Lipschitz constant of the dual gradient.

    A softmax slave with entropy weight ``w`` has a price-to-belief Jacobian
    of norm at most ``1/(2w)``.  Bethe slaves use ``w = 1/N``; mean-field
    slaves have ``w = 1`` and a convex coupling that only adds curvature.
    """
    alpha = 2.0 / n_agents if method == "bethe-consensus" else 2.0
    return ConsensusParams(step_rule=StepRule("constant", alpha), max_iters=200000, tol=1e-7)


@dataclass
class FddDecision:
    agent_beliefs: list
    consensus_belief: np.ndarray
    decision: int
    label: object
    oracle_posterior: np.ndarray
    oracle_decision: int
    agent_decisions: list = field(default_factory=list)
    diagnostics: dict = field(default_factory=dict)

    @property
    def agrees_with_oracle(self) -> bool:
        return self.decision == self.oracle_decision


def _check_evidence(bank: HypothesisBank, evidences) -> list[LocalEvidence]:
    evidences = list(evidences)
    if not evidences:
        raise ValueError("need at least one evidence vector")
    for ev in evidences:
        if ev.likelihood.shape != (len(bank),):
            raise ValueError(f"agent {ev.agent}: likelihood length {len(ev.likelihood)} != {len(bank)}")
    return evidences


def centralized_posterior(bank: HypothesisBank, evidences) -> np.ndarray:
    """``prior(h) prod_k p(y_k | h)``, normalized (computed in the log domain)."""
    evidences = _check_evidence(bank, evidences)
    with np.errstate(divide="ignore"):
        logp = np.log(bank.prior)
    logp = logp + sum(np.log(ev.likelihood) for ev in evidences)
    logp = logp - np.max(logp)
    p = np.exp(logp)
    return p / p.sum()


def local_potentials(bank: HypothesisBank, evidences) -> list[np.ndarray]:
    """Node potentials ``prior^(1/N) * p(y_k | h)``."""
    evidences = _check_evidence(bank, evidences)
    share = bank.prior ** (1.0 / len(evidences))
    return [share * ev.likelihood for ev in evidences]


def _topology_indices(evidences, topology) -> list[tuple[int, int]]:
    index = {ev.agent: k for k, ev in enumerate(evidences)}
    edges = []
    for a, b in topology:
        if a not in index or b not in index:
            raise ValueError(f"topology edge ({a}, {b}) references an unknown agent")
        edges.append((index[a], index[b]))
    return edges


def is_connected(n: int, edges) -> bool:
    adj = [[] for _ in range(n)]
    for i, j in edges:
        adj[i].append(j)
        adj[j].append(i)
    seen = {0}
    stack = [0]
    while stack:
        u = stack.pop()
        for w in adj[u]:
            if w not in seen:
                seen.add(w)
                stack.append(w)
    return len(seen) == n


def equality_potential(h: int, epsilon: float) -> np.ndarray:
    pot = np.full((h, h), float(epsilon))
    np.fill_diagonal(pot, 1.0)
    return pot


def build_fdd_mrf(bank: HypothesisBank, evidences, topology, epsilon: float = 1e-6) -> PairwiseMRF:
    """Homogeneous-hypothesis MRF over the agents' communication topology."""
    if not 0.0 < epsilon <= 1.0:
        raise ValueError("epsilon must lie in (0, 1]")
    evidences = _check_evidence(bank, evidences)
    edges = _topology_indices(evidences, topology)
    if not is_connected(len(evidences), edges):
        raise ValueError("topology must be connected")
    pot = equality_potential(len(bank), epsilon)
    mrf = PairwiseMRF(local_potentials(bank, evidences), [(i, j, pot) for i, j in edges],
                      [ev.agent for ev in evidences])
    return mrf.check()


def distributed_fdd(bank: HypothesisBank, evidences, topology=(), method: str = "bp-sum",
                    params: FddParams | None = None) -> FddDecision:
    """Run one distributed solver and compare its decision with the oracle.

    BP methods run on :func:`build_fdd_mrf`; consensus methods feed the same
    node potentials (and the coupling terms derived from the edge potentials)
    to the belief-consensus programs.  The consensus belief is the agents'
    average belief and the decision is its argmax (lowest index on ties).
    """
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}; expected one of {METHODS}")
    params = params or FddParams()
    evidences = _check_evidence(bank, evidences)
    mrf = build_fdd_mrf(bank, evidences, topology, params.epsilon)
    oracle = centralized_posterior(bank, evidences)
    diagnostics: dict = {"method": method}

    if method in ("bp-sum", "bp-max"):
        mode = bp.SUM if method == "bp-sum" else bp.MAX
        res = bp.run_bp(mrf, mode, max_iters=params.bp_max_iters, tol=params.bp_tol)
        beliefs = [np.asarray(b) for b in res.beliefs.node_beliefs]
        diagnostics.update(converged=res.converged, iterations=res.iterations,
                           trace=[(n + 1, r) for n, r in enumerate(res.residual_trace)])
    else:
        psis, Ms, As = agent_models(mrf)
        cparams = params.consensus or default_consensus_params(method, len(psis))
        if method == "mfe-consensus":
            out = mfe_consensus(psis, Ms, cparams)
        else:
            out = bethe_consensus(psis, As, cparams)
        beliefs = [np.asarray(y) for y in out.ys]
        diagnostics.update(converged=out.converged, iterations=out.iterations,
                           diverged=out.trace.diverged, prices=out.prices.tolist(),
                           trace=list(out.trace.rows()))
    consensus = np.mean(beliefs, axis=0)
    decision = int(np.argmax(consensus))
    gap = np.sort(oracle)[::-1]
    diagnostics["oracle_margin"] = float(gap[0] - gap[1])
    return FddDecision(
        agent_beliefs=beliefs,
        consensus_belief=consensus,
        decision=decision,
        label=bank.labels[decision],
        oracle_posterior=oracle,
        oracle_decision=int(np.argmax(oracle)),
        agent_decisions=[int(np.argmax(b)) for b in beliefs],
        diagnostics=diagnostics,
    )


def consensus_residual(decision) -> float:
    """``max_i ||b_i - mean(b)||_inf`` over the agents' beliefs."""
    beliefs = decision.agent_beliefs if isinstance(decision, FddDecision) else decision
    beliefs = np.asarray(beliefs, dtype=float)
    return float(np.max(np.abs(beliefs - beliefs.mean(axis=0))))


def oracle_discrepancy(decision: FddDecision) -> bool:
    """True when a solver's decision differs from the centralized argmax."""
    return not decision.agrees_with_oracle


def random_scenario(rng: np.random.Generator, max_agents: int = 5, max_hyp: int = 4,
                    topology: str = "tree"):
    """Random bank, evidences and a star or random-tree topology."""
    n = int(rng.integers(1, max_agents + 1))
    h = int(rng.integers(2, max_hyp + 1))
    bank = HypothesisBank([f"hypothesis-{i}" for i in range(h)], rng.dirichlet(np.ones(h)))
    evidences = [LocalEvidence(k, rng.uniform(0.05, 1.0, size=h)) for k in range(n)]
    if topology == "star":
        edges = [(0, k) for k in range(1, n)]
    else:
        edges = [(int(rng.integers(0, k)), k) for k in range(1, n)]
    return bank, evidences, edges
