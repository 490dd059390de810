"""Direct minimization of mean-field and Bethe free energies.

Mean field
    Exact cyclic coordinate descent.  With the other nodes fixed the objective
    in ``b_k`` is linear plus negative entropy, so the minimizer is
    ``b_k ~ psi_k * exp(sum_j ln(psi_kj) b_j)`` and every sweep is monotone.

Bethe (direct)
    Exponentiated-gradient descent over node beliefs.  After every step each
    edge belief is refit to the current node marginals by iterative
    proportional fitting started from ``psi_ij``; that refit is the exact
    minimizer of the edge part of the objective for fixed marginals, and its
    log row/column scalings are the gradient of that part with respect to the
    node beliefs.  Steps start from a Barzilai-Borwein estimate in log
    coordinates and are safeguarded by nonmonotone Armijo backtracking.

Bethe (via BP)
    Run sum-product BP and read off the fixed-point node and pairwise beliefs.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp, softmax

from . import bp
from .free_energy import bethe_free_energy, mean_field_free_energy
from .model import BeliefState, PairwiseMRF

@dataclass
class BOParams:
    max_iters: int = 20000
    tol: float = 1e-10
    inner_tol: float = 1e-13
    step: float = 1.0
    init: str = "uniform"
    seed: int = 0
    restarts: int = 3
    stationarity_tol: float = 1e-11
    threads: int = 1

    def __post_init__(self):
        if self.tol <= 0 or self.inner_tol <= 0 or self.stationarity_tol <= 0:
            raise ValueError("tolerances must be positive")
        if self.step <= 0:
            raise ValueError("step size must be positive")
        if self.init not in ("uniform", "random"):
            raise ValueError(f"unknown init mode {self.init!r}")
        if self.restarts < 1:
            raise ValueError("need at least one start")


@dataclass
class BOResult:
    beliefs: BeliefState
    objective_trace: list = field(default_factory=list)
    converged: bool = False
    stationarity: float = float("inf")
    iterations: int = 0
    seed: int | None = None

    @property
    def objective(self) -> float:
        return self.objective_trace[-1]


def simplex_project(v) -> np.ndarray:
    """Euclidean projection onto the probability simplex (sort and threshold)."""
    v = np.asarray(v, dtype=float)
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - 1.0
    idx = np.arange(1, len(v) + 1)
    rho = np.nonzero(u - css / idx > 0)[0][-1]
    theta = css[rho] / (rho + 1)
    return np.maximum(v - theta, 0.0)


def entropic_minimize(c, Q=None, weight: float = 1.0, step: float | None = None,
                      tol: float = 1e-13, max_iters: int = 200000, x0=None):
    """Minimize ``<c, x> + x^T Q x + weight * sum x ln x`` over the simplex.

    Composite mirror descent in the entropic geometry: the linear and
    quadratic parts are linearized, the entropy is kept exact, giving
    ``x+ ~ exp((ln x - step * grad) / (1 + step * weight))``.  Returns
    ``(x, iterations)``.
    """
    c = np.asarray(c, dtype=float)
    n = len(c)
    Qs = np.zeros((n, n)) if Q is None else 0.5 * (np.asarray(Q, float) + np.asarray(Q, float).T)
    if step is None:
        norm = np.linalg.norm(Qs, 2)
        step = 1.0 / (2.0 * norm) if norm > 0 else 1.0
    x = np.full(n, 1.0 / n) if x0 is None else np.asarray(x0, dtype=float)
    logx = np.log(x)
    for it in range(1, max_iters + 1):
        grad = c + 2.0 * Qs @ x
        z = (logx - step * grad) / (1.0 + step * weight)
        logx_new = z - logsumexp(z)
        x_new = np.exp(logx_new)
        delta = float(np.max(np.abs(x_new - x)))
        x, logx = x_new, logx_new
        if delta <= tol:
            return x, it
    return x, max_iters


def _dirichlet_start(mrf: PairwiseMRF, seed: int) -> list:
    rng = np.random.default_rng(seed)
    return [rng.dirichlet(np.ones(n)) for n in mrf.cardinalities]


def _uniform_start(mrf: PairwiseMRF) -> list:
    return [np.full(n, 1.0 / n) for n in mrf.cardinalities]


def _starts(mrf: PairwiseMRF, params: BOParams, restarts: int):
    out = []
    for r in range(restarts):
        if params.init == "uniform" and r == 0:
            out.append((None, _uniform_start(mrf)))
        else:
            seed = params.seed + r
            out.append((seed, _dirichlet_start(mrf, seed)))
    return out


def _run_starts(fn, starts, threads):
    if threads > 1 and len(starts) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(fn, starts))
    else:
        results = [fn(s) for s in starts]
    # first start wins ties so the merge is independent of thread timing
    best = results[0]
    for r in results[1:]:
        if r.objective < best.objective:
            best = r
    return best


# mean field ---------------------------------------------------------------


def _mf_field(mrf: PairwiseMRF, b: list, k: int) -> np.ndarray:
    f = np.log(mrf.node_potentials[k])
    for j in mrf.neighbors[k]:
        f = f + np.log(mrf.edge_potential(k, j)) @ b[j]
    return f


def mean_field_stationarity(mrf: PairwiseMRF, b: list) -> float:
    return max(
        (float(np.max(np.abs(softmax(_mf_field(mrf, b, k)) - b[k]))) for k in range(mrf.num_nodes)),
        default=0.0,
    )


def _mean_field_single(mrf: PairwiseMRF, params: BOParams, start) -> BOResult:
    seed, b = start
    b = [np.array(v, dtype=float) for v in b]
    trace = [mean_field_free_energy(mrf, b)]
    converged = False
    sweeps = 0
    for sweeps in range(1, params.max_iters + 1):
        for k in range(mrf.num_nodes):
            b[k] = softmax(_mf_field(mrf, b, k))
        trace.append(mean_field_free_energy(mrf, b))
        if trace[-2] - trace[-1] < params.tol:
            converged = True
            break
    return BOResult(BeliefState(b), trace, converged, mean_field_stationarity(mrf, b), sweeps, seed)


def minimize_mean_field(mrf: PairwiseMRF, params: BOParams | None = None) -> BOResult:
    """Cyclic coordinate descent on the mean-field free energy.

    ``params.restarts`` starts are run (the first from ``params.init``, the
    rest from Dirichlet draws seeded ``seed + r``) and the lowest final
    objective is returned.
    """
    params = params or BOParams()
    mrf.check()
    starts = _starts(mrf, params, params.restarts)
    return _run_starts(lambda s: _mean_field_single(mrf, params, s), starts, params.threads)


# Bethe, direct ------------------------------------------------------------


def ipf_fit(psi: np.ndarray, row: np.ndarray, col: np.ndarray, tol: float = 1e-13,
            max_iters: int = 100000, scalings=None):
    """Scale ``psi`` to ``diag(r) psi diag(s)`` with the given marginals.

    Returns ``(B, r, s)``.  ``scalings`` warm-starts ``(r, s)``.
    """
    if scalings is None:
        s = np.ones(psi.shape[1])
    else:
        s = scalings[1]
    for _ in range(max_iters):
        r = row / (psi @ s)
        s = col / (psi.T @ r)
        err = float(np.max(np.abs(r * (psi @ s) - row)))
        if err <= tol:
            break
    B = r[:, None] * psi * s[None, :]
    return B, r, s


class _BetheState:
    """Node beliefs plus the IPF-fitted edge beliefs that go with them."""

    def __init__(self, mrf: PairwiseMRF, nodes: list, inner_tol: float, warm=None):
        self.mrf = mrf
        self.nodes = nodes
        self.edges = {}
        self.scalings = {}
        for i, j, pot in mrf.edges:
            B, r, s = ipf_fit(pot, nodes[i], nodes[j], inner_tol,
                              scalings=None if warm is None else warm[(i, j)])
            self.edges[(i, j)] = B
            self.scalings[(i, j)] = (r, s)
        self.value = bethe_free_energy(mrf, BeliefState(nodes, self.edges))

    def gradient(self) -> list:
        mrf = self.mrf
        grads = []
        for k, b in enumerate(self.nodes):
            g = -np.log(mrf.node_potentials[k]) + (1 - mrf.degree(k)) * (np.log(b) + 1.0)
            grads.append(g)
        for (i, j), (r, s) in self.scalings.items():
            grads[i] = grads[i] + np.log(r)
            grads[j] = grads[j] + np.log(s)
        return grads


def _eg_stationarity(nodes, grads) -> float:
    worst = 0.0
    for b, g in zip(nodes, grads):
        worst = max(worst, float(np.max(b * np.abs(g - b @ g))))
    return worst


def _centered(v: np.ndarray) -> np.ndarray:
    return v - v.mean()


def _bethe_single(mrf: PairwiseMRF, params: BOParams, start) -> BOResult:
    seed, nodes = start
    state = _BetheState(mrf, [np.array(v, float) for v in nodes], params.inner_tol)
    trace = [state.value]
    eta = params.step
    converged = False
    stat = float("inf")
    prev = None
    it = 0
    for it in range(1, params.max_iters + 1):
        grads = state.gradient()
        stat = _eg_stationarity(state.nodes, grads)
        if stat <= params.stationarity_tol:
            converged = True
            break
        theta = np.concatenate([_centered(np.log(b)) for b in state.nodes])
        gflat = np.concatenate([_centered(g) for g in grads])
        if prev is not None:
            # Barzilai-Borwein estimate in log coordinates
            ds, dg = theta - prev[0], gflat - prev[1]
            curv = float(ds @ dg)
            if curv > 0:
                eta = min(max(float(ds @ ds) / curv, 1e-8), 1e6)
        prev = (theta, gflat)
        ref = max(trace[-10:])
        accepted = False
        while eta > 1e-14:
            cand = []
            for b, g in zip(state.nodes, grads):
                z = np.log(b) - eta * (g - g.max())
                cand.append(np.exp(z - logsumexp(z)))
            new = _BetheState(mrf, cand, params.inner_tol, warm=state.scalings)
            predicted = sum(float(g @ (b - c)) for g, b, c in zip(grads, state.nodes, cand))
            if new.value <= ref - 1e-4 * predicted:
                accepted = True
                break
            eta *= 0.5
        if not accepted:
            # no descent left at machine precision
            converged = stat <= 1e3 * params.stationarity_tol
            break
        state = new
        trace.append(state.value)
    grads = state.gradient()
    stat = _eg_stationarity(state.nodes, grads)
    beliefs = BeliefState(state.nodes, state.edges)
    return BOResult(beliefs, trace, converged, stat, it, seed)


def minimize_bethe_direct(mrf: PairwiseMRF, params: BOParams | None = None) -> BOResult:
    """Minimize the Bethe free energy over the local consistency polytope.

    Trees (and forests) make the objective convex, so a single start is used
    there; loopy models get ``params.restarts`` starts.
    """
    params = params or BOParams()
    mrf.check()
    restarts = 1 if mrf.is_tree() else params.restarts
    starts = _starts(mrf, params, restarts)
    return _run_starts(lambda s: _bethe_single(mrf, params, s), starts, params.threads)


def minimize_bethe_via_bp(mrf: PairwiseMRF, params: BOParams | None = None,
                          schedule: bp.Schedule | None = None) -> BOResult:
    """Bethe stationary point from a sum-product fixed point.

    ``stationarity`` is the pairwise/node marginal mismatch of the BP
    beliefs, which vanishes exactly at a fixed point.  If BP does not converge
    the beliefs are still returned with ``converged`` False.
    """
    params = params or BOParams()
    res = bp.run_bp(mrf, bp.SUM, schedule, max_iters=params.max_iters,
                    tol=max(params.stationarity_tol, 1e-14))
    edges = bp.edge_beliefs(mrf, res.messages)
    beliefs = BeliefState(res.beliefs.node_beliefs, edges)
    value = bethe_free_energy(mrf, beliefs)
    return BOResult(beliefs, [value], res.converged, beliefs.consistency_residual(), res.iterations)
