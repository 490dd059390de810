import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from beliefnet.free_energy import (
    bethe_free_energy,
    gibbs_free_energy,
    kl_divergence,
    mean_field_free_energy,
    product_joint,
)
from beliefnet.model import BeliefState, PairwiseMRF, exact_marginals, joint_table, partition_function

from conftest import graphs, trees

TRIANGLE = PairwiseMRF(
    [[1.0, 2.0], [1.5, 1.0], [1.0, 1.0]],
    [(0, 1, [[3.0, 1.0], [1.0, 3.0]]), (1, 2, [[3.0, 1.0], [1.0, 3.0]]), (0, 2, [[3.0, 1.0], [1.0, 3.0]])],
)


def test_kl_examples():
    p = np.array([0.3, 0.7])
    assert kl_divergence(p, p) == 0.0
    assert kl_divergence([1.0, 0.0], [0.5, 0.5]) == pytest.approx(math.log(2), abs=1e-15)
    expected = 0.9 * math.log(1.8) + 0.1 * math.log(0.2)
    assert kl_divergence([0.9, 0.1], [0.5, 0.5]) == pytest.approx(expected, abs=1e-15)
    assert expected == pytest.approx(0.368064, abs=1e-6)


def test_kl_errors():
    with pytest.raises(ValueError):
        kl_divergence([0.5, 0.5], [1.0])
    with pytest.raises(ValueError):
        kl_divergence([0.5, 0.5], [1.0, 0.0])


def test_gibbs_examples(two_node):
    jt = joint_table(two_node)
    assert gibbs_free_energy(two_node, jt.table) == pytest.approx(-math.log(6), abs=1e-10)
    assert gibbs_free_energy(PairwiseMRF([[1, 1]]), [0.5, 0.5]) == pytest.approx(-math.log(2), abs=1e-15)
    perturbed = jt.table + np.array([[0.05, -0.05], [0.0, 0.0]])
    assert gibbs_free_energy(two_node, perturbed) > -math.log(6)


def test_gibbs_rejects_unnormalized(two_node):
    with pytest.raises(ValueError):
        gibbs_free_energy(two_node, np.full((2, 2), 0.3))
    with pytest.raises(ValueError):
        gibbs_free_energy(two_node, np.full(4, 0.25))


def test_mean_field_examples(two_node):
    iso = PairwiseMRF([[1, 3], [2, 1, 1]])
    beliefs = [p / p.sum() for p in iso.node_potentials]
    assert mean_field_free_energy(iso, beliefs) == pytest.approx(partition_function(iso)[1], abs=1e-14)

    ones = PairwiseMRF([np.ones(2), np.ones(3)], [(0, 1, np.ones((2, 3)))])
    assert mean_field_free_energy(ones, [np.full(2, 0.5), np.full(3, 1 / 3)]) == pytest.approx(
        -math.log(2) - math.log(3), abs=1e-14
    )

    uniform = [np.full(2, 0.5)] * 2
    value = mean_field_free_energy(two_node, uniform)
    # average energy -(ln 2)/2, entropy 2 ln 2
    assert value == pytest.approx(-0.5 * math.log(2) - 2 * math.log(2), abs=1e-14)
    assert value >= -math.log(6)


def test_bethe_examples(two_node):
    m = exact_marginals(two_node)
    assert bethe_free_energy(two_node, m) == pytest.approx(-math.log(6), abs=1e-9)

    iso = PairwiseMRF([[1, 3], [2, 1, 1]])
    b = [np.array([0.2, 0.8]), np.array([0.1, 0.3, 0.6])]
    assert bethe_free_energy(iso, BeliefState(b, {})) == pytest.approx(mean_field_free_energy(iso, b), abs=1e-15)

    gap = bethe_free_energy(TRIANGLE, exact_marginals(TRIANGLE)) - partition_function(TRIANGLE)[1]
    assert abs(gap) > 1e-6


def test_bethe_requires_edge_beliefs(two_node):
    with pytest.raises(ValueError):
        bethe_free_energy(two_node, BeliefState([np.full(2, 0.5)] * 2))


def _random_joint(mrf, seed):
    rng = np.random.default_rng(seed)
    return rng.dirichlet(np.ones(mrf.num_states)).reshape(mrf.cardinalities)


@settings(max_examples=50, deadline=None)
@given(graphs(), st.integers(0, 2**32 - 1))
def test_gibbs_minus_helmholtz_is_kl(mrf, seed):
    beta = _random_joint(mrf, seed)
    jt = joint_table(mrf)
    D = kl_divergence(beta, jt.table)
    assert abs(D - (gibbs_free_energy(mrf, beta) - jt.free_energy)) <= 1e-9
    assert D >= 0


@settings(max_examples=50, deadline=None)
@given(graphs(), st.integers(0, 2**32 - 1))
def test_mean_field_is_an_upper_bound(mrf, seed):
    rng = np.random.default_rng(seed)
    b = [rng.dirichlet(np.ones(n)) for n in mrf.cardinalities]
    G = mean_field_free_energy(mrf, b)
    assert G >= partition_function(mrf)[1] - 1e-10
    assert G == pytest.approx(gibbs_free_energy(mrf, product_joint(b)), abs=1e-10)


@settings(max_examples=50, deadline=None)
@given(trees(max_nodes=7, card=(2, 4)))
def test_bethe_exact_at_tree_marginals(mrf):
    assert abs(bethe_free_energy(mrf, exact_marginals(mrf)) - partition_function(mrf)[1]) <= 1e-9


@settings(max_examples=30, deadline=None)
@given(graphs(max_nodes=4), st.integers(0, 2**32 - 1), st.permutations(range(4)))
def test_energies_invariant_under_relabeling(mrf, seed, perm):
    order = [p for p in perm if p < mrf.num_nodes]
    relabeled = mrf.relabel(order)
    rng = np.random.default_rng(seed)
    b = [rng.dirichlet(np.ones(n)) for n in mrf.cardinalities]
    moved = [b[o] for o in order]
    assert mean_field_free_energy(relabeled, moved) == pytest.approx(mean_field_free_energy(mrf, b), abs=1e-12)
    ex = exact_marginals(mrf)
    rex = exact_marginals(relabeled)
    assert bethe_free_energy(relabeled, rex) == pytest.approx(bethe_free_energy(mrf, ex), abs=1e-12)
