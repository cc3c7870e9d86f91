import math

import numpy as np
import pytest

from oracles import full_transition, power_iterate, random_admissible_chain, softmax_neg
from protofsl import kernels
from protofsl.errors import InsufficientPool, IsolatedTransient, StateUnreachable, ValidationError
from protofsl.markov import (AbsorbingChain, PrototypeGraph, TwoPassClassifier, build_chain, build_graph,
                             classify_nn, classify_two_pass, equilibrium, graph_from_distances, initial_state)
from protofsl.types import PrototypeSet


def _protos(rows, ids=None):
    rows = np.asarray(rows, dtype=float)
    return PrototypeSet(rows, ids or [f"p{i}" for i in range(len(rows))])


# -- graph ----------------------------------------------------------------------

def test_graph_equilateral_complete():
    tri = _protos([[0, 0], [1, 0], [0.5, math.sqrt(3) / 2]])
    W = build_graph(tri, 2).weights
    off = W[~np.eye(3, dtype=bool)]
    assert np.all(off > 0)
    np.testing.assert_allclose(off, math.exp(-1.0), rtol=1e-14)
    assert np.all(np.diag(W) == 0)


def test_graph_collinear_symmetrized():
    W = build_graph(_protos([[0.0], [1.0], [3.0]]), 1).weights
    assert W[0, 1] > 0 and W[1, 2] > 0 and W[0, 2] == 0
    np.testing.assert_array_equal(W, W.T)


def test_graph_too_many_neighbors():
    with pytest.raises(InsufficientPool):
        build_graph(_protos([[0.0], [1.0], [3.0]]), 3)


def test_graph_distance_shift_rescales_weights(rng):
    X = rng.standard_normal((12, 4))
    D = kernels.pairwise_distances(X, X)
    c = 2.5
    g0 = graph_from_distances(D, 3)
    g1 = graph_from_distances(D + c, 3)
    np.testing.assert_allclose(g1.weights, g0.weights * math.exp(-c), rtol=1e-14)
    nodes = np.arange(12)
    ch0 = build_chain(g0, nodes[:4], nodes[4:])
    ch1 = build_chain(g1, nodes[:4], nodes[4:])
    np.testing.assert_allclose(ch1.T, ch0.T, atol=1e-12)
    np.testing.assert_allclose(ch1.A, ch0.A, atol=1e-12)


# -- chain ----------------------------------------------------------------------

def test_single_transient_chain():
    W = np.zeros((3, 3))
    W[0, 1] = W[1, 0] = math.exp(-1.0)
    W[0, 2] = W[2, 0] = math.exp(-2.0)
    ch = build_chain(PrototypeGraph(W, ("t", "a1", "a2"), 2), [0], [1, 2])
    np.testing.assert_array_equal(ch.T, [[0.0]])
    np.testing.assert_allclose(ch.A, [[0.7310585786300049, 0.2689414213699951]], rtol=1e-14)


def test_disconnected_transient_clique_unreachable():
    W = np.zeros((4, 4))
    W[0, 1] = W[1, 0] = 1.0  # transient pair with no absorbing neighbor
    W[2, 3] = W[3, 2] = 1.0
    with pytest.raises(StateUnreachable):
        build_chain(PrototypeGraph(W, tuple("abcd"), 1), [0, 1], [2, 3])


def test_isolated_transient_policies():
    W = np.zeros((3, 3))
    W[1, 2] = W[2, 1] = 1.0
    g = PrototypeGraph(W, tuple("abc"), 1)
    ch = build_chain(g, [0], [1, 2])
    np.testing.assert_allclose(ch.A, [[0.5, 0.5]])
    assert ch.warnings
    with pytest.raises(IsolatedTransient):
        build_chain(g, [0], [1, 2], isolated="raise")


def test_chain_rows_stochastic(rng):
    X = rng.standard_normal((30, 5))
    g = build_graph(_protos(X), 3)
    ch = build_chain(g, range(10), range(10, 30))
    np.testing.assert_allclose(ch.T.sum(1) + ch.A.sum(1), 1.0, atol=1e-12)
    assert (ch.T >= 0).all() and (ch.A >= 0).all()
    assert np.max(np.abs(np.linalg.eigvals(ch.T))) < 1


def test_partition_validation():
    g = build_graph(_protos(np.eye(3)), 1)
    with pytest.raises(ValidationError):
        build_chain(g, [0], [0, 1, 2])
    with pytest.raises(ValidationError):
        build_chain(g, [], [0, 1, 2])


# -- equilibrium ----------------------------------------------------------------

def test_equilibrium_no_transient():
    ch = AbsorbingChain(np.zeros((0, 0)), np.zeros((0, 3)))
    u0 = np.array([0.2, 0.5, 0.3])
    np.testing.assert_array_equal(equilibrium(ch, u0), u0)


def test_equilibrium_worked_example():
    T = np.array([[0, 0.5], [0.5, 0]])
    A = np.array([[0.5, 0], [0, 0.5]])
    u0 = np.array([1.0, 0, 0, 0])
    out = equilibrium(AbsorbingChain(T, A), u0)
    np.testing.assert_allclose(out, [2 / 3, 1 / 3], atol=1e-15)
    np.testing.assert_allclose(power_iterate(full_transition(T, A), u0)[2:], out, atol=1e-12)


@pytest.mark.parametrize("seed", range(20))
def test_equilibrium_matches_power_iteration(seed):
    rng = np.random.default_rng(seed)
    T, A, u0 = random_admissible_chain(rng, int(rng.integers(2, 51)))
    out = equilibrium(AbsorbingChain(T, A), u0)
    ref = power_iterate(full_transition(T, A), u0)
    assert np.abs(ref[: T.shape[0]]).sum() < 1e-8
    assert np.abs(ref[T.shape[0]:] - out).sum() < 1e-8
    assert out.sum() == pytest.approx(1.0, abs=1e-9)


def test_equilibrium_respects_state_maps(rng):
    X = rng.standard_normal((9, 3))
    g = build_graph(_protos(X), 2)
    ch = build_chain(g, [1, 4, 7], [0, 2, 3, 5, 6, 8])
    u0 = rng.dirichlet(np.ones(9))
    ref = power_iterate(ch.transition_matrix(), u0)
    np.testing.assert_allclose(equilibrium(ch, u0), ref[ch.absorbing_ids], atol=1e-10)


def test_equilibrium_batch_matches_single(rng):
    T, A, _ = random_admissible_chain(rng, 12)
    ch = AbsorbingChain(T, A)
    U = rng.dirichlet(np.ones(12), size=5)
    batch = equilibrium(ch, U)
    for u, row in zip(U, batch):
        np.testing.assert_allclose(equilibrium(ch, u), row, rtol=0, atol=1e-15)


def test_equilibrium_rejects_non_distribution():
    ch = AbsorbingChain(np.zeros((1, 1)), np.ones((1, 1)))
    with pytest.raises(ValidationError):
        equilibrium(ch, [0.7, 0.7])


# -- initial state ------------------------------------------------------------

def test_initial_state_uniform_when_equidistant():
    u = initial_state([0.0, 0.0], np.array([[1.0, 0], [0, 1.0], [-1.0, 0]]))
    np.testing.assert_allclose(u, [1 / 3] * 3, rtol=1e-15)


def test_initial_state_self_is_max(rng):
    C = rng.standard_normal((6, 3))
    u = initial_state(C[2], C)
    assert np.argmax(u) == 2 and np.all(u[2] > np.delete(u, 2))
    assert np.all(u > 0) and u.sum() == pytest.approx(1.0)


def test_initial_state_softmax_values():
    C = np.array([[0.0], [1.0], [2.0]])
    np.testing.assert_allclose(initial_state([0.0], C), softmax_neg([0, 1, 2]), rtol=1e-14)
    np.testing.assert_allclose(initial_state([0.0], C), [0.6652409557748218, 0.24472847105479764,
                                                         0.09003057317038046], rtol=1e-14)


def test_initial_state_distance_mode():
    C = np.array([[0.0], [1.0], [3.0]])
    np.testing.assert_allclose(initial_state([0.0], C, mode="distance"), [0, 0.25, 0.75])


# -- classification -------------------------------------------------------------

def test_classify_nn_examples(rng):
    P = _protos([[0.0, 0.0], [2.0, 0.0]], ["A", "B"])
    assert classify_nn([0.9, 0.0], P) == "A"
    assert classify_nn([2.0, 0.0], P) == "B"
    assert classify_nn([1.0, 0.0], P) == "A"  # tie to lower index
    C = rng.standard_normal((50, 4))
    P = _protos(C)
    for x in rng.standard_normal((20, 4)):
        best = min(range(50), key=lambda i: (math.dist(x, C[i]), i))
        assert classify_nn(x, P) == f"p{best}"


def _oracle_two_pass(x, C, base_idx, novel_idx, k):
    """Two-pass decision from literal P^m power iteration and exhaustive argmax."""
    n = len(C)
    D = np.array([[math.dist(a, b) for b in C] for a in C])
    adj = np.zeros((n, n), bool)
    for i in range(n):
        order = sorted((j for j in range(n) if j != i), key=lambda j: (D[i, j], j))[:k]
        adj[i, order] = True
    adj |= adj.T
    W = np.where(adj, np.exp(-D), 0.0)
    u0 = np.array(softmax_neg([math.dist(x, c) for c in C]))

    def winner(transient, absorbing):
        P = np.zeros((n, n))
        for i in transient:
            P[i] = W[i] / W[i].sum()
        for a in absorbing:
            P[a, a] = 1.0
        u = power_iterate(P, u0)
        return max(absorbing, key=lambda a: (u[a], -a))

    b = winner(novel_idx, base_idx)
    v = winner(base_idx, novel_idx)
    return v if math.dist(x, C[v]) < math.dist(x, C[b]) else b


def test_two_pass_small_complete_graph_matches_oracle(rng):
    C = np.array([[0.0, 0.0], [3.0, 0.0], [1.5, 1.0]])
    P = _protos(C, ["b0", "b1", "n0"])
    for x in rng.uniform(-1, 4, size=(40, 2)):
        label, diag = classify_two_pass(x, P, ["b0", "b1"], ["n0"], 2)
        expected = _oracle_two_pass(x, C, [0, 1], [2], 2)
        assert label == P.class_ids[expected]
        assert diag["novel_winner"] == "n0"


def test_two_pass_random_matches_oracle(rng):
    C = rng.standard_normal((14, 3))
    P = _protos(C)
    base, novel = [f"p{i}" for i in range(10)], [f"p{i}" for i in range(10, 14)]
    clf = TwoPassClassifier(P, base, novel, 3)
    X = rng.standard_normal((25, 3))
    res = clf.predict(X)
    for x, label in zip(X, res.labels):
        assert label == f"p{_oracle_two_pass(x, C, list(range(10)), list(range(10, 14)), 3)}"


def test_two_pass_sample_on_base_winner():
    C = np.array([[0.0, 0.0], [1.0, 0.0], [10.0, 10.0], [11.0, 10.0]])
    P = _protos(C, ["b0", "b1", "n0", "n1"])
    label, diag = classify_two_pass(C[0], P, ["b0", "b1"], ["n0", "n1"], 2)
    assert diag["base_winner"] == "b0" and label == "b0"


def test_two_pass_tie_prefers_base():
    C = np.array([[-1.0, 0.0], [1.0, 0.0]])
    P = _protos(C, ["b", "n"])
    label, diag = classify_two_pass([0.0, 0.0], P, ["b"], ["n"], 1)
    assert (diag["base_winner"], diag["novel_winner"], label) == ("b", "n", "b")


def test_two_pass_deterministic(rng):
    C = rng.standard_normal((20, 4))
    P = _protos(C)
    X = rng.standard_normal((30, 4))
    ids = list(P.class_ids)
    a = TwoPassClassifier(P, ids[:15], ids[15:], 3).predict(X).labels
    b = TwoPassClassifier(P, ids[:15], ids[15:], 3).predict(X).labels
    assert a == b


def test_two_pass_unreachable_tags_pass():
    # novel node far away: with k'=1 it links only to the other novel node
    C = np.array([[0.0], [1.0], [100.0], [101.0]])
    P = _protos(C, ["b0", "b1", "n0", "n1"])
    with pytest.raises(StateUnreachable) as info:
        TwoPassClassifier(P, ["b0", "b1"], ["n0", "n1"], 1)
    assert info.value.pass_number == 1
