import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_digraph
from oracles import bisect
from scrank.core import IterationConfig, ScoreState, iterate, potential
from scrank.graph import DirectedGraph, unreciprocated
from scrank.muesli import (Cycle, MuesliSystem, Repeating, RoundRobin, SeededRandom,
                           SymmetryError, activation_from_name, embed_scrank, load_system,
                           make_connectivity, make_party_affiliation, make_tech_diffusion, run,
                           write_run_csv)
from scrank.transfer import Logistic, NormalCDF


def test_zero_weights_step():
    f = Logistic(0.3, 4.0)
    sys_ = MuesliSystem(np.zeros((3, 3)), f, 0.0, 1.0, x0=[0.9, 0.1, 0.5])
    for i in range(3):
        r = sys_.step(i)
        assert r.value == f(0.0)
        assert r.potential_delta <= 0


def test_zero_weights_converge_in_one_sweep():
    f = Logistic(0.3, 4.0)
    sys_ = MuesliSystem(sp.csr_matrix((5, 5)), f, 0.0, 1.0, x0=np.linspace(0, 1, 5))
    res = run(sys_, RoundRobin(5), 1e-12, 100)
    assert res.converged and res.steps == 10
    assert np.all(res.x == f(0.0))


def test_potential_at_zero_and_without_weights():
    f = Logistic(0.3, 4.0)
    W = np.array([[0, 2.0], [2.0, 0]])
    assert MuesliSystem(W, f, 0.0, 1.0).potential() == 0.0
    x = np.array([0.2, 0.7])
    sys0 = MuesliSystem(np.zeros((2, 2)), f, 0.0, 1.0, x0=x)
    assert abs(sys0.potential() - sum(f.inverse_integral(v) for v in x)) < 1e-15
    sys1 = MuesliSystem(W, f, 0.0, 1.0, x0=x)
    expected = sum(f.inverse_integral(v) for v in x) - 2.0 * 0.2 * 0.7
    assert abs(sys1.potential() - expected) < 1e-14


def test_two_variables_one_step_fixed_point():
    f1 = NormalCDF(0.4, 0.2)
    sys_ = MuesliSystem(np.array([[0, 1.0], [1.0, 0]]), [f1, Logistic(0, 1)], 0.0, 1.0,
                        x0=[0.0, 0.8])
    r = sys_.step(0)
    assert r.value == f1(0.8)
    again = sys_.step(0)
    assert again.change == 0.0 and again.potential_delta == 0.0


def test_step_out_of_range():
    sys_ = MuesliSystem(np.zeros((2, 2)), Logistic(0, 1), 0.0, 1.0)
    with pytest.raises(IndexError):
        sys_.step(2)


def test_asymmetric_weights_rejected():
    with pytest.raises(SymmetryError):
        MuesliSystem(np.array([[0, 1.0], [0.5, 0]]), Logistic(0, 1), 0.0, 1.0)
    with pytest.raises(SymmetryError):
        MuesliSystem(np.array([[1.0, 0], [0, 0]]), Logistic(0, 1), 0.0, 1.0)


def test_initial_state_bounds():
    with pytest.raises(ValueError):
        MuesliSystem(np.zeros((2, 2)), Logistic(0, 1), 0.0, 1.0, x0=[0.5, 2.0])


def random_signed(n, density, seed):
    rng = np.random.default_rng(seed)
    M = np.triu(rng.normal(size=(n, n)) * (rng.random((n, n)) < density), 1)
    return M + M.T


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 25), st.floats(0.1, 1.0), st.integers(0, 10**6),
       st.sampled_from(["round-robin", "random", "adversarial"]))
def test_step_delta_matches_recomputed_potential(n, density, seed, act):
    W = random_signed(n, density, seed)
    x0 = np.random.default_rng(seed + 1).uniform(-1, 1, n)
    sys_ = make_party_affiliation(W, steepness=3.0, x0=x0)
    seq = activation_from_name(act, n, seed)
    for t in range(4 * n):
        before = sys_.potential()
        r = sys_.step(seq(t))
        after = sys_.potential()
        assert abs((after - before) - r.potential_delta) <= 1e-10
        assert r.potential_delta <= 1e-15


def test_party_descent_to_local_minimum():
    W = random_signed(40, 0.3, 7)
    sys_ = make_party_affiliation(W, steepness=5.0,
                                  x0=np.random.default_rng(3).uniform(-1, 1, 40))
    res = run(sys_, SeededRandom(40, 5), 1e-10, 200000, record=True)
    assert res.converged
    for r in res.records:
        assert r.potential_delta <= 1e-20   # rounding on ulp-sized moves
        if abs(r.change) > 1e-9:
            assert r.potential_delta < 0
    assert all(b <= a + 1e-12 for a, b in zip(res.potentials, res.potentials[1:]))
    # at a local minimum every variable is its own best response
    for i in range(40):
        assert abs(sys_.functions[i](sys_.input(i)) - sys_.x[i]) < 1e-8


def test_party_two_friends():
    sys_ = make_party_affiliation(np.array([[0, 1.0], [1.0, 0]]), x0=[1.0, -1.0])
    res = run(sys_, RoundRobin(2), 1e-12, 1000)
    assert res.converged
    assert np.sign(res.x[0]) == np.sign(res.x[1])
    assert abs(res.x[0] - res.x[1]) < 0.01


def test_party_two_enemies():
    sys_ = make_party_affiliation(np.array([[0, -1.0], [-1.0, 0]]), x0=[0.5, 0.2])
    res = run(sys_, RoundRobin(2), 1e-12, 1000)
    assert np.sign(res.x[0]) == -np.sign(res.x[1])
    assert abs(res.x[0] + res.x[1]) < 0.01


def test_party_no_ties():
    sys_ = make_party_affiliation(np.zeros((4, 4)), x0=[1, -1, 0.5, 0.2])
    res = run(sys_, RoundRobin(4), 1e-12, 100)
    assert np.all(res.x == 0.0)


def two_cliques(k=5, minutes=100.0):
    n = 2 * k
    W = np.zeros((n, n))
    for block in (range(k), range(k, n)):
        for i in block:
            for j in block:
                if i != j:
                    W[i, j] = minutes
    return W


def test_tech_diffusion_isolated_user():
    sys_ = make_tech_diffusion(np.zeros((1, 1)), free_limit=150, steepness=0.2, x0=[1.0])
    res = run(sys_, RoundRobin(1), 1e-12, 10)
    assert res.x[0] < 1e-12


def test_tech_diffusion_clique_stays():
    W = two_cliques()[:5, :5]
    sys_ = make_tech_diffusion(W, free_limit=150, steepness=0.2, x0=np.ones(5))
    res = run(sys_, RoundRobin(5), 1e-12, 1000)
    assert np.all(res.x > 0.9)


def test_tech_diffusion_two_cliques_keep_provider():
    x0 = np.r_[np.zeros(5), np.ones(5)]
    sys_ = make_tech_diffusion(two_cliques(), free_limit=150, steepness=0.2, x0=x0)
    res = run(sys_, SeededRandom(10, 1), 1e-12, 10000)
    assert res.converged
    assert np.all(res.x[:5] < 0.01) and np.all(res.x[5:] > 0.99)


def test_tech_diffusion_validation():
    with pytest.raises(ValueError):
        make_tech_diffusion(-two_cliques(), 150)
    with pytest.raises(ValueError):
        make_tech_diffusion(two_cliques(), -1)


def bfs(adj, origin):
    n = adj.shape[0]
    seen = {origin}
    frontier = [origin]
    while frontier:
        nxt = []
        for u in frontier:
            for v in np.nonzero(adj[u])[0]:
                if v not in seen:
                    seen.add(int(v))
                    nxt.append(int(v))
        frontier = nxt
    out = np.zeros(n, bool)
    out[list(seen)] = True
    return out


def path(n):
    A = np.zeros((n, n))
    for i in range(n - 1):
        A[i, i + 1] = A[i + 1, i] = 1
    return A


def test_connectivity_path():
    sys_ = make_connectivity(path(12), 0)
    res = run(sys_, RoundRobin(12), 1e-12, 10000)
    assert res.converged and np.all(res.x > 0.99)


def test_connectivity_two_components():
    A = np.zeros((10, 10))
    A[:5, :5] = path(5)
    A[5:, 5:] = path(5)
    sys_ = make_connectivity(A, 2)
    res = run(sys_, SeededRandom(10, 4), 1e-12, 10000)
    assert np.all(res.x[:5] > 0.99) and np.all(res.x[5:] < 0.01)


def test_connectivity_singleton():
    res = run(make_connectivity(np.zeros((1, 1)), 0), RoundRobin(1), 1e-12, 10)
    assert res.x[0] == 1.0


@pytest.mark.parametrize("seed", range(5))
def test_connectivity_matches_bfs(seed):
    rng = np.random.default_rng(seed)
    n = 40
    M = np.triu(rng.random((n, n)) < 0.04, 1).astype(float)
    A = M + M.T
    origin = int(rng.integers(n))
    res = run(make_connectivity(A, origin), activation_from_name("random", n, seed), 1e-12, 10**6)
    assert res.converged
    reach = bfs(A, origin)
    assert np.array_equal(res.x > 0.5, reach)
    assert np.all(res.x[reach] > 0.99) and np.all(res.x[~reach] < 0.01)


def test_activation_sequences():
    assert [RoundRobin(3)(t) for t in range(5)] == [0, 1, 2, 0, 1]
    assert [Cycle((2, 0))(t) for t in range(3)] == [2, 0, 2]
    assert [Repeating(2, 3)(t) for t in range(7)] == [0, 0, 0, 1, 1, 1, 0]
    r = SeededRandom(7, 3)
    seq = [r(t) for t in range(500)]
    assert seq == [SeededRandom(7, 3)(t) for t in range(500)]
    assert set(seq) == set(range(7))
    with pytest.raises(ValueError):
        activation_from_name("bogus", 3)


def test_run_requires_positive_eps():
    with pytest.raises(ValueError):
        run(MuesliSystem(np.zeros((1, 1)), Logistic(0, 1), 0.0, 1.0), RoundRobin(1), 0, 10)


def test_check_bounds():
    assert make_party_affiliation(random_signed(6, 0.5, 0)).check_bounds(20)
    sys_ = MuesliSystem(np.zeros((2, 2)), Logistic(5, 1, lo=-2, hi=2), 0.0, 1.0)
    assert not sys_.check_bounds(5)


# --- SCRank embedding -----------------------------------------------------------

def test_embed_empty():
    a = unreciprocated(DirectedGraph.from_arcs([], [], n=3))
    f_c, f_s = NormalCDF(1, 1), NormalCDF(2, 1)
    sys_ = embed_scrank(a, f_c, f_s)
    assert sys_.W.nnz == 0
    res = run(sys_, RoundRobin(6), 1e-12, 100)
    assert np.all(res.x[:3] == f_c(0)) and np.all(res.x[3:] == f_s(0))


def test_embed_single_arc_matches_bisection():
    a = unreciprocated(DirectedGraph.from_arcs([0], [1]))
    f_c, f_s = NormalCDF(0.5, 0.3), NormalCDF(0.6, 0.25)
    sys_ = embed_scrank(a, f_c, f_s)
    res = run(sys_, RoundRobin(4), 1e-15, 10000)
    # c1 = F_c(1 - s0) and s0 = F_s(1 - c1); g is increasing in c1
    c1 = bisect(lambda c: c - f_c(1 - f_s(1 - c)), 0.0, 1.0)
    assert abs(res.x[1] - c1) < 1e-12
    assert abs(res.x[2] - f_s(1 - c1)) < 1e-12
    assert res.x[0] == f_c(0) and res.x[3] == f_s(0)


def test_embed_matches_iterate(desk_arcs):
    a = desk_arcs
    f_c, f_s = NormalCDF(100, 25), NormalCDF(100, 25)
    eps = 1e-6
    state, trace = iterate(a, f_c, f_s, IterationConfig(eps, 50, 0))
    sys_ = embed_scrank(a, f_c, f_s, ScoreState(np.zeros(a.n), np.zeros(a.n)))
    for _ in range(state.iteration_count):
        sys_.sweep()
    assert np.abs(sys_.x[:a.n] - state.c).max() <= eps
    assert np.abs(sys_.x[a.n:] - state.s).max() <= eps


@settings(max_examples=25, deadline=None)
@given(st.integers(2, 30), st.integers(0, 150), st.integers(0, 10**6))
def test_embed_potential_identity(n, m, seed):
    a = unreciprocated(random_digraph(n, m, 0.3, seed))
    f_c, f_s = NormalCDF(3, 1.5), NormalCDF(2, 1)
    rng = np.random.default_rng(seed)
    state = ScoreState(rng.random(a.n), rng.random(a.n))
    sys_ = embed_scrank(a, f_c, f_s, state)
    assert abs(sys_.potential() - (potential(a, state, f_c, f_s) - a.m)) < 1e-9


# --- system files --------------------------------------------------------------

def test_load_system(tmp_path):
    p = tmp_path / "sys.txt"
    p.write_text("""# three players
n 3
[bounds]
default -1 1
[weights]
0 1 1.0
1 2 -0.5
[functions]
default logistic center=0 steepness=4 lo=-1 hi=1
2 normal mu=0 sigma=1 lo=-1 hi=1
[init]
0 0.5
""")
    sys_ = load_system(p)
    assert sys_.n == 3
    assert sys_.W[1, 0] == 1.0 and sys_.W[2, 1] == -0.5
    assert isinstance(sys_.functions[2], NormalCDF)
    assert sys_.x.tolist() == [0.5, 0.0, 0.0]
    res = run(sys_, RoundRobin(3), 1e-12, 1000)
    assert res.converged


def test_load_system_asymmetric(tmp_path):
    p = tmp_path / "bad.txt"
    p.write_text("n 2\n[weights]\n0 1 1.0\n1 0 2.0\n[functions]\ndefault logistic center=0 steepness=1\n")
    with pytest.raises(SymmetryError):
        load_system(p)


def test_load_system_errors(tmp_path):
    p = tmp_path / "bad.txt"
    p.write_text("n 2\n[functions]\n0 logistic center=0 steepness=1\n")
    with pytest.raises(ValueError, match="no update function"):
        load_system(p)
    p.write_text("n 2\n[weights]\n0 0 1\n")
    with pytest.raises(SymmetryError):
        load_system(p)
    p.write_text("[weights]\n0 1 1\n")
    with pytest.raises(ValueError, match="missing"):
        load_system(p)
    p.write_text("n 2\n[weights]\n0 1\n")
    with pytest.raises(ValueError, match=":3:"):
        load_system(p)


def test_write_run_csv(tmp_path):
    sys_ = make_party_affiliation(np.array([[0, 1.0], [1.0, 0]]), x0=[1.0, -1.0])
    res = run(sys_, RoundRobin(2), 1e-12, 100, record=True)
    p = tmp_path / "run.csv"
    write_run_csv(res, p)
    lines = p.read_text().splitlines()
    assert lines[0] == "step,variable,new_value,potential"
    assert len(lines) == res.steps + 1
