"""Walk, resolvent, and heat-kernel tests with independent chain oracles."""
import math
from fractions import Fraction

import numpy as np
import pytest

from carpet import diffusion as df
from carpet import network as nw
from carpet.convergence import default_grid_words, kz_family
from carpet.geometry import SpecError, standard_carpet

from oracles import expected_hitting_steps

LIM = Fraction(1, 28)


def tiny_net(sc, n_vertices, edges):
    ei = np.array([e[0] for e in edges], dtype=np.int64)
    ej = np.array([e[1] for e in edges], dtype=np.int64)
    cond = np.array([e[2] for e in edges], dtype=float)
    return nw.CellNetwork(
        sc, 1, nw.ConductanceScheme(), n_vertices, ei, ej, cond
    )


def merged_edges(net, left):
    """Test-side left-merge: relabel, drop interior edges, keep weights."""
    left = set(int(v) for v in left)
    relabel = {}
    nxt = 1
    for v in range(net.n_vertices):
        if v in left:
            relabel[v] = 0
        else:
            relabel[v] = nxt
            nxt += 1
    out = []
    for i, j, c in zip(net.ei, net.ej, net.cond):
        a, b = relabel[int(i)], relabel[int(j)]
        if a == 0 and b == 0:
            continue
        out.append((a, b, float(c)))
    return nxt, out, relabel


# ---------------------------------------------------------------------------
# transition operator

def test_single_edge_transition():
    sc = standard_carpet()
    net = tiny_net(sc, 2, [(0, 1, 1.0)])
    op = df.transition_operator(net, "weighted")
    assert np.array_equal(op.P.toarray(), [[0.0, 1.0], [1.0, 0.0]])


def test_rows_sum_to_one():
    sc = standard_carpet()
    net = nw.build_cell_network(sc, 2)
    for kind in ("uniform", "weighted"):
        op = df.transition_operator(net, kind)
        rows = np.asarray(op.P.sum(axis=1)).ravel()
        assert np.abs(rows - 1.0).max() <= 1e-12
        assert abs(op.measure.sum() - 1.0) <= 1e-12


def test_level1_ring_doubly_stochastic():
    sc = standard_carpet()
    net = nw.build_cell_network(sc, 1)
    op = df.transition_operator(net, "weighted")
    p = op.P.toarray()
    assert np.abs(p.sum(axis=0) - 1.0).max() <= 1e-12
    # every ring cell has exactly two neighbours at probability 1/2
    assert np.array_equal(np.sort(p, axis=1)[:, -2:], np.full((8, 2), 0.5))


def test_reversibility():
    sc = standard_carpet()
    net = nw.build_cell_network(sc, 2)
    assert df.reversibility_defect(df.transition_operator(net, "weighted")) <= 1e-15
    # level-2 degrees vary, so the uniform measure is not reversible
    assert df.reversibility_defect(df.transition_operator(net, "uniform")) > 1e-3


def test_isolated_vertex_rejected():
    sc = standard_carpet()
    net = tiny_net(sc, 3, [(0, 1, 1.0)])
    with pytest.raises(RuntimeError, match="isolated"):
        df.transition_operator(net)


def test_unknown_measure_rejected():
    sc = standard_carpet()
    net = nw.build_cell_network(sc, 1)
    with pytest.raises(SpecError, match="measure"):
        df.transition_operator(net, "lebesgue")


# ---------------------------------------------------------------------------
# crossing chains and walks

def test_merged_chain_structure():
    sc = standard_carpet()
    chain = df.merged_crossing_chain(sc, 1)
    assert chain.n_states == 6  # 8 ring cells, 3 shorted into the start
    assert int(chain.absorbing.sum()) == 3
    assert not chain.absorbing[0]


def test_level1_expected_steps_by_hand():
    # shorted chain: start L, two mid cells, three absorbing right cells
    edges = [(0, 1, 1), (0, 2, 1), (1, 3, 1), (2, 5, 1), (3, 4, 1), (4, 5, 1)]
    assert expected_hitting_steps(6, edges, 0, {3, 4, 5}) == pytest.approx(4.0)
    sc = standard_carpet()
    assert df.expected_crossing_steps(sc, 1) == pytest.approx(4.0, abs=1e-12)


@pytest.mark.parametrize(
    "make,level",
    [
        (standard_carpet, 1),
        (standard_carpet, 2),
        (lambda: kz_family([LIM]).limit_spec(), 1),
    ],
)
def test_oracle_matches_independent_chain(make, level):
    spec = make()
    net = nw.build_cell_network(spec, level)
    nm, edges, relabel = merged_edges(net, nw.side_cells(spec, level, 4))
    right = {relabel[int(v)] for v in nw.side_cells(spec, level, 2)}
    want = expected_hitting_steps(nm, edges, 0, right)
    assert df.expected_crossing_steps(spec, level) == pytest.approx(
        want, rel=1e-12
    )


@pytest.mark.parametrize(
    "make,level,seed",
    [
        (standard_carpet, 1, 7),
        (standard_carpet, 2, 7),
        (lambda: kz_family([LIM]).limit_spec(), 1, 3),
    ],
)
def test_monte_carlo_within_three_stderr(make, level, seed):
    spec = make()
    want = df.expected_crossing_steps(spec, level)
    rep = df.simulate_crossings(spec, [level], walks=4000, seed=seed)
    row = rep["rows"][0]
    assert abs(row["mean_steps"] - want) <= 3.0 * row["stderr"]


def test_walks_reproducible_and_prefix_stable():
    sc = standard_carpet()
    chain = df.merged_crossing_chain(sc, 1)
    key = df._stream_key(9, 1)
    s1 = df._run_walks(chain, 2000, key, df.STEP_CAP)
    s2 = df._run_walks(chain, 4000, key, df.STEP_CAP)
    assert np.array_equal(s2[:2000], s1)  # walk streams keyed by index
    assert np.array_equal(df._run_walks(chain, 2000, key, df.STEP_CAP), s1)
    assert not np.array_equal(
        df._run_walks(chain, 2000, df._stream_key(10, 1), df.STEP_CAP), s1
    )


def test_uniforms_are_counter_based():
    ids = np.arange(5, dtype=np.int64)
    a = df._uniforms(123, ids, 4)
    assert np.array_equal(df._uniforms(123, ids, 4), a)
    assert ((0.0 <= a) & (a < 1.0)).all()
    assert not np.array_equal(df._uniforms(123, ids, 5), a)
    # block draws must agree column-wise with single-step draws
    blk = df._uniform_block(123, ids.astype(np.uint64) * df._C1, 3, 4)
    for b in range(4):
        assert np.array_equal(blk[:, b], df._uniforms(123, ids, 4 + b))


def test_worker_count_invariance():
    sc = standard_carpet()
    one = df.simulate_crossings(sc, [1, 2], walks=600, seed=5, workers=1)
    four = df.simulate_crossings(sc, [1, 2], walks=600, seed=5, workers=4)
    assert one["mean_steps"] == four["mean_steps"]
    assert [r["stderr"] for r in one["rows"]] == [
        r["stderr"] for r in four["rows"]
    ]


def test_step_cap_raises():
    sc = standard_carpet()
    with pytest.raises(RuntimeError, match="cap|running"):
        df.simulate_crossings(sc, [2], walks=50, seed=0, cap=1)


def test_crossing_report_shape():
    sc = standard_carpet()
    rep = df.simulate_crossings(sc, [1, 2], walks=500, seed=5)
    m1, m2 = rep["mean_steps"]
    assert m2 > m1  # more cells to traverse
    pair = rep["d_w_pairs"][0]
    assert pair["d_w"] == pytest.approx(math.log(m2 / m1) / math.log(3))
    assert rep["d_w_hat"] == pair["d_w"]
    for row, n in zip(rep["rows"], rep["levels"]):
        assert row["time_unit"] == pytest.approx(rep["r_hat"] ** n * 8.0**-n)
        assert row["scaled_time"] == pytest.approx(
            row["mean_steps"] * row["time_unit"]
        )
        assert row["stderr"] > 0


def test_empty_levels_rejected():
    sc = standard_carpet()
    with pytest.raises(SpecError):
        df.simulate_crossings(sc, [])
    with pytest.raises(SpecError):
        df.simulate_crossings(sc, [1], walks=0)


# ---------------------------------------------------------------------------
# resolvents

def test_single_vertex_resolvent():
    sc = standard_carpet()
    net = tiny_net(sc, 1, [])
    for alpha in (1.0, 2.5):
        sol = df.resolvent_kernel(net, "uniform", alpha, 0)
        assert sol.u[0] == pytest.approx(1.0 / alpha, abs=1e-12)


def test_resolvent_symmetry_ten_pairs():
    sc = standard_carpet()
    net = nw.build_cell_network(sc, 2)
    rng = np.random.default_rng(1)
    pairs = rng.choice(net.n_vertices, size=(10, 2), replace=False)
    for x, y in pairs:
        ux = df.resolvent_kernel(net, "uniform", 1.0, int(x)).u
        uy = df.resolvent_kernel(net, "uniform", 1.0, int(y)).u
        assert abs(ux[y] - uy[x]) <= 1e-9


def test_resolvent_identity():
    sc = standard_carpet()
    net = nw.build_cell_network(sc, 2)
    for kind in ("uniform", "weighted"):
        for alpha in (1.0, 2.5):
            sol = df.resolvent_kernel(net, kind, alpha, 17)
            assert abs(alpha * float(sol.u @ sol.measure) - 1.0) <= 1e-9


def test_resolvent_bad_alpha():
    sc = standard_carpet()
    net = nw.build_cell_network(sc, 1)
    with pytest.raises(SpecError, match="alpha"):
        df.resolvent_kernel(net, "uniform", 0.0, 0)


def test_resolvent_convergence_frozen():
    fam = kz_family([LIM + Fraction(1, 100 * n) for n in range(1, 5)], LIM)
    rep = df.resolvent_convergence(fam, n=2, alpha=1.0)
    want = [
        1.4066651146e-01,
        6.3403968213e-02,
        3.9398077415e-02,
        2.8652869164e-02,
    ]
    assert rep["deviations"] == pytest.approx(want, abs=1e-8)
    devs = rep["deviations"]
    assert all(b < a for a, b in zip(devs, devs[1:]))


def test_resolvent_convergence_constant_family_zero():
    fam = kz_family([LIM, LIM, LIM], LIM)
    rep = df.resolvent_convergence(fam, n=2)
    assert rep["deviations"] == [0.0, 0.0, 0.0]
    assert rep["trend"]["classification"] == "zero"


def test_resolvent_convergence_alpha_continuity():
    fam = kz_family([LIM + Fraction(1, 100 * n) for n in range(1, 4)], LIM)
    base = df.resolvent_convergence(fam, n=2, alpha=1.0)["deviations"]
    bump = df.resolvent_convergence(fam, n=2, alpha=1.01)["deviations"]
    for a, b in zip(base, bump):
        assert abs(a - b) / a < 0.05


def test_resolvent_convergence_receding_family_rejected():
    fam = kz_family([LIM + Fraction(1, 400), LIM + Fraction(1, 100)], LIM)
    with pytest.raises(SpecError, match="approach"):
        df.resolvent_convergence(fam, n=2)


# ---------------------------------------------------------------------------
# heat kernel diagonal

def test_heat_kernel_t0_and_monotone():
    sc = standard_carpet()
    net = nw.build_cell_network(sc, 2)
    rep = df.heat_kernel_diag(net)
    assert rep["method"] == "spectral"
    assert rep["p_diag"][0] == 1.0
    mx = rep["p_diag"][0] / rep["density"][0]
    assert rep["density"][0] == pytest.approx(1.0 / mx)
    p = rep["p_diag"]
    assert all(b <= a + 1e-15 for a, b in zip(p, p[1:]))
    assert rep["slope"] < 0


def test_heat_kernel_power_matches_spectral(monkeypatch):
    sc = standard_carpet()
    net = nw.build_cell_network(sc, 2)
    spect = df.heat_kernel_diag(net, times=[0, 1, 2, 8, 32])
    monkeypatch.setattr(nw, "DIRECT_SOLVE_LIMIT", 1)
    power = df.heat_kernel_diag(net, times=[0, 1, 2, 8, 32])
    assert power["method"] == "power"
    assert power["p_diag"] == pytest.approx(spect["p_diag"], abs=1e-12)


def test_heat_kernel_narrow_window_reported():
    sc = standard_carpet()
    net = nw.build_cell_network(sc, 1)
    rep = df.heat_kernel_diag(net, times=[0, 1, 2], window=(10, 1000))
    assert rep["window_ok"] is False
    assert rep["slope"] is None
    assert rep["slope_gap"] is None


def test_heat_kernel_bad_times():
    sc = standard_carpet()
    net = nw.build_cell_network(sc, 1)
    with pytest.raises(SpecError, match="nonnegative"):
        df.heat_kernel_diag(net, times=[-1, 2])


def test_heat_kernel_reference_exponent():
    sc = standard_carpet()
    net = nw.build_cell_network(sc, 2)
    rep = df.heat_kernel_diag(net, d_w_ref=2.0)
    d_h = math.log(8) / math.log(3)
    assert rep["slope_target"] == pytest.approx(-d_h / 2.0)
    # default basepoint is the near-centre probe cell
    want = nw.resolve_vertex(net, default_grid_words(sc, 2)[-1])
    assert rep["x"] == want
