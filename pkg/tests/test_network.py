import math
from fractions import Fraction

import numpy as np
import pytest

from carpet.geometry import (
    SpecError,
    USCSpec,
    boundary_cells,
    cell_contacts,
    level_geometry,
    make_spec,
    word_to_index,
)
from carpet import network as nw
from carpet.convergence import family_kz

from oracles import eliminate_resistance


def tiny_network(n_vertices, edges):
    """CellNetwork over explicit (i, j, conductance) edges, no carpet."""
    ei = np.array([e[0] for e in edges], dtype=np.int64)
    ej = np.array([e[1] for e in edges], dtype=np.int64)
    cond = np.array([float(e[2]) for e in edges])
    return nw.CellNetwork(None, 0, None, n_vertices, ei, ej, cond)


def exact_crossing(spec, n):
    """Fraction star-mesh oracle for the left-right resistance."""
    cs = cell_contacts(spec, n)
    geo = level_geometry(spec, n)
    edges = [
        (int(i), int(j), Fraction(int(su), int(geo.scale)) * spec.k**n)
        for i, j, kind, su in zip(cs.ii, cs.jj, cs.kind, cs.seg_units)
        if kind == 1
    ]
    bc = boundary_cells(spec, n)
    return eliminate_resistance(
        spec.n_maps**n,
        edges,
        [int(x) for x in bc["left"]],
        [int(x) for x in bc["right"]],
    )


# ---------------------------------------------------------------------------
# construction

def test_level1_ring_uniform_equals_overlap(sc3):
    for scheme in (nw.ConductanceScheme(), nw.ConductanceScheme(mode="uniform")):
        net = nw.build_cell_network(sc3, 1, scheme)
        assert net.n_vertices == 8
        assert net.n_edges == 8
        assert np.allclose(net.cond, 1.0)


def test_k28_level1_conductances():
    net = nw.build_cell_network(family_kz(Fraction(1, 28)), 1)
    vals = sorted(round(float(c), 12) for c in net.cond)
    assert vals.count(0.25) == 8
    assert vals.count(0.75) == 8
    assert vals.count(1.0) == 24
    assert net.n_edges == 40


def test_uniform_scheme_k28():
    net = nw.build_cell_network(
        family_kz(Fraction(1, 28)), 1, nw.ConductanceScheme(mode="uniform")
    )
    assert net.n_edges == 40
    assert np.allclose(net.cond, 1.0)


def test_point_contacts_off_then_on(sc3):
    base = nw.build_cell_network(sc3, 2)
    with_pts = nw.build_cell_network(
        sc3, 2, nw.ConductanceScheme(point_contact_conductance=0.5)
    )
    extra = with_pts.n_edges - base.n_edges
    assert extra > 0
    assert np.sum(with_pts.cond == 0.5) == extra


def test_scheme_validation():
    with pytest.raises(SpecError):
        nw.ConductanceScheme(mode="resistor")
    with pytest.raises(SpecError):
        nw.ConductanceScheme(point_contact_conductance=-1.0)


def test_disconnected_design_reported():
    # ring plus a floating 2x2 block: a valid dataclass but not a valid
    # design; the network builder must refuse rather than patch it
    ring = [(Fraction(i, 5), Fraction(0)) for i in range(5)]
    ring += [(Fraction(4, 5), Fraction(j, 5)) for j in range(1, 5)]
    ring += [(Fraction(i, 5), Fraction(4, 5)) for i in range(3, -1, -1)]
    ring += [(Fraction(0), Fraction(j, 5)) for j in range(3, 0, -1)]
    block = [
        (Fraction(3, 10), Fraction(3, 10)),
        (Fraction(1, 2), Fraction(3, 10)),
        (Fraction(3, 10), Fraction(1, 2)),
        (Fraction(1, 2), Fraction(1, 2)),
    ]
    spec = USCSpec(5, tuple(ring + block), "floating-block")
    with pytest.raises(nw.DisconnectedError):
        nw.build_cell_network(spec, 1)


# ---------------------------------------------------------------------------
# solves

def test_path_solve_linear():
    net = tiny_network(4, [(0, 1, 1), (1, 2, 1), (2, 3, 1)])
    u = nw.solve_dirichlet(net, [0], [3])
    assert np.allclose(u, [0, 1 / 3, 2 / 3, 1], atol=1e-12)
    assert abs(nw.effective_resistance(net, [0], [3]) - 3.0) < 1e-12


def test_single_edge_resistance():
    net = tiny_network(2, [(0, 1, 4.0)])
    assert abs(nw.effective_resistance(net, [0], [1]) - 0.25) < 1e-14


def test_max_principle(sc3):
    net = nw.build_cell_network(sc3, 2)
    rng = np.random.default_rng(7)
    verts = rng.permutation(64)
    u = nw.solve_dirichlet(net, verts[:3].tolist(), verts[3:6].tolist())
    assert u.min() >= -1e-12
    assert u.max() <= 1 + 1e-12


def test_boundary_set_validation(sc3):
    net = nw.build_cell_network(sc3, 1)
    with pytest.raises(SpecError):
        nw.solve_dirichlet(net, [], [1])
    with pytest.raises(SpecError):
        nw.solve_dirichlet(net, [0, 1], [1, 2])


def test_floating_free_component_warned():
    net = tiny_network(5, [(0, 1, 1), (1, 2, 1), (3, 4, 1)])
    with pytest.warns(UserWarning, match="no path"):
        u = nw.solve_dirichlet(net, [0], [2])
    assert np.allclose(u[:3], [0, 0.5, 1])
    assert u[3] == u[4] == 0.0


def test_solve_fixed_interpolates():
    net = tiny_network(4, [(0, 1, 1), (1, 2, 1), (2, 3, 1)])
    u = nw.solve_fixed(net, [0, 3], [2.0, 5.0])
    assert np.allclose(u, [2, 3, 4, 5], atol=1e-12)
    with pytest.raises(SpecError):
        nw.solve_fixed(net, [0, 0], [1.0, 2.0])


def test_energy_flow_duality(sc3):
    # current collected at the high side equals the total energy when the
    # potential drop is one
    net = nw.build_cell_network(sc3, 2)
    b = set(nw.side_cells(sc3, 2, 2).tolist())
    u = nw.solve_dirichlet(net, nw.side_cells(sc3, 2, 4).tolist(), sorted(b))
    energy = net.energy(u)
    flow = 0.0
    for i, j, c in zip(net.ei, net.ej, net.cond):
        if (int(i) in b) != (int(j) in b):
            hi, lo = (int(i), int(j)) if int(i) in b else (int(j), int(i))
            flow += c * (u[hi] - u[lo])
    assert abs(flow - energy) <= 1e-9 * energy


def test_resolve_vertex_forms(sc3):
    net = nw.build_cell_network(sc3, 2)
    w = (2, 5)
    idx = word_to_index(8, w)
    assert nw.resolve_vertex(net, idx) == idx
    assert nw.resolve_vertex(net, w) == idx
    with pytest.raises(SpecError):
        nw.resolve_vertex(net, (1,))
    with pytest.raises(SpecError):
        nw.resolve_vertex(net, 64)


# ---------------------------------------------------------------------------
# effective resistance against exact elimination

def test_level1_crossing_exact(sc3):
    assert exact_crossing(sc3, 1) == 1
    assert abs(nw.crossing_resistance(sc3, 1) - 1.0) < 1e-12


def test_level2_crossing_exact(sc3):
    exact = exact_crossing(sc3, 2)
    assert exact == Fraction(1997, 1205)
    got = nw.crossing_resistance(sc3, 2)
    assert abs(got - float(exact)) <= 1e-9 * float(exact)


def test_frozen_crossings(sc3):
    # elimination-oracle values computed once (the level-2 K run takes ~15 s
    # with exact arithmetic, too slow to repeat here)
    assert abs(nw.crossing_resistance(sc3, 3) - 2.206765432669) < 1e-9
    kz = family_kz(Fraction(1, 28))
    assert abs(nw.crossing_resistance(kz, 1) - 54 / 19) < 1e-12
    assert abs(nw.crossing_resistance(kz, 2) - 9.067706888263) < 1e-9


def test_rayleigh_monotonicity():
    rng = np.random.default_rng(11)
    for _ in range(20):
        nv = int(rng.integers(4, 12))
        edges = [(i, i + 1, float(rng.uniform(0.5, 2))) for i in range(nv - 1)]
        for _ in range(nv):
            i, j = rng.integers(0, nv, size=2)
            if i != j:
                edges.append((int(i), int(j), float(rng.uniform(0.5, 2))))
        a, b = int(rng.integers(0, nv)), int(rng.integers(0, nv))
        if a == b:
            b = (a + 1) % nv
        before = nw.effective_resistance(tiny_network(nv, edges), [a], [b])
        bump = int(rng.integers(0, len(edges)))
        edges[bump] = (edges[bump][0], edges[bump][1], edges[bump][2] * 2.0)
        after = nw.effective_resistance(tiny_network(nv, edges), [a], [b])
        assert after <= before + 1e-12


def test_resistance_table_matches_pairwise(sc3):
    net = nw.build_cell_network(sc3, 2)
    verts = [(1, 1), (3, 5), (5, 2), (8, 8), (6, 4)]
    table = nw.resistance_table(net, verts)
    for i in range(len(verts)):
        for j in range(i + 1, len(verts)):
            r = nw.effective_resistance(net, [verts[i]], [verts[j]])
            assert abs(table[i, j] - r) <= 1e-9 * r


# ---------------------------------------------------------------------------
# renormalization sequence

def test_renorm_direction_and_bounds(sc3):
    est = nw.estimate_renorm(sc3, 4)
    assert est.levels == [1, 2, 3, 4]
    assert all(b > a for a, b in zip(est.resistances, est.resistances[1:]))
    assert all(0 < r < 1 for r in est.ratios)
    # coarsest pair is degenerate; pairs from (2,3) on sit in the k=3 band
    for r in est.ratios[1:]:
        assert 2 / 3 <= r <= 8 / 9
    assert est.r_hat == est.ratios[-1]
    assert abs(est.d_h - math.log(8) / math.log(3)) < 1e-12
    assert abs(est.d_w - (est.theta + est.d_h)) < 1e-12
    d = est.as_dict()
    assert d["levels"][0]["ratio"] is None
    assert d["levels"][2]["ratio"] == est.ratios[1]


def test_renorm_needs_two_levels(sc3):
    with pytest.raises(SpecError):
        nw.estimate_renorm(sc3, 1)


def test_renorm_richardson(sc3):
    est = nw.estimate_renorm(sc3, 4, richardson=True)
    assert est.richardson is not None
    assert 0 < est.richardson < 1


def test_k28_renorm_band():
    est = nw.estimate_renorm(family_kz(Fraction(1, 28)), 3)
    for r in est.ratios:
        assert 2 / 7 <= r <= 32 / 49


# ---------------------------------------------------------------------------
# metric estimates

def test_metric_same_vertex_warns(sc3):
    with pytest.warns(UserWarning, match="same level-2 cell"):
        assert nw.resistance_metric_est(sc3, 2, (1, 1), (1, 1)) == 0.0


def test_metric_normalization(sc3):
    left = nw.side_cells(sc3, 2, 4)
    right = nw.side_cells(sc3, 2, 2)
    net = nw.build_cell_network(sc3, 2)
    r = nw.effective_resistance(net, left, right)
    assert abs(r / nw.crossing_resistance(sc3, 2) - 1.0) < 1e-12


def test_metric_axioms_level2(sc3):
    rng = np.random.default_rng(3)
    verts = sorted(rng.choice(64, size=8, replace=False).tolist())
    table = nw.metric_table(sc3, 2, verts)
    assert np.array_equal(table, table.T)
    assert table.min() >= 0
    m = len(verts)
    for i in range(m):
        for j in range(m):
            for l in range(m):
                assert table[i, j] <= table[i, l] + table[l, j] + 1e-8


def test_d4_invariance_level2(sc3):
    assert nw.symmetry_resistance_deviation(sc3, 2, pairs=30) <= 1e-9


def test_boundary_bound_level2(sc3):
    rep = nw.check_boundary_bound(sc3, 2, pairs=30)
    assert rep["passed"]
    assert rep["max_ratio"] <= 2 * 27
    assert rep["base_resistance"] > 0
