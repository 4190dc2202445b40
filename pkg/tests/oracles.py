"""Independent cross-checks used to freeze expected test values.

Every oracle here recomputes a quantity by a different route than the
library: brute-force Fraction arithmetic, exact star-mesh elimination,
networkx searches, or dense linear algebra.  Tests compare library output
against these, and frozen literals in the test files were produced by
running these functions.
"""
from __future__ import annotations

import itertools
from fractions import Fraction

import networkx as nx
import numpy as np


def naive_adjacency(spec, n):
    """All touching level-n cell pairs by all-pairs Fraction comparison.

    Returns {(word_a, word_b): (kind, shared_length)} with word_a < word_b.
    """
    words = list(itertools.product(range(1, spec.n_maps + 1), repeat=n))
    corners = [(w, spec.word_corner(w)) for w in words]
    s = Fraction(1, spec.k**n)
    out = {}
    for (wa, ca), (wb, cb) in itertools.combinations(corners, 2):
        wx = s - abs(ca[0] - cb[0])
        wy = s - abs(ca[1] - cb[1])
        if wx < 0 or wy < 0:
            continue
        if wx > 0 and wy > 0:
            out[(wa, wb)] = ("overlap", Fraction(0))
        elif wx == 0 and wy == 0:
            out[(wa, wb)] = ("point", Fraction(0))
        else:
            out[(wa, wb)] = ("segment", wy if wx == 0 else wx)
    return out


def eliminate_resistance(n_vertices, edges, a_set, b_set):
    """Exact effective resistance between merged vertex sets.

    edges: iterable of (i, j, conductance) with rational-friendly values.
    Merges a_set and b_set each into a terminal, then removes every other
    vertex by star-mesh (Schur) elimination in Fraction arithmetic.
    """
    a_set, b_set = set(a_set), set(b_set)
    A, B = n_vertices, n_vertices + 1  # terminal labels

    def relabel(v):
        if v in a_set:
            return A
        if v in b_set:
            return B
        return v

    cond: dict[tuple[int, int], Fraction] = {}
    for i, j, c in edges:
        u, v = relabel(i), relabel(j)
        if u == v:
            continue
        key = (min(u, v), max(u, v))
        cond[key] = cond.get(key, Fraction(0)) + Fraction(c)

    interior = sorted({v for e in cond for v in e} - {A, B})
    for v in interior:
        star = {(x, y): c for (x, y), c in cond.items() if v in (x, y)}
        total = sum(star.values())
        nbrs = [(x if y == v else y, c) for (x, y), c in star.items()]
        for key in star:
            del cond[key]
        for (x, cx), (y, cy) in itertools.combinations(nbrs, 2):
            key = (min(x, y), max(x, y))
            cond[key] = cond.get(key, Fraction(0)) + cx * cy / total
    c_ab = cond.get((A, B), Fraction(0))
    if c_ab == 0:
        raise ValueError("terminals not connected")
    return 1 / c_ab


def connected_labeled_graphs(n_vertices):
    """Every connected labeled graph on n_vertices (as edge tuples)."""
    all_edges = list(itertools.combinations(range(n_vertices), 2))
    out = []
    for bits in range(1 << len(all_edges)):
        edges = [e for i, e in enumerate(all_edges) if bits >> i & 1]
        g = nx.Graph(edges)
        g.add_nodes_from(range(n_vertices))
        if nx.is_connected(g):
            out.append(tuple(edges))
    return out


def shortest_path_length(edges, source, target):
    """networkx Dijkstra over weighted edges [(u, v, length), ...]."""
    g = nx.Graph()
    for u, v, w in edges:
        g.add_edge(u, v, weight=min(w, g[u][v]["weight"]) if g.has_edge(u, v) else w)
    return nx.dijkstra_path_length(g, source, target)


def expected_hitting_steps(n_states, edges, start, absorbing):
    """Exact expected steps to absorption for the conductance walk.

    edges: (i, j, conductance); start: state index; absorbing: state set.
    Solves (I - Q) t = 1 on transient states with numpy.
    """
    absorbing = set(absorbing)
    c = np.zeros((n_states, n_states))
    for i, j, w in edges:
        c[i, j] += w
        c[j, i] += w
    deg = c.sum(axis=1)
    p = c / deg[:, None]
    transient = [s for s in range(n_states) if s not in absorbing]
    q = p[np.ix_(transient, transient)]
    t = np.linalg.solve(np.eye(len(transient)) - q, np.ones(len(transient)))
    return float(t[transient.index(start)])


def sampled_hausdorff(squares_a, squares_b, pitch):
    """Bracket [lo, hi] for the Hausdorff distance of two square unions.

    squares_*: [(x, y, side), ...] with Fraction entries.  Samples each
    square on a grid of the given pitch (as floats); the sampled sup is a
    lower bound and the covering radius pitch*sqrt(2)/2 gives the upper.
    """

    def directed(src, dst):
        worst = 0.0
        dst_f = [(float(x), float(y), float(s)) for x, y, s in dst]
        for x, y, s in src:
            steps = max(1, int(np.ceil(float(s) / pitch)))
            for ui in range(steps + 1):
                for vi in range(steps + 1):
                    px = float(x) + float(s) * ui / steps
                    py = float(y) + float(s) * vi / steps
                    best = min(
                        max(0.0, max(qx - px, px - qx - qs)) ** 2
                        + max(0.0, max(qy - py, py - qy - qs)) ** 2
                        for qx, qy, qs in dst_f
                    )
                    worst = max(worst, best)
        return worst**0.5

    lo = max(directed(squares_a, squares_b), directed(squares_b, squares_a))
    return lo, lo + pitch * 2**0.5 / 2 * 1.000001
