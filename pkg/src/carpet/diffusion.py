"""Random walks and spectral diagnostics on cell networks.

The conductance walk steps from a cell to a contacting cell with
probability proportional to the contact conductance.  On top of it sit
crossing-time statistics with a walk-dimension estimate, resolvent
kernels of ``L + alpha*diag(m)``, a family diagnostic comparing
transported resolvent kernels against the limit design, and on-diagonal
heat-kernel decay for the lazy walk.

Randomness is counter-based: each uniform draw is a hash of
``(seed, level, walk index, step index)``, so results are independent of
execution order, batching, and worker count.  Aggregation uses numpy's
pairwise summation over fixed walk order.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .geometry import SpecError, USCSpec
from . import network as nw
from .convergence import (
    DIAGNOSTIC_SCHEME,
    FamilySpec,
    classify_trend,
    default_grid_words,
    transport_permutation,
    transport_word,
)
from .geometry import hausdorff_distance, match_ifs

STEP_CAP = 10**9  # per-walk step budget; exceeding it signals a bug
MEASURES = ("uniform", "weighted")


def _measure_vector(net: nw.CellNetwork, measure: str) -> np.ndarray:
    """Probability measure on cells: equal weights or conductance-weighted."""
    if measure == "uniform":
        return np.full(net.n_vertices, 1.0 / net.n_vertices)
    if measure == "weighted":
        c = net.strengths()
        return c / c.sum()
    raise SpecError(f"unknown measure {measure!r}; want one of {MEASURES}")


# ---------------------------------------------------------------------------
# transition operator

@dataclass(frozen=True)
class TransitionOperator:
    """Row-stochastic conductance walk with its reporting measure."""

    P: sp.csr_matrix
    level: int
    measure: np.ndarray
    kind: str

    @property
    def n_vertices(self) -> int:
        return self.P.shape[0]


def transition_operator(
    net: nw.CellNetwork, measure: str = "uniform"
) -> TransitionOperator:
    """P(x,y) = c_xy / c_x on the cells of a network.

    Rows sum to 1; with the conductance-weighted measure the chain is
    reversible (m_x P(x,y) = m_y P(y,x)).  With the uniform measure the
    walk is unchanged and the measure is only used for densities.
    """
    c = net.strengths()
    if (c <= 0).any():
        raise RuntimeError(
            "isolated vertex in a built network; this cannot happen after "
            "validation and signals a bug"
        )
    n = net.n_vertices
    adj = sp.csr_matrix(
        (
            np.concatenate([net.cond, net.cond]),
            (
                np.concatenate([net.ei, net.ej]),
                np.concatenate([net.ej, net.ei]),
            ),
        ),
        shape=(n, n),
    )
    p = sp.diags(1.0 / c) @ adj
    rows = np.asarray(p.sum(axis=1)).ravel()
    if float(np.abs(rows - 1.0).max()) > 1e-9:
        raise RuntimeError("transition rows do not sum to 1; conductance bug")
    return TransitionOperator(p.tocsr(), net.n, _measure_vector(net, measure), measure)


def reversibility_defect(op: TransitionOperator) -> float:
    """max |m_x P(x,y) - m_y P(y,x)|; ~0 only for the weighted measure."""
    flow = sp.diags(op.measure) @ op.P
    gap = (flow - flow.T).tocoo().data
    return float(np.abs(gap).max()) if gap.size else 0.0


# ---------------------------------------------------------------------------
# counter-based uniforms (splitmix64 finalizer)

_M64 = (1 << 64) - 1
_I0 = 0x9E3779B97F4A7C15
_I1 = 0xBF58476D1CE4E5B9
_I2 = 0x94D049BB133111EB
_I3 = 0xD6E8FEB86659FD93
_C0 = np.uint64(_I0)
_C1 = np.uint64(_I1)
_C2 = np.uint64(_I2)


def _mix64(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> np.uint64(30))) * _C1
    z = (z ^ (z >> np.uint64(27))) * _C2
    return z ^ (z >> np.uint64(31))


def _uniform_block(key: int, idmix: np.ndarray, t0: int, blk: int) -> np.ndarray:
    """Uniforms for steps t0+1 .. t0+blk, one row per walk.

    Entry [i, b] depends only on (key, walk id i, step t0+1+b), so any
    batching or compaction schedule yields the same draws.
    """
    srow = (
        np.arange(t0 + 1, t0 + blk + 1, dtype=np.uint64) * _C2
    ) ^ np.uint64(key)
    z = _mix64((idmix[:, None] ^ srow[None, :]) + _C0)
    return (z >> np.uint64(11)).astype(np.float64) * (2.0**-53)


def _uniforms(key: int, walk_ids: np.ndarray, step: int) -> np.ndarray:
    """One uniform in [0, 1) per walk, a pure function of (key, walk, step)."""
    return _uniform_block(
        key, walk_ids.astype(np.uint64) * _C1, step - 1, 1
    )[:, 0]


def _stream_key(seed: int, level: int) -> int:
    """64-bit stream key; scalar mixing stays in Python integers."""
    z = (((seed % (1 << 64)) * _I0) ^ ((level * _I3) & _M64)) & _M64
    z = (z + _I0) & _M64
    z = ((z ^ (z >> 30)) * _I1) & _M64
    z = ((z ^ (z >> 27)) * _I2) & _M64
    return z ^ (z >> 31)


# ---------------------------------------------------------------------------
# crossing walks

@dataclass(frozen=True)
class _MergedChain:
    """Left side shorted to vertex 0; right-side cells absorb.

    Transition rows are stored twice: as cumulative probabilities (used
    by the exact first-step oracle) and as alias tables (used by the
    sampler — constant work per draw instead of a binary search).
    """

    n_states: int
    indptr: np.ndarray     # csr row pointers
    cols: np.ndarray       # csr column indices
    cdf: np.ndarray        # state + cumulative row probability, per entry
    absorbing: np.ndarray  # bool per state
    deg: np.ndarray        # row lengths
    acc: np.ndarray        # alias acceptance threshold per slot
    alt: np.ndarray        # alias alternative state per slot


def merged_crossing_chain(
    spec: USCSpec, n: int, scheme: nw.ConductanceScheme = nw.ConductanceScheme()
) -> _MergedChain:
    """The level-n chain for left-to-right crossings.

    Shorting the left-side cells into the single start state follows the
    usual network reduction: contacts inside the left set join a vertex
    to itself, carry no current, and are dropped.  Every right-side cell
    absorbs the walk.
    """
    net = nw.build_cell_network(spec, n, scheme)
    left = set(int(v) for v in nw.side_cells(spec, n, 4))
    right = nw.side_cells(spec, n, 2)
    relabel = np.zeros(net.n_vertices, dtype=np.int64)
    others = [v for v in range(net.n_vertices) if v not in left]
    for new, old in enumerate(others, start=1):
        relabel[old] = new
    nm = len(others) + 1
    ei = relabel[net.ei]
    ej = relabel[net.ej]
    keep = ~((ei == 0) & (ej == 0))
    adj = sp.csr_matrix(
        (
            np.concatenate([net.cond[keep], net.cond[keep]]),
            (
                np.concatenate([ei[keep], ej[keep]]),
                np.concatenate([ej[keep], ei[keep]]),
            ),
        ),
        shape=(nm, nm),
    )
    adj.sum_duplicates()
    strength = np.asarray(adj.sum(axis=1)).ravel()
    if (strength <= 0).any():
        raise RuntimeError("merged chain has an isolated state; network bug")
    cdf = np.empty(adj.nnz)
    acc = np.ones(adj.nnz)
    alt = np.empty(adj.nnz, dtype=np.int64)
    cols = adj.indices.astype(np.int64)
    for v in range(nm):
        lo, hi = adj.indptr[v], adj.indptr[v + 1]
        p = adj.data[lo:hi] / strength[v]
        row = np.cumsum(p)
        row[-1] = 1.0
        cdf[lo:hi] = v + row
        # Vose alias construction for the same row
        d = hi - lo
        q = list(p * d)
        alt_local = list(range(d))
        small = [j for j in range(d) if q[j] < 1.0]
        large = [j for j in range(d) if q[j] >= 1.0]
        while small and large:
            s = small.pop()
            g = large.pop()
            acc[lo + s] = q[s]
            alt_local[s] = g
            q[g] -= 1.0 - q[s]
            (small if q[g] < 1.0 else large).append(g)
        alt[lo:hi] = cols[lo + np.array(alt_local)]
    absorbing = np.zeros(nm, dtype=bool)
    absorbing[relabel[right]] = True
    if absorbing[0]:
        raise SpecError("left and right sides share a cell; no crossing chain")
    return _MergedChain(
        nm,
        adj.indptr.astype(np.int64),
        cols,
        cdf,
        absorbing,
        (adj.indptr[1:] - adj.indptr[:-1]).astype(np.int64),
        acc,
        alt,
    )


def _run_walks(
    chain: _MergedChain, walks: int, key: int, cap: int, first_id: int = 0
) -> np.ndarray:
    """Steps until absorption for each walk, started at the merged state.

    Walks advance in lockstep over compacted arrays.  Each draw depends
    only on (key, walk, step), so the returned array is identical
    however the walks are batched or compacted, and walk ranges can be
    split across workers without changing any draw.  Once few walks
    remain, uniforms are drawn in blocks to amortize per-step overhead;
    lanes absorbed mid-block keep walking harmlessly, their first hit
    already recorded.
    """
    steps_out = np.zeros(walks, dtype=np.int64)
    idmix = np.arange(first_id, first_id + walks, dtype=np.uint64) * _C1
    loc = np.arange(walks, dtype=np.int64)
    cur = np.zeros(walks, dtype=np.int64)
    t = 0
    while loc.size:
        blk = 1 if loc.size >= 2048 else min(512, 4096 // loc.size)
        blk = min(blk, cap - t)
        if blk <= 0:
            raise RuntimeError(
                f"{loc.size} walks still running after {cap} steps; "
                "runaway walk signals a disconnection bug"
            )
        u = _uniform_block(key, idmix, t, blk)
        dead = None
        for b in range(blk):
            d = chain.deg[cur]
            x = u[:, b] * d
            i = x.astype(np.int64)
            np.minimum(i, d - 1, out=i)
            slot = chain.indptr[cur] + i
            take = (x - i) < chain.acc[slot]
            cur = np.where(take, chain.cols[slot], chain.alt[slot])
            hit = chain.absorbing[cur]
            fresh = hit if dead is None else hit & ~dead
            if fresh.any():
                steps_out[loc[fresh]] = t + b + 1
                dead = fresh if dead is None else dead | fresh
        t += blk
        if dead is not None:
            keep = ~dead
            loc = loc[keep]
            idmix = idmix[keep]
            cur = cur[keep]
    return steps_out


def simulate_crossings(
    spec: USCSpec,
    levels,
    walks: int = 1000,
    seed: int = 0,
    scheme: nw.ConductanceScheme = nw.ConductanceScheme(),
    cap: int = STEP_CAP,
    batches: int = 20,
    workers: int = 1,
) -> dict:
    """Mean crossing steps per level and the walk-dimension estimate.

    T_n is the mean number of steps from the shorted left side to the
    right side at level n; consecutive levels give the exponent estimate
    log(T_{n+1}/T_n)/log k, with the last pair reported as ``d_w_hat``.
    Standard errors come from batch means over the fixed walk order.
    One step at level n spans time ``r_hat**n * N**-n`` (resistance
    scale times mass scale), reported as ``time_unit`` so that
    ``scaled_times`` are comparable across levels.

    ``workers`` splits the walk range into contiguous chunks; since each
    draw is keyed by the global walk index, results are identical for
    every worker count.
    """
    levels = sorted(int(n) for n in levels)
    if not levels:
        raise SpecError("need at least one level")
    if walks < 1:
        raise SpecError("need at least one walk")
    if workers < 1:
        raise SpecError("need at least one worker")
    est = nw.estimate_renorm(spec, max(2, min(max(levels), 3)), scheme)
    k = spec.k
    big_n = spec.n_maps
    rows = []
    means = []
    for n in levels:
        chain = merged_crossing_chain(spec, n, scheme)
        key = _stream_key(seed, n)
        if workers == 1 or walks < 2 * workers:
            steps = _run_walks(chain, walks, key, cap)
        else:
            bounds = [walks * i // workers for i in range(workers + 1)]
            from concurrent.futures import ThreadPoolExecutor

            with ThreadPoolExecutor(max_workers=workers) as ex:
                futs = [
                    ex.submit(_run_walks, chain, b1 - b0, key, cap, b0)
                    for b0, b1 in zip(bounds, bounds[1:])
                ]
                steps = np.concatenate([f.result() for f in futs])
        mean = float(steps.mean())
        b = max(1, min(batches, walks))
        parts = np.array_split(steps, b)
        bm = np.array([float(p.mean()) for p in parts])
        stderr = float(bm.std(ddof=1) / math.sqrt(b)) if b > 1 else float("nan")
        unit = est.r_hat**n * float(big_n) ** -n
        means.append(mean)
        rows.append(
            {
                "level": n,
                "mean_steps": mean,
                "stderr": stderr,
                "batches": b,
                "time_unit": unit,
                "scaled_time": mean * unit,
                "max_steps": int(steps.max()),
            }
        )
    pairs = []
    for (n1, m1), (n2, m2) in zip(
        zip(levels, means), zip(levels[1:], means[1:])
    ):
        pairs.append(
            {
                "levels": [n1, n2],
                "d_w": math.log(m2 / m1) / ((n2 - n1) * math.log(k)),
            }
        )
    return {
        "spec": spec.name,
        "levels": levels,
        "walks": walks,
        "seed": seed,
        "rows": rows,
        "mean_steps": means,
        "d_w_pairs": pairs,
        "d_w_hat": pairs[-1]["d_w"] if pairs else None,
        "d_h": est.d_h,
        "theta_hat": est.theta,
        "d_w_theory": est.d_w,
        "r_hat": est.r_hat,
        "r_hat_level": est.levels[-1],
    }


def expected_crossing_steps(
    spec: USCSpec, n: int, scheme: nw.ConductanceScheme = nw.ConductanceScheme()
) -> float:
    """Exact mean crossing steps by first-step analysis on the merged chain.

    Solves (I - Q) E = 1 on the transient states, Q the walk restricted
    to them; the Monte Carlo estimate must sit within a few standard
    errors of this number.
    """
    chain = merged_crossing_chain(spec, n, scheme)
    trans = np.flatnonzero(~chain.absorbing)
    pos = -np.ones(chain.n_states, dtype=np.int64)
    pos[trans] = np.arange(len(trans))
    rows, cols, vals = [], [], []
    for v in trans:
        lo, hi = chain.indptr[v], chain.indptr[v + 1]
        prev = 0.0
        for j in range(lo, hi):
            prob = chain.cdf[j] - v - prev
            prev = chain.cdf[j] - v
            w = chain.cols[j]
            if pos[w] >= 0:
                rows.append(pos[v])
                cols.append(pos[w])
                vals.append(prob)
    q = sp.csr_matrix((vals, (rows, cols)), shape=(len(trans), len(trans)))
    e = np.linalg.solve(
        np.eye(len(trans)) - q.toarray(), np.ones(len(trans))
    )
    return float(e[pos[0]])


# ---------------------------------------------------------------------------
# resolvent kernels

@dataclass(frozen=True)
class ResolventSolution:
    """u with (L + alpha*diag(m)) u = e_x; symmetric in (x, y)."""

    alpha: float
    x: int
    u: np.ndarray
    measure: np.ndarray
    kind: str


def resolvent_kernel(
    net: nw.CellNetwork,
    measure: str = "uniform",
    alpha: float = 1.0,
    x=0,
    tol: float = 1e-10,
) -> ResolventSolution:
    """Solve (L + alpha*diag(m)) u = e_x.

    The solution is the discrete resolvent kernel u_alpha(x, .): it is
    symmetric under swapping base and evaluation vertex, and testing the
    defining equation against the constant function gives
    alpha * sum_y u(y) m_y = 1 exactly.
    """
    if alpha <= 0:
        raise SpecError("alpha must be positive")
    xi = nw.resolve_vertex(net, x)
    m = _measure_vector(net, measure)
    a = (net.laplacian() + sp.diags(alpha * m)).tocsr()
    rhs = np.zeros(net.n_vertices)
    rhs[xi] = 1.0
    u = nw._solve_spd(a, rhs, tol, "resolvent")
    return ResolventSolution(float(alpha), xi, u, m, measure)


def _resolvent_table(
    net: nw.CellNetwork, words, measure: str, alpha: float, tol: float
) -> np.ndarray:
    """Kernel vectors for several base cells, one column per base."""
    m = _measure_vector(net, measure)
    a = (net.laplacian() + sp.diags(alpha * m)).tocsr()
    rhs = np.zeros((net.n_vertices, len(words)))
    for j, w in enumerate(words):
        rhs[nw.resolve_vertex(net, w), j] = 1.0
    return nw._solve_spd(a, rhs, tol, "resolvent")


def resolvent_convergence(
    family: FamilySpec,
    params=None,
    n: int = 3,
    alpha: float = 1.0,
    basepoints=None,
    measure: str = "uniform",
    scheme: nw.ConductanceScheme = DIAGNOSTIC_SCHEME,
    tol: float = 1e-10,
    hausdorff_level: int | None = None,
) -> dict:
    """Sup deviation of transported resolvent kernels from the limit's.

    Basepoints live on the limit carpet and are carried to each member by
    the minimum-cost map matching, which also permutes the member's cells
    back onto the limit's cell order for the comparison.  As in the
    resistance diagnostic, the family must actually approach its limit
    (shrinking Hausdorff upper bounds) and corner contacts stay
    conductive under the default scheme.
    """
    if alpha <= 0:
        raise SpecError("alpha must be positive")
    limit = family.limit_spec()
    words = basepoints or default_grid_words(limit, n)
    hm = hausdorff_level or min(n, 3)
    limit_net = nw.build_cell_network(limit, n, scheme)
    limit_table = _resolvent_table(limit_net, words, measure, alpha, tol)
    rows = []
    deviations = []
    haus_his = []
    for p, spec, skip in family.members(params):
        if spec is None:
            rows.append({"param": str(p), "skipped": skip})
            continue
        perm, cost = match_ifs(limit, spec)
        moved = [transport_word(perm, w) for w in words]
        move = transport_permutation(perm, limit.n_maps, n)
        net = nw.build_cell_network(spec, n, scheme)
        table = _resolvent_table(net, moved, measure, alpha, tol)
        dev = float(np.max(np.abs(table[move, :] - limit_table)))
        lo, hi = hausdorff_distance(spec, limit, hm)
        deviations.append(dev)
        haus_his.append(hi)
        rows.append(
            {
                "param": str(p),
                "deviation": dev,
                "match_cost": cost,
                "hausdorff": [lo, hi],
            }
        )
    if len(haus_his) >= 2 and not haus_his[-1] < haus_his[0] + 1e-12:
        raise SpecError(
            "family does not approach the limit: Hausdorff upper bounds "
            f"{haus_his[0]:.3g} -> {haus_his[-1]:.3g}"
        )
    return {
        "family": family.kind,
        "limit": str(family.limit),
        "level": n,
        "alpha": alpha,
        "measure": measure,
        "basepoints": [list(w) for w in words],
        "rows": rows,
        "deviations": deviations,
        "trend": classify_trend(deviations),
    }


# ---------------------------------------------------------------------------
# heat kernel diagonal

def _default_times(hi: int = 1024) -> list[int]:
    ts = [0]
    t = 1
    while t <= hi:
        ts.append(t)
        t *= 2
    return ts


def heat_kernel_diag(
    net: nw.CellNetwork,
    measure: str = "weighted",
    times=None,
    x=None,
    window: tuple[float, float] = (10.0, 1000.0),
    d_w_ref: float | None = None,
    tol: float = 1e-10,
) -> dict:
    """On-diagonal decay of the lazy walk (P + I)/2 at one cell.

    Laziness kills parity oscillation and makes p_t(x,x) nonincreasing
    (all eigenvalues of the lazy operator are nonnegative).  Below 2000
    vertices a dense spectral expansion gives all times at once;
    otherwise the diagonal is read off iterated sparse products.  The
    slope of log p vs log t over the window approximates -d_H/d_W; the
    window is an artifact choice and is always reported with the fit,
    flagged (not failed) when it holds fewer than three points.
    """
    op = transition_operator(net, measure)
    if x is None:
        x = default_grid_words(net.spec, net.n)[-1]
    xi = nw.resolve_vertex(net, x)
    ts = sorted(set(int(t) for t in (times or _default_times(int(window[1])))))
    if ts[0] < 0:
        raise SpecError("times must be nonnegative")
    q = (op.P + sp.identity(net.n_vertices, format="csr")) * 0.5
    if net.n_vertices <= nw.DIRECT_SOLVE_LIMIT:
        method = "spectral"
        c = net.strengths()
        root = np.sqrt(c)
        sym = sp.diags(root) @ q @ sp.diags(1.0 / root)
        lam, vec = np.linalg.eigh(sym.toarray())
        lam = np.clip(lam, 0.0, 1.0)  # roundoff only; spectrum is in [0,1]
        wx = vec[xi, :] ** 2
        # Q^0 = I: report the t = 0 diagonal exactly, not the eigensum
        p_diag = [1.0 if t == 0 else float(np.sum(wx * lam**t)) for t in ts]
    else:
        method = "power"
        v = np.zeros(net.n_vertices)
        v[xi] = 1.0
        wanted = set(ts)
        got = {}
        if 0 in wanted:
            got[0] = 1.0
        for t in range(1, max(ts) + 1):
            v = q @ v
            if t in wanted:
                got[t] = float(v[xi])
        p_diag = [got[t] for t in ts]
    mx = float(op.measure[xi])
    density = [p / mx for p in p_diag]
    fit_ts = [
        (t, p)
        for t, p in zip(ts, p_diag)
        if window[0] <= t <= window[1] and t > 0 and p > 0
    ]
    window_ok = len(fit_ts) >= 3
    slope = None
    if window_ok:
        lt = np.log([t for t, _ in fit_ts])
        lp = np.log([p for _, p in fit_ts])
        slope = float(np.polyfit(lt, lp, 1)[0])
    d_h = math.log(net.spec.n_maps) / math.log(net.spec.k)
    if d_w_ref is None:
        d_w_ref = nw.estimate_renorm(
            net.spec, max(2, min(net.n, 3)), net.scheme
        ).d_w
    target = -d_h / d_w_ref
    return {
        "spec": net.spec.name,
        "level": net.n,
        "x": xi,
        "measure": measure,
        "method": method,
        "times": ts,
        "p_diag": p_diag,
        "density": density,
        "window": [float(window[0]), float(window[1])],
        "window_ok": window_ok,
        "fit_points": len(fit_ts),
        "slope": slope,
        "d_h": d_h,
        "d_w_ref": float(d_w_ref),
        "slope_target": target,
        "slope_gap": None if slope is None else abs(slope - target),
    }
