"""Heat flow on a compact metric graph with weighted Kirchhoff vertices.

``w_tau = w_tt`` on every edge, ``w`` continuous at interior vertices and
``sum_j rho_j w_j'(0) = 0`` there; degree-one vertices carry Dirichlet or
Neumann conditions.  Space is discretized by lumped linear finite elements
(equivalently finite volumes with half cells at vertices) weighted by
``rho``, time by Crank-Nicolson.  This form conserves the discrete weighted
mass exactly when no Dirichlet ends are present.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Mapping, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .errors import ValidationError
from .graph_core import MetricGraph
from . import vertex_conditions as vc


@dataclass(frozen=True)
class HeatState:
    tau: float
    values: dict  # edge id -> nodal values including both endpoints
    grids: dict  # edge id -> node positions


@dataclass
class HeatTrajectory:
    graph: MetricGraph
    weights: dict  # edge id -> rho
    states: list
    lumped_mass: np.ndarray
    node_values: np.ndarray  # (n_samples, n_unknowns)
    has_dirichlet: bool

    @property
    def times(self) -> np.ndarray:
        return np.array([s.tau for s in self.states])

    def rows(self):
        """``(tau, edge_id, t, w)`` tuples in a deterministic order."""
        for st in self.states:
            for e in self.graph.edges:
                for t, w in zip(st.grids[e.id], st.values[e.id]):
                    yield st.tau, e.id, float(t), float(w)


def edge_weights(graph: MetricGraph, rho: Mapping[str, Sequence[float]] | None = None) -> dict:
    """Per-edge weights from explicit vertex weights or the vertex conditions.

    ``rho[v]`` lists one weight per edge end at ``v`` (adjacency order).  An
    edge joining two weighted vertices must receive the same weight from both.
    """
    rho = dict(rho or {})
    out: dict = {}
    for v in graph.vertices:
        if v.kind == "V1":
            if str(v.id) in rho:
                raise ValidationError(f"weights given for degree-one vertex {v.id!r}")
            continue
        if v.id in rho:
            ws = tuple(float(x) for x in rho[v.id])
        elif isinstance(v.condition, vc.GeneralizedKirchhoff):
            ws = v.condition.rho
        elif v.condition is None or isinstance(v.condition, vc.Kirchhoff):
            ws = (1.0,) * v.degree
        else:
            raise ValidationError(
                f"vertex {v.id!r} carries a {v.condition.kind} condition; heat flow needs (weighted) Kirchhoff"
            )
        if len(ws) != v.degree:
            raise ValidationError(f"vertex {v.id!r} needs {v.degree} weights, got {len(ws)}")
        if not all(math.isfinite(w) and w > 0 for w in ws):
            raise ValidationError(f"weights at vertex {v.id!r} must be positive")
        for ee, w in zip(v.adjacency, ws):
            prev = out.get(ee.edge)
            if prev is not None and abs(prev - w) > 1e-14 * max(prev, w):
                raise ValidationError(f"edge {ee.edge!r} gets inconsistent weights {prev} and {w}")
            out[ee.edge] = w
    for e in graph.edges:
        out.setdefault(e.id, 1.0)
    return out


class _Discretization:
    def __init__(self, graph: MetricGraph, weights: dict, h_t: float):
        self.graph = graph
        self.vertex_node: dict = {}
        self.dirichlet: set = set()
        n = 0
        for v in graph.vertices:
            if v.kind == "V1":
                if isinstance(v.condition, vc.Dirichlet):
                    self.dirichlet.add(v.id)
                    continue
                if not isinstance(v.condition, vc.Neumann):
                    raise ValidationError(f"degree-one vertex {v.id!r} needs a Dirichlet or Neumann condition")
            self.vertex_node[v.id] = n
            n += 1
        self.edge_nodes: dict = {}
        self.grids: dict = {}
        mass, Ki, Kj, Kv = [], [], [], []
        mass = [0.0] * n
        for e in graph.edges:
            cells = max(2, int(round(e.length / h_t)))
            h = e.length / cells
            rho = weights[e.id]
            interior = list(range(n, n + cells - 1))
            n += cells - 1
            mass.extend([rho * h] * (cells - 1))
            ends = [self.vertex_node.get(e.a), self.vertex_node.get(e.b)]
            for node in ends:
                if node is not None:
                    mass[node] += rho * h / 2
            chain = [ends[0]] + interior + [ends[1]]
            for i, j in zip(chain[:-1], chain[1:]):
                c = rho / h
                for a, b in ((i, j), (j, i)):
                    if a is None:
                        continue
                    Ki.append(a); Kj.append(a); Kv.append(c)
                    if b is not None:
                        Ki.append(a); Kj.append(b); Kv.append(-c)
            self.edge_nodes[e.id] = chain
            self.grids[e.id] = np.linspace(0.0, e.length, cells + 1)
        self.n = n
        self.mass = np.array(mass)
        self.K = sp.csc_matrix((Kv, (Ki, Kj)), shape=(n, n))

    def scatter(self, w0: Callable[[str, np.ndarray], np.ndarray]) -> np.ndarray:
        x = np.zeros(self.n)
        seen = np.zeros(self.n, dtype=bool)
        for e in self.graph.edges:
            vals = np.asarray(w0(e.id, self.grids[e.id]), dtype=float)
            for node, val in zip(self.edge_nodes[e.id], vals):
                if node is None:
                    continue
                if not seen[node]:
                    x[node] = val
                    seen[node] = True
        return x

    def gather(self, x: np.ndarray) -> dict:
        out = {}
        for e in self.graph.edges:
            out[e.id] = np.array([0.0 if node is None else x[node] for node in self.edge_nodes[e.id]])
        return out


def heat_solve(
    graph: MetricGraph,
    w0: Callable[[str, np.ndarray], np.ndarray] | Mapping[str, Callable],
    tau_end: float,
    dtau: float,
    h_t: float,
    *,
    rho: Mapping[str, Sequence[float]] | None = None,
    sample_times: Sequence[float] | None = None,
) -> HeatTrajectory:
    """Crank-Nicolson heat flow; ``w0(edge_id, t)`` gives the initial data.

    At a vertex the first edge (in description order) supplies the initial
    value.  States are recorded at ``sample_times`` (default: start and end).
    """
    if not graph.is_compact:
        raise ValidationError("heat flow needs a compact graph (no infinite edges)")
    if not (dtau > 0 and h_t > 0 and tau_end >= 0):
        raise ValidationError("dtau and h_t must be positive and tau_end non-negative")
    if isinstance(w0, Mapping):
        table = dict(w0)
        w0 = lambda eid, t: table[eid](t) if eid in table else np.zeros_like(t)  # noqa: E731
    weights = edge_weights(graph, rho)
    disc = _Discretization(graph, weights, h_t)
    steps = int(round(tau_end / dtau))
    if abs(steps * dtau - tau_end) > 1e-9 * max(tau_end, dtau):
        raise ValidationError("tau_end must be a whole number of steps")
    if sample_times is None:
        sample_times = [0.0, tau_end]
    record = sorted({int(round(t / dtau)) for t in sample_times if 0 <= t <= tau_end + 1e-12})
    M = sp.diags(disc.mass)
    lhs = splu((M + 0.5 * dtau * disc.K).tocsc())
    rhs_op = (M - 0.5 * dtau * disc.K).tocsr()
    x = disc.scatter(w0)
    states, values = [], []
    rec = set(record)
    for step in range(steps + 1):
        if step in rec:
            states.append(HeatState(step * dtau, disc.gather(x), disc.grids))
            values.append(x.copy())
        if step == steps:
            break
        x = lhs.solve(rhs_op @ x)
    return HeatTrajectory(graph, weights, states, disc.mass, np.array(values), bool(disc.dirichlet))


def weighted_mass(state: HeatState, weights: Mapping[str, float]) -> float:
    """``sum_j rho_j int w dt`` by the trapezoid rule on the state grid."""
    total = 0.0
    for eid, w in state.values.items():
        t = state.grids[eid]
        total += weights[eid] * float(np.sum(0.5 * (w[1:] + w[:-1]) * np.diff(t)))
    return total


@dataclass(frozen=True)
class DecayFit:
    rate: float
    residual: float
    low_signal: bool


def decay_rate(traj: HeatTrajectory, residual_tol: float = 1e-2) -> DecayFit:
    """Slope of ``log ||w - w_inf||`` over the last third of the samples.

    ``w_inf`` is zero with Dirichlet ends, else the constant carrying the same
    weighted mass.  The norm is the weighted discrete L2 norm.
    """
    X = traj.node_values
    m = traj.lumped_mass
    if traj.has_dirichlet:
        winf = np.zeros(X.shape[1])
    else:
        winf = np.full(X.shape[1], 1.0) * (X[0] @ m) / m.sum()
    norms = np.sqrt(np.sum((X - winf) ** 2 * m, axis=1))
    taus = traj.times
    scale = max(float(np.sqrt(np.sum(X[0] ** 2 * m))), 1e-300)
    k = len(taus) - max(3, len(taus) // 3)
    sel = slice(max(k, 0), None)
    if len(taus) < 3 or np.max(norms[sel]) < 1e-12 * scale:
        return DecayFit(0.0, 0.0, True)
    y = np.log(np.maximum(norms[sel], 1e-300))
    A = np.vstack([taus[sel], np.ones_like(taus[sel])]).T
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = float(np.max(np.abs(A @ coef - y)))
    return DecayFit(float(-coef[0]), resid, resid > residual_tol)
