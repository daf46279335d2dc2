"""Secular systems on metric graphs.

On every edge the unknown function is a combination of exponentials in
``z = sqrt(mu)``.  A finite edge of length ``l`` uses the basis
``e^{izt}`` and ``e^{iz(l-t)}`` (coefficients ``a, b``; the second one is
``e^{-izt}`` rescaled by the nonvanishing factor ``e^{izl}``), an infinite edge
only the outgoing wave ``e^{izt}``.  Substituting into all vertex conditions
gives the square matrix ``M(z)``; its determinant vanishes exactly at the
eigenvalues.  The sign convention throughout is ``(d^2/dt^2 + mu) zeta = f``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy.integrate import cumulative_simpson, simpson
from scipy.optimize import minimize_scalar

from .errors import NumericalError, ResonanceError, ValidationError
from .graph_core import MetricGraph
from . import vertex_conditions as vc

MU_MIN_CUTOFF = 1e-6
RESONANCE_FLOOR = 1e-8


# --------------------------------------------------------------------- layout


@dataclass(frozen=True)
class UnknownLayout:
    """Column indices of ``(a, b)`` per finite edge and ``a`` per infinite edge, in edge order."""

    columns: dict
    size: int

    @classmethod
    def of(cls, graph: MetricGraph) -> "UnknownLayout":
        cols, n = {}, 0
        for e in graph.edges:
            if e.finite:
                cols[e.id] = (n, n + 1)
                n += 2
            else:
                cols[e.id] = (n, None)
                n += 1
        return cls(cols, n)


def _require_conditions(graph: MetricGraph) -> None:
    for v in graph.vertices:
        if v.condition is None:
            raise ValidationError(f"vertex {v.id!r} has no gluing condition")


def _z_of(mu) -> complex:
    mu = complex(mu)
    if abs(mu) < MU_MIN_CUTOFF:
        raise ValidationError(
            f"|mu| = {abs(mu):.2e} is inside the branch-point cutoff {MU_MIN_CUTOFF:g}"
        )
    return complex(vc.sqrt_branch(mu))


def _trace_blocks(graph: MetricGraph, layout: UnknownLayout, z: np.ndarray):
    """Per vertex: value and outward-derivative maps ``(nz, d, n)`` from unknowns to traces."""
    nz = z.shape[0]
    out = []
    for v in graph.vertices:
        d = v.degree
        Val = np.zeros((nz, d, layout.size), dtype=complex)
        Der = np.zeros_like(Val)
        for j, ee in enumerate(v.adjacency):
            e = graph.edge(ee.edge)
            ia, ib = layout.columns[e.id]
            if not e.finite:
                Val[:, j, ia] = 1.0
                Der[:, j, ia] = 1j * z
                continue
            E = np.exp(1j * z * e.length)
            if ee.end == 0:
                Val[:, j, ia], Val[:, j, ib] = 1.0, E
                Der[:, j, ia], Der[:, j, ib] = 1j * z, -1j * z * E
            else:
                Val[:, j, ia], Val[:, j, ib] = E, 1.0
                Der[:, j, ia], Der[:, j, ib] = -1j * z * E, 1j * z
        out.append((v, Val, Der))
    return out


def _matrix_batch(graph: MetricGraph, z: np.ndarray, eps: float) -> np.ndarray:
    """``M(z)`` for an array of ``z`` with the analytic (unnormalized) condition rows."""
    layout = UnknownLayout.of(graph)
    blocks = []
    for v, Val, Der in _trace_blocks(graph, layout, z):
        A = vc.analytic_rows(v.condition, z, eps, v.degree)
        d = v.degree
        blocks.append(A[..., :d] @ Val + A[..., d:] @ Der)
    return np.concatenate(blocks, axis=1)


# --------------------------------------------------------------- the system


@dataclass
class SecularSystem:
    graph: MetricGraph
    mu: complex
    z: complex
    eps: float
    layout: UnknownLayout
    matrix: np.ndarray
    rows: list = field(repr=False)  # (vertex, A, Val, Der) with Val/Der of shape (d, n)

    def _vertex_rhs(self, contributions) -> np.ndarray:
        """RHS from known traces: ``contributions[vertex_id] = (val, der)`` vectors of length d."""
        rhs = []
        for v, A, _, _ in self.rows:
            d = v.degree
            val, der = contributions.get(v.id, (np.zeros(d), np.zeros(d)))
            rhs.append(-(A[:, :d] @ val + A[:, d:] @ der))
        return np.concatenate(rhs)

    def conditioning(self) -> float:
        sv = np.linalg.svd(self.matrix, compute_uv=False)
        return float(sv[-1] / sv[0]) if sv[0] > 0 else 0.0

    def solve(self, rhs: np.ndarray, floor: float = RESONANCE_FLOOR) -> np.ndarray:
        rc = self.conditioning()
        if rc < floor:
            raise ResonanceError(
                f"mu={self.mu} is within the resonance floor (relative smallest singular value {rc:.2e})"
            )
        return np.linalg.solve(self.matrix, rhs)

    def point_source_traces(self, edge_id: str, t0: float) -> dict:
        """Vertex traces of the free term ``e^{iz|t-t0|}/(2iz)`` placed on ``edge_id``."""
        z = self.z
        e = self.graph.edge(edge_id)
        out = {}
        for v, *_ in self.rows:
            d = v.degree
            val, der = np.zeros(d, complex), np.zeros(d, complex)
            hit = False
            for j, ee in enumerate(v.adjacency):
                if ee.edge != edge_id:
                    continue
                hit = True
                dist = t0 if ee.end == 0 else e.length - t0
                ph = np.exp(1j * z * dist)
                val[j] = ph / (2j * z)
                der[j] = -ph / 2
            if hit:
                out[v.id] = (val, der)
        return out


def assemble_secular(graph: MetricGraph, mu: complex, eps: float = 0.0, *, normalized: bool = True) -> SecularSystem:
    """Build ``M(sqrt(mu))``.

    ``normalized`` uses the unit-norm rows of :func:`condition_rows` (best
    for solves); otherwise the analytic rows used by the determinant.
    """
    _require_conditions(graph)
    if eps < 0:
        raise ValidationError("eps must be non-negative")
    z = _z_of(mu)
    layout = UnknownLayout.of(graph)
    rows, blocks = [], []
    for v, Val, Der in _trace_blocks(graph, layout, np.array([z])):
        if normalized:
            A = vc.condition_rows(v.condition, complex(mu), eps, degree=v.degree)
        else:
            A = vc.analytic_rows(v.condition, np.asarray(z), eps, v.degree)
        d = v.degree
        rows.append((v, A, Val[0], Der[0]))
        blocks.append(A[:, :d] @ Val[0] + A[:, d:] @ Der[0])
    return SecularSystem(graph, complex(mu), z, float(eps), layout, np.vstack(blocks), rows)


def secular_determinant(graph: MetricGraph, mu: complex, eps: float = 0.0) -> complex:
    """``h = det M(sqrt(mu))`` with the analytic condition rows."""
    _require_conditions(graph)
    z = _z_of(mu)
    return complex(np.linalg.det(_matrix_batch(graph, np.array([z]), eps))[0])


def determinant_sweep(graph: MetricGraph, mus: Sequence[complex], eps: float = 0.0) -> np.ndarray:
    _require_conditions(graph)
    z = np.array([_z_of(m) for m in mus])
    return np.linalg.det(_matrix_batch(graph, z, eps))


# --------------------------------------------------------------- Green function


@dataclass
class GreenFunction:
    """Green function with source on ``edge`` at ``t0``.

    ``coefficients[e] = (a, b)`` in the basis of this module (see module
    docstring); :meth:`ansatz_coefficients` converts to ``a e^{izt} + b e^{-izt}``.
    """

    graph: MetricGraph
    mu: complex
    z: complex
    source: tuple
    coefficients: dict

    def ansatz_coefficients(self) -> dict:
        out = {}
        for eid, (a, b) in self.coefficients.items():
            e = self.graph.edge(eid)
            out[eid] = (a, 0.0 if not e.finite else b * np.exp(1j * self.z * e.length))
        return out

    def __call__(self, edge_id: str, t) -> np.ndarray:
        return self._eval(edge_id, t, derivative=False)

    def derivative(self, edge_id: str, t) -> np.ndarray:
        """``dG/dt`` in the edge coordinate; at the source the right-hand limit."""
        return self._eval(edge_id, t, derivative=True)

    def _eval(self, edge_id, t, derivative):
        z = self.z
        t = np.asarray(t, dtype=float)
        e = self.graph.edge(edge_id)
        a, b = self.coefficients[edge_id]
        if derivative:
            out = 1j * z * a * np.exp(1j * z * t)
            if e.finite:
                out = out - 1j * z * b * np.exp(1j * z * (e.length - t))
        else:
            out = a * np.exp(1j * z * t)
            if e.finite:
                out = out + b * np.exp(1j * z * (e.length - t))
        src_edge, t0 = self.source
        if edge_id == src_edge:
            free = np.exp(1j * z * np.abs(t - t0))
            if derivative:
                out = out + np.where(t >= t0, 0.5, -0.5) * free
            else:
                out = out + free / (2j * z)
        return out


def green_function(graph: MetricGraph, mu: complex, eps: float, gamma0: tuple) -> GreenFunction:
    """Solve ``(d^2/dt^2 + mu) G = delta_{gamma0}`` with all vertex conditions."""
    edge_id, t0 = gamma0
    e = graph.edge(edge_id)
    t0 = float(t0)
    if not (0 < t0 < e.length):
        raise ValidationError(f"source point t0={t0} must lie strictly inside edge {edge_id!r}")
    sys = assemble_secular(graph, mu, eps)
    x = sys.solve(sys._vertex_rhs(sys.point_source_traces(edge_id, t0)))
    return GreenFunction(graph, sys.mu, sys.z, (edge_id, t0), _unpack(sys.layout, x))


def _unpack(layout: UnknownLayout, x: np.ndarray) -> dict:
    return {eid: (x[ia], 0.0 if ib is None else x[ib]) for eid, (ia, ib) in layout.columns.items()}


# ----------------------------------------------------------------- scattering


@dataclass
class GraphScatteringSolution:
    """Incident ``e^{-izt}`` on infinite edge ``incident``; outgoing amplitudes elsewhere."""

    incident: str
    mu: complex
    coefficients: dict
    row: dict  # infinite edge id -> outgoing amplitude t_{p,j}

    def __call__(self, edge_id: str, t, graph: MetricGraph) -> np.ndarray:
        z = complex(vc.sqrt_branch(self.mu))
        t = np.asarray(t, dtype=float)
        a, b = self.coefficients[edge_id]
        e = graph.edge(edge_id)
        out = a * np.exp(1j * z * t)
        if e.finite:
            out = out + b * np.exp(1j * z * (e.length - t))
        if edge_id == self.incident:
            out = out + np.exp(-1j * z * t)
        return out


def scattering_solution(graph: MetricGraph, mu: float, eps: float, incident: str) -> GraphScatteringSolution:
    inf_ids = [e.id for e in graph.infinite_edges]
    if not inf_ids:
        raise ValidationError("scattering needs at least one infinite edge")
    if incident not in inf_ids:
        raise ValidationError(f"incident edge {incident!r} is not an infinite edge")
    sys = assemble_secular(graph, mu, eps)
    z = sys.z
    contrib = {}
    for v, *_ in sys.rows:
        d = v.degree
        val, der = np.zeros(d, complex), np.zeros(d, complex)
        hit = False
        for j, ee in enumerate(v.adjacency):
            if ee.edge == incident:
                val[j], der[j], hit = 1.0, -1j * z, True
        if hit:
            contrib[v.id] = (val, der)
    x = sys.solve(sys._vertex_rhs(contrib))
    coef = _unpack(sys.layout, x)
    return GraphScatteringSolution(incident, sys.mu, coef, {j: coef[j][0] for j in inf_ids})


def graph_scattering_matrix(graph: MetricGraph, mu: float, eps: float = 0.0) -> np.ndarray:
    """Scattering matrix over the infinite edges (edge order), ``[p, j] = t_{p,j}``."""
    inf_ids = [e.id for e in graph.infinite_edges]
    if not inf_ids:
        raise ValidationError("scattering needs at least one infinite edge")
    sys = assemble_secular(graph, mu, eps)
    z = sys.z
    rhs = []
    for p in inf_ids:
        contrib = {}
        for v, *_ in sys.rows:
            d = v.degree
            val, der = np.zeros(d, complex), np.zeros(d, complex)
            for j, ee in enumerate(v.adjacency):
                if ee.edge == p:
                    val[j], der[j] = 1.0, -1j * z
            contrib[v.id] = (val, der)
        rhs.append(sys._vertex_rhs(contrib))
    X = sys.solve(np.array(rhs).T)
    cols = [sys.layout.columns[j][0] for j in inf_ids]
    return X[cols, :].T


@dataclass(frozen=True)
class BasisPsi:
    """``psi_p`` on a star: ``delta_{pj} e^{-izt} + T[p, j] e^{izt}`` on edge ``j``."""

    p: int
    z: complex
    T: np.ndarray
    residual: float

    def __call__(self, j: int, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        return (j == self.p) * np.exp(-1j * self.z * t) + self.T[self.p, j] * np.exp(1j * self.z * t)


def basis_psi(cond: vc.VertexCondition, p: int, mu: complex, eps: float = 0.0, *, degree: int | None = None) -> BasisPsi:
    z = complex(_z_of(mu))
    T = vc.scattering_matrix_of_condition(cond, mu, eps, degree=degree)
    d = T.shape[0]
    if not 0 <= p < d:
        raise ValidationError(f"edge index {p} out of range for degree {d}")
    val = np.eye(d)[p] + T[p]
    der = -1j * z * np.eye(d)[p] + 1j * z * T[p]
    A = vc.condition_rows(cond, mu, eps, degree=d)
    res = float(np.linalg.norm(A[:, :d] @ val + A[:, d:] @ der))
    if res > 1e-10 * max(1.0, abs(z)):
        raise ResonanceError(f"basis function violates the condition rows (residual {res:.2e})")
    return BasisPsi(p, z, T, res)


# ------------------------------------------------------------------ resolvent


@dataclass(frozen=True)
class EdgeSamples:
    """Samples of a function on an increasing grid of one edge."""

    t: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.t, dtype=float)
        y = np.asarray(self.values, dtype=complex)
        if t.ndim != 1 or t.shape != y.shape or len(t) < 3:
            raise ValidationError("edge samples need matching 1-D grids with at least 3 nodes")
        if np.any(np.diff(t) <= 0):
            raise ValidationError("edge sample grid must increase")
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "values", y)


def _cumsimpson(y: np.ndarray, t: np.ndarray) -> np.ndarray:
    # scipy's cumulative_simpson drops imaginary parts
    return cumulative_simpson(y.real, x=t, initial=0) + 1j * cumulative_simpson(y.imag, x=t, initial=0)


def resolvent_apply(
    graph: MetricGraph,
    mu: complex,
    eps: float,
    f: Mapping[str, EdgeSamples],
    at: Mapping[str, np.ndarray] | None = None,
) -> dict:
    """``zeta(gamma) = int G(gamma, gamma0) f(gamma0) dgamma0`` by composite Simpson.

    Returns ``zeta`` at the sample nodes of ``f`` (or at the points in ``at``)
    per edge.  The support of ``f`` must stay away from the vertices.
    """
    sys = assemble_secular(graph, mu, eps)
    z = sys.z
    n = sys.layout.size
    coef = np.zeros(n, dtype=complex)
    for eid, smp in f.items():
        e = graph.edge(eid)
        t, y = smp.t, smp.values
        if t[0] < 0 or t[-1] > e.length:
            raise ValidationError(f"samples on edge {eid!r} leave the edge")
        touch = (t[0] <= 0 and y[0] != 0) or (e.finite and t[-1] >= e.length and y[-1] != 0)
        if touch:
            raise ValidationError(f"support of f touches a vertex on edge {eid!r}")
        # sources scale as e^{izs} toward end 0 and e^{iz(l-s)} toward end 1
        F0 = simpson(np.exp(1j * z * t) * y, x=t)
        F1 = simpson(np.exp(1j * z * (e.length - t)) * y, x=t) if e.finite else 0.0
        contrib0, contrib1 = {}, {}
        for v, *_ in sys.rows:
            d = v.degree
            for j, ee in enumerate(v.adjacency):
                if ee.edge != eid:
                    continue
                target = contrib0 if ee.end == 0 else contrib1
                val, der = target.setdefault(v.id, (np.zeros(d, complex), np.zeros(d, complex)))
                val[j], der[j] = 1 / (2j * z), -0.5
        rhs = sys._vertex_rhs(contrib0) * F0 + sys._vertex_rhs(contrib1) * F1
        coef += sys.solve(rhs)
    parts = _unpack(sys.layout, coef)
    points = at if at is not None else {eid: smp.t for eid, smp in f.items()}
    out = {}
    for eid, tq in points.items():
        e = graph.edge(eid)
        tq = np.asarray(tq, dtype=float)
        a, b = parts[eid]
        val = a * np.exp(1j * z * tq)
        if e.finite:
            val = val + b * np.exp(1j * z * (e.length - tq))
        if eid in f:
            val = val + _free_term(z, f[eid], tq, on_grid=at is None)
        out[eid] = val
    return out


def _free_term(z: complex, smp: EdgeSamples, tq: np.ndarray, on_grid: bool) -> np.ndarray:
    """``int e^{iz|t-s|}/(2iz) f(s) ds``."""
    t, y = smp.t, smp.values
    if on_grid:
        # s < t contributes e^{izt} e^{-izs}, s > t contributes e^{-izt} e^{izs}
        lower = _cumsimpson(np.exp(-1j * z * t) * y, t)
        upper_all = _cumsimpson(np.exp(1j * z * t) * y, t)
        upper = upper_all[-1] - upper_all
        return (np.exp(1j * z * t) * lower + np.exp(-1j * z * t) * upper) / (2j * z)
    kern = np.exp(1j * z * np.abs(tq[:, None] - t[None, :])) * y[None, :]
    return simpson(kern, x=t, axis=1) / (2j * z)


# --------------------------------------------------------------- eigenvalues


@dataclass(frozen=True)
class SpectralWindow:
    """Disk ``|mu| < radius`` around the threshold."""

    radius: float
    center: float = 0.0
    delta_res: float = RESONANCE_FLOOR
    mu_min: float = MU_MIN_CUTOFF

    def __post_init__(self):
        if not self.radius > self.mu_min:
            raise ValidationError("window radius must exceed the branch-point cutoff")


@dataclass(frozen=True)
class Eigenvalue:
    mu: complex
    multiplicity: int
    z: complex


def _static_graph(graph: MetricGraph, eps: float) -> bool:
    for v in graph.vertices:
        if isinstance(v.condition, vc.ScatteringGC) and eps > 0:
            return False
    return True


def eigenvalues_in_disk(
    graph: MetricGraph,
    window: SpectralWindow,
    eps: float = 0.0,
    tol: float = 1e-10,
    *,
    retries: int = 5,
) -> list[Eigenvalue]:
    """Zeros of ``h`` with ``mu_min < |mu| < radius``.

    Compact graphs with energy-independent conditions are scanned along the
    real ``z`` axis; everything else goes through argument-principle counting
    in the ``z`` disk with grid seeding and Newton polishing.
    """
    _require_conditions(graph)
    if graph.is_compact and _static_graph(graph, eps):
        return _real_axis_scan(graph, window, eps)
    return _argument_principle(graph, window, eps, tol, retries)


def _sv_ratio(graph, z, eps):
    M = _matrix_batch(graph, np.atleast_1d(np.asarray(z, dtype=complex)), eps)
    s = np.linalg.svd(M, compute_uv=False)
    return s[:, -1] / s[:, 0], s


def _real_axis_scan(graph: MetricGraph, window: SpectralWindow, eps: float) -> list[Eigenvalue]:
    z_lo, z_hi = math.sqrt(window.mu_min), math.sqrt(window.radius)
    total = sum(e.length for e in graph.edges)
    dz = min(0.01, math.pi / (40 * total))
    grid = np.linspace(z_lo, z_hi, int(math.ceil((z_hi - z_lo) / dz)) + 1)
    ratio, _ = _sv_ratio(graph, grid, eps)
    found = []
    for i in range(len(grid)):
        left = ratio[i - 1] if i > 0 else np.inf
        right = ratio[i + 1] if i + 1 < len(grid) else np.inf
        if not (ratio[i] <= left and ratio[i] <= right and ratio[i] < 0.5):
            continue
        a, b = grid[max(i - 1, 0)], grid[min(i + 1, len(grid) - 1)]
        res = minimize_scalar(
            lambda x: _sv_ratio(graph, x, eps)[0][0], bounds=(a, b), method="bounded",
            options={"xatol": 1e-13, "maxiter": 500},
        )
        zr = float(res.x)
        r, s = _sv_ratio(graph, zr, eps)
        if r[0] > 1e-7:
            continue
        mult = int(np.sum(s[0] / s[0, 0] < 1e-5))
        polished = _newton(graph, complex(zr), eps, mult=mult)
        if polished is not None and abs(polished - zr) < 1e-5:
            zr = float(polished.real)
        if found and abs(found[-1].z - zr) < 1e-8:
            continue
        mu = zr * zr
        if window.mu_min < mu < window.radius:
            found.append(Eigenvalue(complex(mu), mult, complex(zr)))
    return found


def _log_derivative(graph, z: complex, eps: float) -> complex:
    """``h'(z)/h(z) = tr(M^{-1} M')`` with a fourth-order central difference for ``M'``."""
    dz = 1e-3 * max(1.0, abs(z))
    pts = z + dz * np.array([-2, -1, 1, 2])
    Ms = _matrix_batch(graph, pts, eps)
    dM = (Ms[0] - 8 * Ms[1] + 8 * Ms[2] - Ms[3]) / (12 * dz)
    M = _matrix_batch(graph, np.array([z]), eps)[0]
    return complex(np.trace(np.linalg.solve(M, dM)))


def _winding(graph, center: complex, radius: float, eps: float, n0: int = 256, nmax: int = 1 << 15):
    """Winding number of ``h`` around a circle; ``None`` if the contour hits a near-zero."""
    n = n0
    prev = None
    while n <= nmax:
        th = 2 * np.pi * np.arange(n) / n
        h = np.linalg.det(_matrix_batch(graph, center + radius * np.exp(1j * th), eps))
        if np.any(h == 0) or not np.all(np.isfinite(h)):
            return None
        dphi = np.angle(np.roll(h, -1) / h)
        w = int(round(dphi.sum() / (2 * np.pi)))
        if np.max(np.abs(dphi)) < np.pi / 4 and prev == w:
            return w
        prev = w
        n *= 2
    raise NumericalError(f"winding number around |z - {center}| = {radius} did not stabilize")


def _newton(graph, z0: complex, eps: float, mult: int = 1, tol: float = 1e-12, maxit: int = 50) -> complex | None:
    z = complex(z0)
    for _ in range(maxit):
        try:
            ld = _log_derivative(graph, z, eps)
        except np.linalg.LinAlgError:
            return z
        if ld == 0 or not np.isfinite(ld):
            return None
        step = mult / ld
        z -= step
        if abs(step) < tol * max(1.0, abs(z)):
            return z
    return z if mult > 1 else None


def _argument_principle(graph, window, eps, tol, retries) -> list[Eigenvalue]:
    R = math.sqrt(window.radius)
    r0 = math.sqrt(window.mu_min)
    for attempt in range(retries + 1):
        try:
            w_out = _winding(graph, 0j, R, eps)
            w_in = _winding(graph, 0j, r0, eps)
        except NumericalError:
            w_out = None
        if w_out is not None and w_in is not None:
            break
        R *= 1 - 1e-3 * (attempt + 1)
    else:
        raise NumericalError("contour kept passing through zeros of h; window retry budget exhausted")
    total = w_out - w_in
    if total < 0:
        raise NumericalError(f"negative zero count {total}: h has poles in the window")
    roots: list[tuple[complex, int]] = []
    npts = 201
    while total > 0 and npts <= 1601:
        x = np.linspace(-R, R, npts)
        Z = x[None, :] + 1j * x[:, None]
        logh = np.full(Z.shape, np.inf)
        inside = (np.abs(Z) < R) & (np.abs(Z) > r0)
        vals = np.abs(np.linalg.det(_matrix_batch(graph, Z[inside], eps)))
        logh[inside] = np.log(np.maximum(vals, 1e-300))
        pad = np.pad(logh, 1, constant_values=np.inf)
        is_min = np.ones(Z.shape, dtype=bool)
        for dy in (-1, 0, 1):
            for dx in (-1, 0, 1):
                if dy or dx:
                    is_min &= logh <= pad[1 + dy: 1 + dy + npts, 1 + dx: 1 + dx + npts]
        is_min &= inside
        roots = []
        for z0 in Z[is_min]:
            zr = _newton(graph, z0, eps)
            if zr is None or not (r0 < abs(zr) < R):
                continue
            if any(abs(zr - q) < 1e-7 * max(1.0, abs(q)) for q, _ in roots):
                continue
            roots.append((zr, 1))
        roots = _with_multiplicities(graph, roots, eps, r0, R)
        if sum(m for _, m in roots) == total:
            break
        npts = 2 * npts - 1
    if sum(m for _, m in roots) != total:
        raise NumericalError(
            f"located {sum(m for _, m in roots)} zeros but the argument principle counts {total}"
        )
    return _physical(graph, roots, window, tol)


def _with_multiplicities(graph, roots, eps, r0, R):
    out = []
    for i, (z, _) in enumerate(roots):
        others = [abs(z - q) for j, (q, _) in enumerate(roots) if j != i]
        cands = [0.3 * (R - abs(z)), 0.3 * (abs(z) - r0), 1e-2]
        if others:
            cands.append(0.3 * min(others))
        rad = max(min(cands), 1e-9)
        try:
            m = _winding(graph, z, rad, eps)
        except NumericalError:
            m = None
        m = 1 if not m else m
        if m > 1:
            z = _newton(graph, z, eps, mult=m) or z
        out.append((z, m))
    return out


def _physical(graph, roots, window, tol) -> list[Eigenvalue]:
    out = []
    ztol = 1e-9
    for z, m in roots:
        if graph.is_compact:
            if z.real < -ztol or (abs(z.real) <= ztol and z.imag < 0):
                continue
        elif z.imag < -ztol:
            continue
        mu = z * z
        if abs(mu.imag) < tol * max(1.0, abs(mu)):
            mu = complex(mu.real, 0.0)
        if not (window.mu_min < abs(mu) < window.radius):
            continue
        out.append(Eigenvalue(mu, m, z))
    out.sort(key=lambda e: (e.mu.real, e.mu.imag))
    return out
