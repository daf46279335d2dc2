"""The one-dimensional thin-potential model ``H_eps = -d^2/dt^2 + eps^-2 v(t/eps)``.

The potential ``v`` lives on ``[-1, 1]`` and is piecewise constant on a
uniform partition, so zero-energy and scattering data come from exact per-cell
propagation.  Besides scattering and the zero-energy classification of the
limiting gluing condition, the module solves the thin operator directly
(resolvent and heat flow) to serve as an oracle for the graph solvers.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.linalg import solve_banded
from scipy.optimize import brentq

from .errors import ClassificationError, NumericalError, ValidationError
from . import vertex_conditions as vc


@dataclass(frozen=True, eq=False)
class Potential1D:
    """Piecewise-constant potential on ``n`` equal cells of ``[-1, 1]`` (zero outside)."""

    values: np.ndarray
    label: str = ""

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float).ravel()
        if vals.size == 0 or not np.all(np.isfinite(vals)):
            raise ValidationError("potential needs at least one finite cell value")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @property
    def cells(self) -> int:
        return self.values.size

    @property
    def width(self) -> float:
        return 2.0 / self.cells

    @property
    def edges(self) -> np.ndarray:
        return np.linspace(-1.0, 1.0, self.cells + 1)

    @classmethod
    def constant(cls, c: float, cells: int = 1) -> "Potential1D":
        return cls(np.full(int(cells), float(c)), label=f"const({c:g})")

    @classmethod
    def from_function(cls, fn: Callable[[np.ndarray], np.ndarray], cells: int = 400) -> "Potential1D":
        """Midpoint sampling of a closed-form potential."""
        e = np.linspace(-1.0, 1.0, int(cells) + 1)
        return cls(np.asarray(fn((e[:-1] + e[1:]) / 2), dtype=float))

    @classmethod
    def from_spec(cls, spec) -> "Potential1D":
        if isinstance(spec, Potential1D):
            return spec
        if not isinstance(spec, dict):
            raise ValidationError("potential description must be an object")
        if "values" in spec:
            vals = np.asarray(spec["values"], dtype=float)
            cells = spec.get("cells")
            if cells is not None and int(cells) != vals.size:
                if vals.size == 1:
                    vals = np.full(int(cells), vals[0])
                else:
                    raise ValidationError(f"'cells'={cells} does not match {vals.size} values")
            return cls(vals, label=str(spec.get("label", "")))
        if "constant" in spec:
            return cls.constant(float(spec["constant"]), int(spec.get("cells", 1)))
        raise ValidationError("potential description needs 'values' or 'constant'")

    def to_spec(self) -> dict:
        return {"values": self.values.tolist()}

    def reflected(self) -> "Potential1D":
        return Potential1D(self.values[::-1].copy(), label=self.label)

    def __call__(self, s) -> np.ndarray:
        s = np.asarray(s, dtype=float)
        idx = np.clip(np.floor((s + 1.0) / self.width).astype(int), 0, self.cells - 1)
        return np.where(np.abs(s) <= 1.0, self.values[idx], 0.0)

    def cumulative(self, s) -> np.ndarray:
        """``int_{-1}^{s} v``."""
        s = np.clip(np.asarray(s, dtype=float), -1.0, 1.0)
        w = self.width
        prefix = np.concatenate([[0.0], np.cumsum(self.values) * w])
        idx = np.clip(np.floor((s + 1.0) / w).astype(int), 0, self.cells - 1)
        return prefix[idx] + self.values[idx] * (s - (-1.0 + idx * w))


# ----------------------------------------------------------- transfer matrices


def _cell_matrices(values: np.ndarray, width, E: np.ndarray) -> np.ndarray:
    """Propagators over cells, shape ``E.shape + values.shape + (2, 2)``.

    ``width`` may be a scalar or broadcast against ``values``.
    """
    E = np.asarray(E, dtype=complex)[..., None]
    q2 = E - values
    q = np.sqrt(q2)
    qw = q * width
    c = np.cos(qw)
    s_q = width * np.sinc(qw / np.pi)  # sin(q w)/q, entire in q^2
    out = np.empty(q2.shape + (2, 2), dtype=complex)
    out[..., 0, 0] = c
    out[..., 0, 1] = s_q
    out[..., 1, 0] = -q2 * s_q
    out[..., 1, 1] = c
    return out


def _chain(mats: np.ndarray) -> np.ndarray:
    """Ordered product ``M_n ... M_1`` along the second-to-last-but-two axis."""
    out = mats[..., 0, :, :]
    for i in range(1, mats.shape[-3]):
        out = mats[..., i, :, :] @ out
    return out


def transfer_matrix(v: Potential1D, E) -> np.ndarray:
    """Map ``(psi, psi')(-1)`` to ``(psi, psi')(+1)`` for ``-psi'' + v psi = E psi``."""
    E_arr = np.asarray(E)
    M = _chain(_cell_matrices(v.values, v.width, E_arr))
    if not np.iscomplexobj(E_arr):
        M = M.real
    return M


def solution_at(v: Potential1D, E, s, y0) -> np.ndarray:
    """``(psi, psi')`` at points ``s`` for data ``y0`` at ``s = -1``, shape ``(len(s), 2)``.

    Outside ``[-1, 1]`` the free propagation at energy ``E`` is used.
    """
    E = complex(E)
    s = np.atleast_1d(np.asarray(s, dtype=float))
    cells = _cell_matrices(v.values, v.width, np.asarray(E))
    states = [np.asarray(y0, dtype=complex)]
    for i in range(v.cells):
        states.append(cells[i] @ states[-1])
    states = np.array(states)
    idx = np.clip(np.floor((s + 1.0) / v.width).astype(int), 0, v.cells - 1)
    start = v.edges[idx]
    base = states[idx]
    pot = v.values[idx]
    left, right = s < -1.0, s > 1.0
    start[left], base[left], pot[left] = -1.0, states[0], 0.0
    start[right], base[right], pot[right] = 1.0, states[-1], 0.0
    dw = s - start
    q2 = E - pot
    qd = np.sqrt(q2.astype(complex)) * dw
    c = np.cos(qd)
    sq = dw * np.sinc(qd / np.pi)
    psi = c * base[:, 0] + sq * base[:, 1]
    dpsi = -q2 * sq * base[:, 0] + c * base[:, 1]
    return np.stack([psi, dpsi], axis=-1)


# ------------------------------------------------------------------ scattering


def scattering_k(v: Potential1D, k) -> np.ndarray:
    """Scattering matrix ``[[r_-, t], [t, r_+]]`` as a function of ``k = eps sqrt(lambda)``.

    Outside the support the solution is ``A e^{iks} + B e^{-iks}`` for ``s < -1``
    (incoming ``A``) and ``C e^{iks} + D e^{-iks}`` for ``s > 1`` (incoming
    ``D``), phases referenced at the origin.  ``k = 0`` returns the threshold
    limit.
    """
    k = np.atleast_1d(np.asarray(k, dtype=complex))
    out = np.empty(k.shape + (2, 2), dtype=complex)
    zero = k == 0
    if np.any(zero):
        out[zero] = threshold_matrix(v)
    kk = k[~zero]
    if kk.size:
        M = _chain(_cell_matrices(v.values, v.width, kk**2))
        ep, em = np.exp(1j * kk), np.exp(-1j * kk)
        Em1 = np.empty(kk.shape + (2, 2), dtype=complex)  # columns e^{iks}, e^{-iks} at s=-1
        Em1[..., 0, 0], Em1[..., 0, 1] = em, ep
        Em1[..., 1, 0], Em1[..., 1, 1] = 1j * kk * em, -1j * kk * ep
        Ep1 = np.empty_like(Em1)
        Ep1[..., 0, 0], Ep1[..., 0, 1] = ep, em
        Ep1[..., 1, 0], Ep1[..., 1, 1] = 1j * kk * ep, -1j * kk * em
        L = M @ Em1
        # unknowns (B, C): Ep1[:,0] C - L[:,1] B = L[:,0] A - Ep1[:,1] D
        lhs = np.stack([-L[..., :, 1], Ep1[..., :, 0]], axis=-1)
        rhs = np.stack([L[..., :, 0], -Ep1[..., :, 1]], axis=-1)  # columns: A=1 / D=1
        sol = np.linalg.solve(lhs, rhs)  # rows (B, C), columns incidence
        T = np.empty_like(sol)
        T[..., 0, 0] = sol[..., 0, 0]  # r_-
        T[..., 0, 1] = sol[..., 1, 0]  # t
        T[..., 1, 0] = sol[..., 0, 1]
        T[..., 1, 1] = sol[..., 1, 1]  # r_+
        out[~zero] = T
    return out


def scattering_1d(v: Potential1D, eps: float, lam: float) -> np.ndarray:
    """Scattering matrix of ``H_eps`` at energy ``lam > 0``."""
    if not eps > 0:
        raise ValidationError("eps must be positive")
    if not lam > 0:
        raise ValidationError("lambda must be positive")
    return scattering_k(v, eps * math.sqrt(lam))[0]


def _flat_tol(M: np.ndarray, tol: float) -> float:
    return tol * max(1.0, float(np.max(np.abs(M))))


def threshold_matrix(v: Potential1D, tol: float = 1e-9) -> np.ndarray:
    """``T`` at ``k = 0``: ``-I`` unless the zero-energy solution is flat on both sides.

    A flat solution equal to ``rho_-`` and ``rho_+`` outside the support gives
    ``2 rho rho^t / |rho|^2 - I``.
    """
    M = transfer_matrix(v, 0.0)
    if abs(M[1, 0]) > _flat_tol(M, tol):
        return -np.eye(2, dtype=complex)
    rho = np.array([1.0, M[0, 0]])
    return (2 * np.outer(rho, rho) / (rho @ rho) - np.eye(2)).astype(complex)


def scattering_matrix_fn(v: Potential1D) -> vc.ScatteringMatrixFn:
    """The model's scattering matrix as a function of ``k = sqrt(lambda - lambda0)``, ``lambda0 = 0``.

    Used as a vertex condition with small parameter ``eps`` the evaluator sees
    ``k = eps sqrt(mu)``, which is exactly the model's dependence on ``eps sqrt(lambda)``.
    """
    return vc.ScatteringMatrixFn(
        2, lambda k: scattering_k(v, k), 0.0,
        threshold=threshold_matrix(v), source={"model1d": v.to_spec()},
    )


def low_energy_limit(v: Potential1D, k_anchor: float = 1e-2, order: int = 3, ratio: float = 0.5) -> np.ndarray:
    """Polynomial extrapolation of ``T(k)`` to ``k = 0`` from samples ``k_anchor * ratio**i``."""
    ks = k_anchor * ratio ** np.arange(order + 1)
    Ts = scattering_k(v, ks).reshape(len(ks), -1)
    V = np.vander(ks, order + 1, increasing=True)
    coef = np.linalg.solve(V, Ts)
    return coef[0].reshape(2, 2)


# -------------------------------------------------------------- classification


@dataclass(frozen=True)
class GCClassification:
    """Zero-energy classification of the limiting gluing condition.

    ``tag`` is ``DirichletGeneric``, ``MixedDN`` or ``GeneralizedKirchhoff``.
    For the last one the zero-energy solution equals ``rho_minus`` for
    ``s < -1`` and ``rho_plus`` for ``s > 1``.
    """

    tag: str
    rho_minus: float | None = None
    rho_plus: float | None = None
    side: str | None = None
    diagnostics: dict = field(default_factory=dict, compare=False)

    @property
    def rho(self) -> np.ndarray:
        return np.array([self.rho_minus, self.rho_plus])

    @property
    def heat_weights(self) -> tuple[float, float]:
        """Edge weights of the limiting heat problem (squares of the plateau values)."""
        if self.tag != "GeneralizedKirchhoff":
            raise ClassificationError("heat weights exist only for the generalized Kirchhoff case")
        return (self.rho_minus**2, self.rho_plus**2)

    def condition(self) -> vc.VertexCondition:
        """Limiting condition at the origin vertex (edge order: left, right).

        The flat case yields ``zeta_j / rho_j`` continuous and
        ``sum rho_j zeta_j' = 0``, written as a projection condition.
        """
        if self.tag == "DirichletGeneric":
            return vc.Dirichlet()
        if self.tag == "MixedDN":
            nu = [-1.0, 1.0] if self.side == "right" else [1.0, -1.0]
            return vc.ProjectionDN(vc.ProjectionPair.from_rotation(np.eye(2), nu))
        r = self.rho / np.linalg.norm(self.rho)
        C = np.array([[r[1], r[0]], [-r[0], r[1]]])
        return vc.ProjectionDN(vc.ProjectionPair.from_rotation(C, [-1.0, 1.0]))


def _positive_on_support(v: Potential1D, y0, samples_per_cell: int = 16) -> tuple[bool, float]:
    s = np.linspace(-1.0, 1.0, v.cells * samples_per_cell + 1)
    psi = solution_at(v, 0.0, s, y0)[:, 0].real
    return bool(np.all(psi > 0)), float(psi.min())


def classify_gc(v: Potential1D, tol: float = 1e-9) -> GCClassification:
    """Classify the limiting gluing condition from zero-energy shooting."""
    M = transfer_matrix(v, 0.0)
    left_exit = (float(M[0, 0]), float(M[1, 0]))  # start (1, 0) at s = -1
    right_entry = (float(M[1, 1]), float(-M[1, 0]))  # ends at (1, 0) at s = +1
    left_pos, left_min = _positive_on_support(v, (1.0, 0.0))
    right_pos, right_min = _positive_on_support(v, right_entry)
    diag = {
        "left_exit_value": left_exit[0],
        "left_exit_slope": left_exit[1],
        "right_entry_value": right_entry[0],
        "right_entry_slope": right_entry[1],
        "left_min": left_min,
        "right_min": right_min,
    }
    ftol = _flat_tol(M, tol)
    left_flat = abs(left_exit[1]) <= ftol
    right_flat = abs(right_entry[1]) <= ftol
    if left_flat and right_flat:
        if left_pos and left_exit[0] > 0:
            return GCClassification("GeneralizedKirchhoff", 1.0, left_exit[0], diagnostics=diag)
        raise ClassificationError(
            "zero-energy solution is flat outside the support but changes sign", diag
        )
    if left_flat != right_flat:
        side = "left" if left_flat else "right"
        if not (left_pos if left_flat else right_pos):
            raise ClassificationError("flat zero-energy solution is not positive", diag)
        return GCClassification("MixedDN", side=side, diagnostics=diag)
    if not (left_pos or right_pos):
        raise ClassificationError("no positive zero-energy solution found on [-1, 1]", diag)
    return GCClassification("DirichletGeneric", diagnostics=diag)


def tuned_two_step(a: float = 1.0, b_range: tuple[float, float] | None = None) -> Potential1D:
    """Two-step potential ``a`` on ``[-1, 0]`` and ``b`` on ``[0, 1]`` with flat zero-energy exits.

    The flatness condition is a single equation, so ``a`` is fixed and ``b``
    found by bracketing the exit slope of the left Neumann shot.
    """
    def slope(b):
        return transfer_matrix(Potential1D(np.array([a, b])), 0.0)[1, 0]

    lo, hi = b_range if b_range is not None else (-(math.pi / 2) ** 2 + 1e-9, 0.0)
    if a <= 0:
        lo, hi = (0.0, 10.0) if b_range is None else b_range
    if slope(lo) * slope(hi) > 0:
        raise NumericalError(f"no sign change of the exit slope for b in [{lo}, {hi}]")
    b = brentq(slope, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=200)
    return Potential1D(np.array([a, b]), label=f"two-step({a:g},{b:.12g})")


# ----------------------------------------------------------------- resolvent


def _cell_avg_potential(v: Potential1D, eps: float, t: np.ndarray, h: float) -> np.ndarray:
    """Average of ``eps^-2 v(t/eps)`` over ``[t - h/2, t + h/2]``."""
    lo, hi = (t - h / 2) / eps, (t + h / 2) / eps
    return (v.cumulative(hi) - v.cumulative(lo)) / (h * eps)


@dataclass(frozen=True)
class Field1D:
    t: np.ndarray
    u: np.ndarray
    residual: float = 0.0


def _tridiag_matvec(ab: np.ndarray, u: np.ndarray) -> np.ndarray:
    out = ab[1] * u
    out[:-1] += ab[0, 1:] * u[1:]
    out[1:] += ab[2, :-1] * u[:-1]
    return out


def resolvent_1d(
    v: Potential1D,
    eps: float,
    lam: complex,
    f: Callable[[np.ndarray], np.ndarray],
    support: tuple[float, float],
    *,
    L: float | None = None,
    h: float | None = None,
) -> Field1D:
    """Finite-difference solve of ``(-d^2/dt^2 + eps^-2 v(t/eps) - lam) u = f`` on the line.

    ``f`` must vanish on ``[-eps, eps]``; ``support`` bounds its support.
    Truncation at ``+-L`` uses the outgoing Robin rows ``u' -+ i sqrt(lam) u = 0``.
    """
    if not eps > 0:
        raise ValidationError("eps must be positive")
    lam = complex(lam)
    k = complex(vc.sqrt_branch(lam))
    if k == 0:
        raise ValidationError("lambda = 0 is the threshold")
    a, b = map(float, support)
    if a > b:
        raise ValidationError("support must be an ordered pair")
    if a < eps and b > -eps:
        if f(np.array([max(a, -eps), min(b, eps), 0.0])).any():
            raise ValidationError("f must vanish on [-eps, eps]")
    reach = max(abs(a), abs(b), eps)
    if L is None:
        L = reach + (30.0 / k.imag if k.imag > 1e-3 else 50.0)
    if h is None:
        h = eps / 40
    n = int(math.ceil(2 * L / h))
    h = 2 * L / n
    t = np.linspace(-L, L, n + 1)
    W = _cell_avg_potential(v, eps, t, h)
    ab = np.zeros((3, n + 1), dtype=complex)
    ab[1] = 2 / h**2 + W - lam
    ab[0, 1:] = -1 / h**2
    ab[2, :-1] = -1 / h**2
    ab[0, 1] = -2 / h**2  # ghost-point rows at both ends
    ab[2, -2] = -2 / h**2
    ab[1, 0] += -2j * k / h
    ab[1, -1] += -2j * k / h
    rhs = np.asarray(f(t), dtype=complex)
    u = solve_banded((1, 1), ab, rhs)
    res = np.linalg.norm(_tridiag_matvec(ab, u) - rhs) / max(np.linalg.norm(rhs), 1e-300)
    if not np.isfinite(res) or res > 1e-6:
        raise NumericalError(f"resolvent solve residual {res:.2e}: lambda near a resonance")
    return Field1D(t, u, float(res))


def tr_convergence(
    v: Potential1D,
    eps_list: Sequence[float],
    lam: complex,
    f: Callable[[np.ndarray], np.ndarray],
    support: tuple[float, float],
    *,
    graph_nodes: int = 401,
    h_factor: float = 1 / 40,
) -> dict:
    """Relative distance ``||u_eps - zeta_graph|| / ||f||`` on the support of ``f``.

    The graph comparator is the resolvent of the limiting two-edge graph at
    ``mu = lam``, with the condition from :func:`classify_gc`.
    """
    from .graph_core import build_graph
    from .graph_solver import EdgeSamples, resolvent_apply

    cls = classify_gc(v)
    graph = build_graph({
        "vertices": ["o"],
        "edges": [
            {"id": "left", "vertices": ["o", None], "length": "inf"},
            {"id": "right", "vertices": ["o", None], "length": "inf"},
        ],
        "conditions": {"o": cls.condition()},
    })
    a, b = map(float, support)
    pieces = {}
    if a < 0:
        s = np.linspace(max(-b, 0.0), -a, graph_nodes)
        pieces["left"] = EdgeSamples(s, np.asarray(f(-s), dtype=complex))
    if b > 0:
        s = np.linspace(max(a, 0.0), b, graph_nodes)
        pieces["right"] = EdgeSamples(s, np.asarray(f(s), dtype=complex))
    zeta = resolvent_apply(graph, complex(lam), 0.0, pieces)
    tq = np.concatenate([-pieces["left"].t[::-1] if "left" in pieces else [],
                         pieces["right"].t if "right" in pieces else []])
    ref = np.concatenate([-zeta["left"][::-1] if "left" in zeta else [],
                          -zeta["right"] if "right" in zeta else []])
    fq = np.asarray(f(tq), dtype=complex)
    fnorm = _l2_pieces(tq, fq)
    errors = []
    for eps in eps_list:
        sol = resolvent_1d(v, eps, lam, f, support, h=eps * h_factor)
        u = np.interp(tq, sol.t, sol.u.real) + 1j * np.interp(tq, sol.t, sol.u.imag)
        errors.append(_l2_pieces(tq, u - ref) / fnorm)
    eps_arr = np.asarray(eps_list, dtype=float)
    slope = float(np.polyfit(np.log(eps_arr), np.log(errors), 1)[0]) if len(eps_arr) > 1 else float("nan")
    return {"classification": cls, "eps": eps_arr, "errors": np.asarray(errors), "slope": slope}


def _l2_pieces(t: np.ndarray, y: np.ndarray) -> float:
    """Trapezoid L2 norm over sorted nodes, skipping the gap between the two sides."""
    dt = np.diff(t)
    gap = dt > 10 * np.median(dt) if len(dt) else dt
    seg = 0.5 * (np.abs(y[:-1]) ** 2 + np.abs(y[1:]) ** 2) * dt
    return float(np.sqrt(np.sum(seg[~gap])))


# --------------------------------------------------------------------- heat


@dataclass(frozen=True)
class HeatTrajectory1D:
    times: np.ndarray
    t: np.ndarray
    u: np.ndarray  # (len(times), nodes)
    psi0: np.ndarray
    classification: GCClassification

    @property
    def w(self) -> np.ndarray:
        return self.u / self.psi0

    def mass(self) -> np.ndarray:
        """``int psi0 u dt``, conserved by the flow."""
        return _trapz_rows(self.u * self.psi0, self.t)


def _trapz_rows(y: np.ndarray, t: np.ndarray) -> np.ndarray:
    dt = np.diff(t)
    return 0.5 * np.sum((y[..., :-1] + y[..., 1:]) * dt, axis=-1)


def ground_state(v: Potential1D, eps: float, t: np.ndarray) -> np.ndarray:
    """Zero-energy solution ``psi0(t/eps)`` normalised to 1 on the left."""
    return solution_at(v, 0.0, np.asarray(t) / eps, (1.0, 0.0))[:, 0].real


def heat_1d(
    v: Potential1D,
    eps: float,
    phi: Callable[[np.ndarray], np.ndarray],
    tau_end: float,
    *,
    dtau: float = 1e-3,
    h: float | None = None,
    L: float | None = None,
    support: tuple[float, float] | None = None,
    sample_times: Sequence[float] | None = None,
) -> HeatTrajectory1D:
    """Crank-Nicolson for ``u_tau = u'' - eps^-2 v(t/eps) u`` with ``u(0) = phi psi0``.

    The flow is stepped in the ground-state gauge ``w = u / psi0``, where it
    reads ``psi0^2 w_tau = (psi0^2 w')'``; the finite-volume form of that
    equation conserves ``int psi0 u`` exactly.  Far ends are reflecting.
    """
    cls = classify_gc(v)
    if cls.tag != "GeneralizedKirchhoff":
        raise ClassificationError(
            f"heat limit needs a positive flat ground state; potential classified as {cls.tag}",
            cls.diagnostics,
        )
    if not (eps > 0 and tau_end > 0 and dtau > 0):
        raise ValidationError("eps, tau_end and dtau must be positive")
    reach = 1.0 if support is None else max(abs(support[0]), abs(support[1]))
    if L is None:
        L = reach + 12.0 * math.sqrt(tau_end) + 1.0
    if h is None:
        h = eps / 20
    n = int(math.ceil(2 * L / h))
    h = 2 * L / n
    t = np.linspace(-L, L, n + 1)
    psi = ground_state(v, eps, t)
    psi_face = ground_state(v, eps, (t[:-1] + t[1:]) / 2)
    if np.any(psi <= 0) or np.any(psi_face <= 0):
        raise ClassificationError("ground state not positive on the grid", cls.diagnostics)
    m = psi**2 * h
    m[0] *= 0.5
    m[-1] *= 0.5
    a = psi_face**2 / h
    # K w = flux differences; mass matrix diag(m)
    main = np.zeros(n + 1)
    main[:-1] += a
    main[1:] += a
    ab_lhs = np.zeros((3, n + 1))
    ab_lhs[0, 1:] = -0.5 * dtau * a
    ab_lhs[2, :-1] = -0.5 * dtau * a
    ab_lhs[1] = m + 0.5 * dtau * main

    def apply_rhs(w):
        out = (m - 0.5 * dtau * main) * w
        out[:-1] += 0.5 * dtau * a * w[1:]
        out[1:] += 0.5 * dtau * a * w[:-1]
        return out

    steps = int(round(tau_end / dtau))
    if abs(steps * dtau - tau_end) > 1e-9 * tau_end:
        raise ValidationError("tau_end must be a multiple of dtau")
    if sample_times is None:
        sample_times = [0.0, tau_end]
    sample_steps = sorted({int(round(s / dtau)) for s in sample_times})
    w = np.asarray(phi(t), dtype=float).copy()
    times, us = [], []
    for step in range(steps + 1):
        if step in sample_steps:
            times.append(step * dtau)
            us.append(w * psi)
        if step == steps:
            break
        w = solve_banded((1, 1), ab_lhs, apply_rhs(w))
    return HeatTrajectory1D(np.array(times), t, np.array(us), psi, cls)
