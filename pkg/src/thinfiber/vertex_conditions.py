"""Gluing conditions at graph vertices.

A condition at a vertex of degree ``d`` is a set of ``d`` linear relations

    A_val @ zeta(0) + A_der @ zeta'(0) = 0

between the traces and outward-pointing derivatives of the edge functions at
that vertex.  Scattering-matrix conditions are written in the rescaled
spectral variable ``mu`` (``lambda = lambda0 + eps**2 * mu``) with
``z = sqrt(mu)`` on the branch ``Im z >= 0``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Any, Callable, Mapping, Sequence

import numpy as np
from scipy.interpolate import CubicSpline

from .errors import NumericalError, RankDeficiencyError, SnapError, ValidationError

SNAP_TOL_ANALYTIC = 1e-6
SNAP_TOL_FD = 5e-2
_RANK_RTOL = 1e-12
_FRAME_SPLIT = 0.6180339887498949  # mixes Re T and Im T before eigh


def sqrt_branch(mu):
    """Principal square root moved onto the closed upper half plane."""
    z = np.sqrt(np.asarray(mu, dtype=complex))
    flip = (z.imag < 0) | ((z.imag == 0) & (z.real < 0))
    z = np.where(flip, -z, z)
    return z[()] if z.ndim == 0 else z


# ---------------------------------------------------------------- diagnostics


@dataclass(frozen=True)
class UnitarityReport:
    unitarity_defect: float
    symmetry_defect: float
    passed: bool
    tol: float


def check_unitary_symmetric(T, tol: float = 1e-10) -> UnitarityReport:
    """Operator-norm defects ``||T*T - I||`` and ``||T - T^t||``."""
    T = np.asarray(T, dtype=complex)
    if T.ndim != 2 or T.shape[0] != T.shape[1]:
        raise ValidationError(f"expected a square matrix, got shape {T.shape}")
    d = T.shape[0]
    u = float(np.linalg.norm(T.conj().T @ T - np.eye(d), 2))
    s = float(np.linalg.norm(T - T.T, 2))
    return UnitarityReport(u, s, bool(u <= tol and s <= tol), tol)


# ---------------------------------------------------------- scattering matrix


def _parse_complex_matrix(raw, name="matrix") -> np.ndarray:
    arr = np.asarray(raw, dtype=float)
    if arr.ndim == 3 and arr.shape[-1] == 2:
        out = arr[..., 0] + 1j * arr[..., 1]
    elif arr.ndim == 2:
        out = arr.astype(complex)
    else:
        raise ValidationError(f"{name}: expected rows of numbers or [re, im] pairs, got shape {arr.shape}")
    if out.shape[0] != out.shape[1]:
        raise ValidationError(f"{name}: matrix is not square ({out.shape})")
    if not np.all(np.isfinite(out)):
        raise ValidationError(f"{name}: non-finite entries")
    return out


def _complex_matrix_to_json(M) -> list:
    M = np.asarray(M, dtype=complex)
    return [[[float(x.real), float(x.imag)] for x in row] for row in M]


class ScatteringMatrixFn:
    """Energy-dependent scattering matrix ``T`` as a function of ``k = sqrt(lambda - lambda0)``.

    ``evaluator`` maps an array of ``k`` values (shape ``(n,)``) to an array of
    shape ``(n, d, d)``.  ``analytic`` says whether complex ``k`` is allowed.
    """

    def __init__(
        self,
        dimension: int,
        evaluator: Callable[[np.ndarray], np.ndarray],
        lambda0: float = 0.0,
        lambda1: float = math.inf,
        *,
        analytic: bool = True,
        threshold: np.ndarray | None = None,
        source: dict | None = None,
        snap_tol: float = SNAP_TOL_ANALYTIC,
    ):
        if dimension < 1:
            raise ValidationError("scattering matrix dimension must be positive")
        if not lambda1 > lambda0:
            raise ValidationError(f"empty validity window [{lambda0}, {lambda1}]")
        self.dimension = int(dimension)
        self._evaluator = evaluator
        self.lambda0 = float(lambda0)
        self.lambda1 = float(lambda1)
        self.analytic = analytic
        self._threshold = None if threshold is None else np.asarray(threshold, dtype=complex)
        self.source = source
        self.snap_tol = snap_tol

    @property
    def k_max(self) -> float:
        return math.sqrt(self.lambda1 - self.lambda0) if math.isfinite(self.lambda1) else math.inf

    def at_k(self, k) -> np.ndarray:
        k = np.asarray(k, dtype=complex)
        flat = np.atleast_1d(k).ravel()
        if not self.analytic and np.any(np.abs(flat.imag) > 1e-14 * np.maximum(1, np.abs(flat))):
            raise NumericalError("tabulated scattering matrix cannot be evaluated at complex energies")
        if np.any(np.abs(flat) > self.k_max * (1 + 1e-12)):
            raise ValidationError(
                f"energy outside the validity window [{self.lambda0}, {self.lambda1}] of the scattering matrix"
            )
        out = np.asarray(self._evaluator(flat), dtype=complex)
        return out.reshape(k.shape + (self.dimension, self.dimension))

    def at_lambda(self, lam) -> np.ndarray:
        return self.at_k(sqrt_branch(np.asarray(lam, dtype=complex) - self.lambda0))

    def threshold(self) -> np.ndarray:
        """``T(lambda0)``."""
        if self._threshold is not None:
            return self._threshold.copy()
        return self.at_k(0.0)

    # constructors

    @classmethod
    def constant(cls, T, lambda0: float = 0.0, lambda1: float = math.inf) -> "ScatteringMatrixFn":
        T = np.array(T, dtype=complex)
        if T.ndim != 2 or T.shape[0] != T.shape[1]:
            raise ValidationError("constant scattering matrix must be square")
        T.setflags(write=False)

        def ev(k):
            return np.broadcast_to(T, (len(k),) + T.shape)

        return cls(
            T.shape[0], ev, lambda0, lambda1, threshold=T,
            source={"T": _complex_matrix_to_json(T)},
        )

    @classmethod
    def from_table(
        cls,
        lambdas: Sequence[float],
        Ts,
        lambda0: float,
        lambda1: float | None = None,
        *,
        order: int = 3,
        tol: float = 1e-2,
        snap_tol: float = SNAP_TOL_FD,
    ) -> "ScatteringMatrixFn":
        """Interpolate tabulated ``T(lambda)`` with a cubic spline in ``z = sqrt(lambda - lambda0)``.

        Below the first sample the entries follow a least-squares polynomial
        of degree ``order`` in ``z`` fitted to the lowest ``order + 2`` samples;
        that polynomial also supplies ``T(lambda0)``.
        """
        lam = np.asarray(lambdas, dtype=float)
        Ts = np.asarray(Ts, dtype=complex)
        if lam.ndim != 1 or len(lam) < order + 2:
            raise ValidationError(f"scattering table needs at least {order + 2} energies")
        if Ts.shape[0] != len(lam) or Ts.ndim != 3 or Ts.shape[1] != Ts.shape[2]:
            raise ValidationError("scattering table: T must be a list of square matrices, one per energy")
        if np.any(np.diff(lam) <= 0) or lam[0] <= lambda0:
            raise ValidationError("scattering table energies must increase strictly and exceed lambda0")
        for i, T in enumerate(Ts):
            rep = check_unitary_symmetric(T, tol)
            if not rep.passed:
                raise ValidationError(
                    f"scattering table entry at lambda={lam[i]} is not unitary/symmetric "
                    f"(defects {rep.unitarity_defect:.2e}, {rep.symmetry_defect:.2e})"
                )
        z = np.sqrt(lam - lambda0)
        spline = CubicSpline(z, Ts, axis=0)
        m = order + 2
        V = np.vander(z[:m], order + 1, increasing=True)
        coef = np.linalg.lstsq(V, Ts[:m].reshape(m, -1), rcond=None)[0]
        d = Ts.shape[1]
        hi = float(lam[-1]) if lambda1 is None else float(lambda1)
        z_lo, z_hi = z[0], z[-1]

        def ev(k):
            k = k.real
            if np.any(k > z_hi * (1 + 1e-12)):
                raise ValidationError("energy above the last tabulated value")
            out = np.empty((len(k), d, d), dtype=complex)
            low = k < z_lo
            if np.any(~low):
                out[~low] = spline(np.clip(k[~low], z_lo, z_hi))
            if np.any(low):
                Vk = np.vander(k[low], order + 1, increasing=True)
                out[low] = (Vk @ coef).reshape(-1, d, d)
            return out

        source = {
            "table": {"lambda": lam.tolist(), "T": [_complex_matrix_to_json(T) for T in Ts]},
            "order": order,
        }
        return cls(
            d, ev, lambda0, min(hi, float(lam[-1])), analytic=False,
            threshold=coef[0].reshape(d, d), source=source, snap_tol=snap_tol,
        )


# ------------------------------------------------------------------ projection


@dataclass(frozen=True, eq=False)
class ProjectionPair:
    """Rotation ``C``, signs ``nu`` and projection ``P = C diag((1 - nu)/2) C^t``.

    ``P`` projects onto the Dirichlet directions (``nu = -1``); the rest carry
    Neumann conditions.
    """

    C: np.ndarray
    nu: np.ndarray
    P: np.ndarray
    rank: int
    snap_residual: float = 0.0

    @property
    def dimension(self) -> int:
        return self.C.shape[0]

    @property
    def P_perp(self) -> np.ndarray:
        return np.eye(self.dimension) - self.P

    @classmethod
    def from_rotation(cls, C, nu) -> "ProjectionPair":
        C = np.asarray(C, dtype=float)
        nu = np.asarray(nu, dtype=float)
        d = C.shape[0]
        if C.shape != (d, d) or nu.shape != (d,):
            raise ValidationError("rotation must be d x d with d signs")
        if np.linalg.norm(C.T @ C - np.eye(d)) > 1e-10:
            raise ValidationError("rotation is not orthogonal")
        if not np.all(np.isin(nu, (-1.0, 1.0))):
            raise ValidationError("signs must be +1 or -1")
        P = C @ np.diag((1 - nu) / 2) @ C.T
        P = (P + P.T) / 2
        return cls(C, nu, P, int(np.sum(nu < 0)))

    @classmethod
    def from_projection(cls, P, tol: float = 1e-10) -> "ProjectionPair":
        P = np.asarray(P, dtype=float)
        if P.ndim != 2 or P.shape[0] != P.shape[1]:
            raise ValidationError("projection must be square")
        if np.linalg.norm(P - P.T) > tol or np.linalg.norm(P @ P - P) > tol:
            raise ValidationError("P is not an orthogonal projection")
        w, C = np.linalg.eigh((P + P.T) / 2)
        nu = np.where(w > 0.5, -1.0, 1.0)
        return cls.from_rotation(C, nu)


def threshold_projection(T0, tol: float = SNAP_TOL_ANALYTIC) -> ProjectionPair:
    """Snap a threshold scattering matrix ``T(lambda0)`` to a projection pair."""
    T0 = np.asarray(T0, dtype=complex)
    rep = check_unitary_symmetric(T0, tol)
    if not rep.passed:
        raise SnapError(
            f"threshold matrix is not unitary/symmetric within {tol:g} "
            f"(defects {rep.unitarity_defect:.3e}, {rep.symmetry_defect:.3e})"
        )
    imag = float(np.linalg.norm(T0.imag, 2))
    if imag > tol:
        raise SnapError(f"threshold matrix has imaginary part of norm {imag:.3e} > {tol:g}")
    A = T0.real
    w, C = np.linalg.eigh((A + A.T) / 2)
    nu = np.where(w >= 0, 1.0, -1.0)
    resid = float(np.max(np.abs(w - nu))) if len(w) else 0.0
    if resid > tol:
        raise SnapError(f"eigenvalues {np.round(w, 6).tolist()} not within {tol:g} of +-1")
    pair = ProjectionPair.from_rotation(C, nu)
    return ProjectionPair(pair.C, pair.nu, pair.P, pair.rank, resid)


# ------------------------------------------------------------------ conditions


class VertexCondition:
    kind = "abstract"

    @property
    def dimension(self) -> int | None:
        """Fixed dimension, or ``None`` when the condition adapts to any degree."""
        return None


@dataclass(frozen=True)
class Dirichlet(VertexCondition):
    kind = "dirichlet"


@dataclass(frozen=True)
class Neumann(VertexCondition):
    kind = "neumann"


@dataclass(frozen=True)
class Kirchhoff(VertexCondition):
    kind = "kirchhoff"


@dataclass(frozen=True, eq=False)
class GeneralizedKirchhoff(VertexCondition):
    rho: tuple[float, ...]
    kind = "generalized_kirchhoff"

    def __post_init__(self):
        rho = tuple(float(r) for r in self.rho)
        if len(rho) < 1:
            raise ValidationError("generalized Kirchhoff needs at least one weight")
        if not all(math.isfinite(r) and r > 0 for r in rho):
            raise ValidationError(f"generalized Kirchhoff weights must be positive, got {rho}")
        object.__setattr__(self, "rho", rho)

    @property
    def dimension(self) -> int:
        return len(self.rho)

    def __eq__(self, other):
        return isinstance(other, GeneralizedKirchhoff) and self.rho == other.rho

    def __hash__(self):
        return hash(("gk", self.rho))


@dataclass(frozen=True, eq=False)
class ScatteringGC(VertexCondition):
    matrix: ScatteringMatrixFn
    kind = "scattering"

    @property
    def dimension(self) -> int:
        return self.matrix.dimension


@dataclass(frozen=True, eq=False)
class ProjectionDN(VertexCondition):
    pair: ProjectionPair
    kind = "projection"

    @property
    def dimension(self) -> int:
        return self.pair.dimension


def _degree(cond: VertexCondition, degree: int | None) -> int:
    dim = cond.dimension
    if dim is not None:
        if degree is not None and degree != dim:
            raise ValidationError(f"{cond.kind} condition has dimension {dim}, vertex has degree {degree}")
        return dim
    if degree is None:
        raise ValidationError(f"{cond.kind} condition needs the vertex degree")
    return int(degree)


def _projection_rows(pair: ProjectionPair) -> np.ndarray:
    d = pair.dimension
    A = np.zeros((d, 2 * d))
    for s in range(d):
        c = pair.C[:, s]
        if pair.nu[s] < 0:
            A[s, :d] = c
        else:
            A[s, d:] = c
    return A


def _static_rows(cond: VertexCondition, d: int) -> np.ndarray | None:
    """Rows that do not depend on the spectral parameter, unnormalized."""
    if isinstance(cond, Dirichlet):
        return np.hstack([np.eye(d), np.zeros((d, d))])
    if isinstance(cond, Neumann):
        return np.hstack([np.zeros((d, d)), np.eye(d)])
    if isinstance(cond, (Kirchhoff, GeneralizedKirchhoff)):
        rho = np.ones(d) if isinstance(cond, Kirchhoff) else np.asarray(cond.rho)
        A = np.zeros((d, 2 * d))
        for j in range(d - 1):
            A[j, j], A[j, j + 1] = 1.0, -1.0
        A[d - 1, d:] = rho
        return A
    if isinstance(cond, ProjectionDN):
        return _projection_rows(cond.pair)
    return None


def _threshold_pair(matrix: ScatteringMatrixFn) -> ProjectionPair:
    return threshold_projection(matrix.threshold(), matrix.snap_tol)


def analytic_rows(cond: VertexCondition, z, eps: float, degree: int | None = None) -> np.ndarray:
    """Condition rows for an array of ``z = sqrt(mu)`` without any normalization.

    The entries are analytic in ``z`` which is what determinant-based root
    finding needs.  Returns shape ``z.shape + (d, 2d)``.
    """
    z = np.asarray(z, dtype=complex)
    d = _degree(cond, degree)
    static = _static_rows(cond, d)
    if static is None and isinstance(cond, ScatteringGC):
        if eps == 0:
            static = _projection_rows(_threshold_pair(cond.matrix))
        else:
            T = cond.matrix.at_k(eps * z)
            I = np.eye(d)
            zz = z[..., None, None]
            return np.concatenate([-zz * (I - T), 1j * (I + T)], axis=-1)
    if static is None:
        raise ValidationError(f"unsupported condition {cond!r}")
    return np.broadcast_to(static.astype(complex), z.shape + static.shape).copy()


def _eigenframe_rows(T: np.ndarray, z: complex) -> np.ndarray | None:
    """Rows in the real orthogonal eigenframe of a unitary symmetric ``T``."""
    d = T.shape[0]
    if not check_unitary_symmetric(T, 1e-8).passed:
        return None
    Ts = (T + T.T) / 2
    _, O = np.linalg.eigh(Ts.real + _FRAME_SPLIT * Ts.imag)
    D = O.T @ Ts @ O
    if np.linalg.norm(D - np.diag(np.diag(D)), 2) > 1e-8:
        return None
    half = np.angle(np.diag(D)) / 2
    A = np.empty((d, 2 * d), dtype=complex)
    A[:, :d] = (z * np.sin(half))[:, None] * O.T
    A[:, d:] = np.cos(half)[:, None] * O.T
    return A


def condition_rows(
    cond: VertexCondition,
    mu: complex,
    eps: float = 0.0,
    *,
    degree: int | None = None,
) -> np.ndarray:
    """Row-normalized ``d x 2d`` matrix ``[A_val | A_der]`` of the condition at ``mu``.

    For a scattering condition with ``eps > 0`` the rows
    ``i(I+T) zeta' - sqrt(mu)(I-T) zeta = 0`` are, whenever ``T`` is unitary and
    symmetric, rewritten in the eigenframe of ``T`` (an invertible row
    operation) so that they stay regular as ``mu -> 0``.  With ``eps = 0`` the
    threshold projection form is used; the same form is used at ``mu = 0``.
    """
    if eps < 0:
        raise ValidationError("eps must be non-negative")
    d = _degree(cond, degree)
    z = complex(sqrt_branch(mu))
    A = None
    if isinstance(cond, ScatteringGC) and eps > 0:
        if z == 0:
            A = _projection_rows(_threshold_pair(cond.matrix)).astype(complex)
        else:
            T = cond.matrix.at_k(eps * z)
            A = _eigenframe_rows(T, z)
            if A is None:
                A = np.hstack([-z * (np.eye(d) - T), 1j * (np.eye(d) + T)])
    if A is None:
        A = analytic_rows(cond, np.asarray(z), eps, d).astype(complex)
    norms = np.linalg.norm(A, axis=1)
    sv = np.linalg.svd(A, compute_uv=False)
    if np.any(norms == 0) or sv[-1] <= _RANK_RTOL * max(sv[0], 1.0):
        raise RankDeficiencyError(f"{cond.kind} condition rows are rank deficient at mu={mu}")
    return A / norms[:, None]


def scattering_matrix_of_condition(
    cond: VertexCondition,
    mu: complex,
    eps: float = 0.0,
    *,
    degree: int | None = None,
) -> np.ndarray:
    """Scattering matrix of a star whose centre carries ``cond``.

    Incident wave ``e^{-i z t}`` on edge ``p``, outgoing ``beta_j e^{i z t}``;
    entry ``[p, j]`` is ``beta_j``.
    """
    z = complex(sqrt_branch(mu))
    A = condition_rows(cond, mu, eps, degree=degree)
    d = A.shape[0]
    Av, Ad = A[:, :d], A[:, d:]
    lhs = Av + 1j * z * Ad
    sv = np.linalg.svd(lhs, compute_uv=False)
    if sv[-1] <= _RANK_RTOL * max(sv[0], 1.0):
        raise RankDeficiencyError(f"star scattering problem is singular at mu={mu}")
    B = -np.linalg.solve(lhs, Av - 1j * z * Ad)
    return B.T


# ------------------------------------------------------------ serialization


_SIMPLE = {"dirichlet": Dirichlet, "neumann": Neumann, "kirchhoff": Kirchhoff}


def condition_from_spec(spec: Any) -> VertexCondition:
    """Build a condition from its JSON form (or pass a condition through)."""
    if isinstance(spec, VertexCondition):
        return spec
    if isinstance(spec, str):
        spec = {"type": spec}
    if not isinstance(spec, Mapping) or "type" not in spec:
        raise ValidationError(f"bad condition description {spec!r}")
    kind = str(spec["type"]).lower()
    if kind in _SIMPLE:
        return _SIMPLE[kind]()
    if kind == "generalized_kirchhoff":
        return GeneralizedKirchhoff(tuple(spec["rho"]))
    if kind == "projection":
        return ProjectionDN(ProjectionPair.from_projection(spec["P"], tol=spec.get("tol", 1e-8)))
    if kind == "scattering":
        lambda0 = float(spec.get("lambda0", 0.0))
        lambda1 = float(spec.get("lambda1", math.inf))
        if "T" in spec:
            T = _parse_complex_matrix(spec["T"], "T")
            rep = check_unitary_symmetric(T, float(spec.get("tol", 1e-8)))
            if not rep.passed:
                raise ValidationError(
                    f"inline scattering matrix is not unitary/symmetric "
                    f"(defects {rep.unitarity_defect:.2e}, {rep.symmetry_defect:.2e})"
                )
            return ScatteringGC(ScatteringMatrixFn.constant(T, lambda0, lambda1))
        if "table" in spec:
            tab = spec["table"]
            Ts = [_parse_complex_matrix(T, "T table entry") for T in tab["T"]]
            fn = ScatteringMatrixFn.from_table(
                tab["lambda"], Ts, lambda0,
                None if "lambda1" not in spec else lambda1,
                order=int(spec.get("order", 3)),
                tol=float(spec.get("tol", 1e-2)),
                snap_tol=float(spec.get("snap_tol", SNAP_TOL_FD)),
            )
            return ScatteringGC(fn)
        if "model1d" in spec:
            from .model_1d import Potential1D, scattering_matrix_fn

            return ScatteringGC(scattering_matrix_fn(Potential1D.from_spec(spec["model1d"])))
        raise ValidationError("scattering condition needs 'T', 'table' or 'model1d'")
    raise ValidationError(f"unknown condition type {spec['type']!r}")


def condition_to_spec(cond: VertexCondition) -> dict:
    if isinstance(cond, (Dirichlet, Neumann, Kirchhoff)):
        return {"type": cond.kind}
    if isinstance(cond, GeneralizedKirchhoff):
        return {"type": cond.kind, "rho": list(cond.rho)}
    if isinstance(cond, ProjectionDN):
        return {"type": cond.kind, "P": cond.pair.P.tolist()}
    if isinstance(cond, ScatteringGC):
        fn = cond.matrix
        if fn.source is None:
            raise ValidationError("scattering condition built from a bare callable cannot be serialized")
        out: dict = {"type": cond.kind, "lambda0": fn.lambda0}
        if math.isfinite(fn.lambda1):
            out["lambda1"] = fn.lambda1
        out.update(fn.source)
        return out
    raise ValidationError(f"cannot serialize {cond!r}")
