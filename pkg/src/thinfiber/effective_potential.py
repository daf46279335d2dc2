"""Forward scattering for half-line matrix Schrodinger operators.

The problem is ``-psi'' + V(t) psi = (lam - lam0) psi`` on ``t >= 0`` with
``psi(0) = 0`` and ``V`` Hermitian and negligible beyond a radius ``R``.
Solutions ``Psi`` with ``Psi(0) = 0, Psi'(0) = I`` are propagated by a
fourth-order Magnus scheme, then matched to free waves at ``R``:
``Psi = exp(-ikt) A + exp(ikt) B`` and ``S = B A^-1``.  This lets a candidate
potential be checked against a junction's scattering matrix and its
eigenvalues below the threshold.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy.linalg import expm

from .errors import ResonanceError, ValidationError

HERMITIAN_TOL = 1e-10
_GAUSS = (0.5 - math.sqrt(3) / 6, 0.5 + math.sqrt(3) / 6)


@dataclass(frozen=True, eq=False)
class MatrixPotential:
    """Hermitian ``d x d`` potential on ``[0, R]``, zero beyond ``R``.

    ``sampler`` maps an array of ``t`` to an ``(n, d, d)`` array.  ``breaks``
    lists points where ``V`` may be non-smooth; integration steps never
    straddle them.
    """

    dimension: int
    sampler: Callable[[np.ndarray], np.ndarray]
    radius: float
    breaks: tuple = ()
    tail_tol: float = 1e-8
    label: str = ""
    grid: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if self.dimension < 1:
            raise ValidationError("dimension must be at least 1")
        if not (math.isfinite(self.radius) and self.radius > 0):
            raise ValidationError("support radius must be positive and finite")
        brk = sorted({0.0, float(self.radius), *(float(b) for b in self.breaks if 0 < b < self.radius)})
        object.__setattr__(self, "breaks", tuple(brk))
        probe = self.grid if self.grid is not None else np.linspace(0.0, self.radius, 201)
        probe = np.union1d(probe, np.asarray(brk))
        V = self(probe)
        herm = np.max(np.abs(V - np.conj(np.swapaxes(V, 1, 2))))
        scale = max(1.0, float(np.max(np.abs(V))))
        if herm > HERMITIAN_TOL * scale:
            raise ValidationError(f"potential is not Hermitian (defect {herm:.2e})")
        tail = float(np.linalg.norm(self(np.array([self.radius]))[0], 2))
        if tail > self.tail_tol:
            raise ValidationError(f"|V(R)| = {tail:.2e} exceeds tail tolerance {self.tail_tol:g}")

    def __call__(self, t) -> np.ndarray:
        t = np.atleast_1d(np.asarray(t, dtype=float))
        V = np.asarray(self.sampler(t), dtype=complex).reshape(t.size, self.dimension, self.dimension)
        return np.where((t > self.radius)[:, None, None], 0.0, V)

    @property
    def is_real(self) -> bool:
        probe = np.linspace(0.0, self.radius, 101)
        return bool(np.max(np.abs(self(probe).imag)) == 0.0)

    def max_norm(self) -> float:
        probe = np.union1d(np.linspace(0.0, self.radius, 401), np.asarray(self.breaks))
        return float(np.max(np.linalg.norm(self(probe), 2, axis=(1, 2))))

    def min_eigenvalue(self) -> float:
        probe = np.union1d(np.linspace(0.0, self.radius, 401), np.asarray(self.breaks))
        mids = (probe[1:] + probe[:-1]) / 2
        return float(np.min(np.linalg.eigvalsh(self(np.union1d(probe, mids)))))

    def conjugated(self, U: np.ndarray) -> "MatrixPotential":
        """``U^T V U`` for a real orthogonal ``U``."""
        U = np.asarray(U, dtype=float)
        f = self.sampler
        return MatrixPotential(
            self.dimension, lambda t: U.T @ f(t) @ U, self.radius, self.breaks[1:-1], self.tail_tol,
            f"{self.label}^U", self.grid,
        )

    @classmethod
    def zero(cls, d: int, radius: float = 1.0) -> "MatrixPotential":
        return cls(int(d), lambda t: np.zeros((np.size(t), d, d)), radius, label="zero")

    @classmethod
    def piecewise_constant(cls, breaks: Sequence[float], values: Sequence) -> "MatrixPotential":
        """``V = values[i]`` on ``[breaks[i], breaks[i+1])``; ``breaks[0] = 0``."""
        b = np.asarray(breaks, dtype=float)
        vals = [np.atleast_2d(np.asarray(v, dtype=complex)) for v in values]
        if b.ndim != 1 or b.size != len(vals) + 1 or b[0] != 0 or np.any(np.diff(b) <= 0):
            raise ValidationError("breaks must start at 0, increase, and number len(values)+1")
        d = vals[0].shape[0]
        if any(v.shape != (d, d) for v in vals):
            raise ValidationError("all pieces need the same square shape")
        table = np.array(vals + [np.zeros((d, d))])

        def sampler(t):
            return table[np.searchsorted(b, t, side="right") - 1]

        return cls(d, sampler, float(b[-1]), tuple(b[1:-1]), label="piecewise")

    @classmethod
    def from_samples(cls, t: Sequence[float], V: np.ndarray, tail_tol: float = 1e-8) -> "MatrixPotential":
        """Linear interpolation between samples ``V[i] = V(t[i])``; ``R = t[-1]``."""
        t = np.asarray(t, dtype=float)
        V = np.asarray(V, dtype=complex)
        if t.ndim != 1 or t.size < 2 or t[0] != 0 or np.any(np.diff(t) <= 0):
            raise ValidationError("sample grid must start at 0 and increase strictly")
        if V.ndim != 3 or V.shape[0] != t.size or V.shape[1] != V.shape[2]:
            raise ValidationError("samples must have shape (n, d, d)")
        d = V.shape[1]
        flat = V.reshape(t.size, -1)

        def sampler(s):
            re = np.stack([np.interp(s, t, flat[:, j].real) for j in range(d * d)], axis=-1)
            im = np.stack([np.interp(s, t, flat[:, j].imag) for j in range(d * d)], axis=-1)
            return (re + 1j * im).reshape(np.size(s), d, d)

        return cls(d, sampler, float(t[-1]), tuple(t[1:-1]), tail_tol, "samples", t)

    @classmethod
    def load(cls, path: str | Path, tail_tol: float = 1e-8) -> "MatrixPotential":
        """CSV rows ``t, re V11, im V11, re V12, ...`` (row-major) or a JSON spec."""
        path = Path(path)
        if path.suffix.lower() == ".json":
            return cls.from_spec(json.loads(path.read_text()))
        rows = []
        with path.open(newline="") as fh:
            for row in csv.reader(fh):
                if not row or row[0].lstrip().startswith("#"):
                    continue
                try:
                    rows.append([float(x) for x in row])
                except ValueError:
                    if rows:
                        raise ValidationError(f"non-numeric row in {path}: {row}") from None
                    continue  # header
        if not rows:
            raise ValidationError(f"{path} holds no samples")
        data = np.array(rows)
        d = int(round(math.sqrt((data.shape[1] - 1) / 2)))
        if data.shape[1] != 1 + 2 * d * d or d < 1:
            raise ValidationError("CSV needs 1 + 2 d^2 columns")
        V = (data[:, 1::2] + 1j * data[:, 2::2]).reshape(-1, d, d)
        return cls.from_samples(data[:, 0], V, tail_tol)

    @classmethod
    def from_spec(cls, spec: dict) -> "MatrixPotential":
        if spec.get("thinfiber_schema", 1) != 1:
            raise ValidationError("unsupported thinfiber_schema")
        if "pieces" in spec:
            pieces = spec["pieces"]
            breaks = [0.0] + [float(p["to"]) for p in pieces]
            return cls.piecewise_constant(breaks, [_matrix(p["V"]) for p in pieces])
        if "zero" in spec:
            return cls.zero(int(spec["zero"]), float(spec.get("radius", 1.0)))
        if "samples" in spec:
            s = spec["samples"]
            return cls.from_samples(s["t"], np.array([_matrix(v) for v in s["V"]]), spec.get("tail_tol", 1e-8))
        raise ValidationError("potential spec needs 'pieces', 'samples' or 'zero'")


def _matrix(x) -> np.ndarray:
    """Real or ``{"re": ..., "im": ...}`` nested lists; scalars become 1x1."""
    if isinstance(x, dict):
        return np.atleast_2d(np.asarray(x["re"], float) + 1j * np.asarray(x.get("im", 0.0), float))
    return np.atleast_2d(np.asarray(x, dtype=complex))


def _steps(V: MatrixPotential, lam_rel: float, max_step: float | None) -> tuple[np.ndarray, np.ndarray]:
    if max_step is None:
        max_step = min(1e-3, 0.1 / math.sqrt(V.max_norm() + abs(lam_rel) + 1e-300))
    left, width = [], []
    b = V.breaks
    for a, c in zip(b[:-1], b[1:]):
        n = max(1, math.ceil((c - a) / max_step - 1e-9))
        left.append(a + (c - a) * np.arange(n) / n)
        width.append(np.full(n, (c - a) / n))
    return np.concatenate(left), np.concatenate(width)


def propagate(V: MatrixPotential, lam_rel: complex, max_step: float | None = None) -> tuple[np.ndarray, np.ndarray]:
    """``(Psi(R), Psi'(R))`` for ``-Psi'' + V Psi = lam_rel Psi``, ``Psi(0)=0, Psi'(0)=I``.

    Fourth-order Magnus with two Gauss points per step; exact for
    piecewise-constant ``V`` whose jumps sit on ``breaks``.
    """
    d = V.dimension
    t0, h = _steps(V, abs(lam_rel), max_step)
    I = np.eye(d)
    A = []
    for c in _GAUSS:
        Vt = V(t0 + c * h)
        blk = np.zeros((t0.size, 2 * d, 2 * d), dtype=complex)
        blk[:, :d, d:] = I
        blk[:, d:, :d] = Vt - lam_rel * I
        A.append(blk)
    A1, A2 = A
    comm = A2 @ A1 - A1 @ A2
    omega = (h / 2)[:, None, None] * (A1 + A2) + (math.sqrt(3) / 12) * (h**2)[:, None, None] * comm
    # runs of identical steps (piecewise-constant V) collapse to exp(n * omega)
    flat = omega.reshape(omega.shape[0], -1)
    start = np.flatnonzero(np.r_[True, np.any(flat[1:] != flat[:-1], axis=1)])
    runs = np.diff(np.r_[start, omega.shape[0]])
    E = expm(omega[start] * runs[:, None, None])
    Y = np.vstack([np.zeros((d, d)), I]).astype(complex)
    for k in range(E.shape[0]):
        Y = E[k] @ Y
        # keep columns O(1) so decaying/growing pieces do not overflow
        Y /= max(np.max(np.abs(Y)), 1e-300)
    return Y[:d], Y[d:]


def forward_scattering_matrix(
    V: MatrixPotential, lam0: float, lam: float, *, max_step: float | None = None, cond_floor: float = 1e-12
) -> np.ndarray:
    """Half-line scattering matrix at ``lam > lam0``."""
    if not lam > lam0:
        raise ValidationError("scattering needs lam > lam0")
    k = math.sqrt(lam - lam0)
    R = V.radius
    P, dP = propagate(V, lam - lam0, max_step)
    A = np.exp(1j * k * R) * (1j * k * P - dP)
    B = np.exp(-1j * k * R) * (1j * k * P + dP)
    s = np.linalg.svd(A, compute_uv=False)
    if s[-1] <= cond_floor * s[0]:
        raise ResonanceError(f"matching system singular at lam={lam:g} (sigma ratio {s[-1] / s[0]:.1e})")
    return np.linalg.solve(A.T, B.T).T


def _bound_data(V: MatrixPotential, lam0: float, lam: float, max_step: float | None):
    """Scaled ``(X, Q)``: ``X = Psi' + kappa Psi`` and the Hermitian ``Q = (Psi' - kappa Psi)^H X``.

    ``Q = Psi'^H Psi' - kappa^2 Psi^H Psi`` is Hermitian because the
    Wronskian ``Psi^H Psi' - Psi'^H Psi`` vanishes at ``t = 0``.  Column
    scaling is a congruence, so the inertia of ``Q`` is unchanged.
    """
    kappa = math.sqrt(lam0 - lam)
    P, dP = propagate(V, lam - lam0, max_step)
    scale = np.sqrt(np.sum(np.abs(P) ** 2 + np.abs(dP) ** 2 / (1 + kappa**2), axis=0))
    P, dP = P / scale, dP / scale
    X = (dP + kappa * P) / (1 + kappa)
    Y = (dP - kappa * P) / (1 + kappa)
    Q = Y.conj().T @ X
    return X, (Q + Q.conj().T) / 2


@dataclass(frozen=True)
class BoundStates:
    energies: np.ndarray  # with multiplicity, ascending
    multiplicities: tuple
    floor_hit: bool
    lam_min: float


def bound_states(
    V: MatrixPotential,
    lam0: float,
    lam_min: float,
    *,
    scan_points: int = 400,
    tol: float = 1e-13,
    max_step: float | None = None,
) -> BoundStates:
    """Eigenvalues in ``[lam_min, lam0)``, where ``det(Psi'(R) + kappa Psi(R)) = 0``.

    The number of negative eigenvalues of ``Q`` jumps by the multiplicity at
    each bound state; jumps found on a scan are bisected to ``tol``.  Jumps
    where ``X`` stays regular come from ``Psi' - kappa Psi`` and are dropped.
    ``floor_hit`` flags a floor above ``lam0 + min V``, below which no state
    can lie.
    """
    if not lam_min < lam0:
        raise ValidationError("search floor must lie below lam0")
    top = lam0 - 1e-10 * max(1.0, abs(lam0 - lam_min))
    # uniform in kappa: states crowd toward the threshold in lam
    kap = np.linspace(math.sqrt(lam0 - lam_min), math.sqrt(lam0 - top), scan_points)
    lams = lam0 - kap**2

    def n_neg(l):
        return int(np.sum(np.linalg.eigvalsh(_bound_data(V, lam0, l, max_step)[1]) < 0))

    counts = [n_neg(l) for l in lams]

    def locate(a, b, na, nb, out):
        if na == nb:
            return
        if b - a <= tol * max(1.0, abs(a)):
            out.append((0.5 * (a + b), abs(nb - na)))
            return
        m = 0.5 * (a + b)
        nm = n_neg(m)
        locate(a, m, na, nm, out)
        locate(m, b, nm, nb, out)

    found: list = []
    for i in range(len(lams) - 1):
        locate(lams[i], lams[i + 1], counts[i], counts[i + 1], found)
    energies, mults = [], []
    for r, jump in found:
        sv = np.linalg.svd(_bound_data(V, lam0, r, max_step)[0], compute_uv=False)
        m = int(np.sum(sv < 1e-6))
        if m == 0:
            continue
        m = max(m, jump)
        energies.extend([r] * m)
        mults.append(m)
    floor_hit = lam_min > lam0 + V.min_eigenvalue()
    return BoundStates(np.array(energies), tuple(mults), bool(floor_hit), float(lam_min))


@dataclass(frozen=True)
class ComparisonReport:
    lambdas: np.ndarray
    defects: np.ndarray  # spectral-norm ||S - T|| per grid point
    max_defect: float
    energies: np.ndarray
    target_energies: np.ndarray
    eigen_mismatch: np.ndarray  # |lam_j - target_j| for paired eigenvalues
    count_mismatch: int
    passed: bool

    def to_dict(self) -> dict:
        return {
            "max_defect": self.max_defect,
            "count_mismatch": self.count_mismatch,
            "max_eigen_mismatch": float(np.max(self.eigen_mismatch, initial=0.0)),
            "passed": self.passed,
        }


def compare_to_target(
    V: MatrixPotential,
    lam0: float,
    lambdas: Sequence[float],
    target: Callable[[float], np.ndarray] | Sequence,
    target_energies: Sequence[float] = (),
    *,
    lam_min: float | None = None,
    s_tol: float = 1e-6,
    e_tol: float = 1e-8,
) -> ComparisonReport:
    """Defects of ``S`` against ``T`` on a grid and of the bound states."""
    lambdas = np.asarray(lambdas, dtype=float)
    if callable(target):
        Ts = [np.asarray(target(l), dtype=complex) for l in lambdas]
    else:
        Ts = [np.asarray(t, dtype=complex) for t in target]
    if len(Ts) != lambdas.size:
        raise ValidationError("target needs one matrix per grid point")
    d = V.dimension
    if any(T.shape != (d, d) for T in Ts):
        raise ValidationError(f"target matrices must be {d}x{d}")
    defects = np.array([np.linalg.norm(forward_scattering_matrix(V, lam0, l) - T, 2) for l, T in zip(lambdas, Ts)])
    tgt = np.sort(np.asarray(target_energies, dtype=float))
    if lam_min is None:
        lam_min = lam0 + min(V.min_eigenvalue(), 0.0) - 1.0
    bs = bound_states(V, lam0, lam_min)
    n = min(bs.energies.size, tgt.size)
    mism = np.abs(bs.energies[:n] - tgt[:n])
    count = abs(bs.energies.size - tgt.size)
    mx = float(np.max(defects, initial=0.0))
    passed = mx <= s_tol and count == 0 and bool(np.all(mism <= e_tol))
    return ComparisonReport(lambdas, defects, mx, bs.energies, tgt, mism, count, passed)

