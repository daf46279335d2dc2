"""Finite differences for thin planar waveguides.

Domains are unions of axis-aligned rectangles discretized by square cells of
side ``h`` (cell-centred unknowns, 5-point Laplacian).  Wall conditions enter
through ghost values: Dirichlet ``-u``, Neumann ``u`` and Robin
``u (1 - alpha h/2)/(1 + alpha h/2)``.  Channels have unit width and end in
faces closed by a modal Dirichlet-to-Neumann relation built from the
discrete transverse modes.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import scipy.sparse as sp
from scipy.linalg import eigh_tridiagonal
from scipy.sparse.linalg import splu

from .errors import ExtrapolationError, ResonanceError, ValidationError
from . import vertex_conditions as vc

_DIRECTIONS = {"left": (-1, 0), "right": (1, 0), "bottom": (0, -1), "top": (0, 1)}


# --------------------------------------------------------------- cross section


@dataclass(frozen=True)
class CrossSectionProblem:
    """Interval ``(0, width)`` with a wall condition on both ends."""

    bc: str = "dirichlet"
    h: float = 1 / 64
    alpha: float = 0.0
    width: float = 1.0

    def __post_init__(self):
        bc = self.bc.lower()
        if bc not in ("dirichlet", "neumann", "robin"):
            raise ValidationError(f"unknown wall condition {self.bc!r}")
        if bc == "robin" and not self.alpha > 0:
            raise ValidationError("Robin walls need alpha > 0")
        if not self.h > 0:
            raise ValidationError("grid step must be positive")
        object.__setattr__(self, "bc", bc)

    @property
    def cells(self) -> int:
        n = self.width / self.h
        if abs(n - round(n)) > 1e-9 * n:
            raise ValidationError(f"width {self.width} is not a multiple of h={self.h}")
        return int(round(n))

    @property
    def ghost(self) -> float:
        """Ghost value factor: the value beyond a wall face is ``ghost * u``."""
        if self.bc == "dirichlet":
            return -1.0
        if self.bc == "neumann":
            return 1.0
        r = self.alpha * self.h / 2
        return (1 - r) / (1 + r)


@dataclass(frozen=True)
class Mode:
    index: int
    eigenvalue: float
    y: np.ndarray
    phi: np.ndarray


def _cross_section_all(problem: CrossSectionProblem):
    n = problem.cells
    h = problem.h
    d = np.full(n, 2.0 / h**2)
    d[0] -= problem.ghost / h**2
    d[-1] -= problem.ghost / h**2
    if n == 1:
        return np.array([d[0]]), np.ones((1, 1)) / math.sqrt(h)
    w, V = eigh_tridiagonal(d, np.full(n - 1, -1.0 / h**2))
    V = V / math.sqrt(h)
    signs = np.sign(V.sum(axis=0))
    signs[signs == 0] = 1.0
    V = V * signs
    return w, V


def cross_section_modes(problem: CrossSectionProblem, n_max: int) -> list[Mode]:
    """Lowest ``n_max + 1`` modes, ``h``-normalized with a positive ground state."""
    n = problem.cells
    if n < 10 * (n_max + 1):
        raise ValidationError(
            f"{n} cells cannot resolve mode {n_max} (need 10 points per half-wave)"
        )
    w, V = _cross_section_all(problem)
    y = (np.arange(n) + 0.5) * problem.h
    return [Mode(i, float(w[i]), y, V[:, i].copy()) for i in range(n_max + 1)]


def _interval_eigs(length: float, h: float, bc: str, alpha: float = 0.0) -> np.ndarray:
    return _cross_section_all(CrossSectionProblem(bc, h, alpha, length))[0]


def cylinder_spectrum_fd(
    l: float,
    eps: float,
    bc_walls: str = "dirichlet",
    bc_ends: str = "dirichlet",
    h: float = 1 / 64,
    count: int = 5,
    alpha: float = 0.0,
) -> np.ndarray:
    """Lowest eigenvalues of ``-eps^2 Delta`` on ``(0, l) x (0, eps)``.

    In the scaled variable ``y = eps * eta`` the operator separates into a
    transverse problem on ``(0, 1)`` and ``eps^2`` times a longitudinal one on
    ``(0, l)``; both use step ``h``.
    """
    if not (l > 0 and eps > 0 and count >= 1):
        raise ValidationError("l, eps and count must be positive")
    lt = _interval_eigs(1.0, h, bc_walls, alpha)
    ll = _interval_eigs(l, h, bc_ends, alpha)
    lt = lt[: count + 1]
    ll = ll[: count + 1]
    vals = np.sort((lt[:, None] + eps**2 * ll[None, :]).ravel())
    return vals[:count]


# ------------------------------------------------------------------- domains


@dataclass(frozen=True)
class Channel:
    direction: str
    offset: float
    length: float


@dataclass(frozen=True)
class JunctionDomain2D:
    """Junction rectangle with unit-width channels attached flush to its sides."""

    x: float
    y: float
    width: float
    height: float
    channels: tuple
    wall_bc: str = "dirichlet"
    alpha: float = 0.0

    def __post_init__(self):
        if not (self.width > 0 and self.height > 0):
            raise ValidationError("junction rectangle needs positive size")
        if not self.channels:
            raise ValidationError("domain needs at least one channel")
        for c in self.channels:
            if c.direction not in _DIRECTIONS:
                raise ValidationError(f"unknown channel direction {c.direction!r}")
            side = self.height if c.direction in ("left", "right") else self.width
            if c.offset < -1e-12 or c.offset + 1 > side + 1e-12:
                raise ValidationError(f"channel at offset {c.offset} does not fit the {c.direction} side")
            if not c.length > 0:
                raise ValidationError("channel length must be positive")
        CrossSectionProblem(self.wall_bc, 1.0, self.alpha if self.alpha else 1.0)

    @classmethod
    def from_spec(cls, spec: dict) -> "JunctionDomain2D":
        try:
            j = spec["junction"]
            chans = tuple(
                Channel(str(c["direction"]).lower(), float(c.get("offset", 0.0)), float(c["length"]))
                for c in spec["channels"]
            )
            bc = spec.get("wall_bc", "dirichlet")
            alpha = 0.0
            if isinstance(bc, dict):
                alpha = float(bc.get("alpha", 0.0))
                bc = bc["type"]
            return cls(float(j.get("x", 0.0)), float(j.get("y", 0.0)), float(j["width"]),
                       float(j["height"]), chans, str(bc).lower(), alpha)
        except (KeyError, TypeError) as exc:
            raise ValidationError(f"bad domain description: {exc}") from exc

    def to_spec(self) -> dict:
        bc = self.wall_bc if self.wall_bc != "robin" else {"type": "robin", "alpha": self.alpha}
        return {
            "thinfiber_schema": 1,
            "junction": {"x": self.x, "y": self.y, "width": self.width, "height": self.height},
            "channels": [{"direction": c.direction, "offset": c.offset, "length": c.length} for c in self.channels],
            "wall_bc": bc,
        }

    def with_lengths(self, length: float) -> "JunctionDomain2D":
        chans = tuple(Channel(c.direction, c.offset, length) for c in self.channels)
        return JunctionDomain2D(self.x, self.y, self.width, self.height, chans, self.wall_bc, self.alpha)

    def rectangles(self) -> list[tuple[float, float, float, float]]:
        """``(x0, y0, x1, y1)`` for the junction followed by every channel."""
        out = [(self.x, self.y, self.x + self.width, self.y + self.height)]
        for c in self.channels:
            if c.direction == "left":
                out.append((self.x - c.length, self.y + c.offset, self.x, self.y + c.offset + 1))
            elif c.direction == "right":
                x0 = self.x + self.width
                out.append((x0, self.y + c.offset, x0 + c.length, self.y + c.offset + 1))
            elif c.direction == "bottom":
                out.append((self.x + c.offset, self.y - c.length, self.x + c.offset + 1, self.y))
            else:
                y0 = self.y + self.height
                out.append((self.x + c.offset, y0, self.x + c.offset + 1, y0 + c.length))
        return out


def load_domain(path: str | Path) -> JunctionDomain2D:
    try:
        spec = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: invalid JSON ({exc})") from exc
    if spec.get("thinfiber_schema") != 1:
        raise ValidationError(f"{path}: missing or unsupported 'thinfiber_schema'")
    return JunctionDomain2D.from_spec(spec)


def _to_int(x: float, h: float, what: str) -> int:
    n = x / h
    if abs(n - round(n)) > 1e-7:
        raise ValidationError(f"{what}={x} is not aligned with the grid step h={h}")
    return int(round(n))


@dataclass
class _Grid:
    h: float
    index: np.ndarray  # (nx, ny) unknown number or -1
    n: int
    faces: list  # per channel: (cell numbers ordered by s, outward (dx, dy), t of last cell)


def _build_grid(domain: JunctionDomain2D, h: float) -> _Grid:
    rects = domain.rectangles()
    X0 = min(r[0] for r in rects)
    Y0 = min(r[1] for r in rects)
    X1 = max(r[2] for r in rects)
    Y1 = max(r[3] for r in rects)
    nx, ny = _to_int(X1 - X0, h, "domain width"), _to_int(Y1 - Y0, h, "domain height")
    mask = np.zeros((nx, ny), dtype=np.int32)
    boxes = []
    for (x0, y0, x1, y1) in rects:
        i0, i1 = _to_int(x0 - X0, h, "x"), _to_int(x1 - X0, h, "x")
        j0, j1 = _to_int(y0 - Y0, h, "y"), _to_int(y1 - Y0, h, "y")
        mask[i0:i1, j0:j1] += 1
        boxes.append((i0, i1, j0, j1))
    if mask.max() > 1:
        raise ValidationError("channels overlap each other or the junction")
    index = np.full((nx, ny), -1, dtype=np.int64)
    inside = mask > 0
    index[inside] = np.arange(int(inside.sum()))
    faces = []
    for c, (i0, i1, j0, j1) in zip(domain.channels, boxes[1:]):
        if c.direction == "right":
            cells = index[i1 - 1, j0:j1]
        elif c.direction == "left":
            cells = index[i0, j0:j1]
        elif c.direction == "top":
            cells = index[i0:i1, j1 - 1]
        else:
            cells = index[i0:i1, j0]
        if len(cells) != _to_int(1.0, h, "channel width"):
            raise ValidationError("channel width must be 1")
        faces.append((np.asarray(cells), _DIRECTIONS[c.direction], c.length - h / 2))
    return _Grid(h, index, int(inside.sum()), faces)


def _laplacian(grid: _Grid, ghost: float, skip_faces: bool = True) -> sp.csr_matrix:
    """5-point ``-Delta_h`` with wall ghosts; channel end faces left open."""
    idx = grid.index
    h2 = grid.h**2
    nx, ny = idx.shape
    face_mark = {}
    if skip_faces:
        for cells, (dx, dy), _ in grid.faces:
            for c in cells:
                face_mark[(int(c), dx, dy)] = True
    rows, cols, vals = [], [], []
    diag = np.zeros(grid.n)
    inside = idx >= 0
    for dx, dy in ((1, 0), (-1, 0), (0, 1), (0, -1)):
        nb = np.full_like(idx, -1)
        xs = slice(max(dx, 0), nx + min(dx, 0))
        xd = slice(max(-dx, 0), nx + min(-dx, 0))
        ys = slice(max(dy, 0), ny + min(dy, 0))
        yd = slice(max(-dy, 0), ny + min(-dy, 0))
        nb[xd, yd] = idx[xs, ys]
        here = idx[inside]
        there = nb[inside]
        link = there >= 0
        rows.append(here[link]); cols.append(there[link]); vals.append(np.full(link.sum(), -1.0 / h2))
        diag[here] += 1.0 / h2
        wall = here[~link]
        if face_mark:
            is_face = np.array([face_mark.get((int(c), dx, dy), False) for c in wall], dtype=bool)
            wall = wall[~is_face]
        diag[wall] -= ghost / h2
    rows.append(np.arange(grid.n)); cols.append(np.arange(grid.n)); vals.append(diag)
    return sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(grid.n, grid.n)
    )


# ---------------------------------------------------------------- scattering


@dataclass
class ScatteringResult:
    T: np.ndarray
    lam: float
    h: float
    unitarity_defect: float
    symmetry_defect: float
    residual: float
    lambda0: float
    lambda1: float
    unknowns: int
    dtn: str
    rejected: bool = False
    note: str = ""


def transverse_thresholds(domain: JunctionDomain2D, h: float) -> tuple[float, float]:
    """Discrete ``(lambda0, lambda1)`` of the channel cross-section."""
    w, _ = _cross_section_all(CrossSectionProblem(domain.wall_bc, h, domain.alpha))
    return float(w[0]), float(w[1])


def _closure(kind: str, lam_n: np.ndarray, lam: float, h: float) -> np.ndarray:
    """Ghost-to-last-cell ratios ``xi_n`` for outgoing/decaying channel modes."""
    if kind == "continuum":
        kappa = vc.sqrt_branch(lam - lam_n + 0j)
        return (1 + 0.5j * kappa * h) / (1 - 0.5j * kappa * h)
    if kind == "discrete":
        b = 1 + 0.5 * h * h * (lam_n - lam)  # xi + 1/xi = 2b
        root = np.sqrt(b * b - 1 + 0j)
        cand = np.stack([b + root, b - root])
        mag = np.abs(cand)
        pick = np.where(np.abs(mag[0] - 1) < 1e-12, np.where(cand[0].imag > 0, 0, 1), np.argmin(mag, axis=0))
        return cand[pick, np.arange(cand.shape[1])]
    raise ValidationError(f"unknown DtN closure {kind!r}")


def _kappa_eff(kind: str, xi0: complex, lam: float, lam0: float, h: float) -> complex:
    if kind == "continuum":
        return complex(vc.sqrt_branch(lam - lam0 + 0j))
    return complex(-1j * np.log(xi0) / h)


def junction_scattering_fd(
    domain: JunctionDomain2D,
    lam: float,
    h: float = 1 / 64,
    n_evanescent: int = 8,
    *,
    dtn: str = "continuum",
    residual_tol: float = 1e-6,
) -> ScatteringResult:
    """Scattering matrix of the junction at energy ``lam`` in the first band.

    Phases are referenced to the junction faces (``t = 0`` where a channel
    leaves the junction).  ``dtn="continuum"`` closes the channels with the
    continuum propagation constants and reads amplitudes against them (``T``
    differs from the discrete closure by ``O(h^2)`` per unit channel length);
    ``dtn="discrete"`` uses the exact discrete channel solutions and does not
    depend on where the channels are cut.
    """
    lam = float(lam)
    grid = _build_grid(domain, h)
    cs = CrossSectionProblem(domain.wall_bc, h, domain.alpha)
    lam_n, Phi = _cross_section_all(cs)
    lam0, lam1 = float(lam_n[0]), float(lam_n[1])
    if not lam0 < lam < lam1:
        raise ValidationError(f"lambda={lam} is outside the first band ({lam0:.6g}, {lam1:.6g})")
    keep = min(n_evanescent + 1, len(lam_n))
    xi = np.full(len(lam_n), -1.0 + 0j)
    xi[:keep] = _closure(dtn, lam_n[:keep], lam, h)
    G = (Phi * xi) @ Phi.T * h
    A = _laplacian(grid, cs.ghost).tolil().astype(complex)
    h2 = h * h
    for cells, _, _ in grid.faces:
        A[np.ix_(cells, cells)] = A[np.ix_(cells, cells)].toarray() - G / h2
    A = (A.tocsc() - lam * sp.identity(grid.n, format="csc"))
    lu = splu(A.tocsc())
    d = len(grid.faces)
    phi0 = Phi[:, 0]
    B = np.zeros((grid.n, d), dtype=complex)
    for p, (cells, _, _) in enumerate(grid.faces):
        B[cells, p] = phi0 * (1 / xi[0] - xi[0]) / h2
    U = lu.solve(B)
    resid = float(np.linalg.norm(A @ U - B) / np.linalg.norm(B))
    if not np.isfinite(resid) or resid > residual_tol:
        raise ResonanceError(f"solve residual {resid:.2e} at lambda={lam}: near a trapped mode")
    kappa = _kappa_eff(dtn, xi[0], lam, lam0, h)
    T = np.empty((d, d), dtype=complex)
    for p in range(d):
        tp = grid.faces[p][2]
        for j, (cells, _, tj) in enumerate(grid.faces):
            c = h * phi0 @ (U[cells, p] - (phi0 if j == p else 0.0))
            T[p, j] = c * np.exp(-1j * kappa * tj) * np.exp(-1j * kappa * tp)
    rep = vc.check_unitary_symmetric(T, 1.0)
    return ScatteringResult(T, lam, h, rep.unitarity_defect, rep.symmetry_defect, resid,
                            lam0, lam1, grid.n, dtn)


def scattering_sweep(
    domain: JunctionDomain2D,
    lams: Sequence[float],
    h: float = 1 / 64,
    n_evanescent: int = 8,
    *,
    dtn: str = "continuum",
    reject_factor: float = 10.0,
) -> list[ScatteringResult]:
    """Scattering over a list of energies, flagging points whose defects jump
    above ``reject_factor`` times the median of their neighbours."""
    from ._parallel import pmap

    def one(lam):
        try:
            return junction_scattering_fd(domain, lam, h, n_evanescent, dtn=dtn)
        except ResonanceError as exc:
            return ScatteringResult(np.full((len(domain.channels),) * 2, np.nan), lam, h,
                                    np.inf, np.inf, np.inf, math.nan, math.nan, 0, dtn, True, str(exc))

    out = pmap(one, list(lams))
    defects = np.array([max(r.unitarity_defect, r.symmetry_defect) for r in out])
    for i, r in enumerate(out):
        nb = [defects[j] for j in (i - 2, i - 1, i + 1, i + 2) if 0 <= j < len(out) and np.isfinite(defects[j])]
        if nb and np.isfinite(defects[i]) and defects[i] > reject_factor * max(np.median(nb), 1e-14):
            r.rejected = True
            r.note = "defect spike relative to neighbouring energies"
    return out


# ------------------------------------------------------------- threshold limit


@dataclass
class ThresholdResult:
    T0: np.ndarray
    pair: vc.ProjectionPair | None
    residual: float
    z: np.ndarray
    samples: np.ndarray
    lambda0: float
    snap_error: str = ""


def threshold_limit_T(
    domain: JunctionDomain2D,
    h: float = 1 / 64,
    order: int = 3,
    *,
    n_points: int | None = None,
    z_max: float | None = None,
    ratio: float = 0.7,
    n_evanescent: int = 8,
    snap_tol: float = vc.SNAP_TOL_FD,
    dtn: str = "continuum",
    max_residual: float = 1e-2,
    max_halvings: int = 3,
    snap: bool = True,
) -> ThresholdResult:
    """Extrapolate ``T`` to the threshold in ``z = sqrt(lambda - lambda0)`` and snap it.

    Energies are ``lambda0 + z_k^2`` with ``z_k = z_max * ratio**k``;
    ``lambda0`` is the discrete transverse threshold.  If the fit is poor the
    range is halved up to ``max_halvings`` times.
    """
    if n_points is None:
        n_points = order + 3
    if n_points < order + 2:
        raise ValidationError("threshold extrapolation needs at least order + 2 energies")
    lam0, lam1 = transverse_thresholds(domain, h)
    if z_max is None:
        z_max = min(0.5, 0.4 * math.sqrt(lam1 - lam0))
    for _ in range(max_halvings + 1):
        z = z_max * ratio ** np.arange(n_points)
        Ts = np.array([junction_scattering_fd(domain, lam0 + zz**2, h, n_evanescent, dtn=dtn).T for zz in z])
        V = np.vander(z, order + 1, increasing=True)
        flat = Ts.reshape(n_points, -1)
        coef, *_ = np.linalg.lstsq(V, flat, rcond=None)
        fit_res = float(np.max(np.abs(V @ coef - flat)))
        # compare with the extrapolation that drops the largest z
        coef2, *_ = np.linalg.lstsq(V[1:], flat[1:], rcond=None)
        residual = max(fit_res, float(np.max(np.abs(coef2[0] - coef[0]))))
        if residual <= max_residual:
            break
        z_max /= 2  # a pole near z = 0 (trapped mode below threshold) shrinks the usable range
    else:
        raise ExtrapolationError(
            f"threshold extrapolation did not converge (residual {residual:.2e} > {max_residual:g})"
        )
    d = Ts.shape[1]
    T0 = coef[0].reshape(d, d)
    pair, err = None, ""
    if snap:
        try:
            pair = vc.threshold_projection(T0, snap_tol)
        except vc.SnapError as exc:
            err = str(exc)
    return ThresholdResult(T0, pair, residual, z, Ts, lam0, err)


@dataclass(frozen=True)
class FieldSample:
    x: np.ndarray
    y: np.ndarray
    u: np.ndarray = field(repr=False)
