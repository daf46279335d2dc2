from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import simpson
from scipy.optimize import brentq

from thinfiber import vertex_conditions as vc
from thinfiber.errors import ValidationError
from thinfiber.graph_core import build_graph, star_graph
from thinfiber.graph_solver import (
    EdgeSamples,
    SpectralWindow,
    basis_psi,
    eigenvalues_in_disk,
    graph_scattering_matrix,
    green_function,
    resolvent_apply,
    scattering_solution,
    secular_determinant,
)


def interval(length: float, left="dirichlet", right="dirichlet"):
    return build_graph(
        {
            "vertices": ["a", "b"],
            "edges": [{"id": "e", "vertices": ["a", "b"], "length": length}],
            "conditions": {"a": left, "b": right},
        }
    )


def spider(d: int, center=None):
    return star_graph(d, [math.inf] * d, center=center or vc.Kirchhoff())


def flat(eigs):
    out = []
    for e in eigs:
        out += [e.mu.real] * e.multiplicity
    return np.array(out)


def test_interval_dirichlet_eigenvalues():
    L = 1.7
    mus = flat(eigenvalues_in_disk(interval(L), SpectralWindow(radius=60.0)))
    n = np.arange(1, 20)
    expected = (n * np.pi / L) ** 2
    assert np.allclose(mus, expected[expected < 60], rtol=1e-9)


def test_interval_dirichlet_neumann_eigenvalues():
    mus = flat(eigenvalues_in_disk(interval(1.0, right="neumann"), SpectralWindow(radius=100.0)))
    expected = ((np.arange(6) + 0.5) * np.pi) ** 2
    assert np.allclose(mus, expected[expected < 100], rtol=1e-9)


def test_kirchhoff_star_multiplicities():
    # equal edges with Dirichlet leaves: sin z = 0 with multiplicity d-1, cos z = 0 simple
    d = 3
    g = star_graph(d, [1.0] * d, center=vc.Kirchhoff(), ends=vc.Dirichlet())
    eigs = eigenvalues_in_disk(g, SpectralWindow(radius=45.0))
    got = [(round(e.mu.real, 8), e.multiplicity) for e in eigs]
    expected = [
        (round((math.pi / 2) ** 2, 8), 1),
        (round(math.pi**2, 8), d - 1),
        (round((1.5 * math.pi) ** 2, 8), 1),
        (round((2 * math.pi) ** 2, 8), d - 1),
    ]
    assert got == expected


def test_generalized_kirchhoff_star_secular_oracle():
    # Dirichlet leaves: sum_j rho_j cot(z l_j) = 0
    rho = np.array([2.0, 1.0, 0.5])
    lengths = np.array([1.0, 1.3, 0.7])
    g = star_graph(3, lengths, center=vc.GeneralizedKirchhoff(tuple(rho)), ends=vc.Dirichlet())
    R = 40.0
    mus = flat(eigenvalues_in_disk(g, SpectralWindow(radius=R)))

    def f(z):
        return float(np.sum(rho / np.tan(z * lengths)))

    poles = np.sort(np.concatenate([np.pi * np.arange(1, 10) / l for l in lengths]))
    brackets = np.concatenate([[1e-6], poles])
    roots = []
    for lo, hi in zip(brackets[:-1], brackets[1:]):
        a, b = lo + 1e-9, hi - 1e-9
        if a < b and f(a) * f(b) < 0:
            roots.append(brentq(f, a, b, xtol=1e-14))
    expected = np.array(roots) ** 2
    assert np.allclose(mus, expected[expected < R], rtol=1e-9)


def test_determinant_vanishes_at_eigenvalue():
    g = interval(1.0)
    assert abs(secular_determinant(g, math.pi**2)) < 1e-12
    assert abs(secular_determinant(g, 12.0)) > 1e-2


def test_branch_point_cutoff():
    with pytest.raises(ValidationError):
        secular_determinant(interval(1.0), 1e-9)


def test_kirchhoff_spider_scattering():
    d = 4
    S = graph_scattering_matrix(spider(d), 2.5)
    assert np.allclose(S, 2 * np.ones((d, d)) / d - np.eye(d), atol=1e-12)


def test_scattering_solution_row_matches_matrix():
    g = star_graph(3, [math.inf, 1.0, math.inf], center=vc.Kirchhoff(), ends=vc.Neumann())
    S = graph_scattering_matrix(g, 3.1)
    sol = scattering_solution(g, 3.1, 0.0, "e1")
    assert np.allclose([sol.row["e1"], sol.row["e3"]], S[0])
    # continuity at the junction
    vals = [sol(e, 0.0, g) for e in ("e1", "e2", "e3")]
    assert np.allclose(vals, vals[0])
    with pytest.raises(ValidationError):
        scattering_solution(g, 3.1, 0.0, "e2")


def test_basis_psi_satisfies_condition():
    psi = basis_psi(vc.Kirchhoff(), 1, 4.0, degree=3)
    vals = [psi(j, 0.0) for j in range(3)]
    assert np.allclose(vals, vals[0])


def test_green_on_the_line():
    line = spider(2)
    mu = 3.0 + 0.5j
    z = vc.sqrt_branch(mu)
    G = green_function(line, mu, 0.0, ("e1", 0.7))
    t = np.linspace(0.0, 3.0, 7)
    # same edge: e^{iz|t-t0|}/(2iz); other edge sits at -t
    assert np.allclose(G("e1", t), np.exp(1j * z * np.abs(t - 0.7)) / (2j * z))
    assert np.allclose(G("e2", t), np.exp(1j * z * (t + 0.7)) / (2j * z))


def test_green_on_dirichlet_half_line():
    half = build_graph(
        {
            "vertices": ["o"],
            "edges": [{"id": "r", "vertices": ["o", None], "length": "inf"}],
            "conditions": {"o": "dirichlet"},
        }
    )
    mu = 2.0 + 1j
    z = vc.sqrt_branch(mu)
    t0 = 1.1
    t = np.array([0.0, 0.4, 2.0, 5.0])
    G = green_function(half, mu, 0.0, ("r", t0))
    expected = (np.exp(1j * z * np.abs(t - t0)) - np.exp(1j * z * (t + t0))) / (2j * z)
    assert np.allclose(G("r", t), expected)
    # jump of the derivative equals 1
    assert G.derivative("r", t0 + 1e-12) - G.derivative("r", t0 - 1e-12) == pytest.approx(1.0, abs=1e-8)


def test_green_source_must_be_interior():
    with pytest.raises(ValidationError):
        green_function(interval(1.0), 2.0 + 1j, 0.0, ("e", 1.0))


@settings(max_examples=25, deadline=None)
@given(
    s=st.floats(0.05, 0.95),
    r=st.floats(0.05, 1.95),
    mu_re=st.floats(-5.0, 30.0),
    mu_im=st.floats(0.2, 3.0),
)
def test_kirchhoff_green_reciprocity(s, r, mu_re, mu_im):
    g = star_graph(3, [1.0, 2.0, math.inf], center=vc.Kirchhoff(), ends=[vc.Dirichlet(), vc.Neumann(), None])
    mu = complex(mu_re, mu_im)
    a = green_function(g, mu, 0.0, ("e1", s))("e2", r)
    b = green_function(g, mu, 0.0, ("e2", r))("e1", s)
    assert np.allclose(a, b, rtol=1e-9, atol=1e-12)


def test_weighted_green_identity():
    rho = (2.0, 1.0, 0.5)
    g = star_graph(3, [1.0, 1.5, math.inf], center=vc.GeneralizedKirchhoff(rho), ends=[vc.Dirichlet(), vc.Neumann(), None])
    mu = 4.0 + 0.7j
    a = green_function(g, mu, 0.0, ("e1", 0.3))("e3", 0.9)
    b = green_function(g, mu, 0.0, ("e3", 0.9))("e1", 0.3)
    # rho(x) G(x, y) is symmetric: self-adjointness holds in the weighted L2
    assert np.allclose(rho[2] * a, rho[0] * b, rtol=1e-10)
    assert not np.allclose(a, b, rtol=1e-3)


def test_resolvent_matches_green_quadrature():
    g = star_graph(3, [1.0, 2.0, math.inf], center=vc.Kirchhoff(), ends=[vc.Dirichlet(), vc.Neumann(), None])
    mu = 5.0 + 1j
    t = np.linspace(0.2, 0.8, 601)
    f = np.sin(np.pi * (t - 0.2) / 0.6) ** 2
    at = {"e1": np.array([0.1, 0.5]), "e2": np.array([1.3])}
    zeta = resolvent_apply(g, mu, 0.0, {"e1": EdgeSamples(t, f)}, at=at)
    for eid, pts in at.items():
        for x, val in zip(pts, zeta[eid]):
            kern = np.array([green_function(g, mu, 0.0, ("e1", s))(eid, x) for s in t[1:-1]])
            ref = simpson(kern * f[1:-1], x=t[1:-1])
            assert val == pytest.approx(ref, rel=1e-5, abs=1e-8)


def test_resolvent_solves_the_equation():
    # (d^2/dt^2 + mu) zeta = f away from the support edges
    g = interval(math.pi)
    mu = 2.0 + 0.5j
    t = np.linspace(0.5, 2.5, 2001)
    f = np.exp(-((t - 1.5) ** 2) * 20) - np.exp(-20)
    zeta = resolvent_apply(g, mu, 0.0, {"e": EdgeSamples(t, f)})["e"]
    h = t[1] - t[0]
    lap = (zeta[2:] - 2 * zeta[1:-1] + zeta[:-2]) / h**2
    assert np.max(np.abs(lap + mu * zeta[1:-1] - f[1:-1])) < 1e-3


def test_resolvent_rejects_support_on_vertex():
    t = np.linspace(0.0, 0.5, 11)
    with pytest.raises(ValidationError):
        resolvent_apply(interval(1.0), 2.0 + 1j, 0.0, {"e": EdgeSamples(t, np.ones_like(t))})
