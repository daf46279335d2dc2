from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from thinfiber import vertex_conditions as vc
from thinfiber.errors import NumericalError, SnapError, ValidationError


def random_orthogonal(rng, d):
    Q, R = np.linalg.qr(rng.standard_normal((d, d)))
    return Q * np.sign(np.diag(R))


def random_unitary_symmetric(rng, d):
    U = random_orthogonal(rng, d)
    return U @ np.diag(np.exp(1j * rng.uniform(0, 2 * np.pi, d))) @ U.T


def test_sqrt_branch_upper_half_plane():
    assert vc.sqrt_branch(4.0) == 2.0
    assert vc.sqrt_branch(-4.0) == 2j
    z = vc.sqrt_branch(np.array([1 - 1e-3j, -1 - 1e-3j, 3j]))
    assert np.all(z.imag >= 0)
    assert np.allclose(z**2, [1 - 1e-3j, -1 - 1e-3j, 3j])


def test_check_unitary_symmetric():
    rep = vc.check_unitary_symmetric(np.array([[0, 1], [1, 0]]))
    assert rep.passed and rep.unitarity_defect == 0 and rep.symmetry_defect == 0
    rep = vc.check_unitary_symmetric(np.array([[0, 1], [-1, 0]]))
    assert not rep.passed and rep.symmetry_defect == pytest.approx(2.0)
    with pytest.raises(ValidationError):
        vc.check_unitary_symmetric(np.ones(3))


@pytest.mark.parametrize("d", [2, 3, 5])
def test_static_condition_scattering_matrices(d):
    # closed forms for a star with d half-lines
    J = np.ones((d, d))
    I = np.eye(d)
    for mu in (0.7, 3.0, 11.0 + 2j):
        assert np.allclose(vc.scattering_matrix_of_condition(vc.Dirichlet(), mu, degree=d), -I, atol=1e-13)
        assert np.allclose(vc.scattering_matrix_of_condition(vc.Neumann(), mu, degree=d), I, atol=1e-13)
        assert np.allclose(vc.scattering_matrix_of_condition(vc.Kirchhoff(), mu, degree=d), 2 * J / d - I, atol=1e-13)


def test_generalized_kirchhoff_scattering_matrix():
    rho = np.array([0.5, 2.0, 1.3])
    T = vc.scattering_matrix_of_condition(vc.GeneralizedKirchhoff(tuple(rho)), 5.0)
    # incident on p: continuity gives the same outgoing amplitude on every other edge
    expected = 2 * rho[:, None] / rho.sum() * np.ones((1, 3)) - np.eye(3)
    assert np.allclose(T, expected, atol=1e-13)


def test_projection_condition_threshold_form():
    rng = np.random.default_rng(3)
    C = random_orthogonal(rng, 4)
    pair = vc.ProjectionPair.from_rotation(C, [-1, 1, -1, 1])
    assert pair.rank == 2
    assert np.allclose(pair.P @ pair.P, pair.P) and np.allclose(pair.P, pair.P.T)
    T = vc.scattering_matrix_of_condition(vc.ProjectionDN(pair), 2.0)
    assert np.allclose(T, np.eye(4) - 2 * pair.P, atol=1e-12)
    back = vc.ProjectionPair.from_projection(pair.P)
    assert np.allclose(back.P, pair.P)


def test_projection_pair_validation():
    with pytest.raises(ValidationError):
        vc.ProjectionPair.from_rotation(np.array([[1.0, 1.0], [0.0, 1.0]]), [1, -1])
    with pytest.raises(ValidationError):
        vc.ProjectionPair.from_rotation(np.eye(2), [1, 0])
    with pytest.raises(ValidationError):
        vc.ProjectionPair.from_projection([[1.0, 0.5], [0.5, 0.0]])


def test_threshold_projection_kirchhoff():
    d = 3
    T0 = 2 * np.ones((d, d)) / d - np.eye(d)
    pair = vc.threshold_projection(T0)
    assert pair.rank == d - 1
    assert np.allclose(pair.P_perp, np.ones((d, d)) / d)


def test_threshold_projection_rejects():
    with pytest.raises(SnapError):
        vc.threshold_projection(np.array([[0.0, 1.0], [-1.0, 0.0]]))  # not symmetric
    with pytest.raises(SnapError):
        vc.threshold_projection(1j * np.eye(2))  # imaginary
    with pytest.raises(SnapError):
        vc.threshold_projection(np.exp(0.4j) * np.eye(2))  # eigenvalues off +-1
    # small perturbation within tolerance snaps
    pair = vc.threshold_projection(np.diag([1.0, -1.0]) + 1e-9, tol=1e-6)
    assert pair.rank == 1 and pair.snap_residual < 1e-6


def test_condition_rows_shapes_and_normalization():
    A = vc.condition_rows(vc.Dirichlet(), 2.0, degree=3)
    assert np.allclose(A, np.hstack([np.eye(3), np.zeros((3, 3))]))
    A = vc.condition_rows(vc.Kirchhoff(), 2.0, degree=3)
    assert np.allclose(np.linalg.norm(A, axis=1), 1.0)
    # constant (1,1,1) with zero derivative satisfies Kirchhoff
    assert np.allclose(A @ np.r_[np.ones(3), np.zeros(3)], 0)
    assert np.allclose(A @ np.r_[np.zeros(3), [1.0, -2.0, 1.0]], 0)
    with pytest.raises(ValidationError):
        vc.condition_rows(vc.Kirchhoff(), 2.0)
    with pytest.raises(ValidationError):
        vc.condition_rows(vc.GeneralizedKirchhoff((1.0, 2.0)), 2.0, degree=3)


def test_scattering_condition_reproduces_its_matrix():
    rng = np.random.default_rng(11)
    T = random_unitary_symmetric(rng, 3)
    cond = vc.ScatteringGC(vc.ScatteringMatrixFn.constant(T))
    for mu in (0.3, 4.0, 17.0):
        assert np.allclose(vc.scattering_matrix_of_condition(cond, mu, 0.1), T, atol=1e-12)


def test_scattering_condition_at_eps_zero_uses_threshold():
    T0 = 2 * np.ones((2, 2)) / 2 - np.eye(2)  # Kirchhoff on two edges
    cond = vc.ScatteringGC(vc.ScatteringMatrixFn.constant(T0))
    A = vc.condition_rows(cond, 5.0, 0.0)
    # zeta continuous and zeta'_1 + zeta'_2 = 0
    assert np.allclose(A @ np.r_[1.0, 1.0, 0.0, 0.0], 0)
    assert np.allclose(A @ np.r_[0.0, 0.0, 1.0, -1.0], 0)


def test_eigenframe_rows_regular_near_threshold():
    # T(0) = -I would make the plain rows vanish at mu = 0; the eigenframe form stays full rank
    cond = vc.ScatteringGC(vc.ScatteringMatrixFn.constant(-np.eye(2)))
    A = vc.condition_rows(cond, 1e-10, 0.1)
    assert np.linalg.matrix_rank(A) == 2


def test_table_scattering_matrix():
    lam0 = 1.0
    lams = np.linspace(1.1, 3.0, 12)
    Ts = [np.array([[0, np.exp(1j * l)], [np.exp(1j * l), 0]]) for l in lams]
    fn = vc.ScatteringMatrixFn.from_table(lams, Ts, lam0)
    assert np.allclose(fn.at_lambda(2.0), [[0, np.exp(2j)], [np.exp(2j), 0]], atol=1e-3)
    with pytest.raises(NumericalError):
        fn.at_k(0.5 + 0.1j)
    with pytest.raises(ValidationError):
        fn.at_lambda(10.0)
    with pytest.raises(ValidationError):
        vc.ScatteringMatrixFn.from_table(lams, [2 * T for T in Ts], lam0)


def test_condition_spec_round_trip():
    rng = np.random.default_rng(5)
    conds = [
        vc.Dirichlet(),
        vc.Neumann(),
        vc.Kirchhoff(),
        vc.GeneralizedKirchhoff((1.0, 2.0)),
        vc.ProjectionDN(vc.ProjectionPair.from_rotation(random_orthogonal(rng, 3), [-1, 1, 1])),
        vc.ScatteringGC(vc.ScatteringMatrixFn.constant(random_unitary_symmetric(rng, 2))),
        vc.condition_from_spec({"type": "scattering", "model1d": {"constant": 4.0}}),
    ]
    for c in conds:
        spec = vc.condition_to_spec(c)
        c2 = vc.condition_from_spec(spec)
        assert c2.kind == c.kind
        d = c.dimension or 2
        for mu in (1.5, 6.0):
            assert np.allclose(
                vc.scattering_matrix_of_condition(c2, mu, 0.05, degree=d),
                vc.scattering_matrix_of_condition(c, mu, 0.05, degree=d),
                atol=1e-10,
            )


def test_condition_from_spec_errors():
    with pytest.raises(ValidationError):
        vc.condition_from_spec({"type": "bogus"})
    with pytest.raises(ValidationError):
        vc.condition_from_spec({"type": "scattering", "T": [[2, 0], [0, 1]]})
    with pytest.raises(ValidationError):
        vc.condition_from_spec({"type": "generalized_kirchhoff", "rho": [1, -1]})
    with pytest.raises(ValidationError):
        vc.condition_from_spec(42)


@settings(max_examples=60, deadline=None)
@given(
    d=st.integers(1, 5),
    seed=st.integers(0, 2**31 - 1),
    mu=st.floats(0.05, 80.0),
    kind=st.sampled_from(["projection", "scattering", "kirchhoff"]),
)
def test_star_scattering_unitary_symmetric(d, seed, mu, kind):
    rng = np.random.default_rng(seed)
    if kind == "projection":
        cond = vc.ProjectionDN(vc.ProjectionPair.from_rotation(random_orthogonal(rng, d), rng.choice([-1.0, 1.0], d)))
    elif kind == "scattering":
        cond = vc.ScatteringGC(vc.ScatteringMatrixFn.constant(random_unitary_symmetric(rng, d)))
    else:
        cond = vc.Kirchhoff()
    T = vc.scattering_matrix_of_condition(cond, mu, 0.1, degree=d)
    rep = vc.check_unitary_symmetric(T, 1e-10)
    assert rep.passed, rep


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), d=st.integers(2, 5))
def test_generalized_kirchhoff_flux_normalized_unitary(seed, d):
    rng = np.random.default_rng(seed)
    rho = rng.uniform(0.1, 10.0, d)
    T = vc.scattering_matrix_of_condition(vc.GeneralizedKirchhoff(tuple(rho)), float(rng.uniform(0.1, 50)))
    r = np.sqrt(rho)
    assert vc.check_unitary_symmetric(T * r[None, :] / r[:, None], 1e-10).passed
