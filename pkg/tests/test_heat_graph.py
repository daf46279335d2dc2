from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from thinfiber import vertex_conditions as vc
from thinfiber.errors import ValidationError
from thinfiber.graph_core import build_graph, star_graph
from thinfiber.heat_graph import decay_rate, edge_weights, heat_solve, weighted_mass


def interval(left="dirichlet", right="dirichlet"):
    return build_graph(
        {
            "vertices": ["a", "b"],
            "edges": [{"id": "e", "vertices": ["a", "b"], "length": 1.0}],
            "conditions": {"a": left, "b": right},
        }
    )


@pytest.mark.parametrize(
    "ends, mode",
    [("dirichlet", lambda t: np.sin(np.pi * t)), ("neumann", lambda t: np.cos(np.pi * t))],
)
def test_interval_single_mode(ends, mode):
    traj = heat_solve(interval(ends, ends), lambda eid, t: mode(t), 0.1, 1e-3, 1e-3)
    final = traj.states[-1]
    t = final.grids["e"]
    exact = math.exp(-(math.pi**2) * 0.1) * mode(t)
    # second order in h and dtau
    assert np.max(np.abs(final.values["e"] - exact)) < 1e-5


def test_interval_second_order_in_space():
    errs = []
    for h in (0.05, 0.025):
        traj = heat_solve(interval(), lambda eid, t: np.sin(np.pi * t), 0.05, 1e-4, h)
        st_ = traj.states[-1]
        errs.append(np.max(np.abs(st_.values["e"] - math.exp(-(math.pi**2) * 0.05) * np.sin(np.pi * st_.grids["e"]))))
    assert errs[0] / errs[1] == pytest.approx(4.0, rel=0.1)


def test_decay_rate_of_first_dirichlet_mode():
    traj = heat_solve(
        interval(), lambda eid, t: np.sin(np.pi * t) + 0.3 * np.sin(3 * np.pi * t), 1.0, 1e-3, 5e-3,
        sample_times=np.linspace(0.0, 1.0, 21),
    )
    fit = decay_rate(traj)
    assert not fit.low_signal
    assert fit.rate == pytest.approx(math.pi**2, rel=1e-3)


def test_edge_weights_sources():
    g = star_graph(3, [1.0, 1.0, 2.0], center=vc.GeneralizedKirchhoff((1.0, 2.0, 3.0)), ends=vc.Neumann())
    assert edge_weights(g) == {"e1": 1.0, "e2": 2.0, "e3": 3.0}
    assert edge_weights(g, {"c": [5.0, 5.0, 5.0]}) == {"e1": 5.0, "e2": 5.0, "e3": 5.0}
    with pytest.raises(ValidationError):
        edge_weights(g, {"c": [1.0, 2.0]})
    with pytest.raises(ValidationError):
        edge_weights(g, {"c": [1.0, -2.0, 1.0]})
    with pytest.raises(ValidationError):
        edge_weights(g, {"v1": [1.0]})


def test_inconsistent_bridge_weights():
    g = build_graph(
        {
            "vertices": ["p", "q", "a", "b", "c", "d"],
            "edges": [
                {"id": "bridge", "vertices": ["p", "q"], "length": 1.0},
                {"id": "pa", "vertices": ["p", "a"], "length": 1.0},
                {"id": "pb", "vertices": ["p", "b"], "length": 1.0},
                {"id": "qc", "vertices": ["q", "c"], "length": 1.0},
                {"id": "qd", "vertices": ["q", "d"], "length": 1.0},
            ],
            "conditions": {
                "p": {"type": "generalized_kirchhoff", "rho": [2.0, 1.0, 1.0]},
                "q": "kirchhoff",
                "a": "neumann", "b": "neumann", "c": "neumann", "d": "neumann",
            },
        }
    )
    with pytest.raises(ValidationError, match="inconsistent"):
        edge_weights(g)


def test_heat_rejects_unsupported_graphs():
    g = star_graph(3, [1.0, math.inf, 1.0], center=vc.Kirchhoff(), ends=[vc.Neumann(), None, vc.Neumann()])
    with pytest.raises(ValidationError, match="compact"):
        heat_solve(g, lambda eid, t: np.ones_like(t), 0.1, 0.01, 0.1)
    g = star_graph(3, [1.0] * 3, center=vc.Dirichlet(), ends=vc.Neumann())
    with pytest.raises(ValidationError):
        heat_solve(g, lambda eid, t: np.ones_like(t), 0.1, 0.01, 0.1)
    with pytest.raises(ValidationError):
        heat_solve(interval(), lambda eid, t: t, 0.105, 0.01, 0.1)


@settings(max_examples=20, deadline=None)
@given(
    rho=st.lists(st.floats(0.1, 10.0), min_size=2, max_size=5),
    seed=st.integers(0, 2**31 - 1),
)
def test_weighted_mass_is_conserved(rho, seed):
    rng = np.random.default_rng(seed)
    d = len(rho)
    lengths = rng.uniform(0.5, 2.0, d)
    g = star_graph(d, lengths, center=vc.GeneralizedKirchhoff(tuple(rho)), ends=vc.Neumann())
    amp = rng.normal(size=d)
    traj = heat_solve(
        g, lambda eid, t: amp[int(eid[1:]) - 1] * np.cos(3 * t) + 1.0, 0.2, 0.01, 0.05,
        sample_times=[0.0, 0.1, 0.2],
    )
    masses = np.array([weighted_mass(s, traj.weights) for s in traj.states])
    assert np.max(np.abs(masses - masses[0])) <= 1e-11 * max(1.0, float(np.sum(np.abs(masses))))


def test_neumann_graph_relaxes_to_weighted_mean():
    rho = (1.0, 3.0)
    g = star_graph(2, [1.0, 1.0], center=vc.GeneralizedKirchhoff(rho), ends=vc.Neumann())
    traj = heat_solve(g, lambda eid, t: np.full_like(t, 1.0 if eid == "e1" else 0.0), 10.0, 0.01, 0.02)
    m = traj.lumped_mass
    mean = traj.node_values[0] @ m / m.sum()
    # continuum weighted mean is 1/4; the junction node takes its value from e1
    assert mean == pytest.approx(0.25, abs=0.02)
    for w in traj.states[-1].values.values():
        assert np.allclose(w, mean, atol=1e-8)
