import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from fiap.network import NetworkState, simulate_trajectory, step_network
from fiap.spec import builtin_instance

from conftest import gl_spec


def test_gl_two_nodes_both_activate():
    out = step_network(gl_spec(2), NetworkState([2, 3]), np.array([0.5, 0.5]))
    assert out.activated.tolist() == [True, True]
    assert out.next_state.x.tolist() == [1, 1]


def test_zero_state_never_activates(gl4):
    out = step_network(gl4, NetworkState([0, 0, 0, 0]), np.zeros(4))
    assert not out.activated.any()
    assert out.next_state.x.tolist() == [0, 0, 0, 0]


def test_tie_does_not_activate():
    spec = gl_spec(2, sigma=(0.0, 0.5))
    out = step_network(spec, NetworkState([1, 1]), np.array([0.5, 0.49]))
    assert out.activated.tolist() == [False, True]


def test_gordon_newell_hand_enumeration():
    spec = builtin_instance("gordon-newell", {"K": 3, "sigma": [0.0, 1.0]})
    out = step_network(spec, NetworkState([1, 0, 2]), np.array([0.1, 0.1, 0.1]))
    # node 0 sends one unit to node 1, node 2 sends one unit to node 0
    assert out.activated.tolist() == [True, False, True]
    assert out.next_state.x.tolist() == [1, 1, 1]
    assert out.next_state.x.sum() == 3


def test_dimension_mismatch(gl4):
    with pytest.raises(ValueError, match="length K"):
        step_network(gl4, NetworkState([1, 2]), np.zeros(2))


states = st.lists(st.integers(0, 20), min_size=4, max_size=4)
uniforms = st.lists(st.floats(0, 1, exclude_max=True), min_size=4, max_size=4)


@given(states, uniforms)
def test_aggregation_identity_and_gl_reset(x, u):
    spec = builtin_instance("galves-locherbach", {"K": 4, "sigma": [0.0, 0.2, 0.6, 0.9], "weights": 2})
    out = step_network(spec, NetworkState(x), np.array(u))
    assert np.array_equal(out.next_state.x, out.endogenous + out.arrivals)
    assert np.all(out.endogenous[out.activated] == 0)
    assert not np.any(out.activated[np.array(x) == 0])


@given(st.lists(st.integers(0, 20), min_size=3, max_size=3), st.lists(st.floats(0, 1, exclude_max=True), min_size=3, max_size=3))
def test_gordon_newell_conserves_mass(x, u):
    spec = builtin_instance("gordon-newell", {"K": 3, "sigma": [0.0, 0.4, 0.9]})
    out = step_network(spec, NetworkState(x), np.array(u))
    assert out.next_state.x.sum() == sum(x)


def test_trajectory_horizon_one_is_one_step(gl4):
    from fiap.streams import derive_stream

    init = NetworkState([1, 2, 3, 0])
    traj = simulate_trajectory(gl4, init, 1, seed=17)
    u = derive_stream(17, 0, 0, "activation").random(4)
    assert np.array_equal(traj[0].next_state.x, step_network(gl4, init, u).next_state.x)


def test_trajectory_is_reproducible(gl4):
    a = simulate_trajectory(gl4, NetworkState([3, 1, 4, 1]), 20, seed=5)
    b = simulate_trajectory(gl4, NetworkState([3, 1, 4, 1]), 20, seed=5)
    assert all(np.array_equal(p.next_state.x, q.next_state.x) for p, q in zip(a, b))


@pytest.mark.parametrize("seed", [0, 1, 2, 99])
def test_gordon_newell_trajectory_conserves(seed):
    spec = builtin_instance("gordon-newell", {"K": 4, "sigma": [0.0, 0.3, 0.6]})
    traj = simulate_trajectory(spec, NetworkState([2, 0, 5, 1]), 100, seed)
    assert {int(o.next_state.x.sum()) for o in traj} == {8}
