import numpy as np
import pytest

from preffuse.trajectory import Trajectory


def make_traj(states, actions=None, traj_id="t", env_tag="custom", frames=None):
    states = np.atleast_2d(np.asarray(states, dtype=float))
    if states.shape[0] == 1:
        states = states.T
    if actions is None:
        actions = np.zeros((states.shape[0], 1))
    actions = np.atleast_2d(np.asarray(actions, dtype=float))
    if actions.shape[0] == 1 and states.shape[0] != 1:
        actions = actions.T
    return Trajectory(id=traj_id, states=states, actions=actions,
                      env_tag=env_tag, frames=frames)


@pytest.fixture
def traj_factory():
    return make_traj


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
