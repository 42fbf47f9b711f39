import numpy as np
import pytest

from nfl_backreach import experiments as ex
from nfl_backreach.network import Layer, NeuralNetwork


def random_network(rng, sizes, scale=1.0):
    layers = []
    for i, (n_in, n_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        act = "identity" if i == len(sizes) - 2 else "relu"
        layers.append(Layer(scale * rng.standard_normal((n_out, n_in)), scale * rng.standard_normal(n_out), act))
    return NeuralNetwork(layers)


def zero_policy(n_x, n_u):
    return NeuralNetwork([Layer(np.zeros((n_u, n_x)), np.zeros(n_u), "identity")])


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def di():
    return ex.double_integrator_system()


@pytest.fixture(scope="session")
def gr():
    return ex.ground_robot_system()


@pytest.fixture(scope="session")
def di_policy():
    return ex.load_policy("lqr")


@pytest.fixture(scope="session")
def gr_policy():
    return ex.load_policy("eq19")


@pytest.fixture(scope="session")
def faulty_policy():
    return ex.load_policy("faulty")
