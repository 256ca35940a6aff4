import numpy as np
import pytest

import reebflow as rf


@pytest.fixture(scope="session")
def quadratic_field():
    return rf.make_hamiltonian("quadratic")


@pytest.fixture(scope="session")
def quartic_field():
    return rf.make_hamiltonian("quartic_well", c=0.5)


@pytest.fixture(scope="session")
def double_well_field():
    return rf.make_hamiltonian("double_well")


@pytest.fixture(scope="session")
def quadratic_graph(quadratic_field):
    return rf.build_graph(quadratic_field)


@pytest.fixture(scope="session")
def quartic_graph(quartic_field):
    return rf.build_graph(quartic_field)


@pytest.fixture(scope="session")
def double_well_graph(double_well_field):
    return rf.build_graph(double_well_field)


@pytest.fixture(scope="session")
def all_graphs(quadratic_graph, quartic_graph, double_well_graph):
    return {
        "quadratic": quadratic_graph,
        "quartic_well": quartic_graph,
        "double_well": double_well_graph,
    }


def make_grid(graph, n=160):
    return rf.GridFunction2D.from_callable(
        graph.box, n, n, lambda p: np.zeros(p.shape[:-1])
    )
