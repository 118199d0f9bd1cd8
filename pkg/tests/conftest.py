import numpy as np
import pytest

from nltomo.constitutive import ConductivityModel
from nltomo.mesh import generate_disk, generate_unit_square


@pytest.fixture(scope="session")
def square8():
    return generate_unit_square(8)


@pytest.fixture(scope="session")
def square16():
    return generate_unit_square(16)


@pytest.fixture(scope="session")
def square32():
    return generate_unit_square(32)


@pytest.fixture(scope="session")
def square64():
    return generate_unit_square(64)


@pytest.fixture(scope="session")
def disk6():
    return generate_disk(1.0, 6)


@pytest.fixture(scope="session")
def linear1():
    return ConductivityModel.linear(1.0)


@pytest.fixture(scope="session")
def linear2():
    return ConductivityModel.linear(2.0)


@pytest.fixture(scope="session")
def poly11():
    return ConductivityModel.polynomial((1.0, 1.0))


@pytest.fixture(scope="session")
def mono_p3():
    return ConductivityModel.monomial(1.0, 3.0)


@pytest.fixture(scope="session")
def mono_p4():
    return ConductivityModel.monomial(1.0, 4.0)


def x_trace(mesh):
    """Zero-mean trace of the x coordinate (the unit-gradient excitation)."""
    from nltomo.forward import project_zero_mean

    return project_zero_mean(mesh, mesh.nodes[mesh.boundary_nodes][:, 0])


def y_trace(mesh):
    from nltomo.forward import project_zero_mean

    return project_zero_mean(mesh, mesh.nodes[mesh.boundary_nodes][:, 1])


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(20240811)
