import numpy as np
import pytest

from hreig.assembly import ComplianceModel, assemble
from hreig.mesh import initial_lshape, uniform_refine
from hreig.spaces import build_displacement_space, build_stress_space


@pytest.fixture(scope="session")
def lshape():
    return initial_lshape()


@pytest.fixture(scope="session")
def lshape2(lshape):
    """L-shape after two uniform bisection rounds (24 triangles)."""
    return uniform_refine(lshape, 2)


@pytest.fixture(scope="session")
def lshape2_spaces(lshape2):
    return build_stress_space(lshape2, 3), build_displacement_space(lshape2, 3)


@pytest.fixture(scope="session")
def stokes():
    return ComplianceModel.stokes(1.0)


@pytest.fixture(scope="session")
def elasticity():
    return ComplianceModel.elasticity(1.0, 1.0)


@pytest.fixture(scope="session")
def lshape2_system(lshape2_spaces, stokes):
    S, U = lshape2_spaces
    return assemble(S, U, stokes)


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)
