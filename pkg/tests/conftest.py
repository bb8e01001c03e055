import numpy as np
import pytest

from wirepinn import fermi, oracle, pinn, surrogate
from wirepinn.mesh import DeviceConfig, assemble_fv_coefficients, build_device_mesh


@pytest.fixture(scope="session")
def default_mesh():
    return build_device_mesh()


@pytest.fixture(scope="session")
def default_coeffs(default_mesh):
    return assemble_fv_coefficients(default_mesh)


@pytest.fixture(scope="session")
def params():
    return fermi.default_params()


@pytest.fixture(scope="session")
def oracle_sweep(default_mesh, params):
    """The canonical 101-snapshot gate ramp (shared, read-only)."""
    return oracle.ramp_sweep(default_mesh, params, 0.0, 0.75, 0.0075)


@pytest.fixture(scope="session")
def lr_surrogate(oracle_sweep, default_mesh):
    return surrogate.fit(oracle_sweep.snapshots[:40], default_mesh.fingerprint())


@pytest.fixture(scope="session")
def problem(default_mesh, lr_surrogate, params):
    return pinn.PinnProblem(mesh=default_mesh, surrogate=lr_surrogate, params=params)


# A coarse device for tests that train or solve many times.
@pytest.fixture(scope="session")
def small_mesh():
    return build_device_mesh(DeviceConfig(nx=17, ny=8))


@pytest.fixture(scope="session")
def small_sweep(small_mesh, params):
    return oracle.ramp_sweep(small_mesh, params, 0.0, 0.75, 0.0075)


@pytest.fixture(scope="session")
def small_surrogate(small_sweep, small_mesh):
    return surrogate.fit(small_sweep.snapshots[:40], small_mesh.fingerprint())


@pytest.fixture(scope="session")
def small_problem(small_mesh, small_surrogate, params):
    return pinn.PinnProblem(mesh=small_mesh, surrogate=small_surrogate, params=params)


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)
