import pytest

from trapscope.collection import calibrate_undercut, make_device_stack, undercut_occlusion
from trapscope.config import RunConfig
from trapscope.trap import IonSpecies, RfDrive, TrapLayout, radial_frequencies, solve_rf_null

NOMINAL_TARGET = 0.0091      # device collection-efficiency target (fraction)


@pytest.fixture(scope="session")
def nominal_layout():
    return TrapLayout()


@pytest.fixture(scope="session")
def nominal_drive():
    return RfDrive()


@pytest.fixture(scope="session")
def calcium():
    return IonSpecies()


@pytest.fixture(scope="session")
def nominal_null(nominal_layout, nominal_drive):
    return solve_rf_null(nominal_layout, nominal_drive)


@pytest.fixture(scope="session")
def nominal_solution(nominal_layout, nominal_drive, calcium, nominal_null):
    return radial_frequencies(nominal_layout, nominal_drive, calcium, nominal_null)


@pytest.fixture(scope="session")
def calibrated_undercut():
    """Undercut half-width bisected to the 0.91% device target at h = 125."""
    seed_stack = make_device_stack(40.0, 100.0, 125.0, occlusion_x=1.0)
    return calibrate_undercut(seed_stack, NOMINAL_TARGET, vary="half_width")


@pytest.fixture(scope="session")
def device_stack(calibrated_undercut):
    return make_device_stack(40.0, 100.0, 125.0,
                             undercut_half_width=calibrated_undercut.half_width)


@pytest.fixture(scope="session")
def device_occlusion(device_stack):
    return undercut_occlusion(device_stack)


@pytest.fixture(scope="session")
def default_config():
    return RunConfig()
