import numpy as np
import pytest

from voxelsam.model_runtime import StubGraphPair
from voxelsam.volume_io import Volume3D, save_volume


def pytest_configure(config):
    config.addinivalue_line(
        "markers", "acceptance(name): named acceptance criterion; prints a "
                   "PASS/FAIL/SKIP line in the terminal summary")
    config._acceptance_lines = []


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None:
        return
    name = marker.args[0]
    lines = item.config._acceptance_lines
    if rep.when == "setup" and (rep.skipped or rep.failed):
        lines.append(f"[ACCEPTANCE] {name}: " + ("SKIP" if rep.skipped else "FAIL"))
    elif rep.when == "call":
        status = "PASS" if rep.passed else ("SKIP" if rep.skipped else "FAIL")
        lines.append(f"[ACCEPTANCE] {name}: {status}")


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = getattr(config, "_acceptance_lines", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def stub_pair():
    return StubGraphPair.create()


@pytest.fixture()
def rng():
    return np.random.default_rng(20260814)


@pytest.fixture()
def small_volume(rng):
    # dims (nx, ny, nz) = (4, 5, 6); stored C-order (nz, ny, nx)
    return Volume3D.from_array(
        rng.integers(0, 255, size=(6, 5, 4), dtype=np.uint8))


@pytest.fixture()
def volume_file(tmp_path, small_volume):
    path = tmp_path / "volume.nrrd"
    save_volume(path, small_volume)
    return path
