import pytest

from nelsontunnel.config import SimulationConfig

# Compact geometry for fast end-to-end tests: same physics (V0/E0 = 2,
# k0 = kappa = 1), narrower packet and box.
SMALL = dict(x_min=-300.0, x_max=300.0, x_mean=-150.0, delta_x=10.0, dx=0.1, dt=0.01)


def small_config(**overrides):
    kw = dict(SMALL, d=2.0, n_paths=500, master_seed=7)
    kw.update(overrides)
    return SimulationConfig(**kw)


@pytest.fixture
def small():
    return small_config


_REPORT = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_REPORT] = []


@pytest.fixture(scope="session")
def acceptance_report(request):
    """Append ``(label, verdict, detail)``; verdict is True, False or None (informational)."""
    return request.config.stash[_REPORT]


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_REPORT, [])
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for label, verdict, detail in lines:
        tag = {True: "PASS", False: "FAIL", None: "INFO"}[verdict]
        terminalreporter.write_line(f"[{tag}] {label}: {detail}")
