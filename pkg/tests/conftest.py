import pytest

from feedsim.behavior import UtilityParams
from feedsim.distributions import TruncatedGumbel
from feedsim.simulator import SimConfig, simulate_panel

from oracles import NARROW_TASTE


@pytest.fixture(scope="session")
def default_panel():
    return simulate_panel(SimConfig(n_users=20_000, seed=5))


@pytest.fixture(scope="session")
def narrow_panel():
    return simulate_panel(SimConfig(n_users=40_000, seed=6, taste_dist=NARROW_TASTE))


@pytest.fixture(scope="session")
def msm_panel():
    """Panel the moment model describes exactly: Gumbel taste, no shock, negligible sampling noise."""
    cfg = SimConfig(n_users=100_000, seed=7, taste_dist=TruncatedGumbel(0.06, 0.015),
                    params=UtilityParams(mu=0.0), posts_per_view_unit=1e5)
    return simulate_panel(cfg)


ACCEPTANCE = pytest.StashKey[list]()


@pytest.fixture
def record(request):
    """Collect one PASS/FAIL line per acceptance criterion for the terminal summary."""
    lines = request.config.stash.setdefault(ACCEPTANCE, [])

    def add(number, ok, detail):
        lines.append((number, f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"))
        return ok

    return add


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
