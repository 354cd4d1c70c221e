import sys
import time
from pathlib import Path
from types import SimpleNamespace

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from smartroute.ml import ForestParams  # noqa: E402
from smartroute.simulator import exploration_scenario, run_scenario, train_models  # noqa: E402

# forest size used wherever a realistic trained router is needed; big enough for
# stable rankings, small enough to keep the suite quick
TEST_FOREST = ForestParams(n_trees=50, seed=0)


@pytest.fixture(scope="session")
def trained():
    """Exploration log plus forest and downtime models fitted on it (built once)."""
    start = time.perf_counter()
    cfg = exploration_scenario()
    log = run_scenario(cfg).log
    forest, downtime = train_models(log, forest_params=TEST_FOREST)
    return SimpleNamespace(cfg=cfg, log=log, forest=forest, downtime=downtime,
                           seconds=time.perf_counter() - start)


def pytest_terminal_summary(terminalreporter):
    """Repeat the acceptance verdicts at the end of the run, one line each."""
    acceptance = sys.modules.get("test_acceptance")
    results = getattr(acceptance, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for line in results:
        terminalreporter.write_line(line)
