import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from artifact.averaged_hamiltonian import build_table  # noqa: E402
from artifact.graph_solver import assemble_solution  # noqa: E402
from artifact.hamiltonian_model import CostParams, HamiltonianSpec, default_config  # noqa: E402

ZERO_COST = CostParams(f0=0.0, amplitude=0.0)


@pytest.fixture(scope="session")
def spec():
    return HamiltonianSpec()


@pytest.fixture(scope="session")
def config(spec):
    return default_config(spec)


@pytest.fixture(scope="session")
def zero_config(spec):
    return default_config(spec, f_params=ZERO_COST)


@pytest.fixture(scope="session")
def tables(spec, config):
    return [build_table(spec, config, b) for b in (1, 2, 3)]


@pytest.fixture(scope="session")
def zero_tables(spec, zero_config):
    return [build_table(spec, zero_config, b) for b in (1, 2, 3)]


@pytest.fixture(scope="session")
def graph(tables):
    return assemble_solution(tables, (0.0, 0.0, 0.0))


# --- acceptance summary: one PASS/FAIL line per criterion at the end of the run ---

_ACCEPTANCE_KEY = pytest.StashKey[dict]()


def pytest_configure(config):
    config.stash[_ACCEPTANCE_KEY] = {}


@pytest.fixture
def record_acceptance(request):
    results = request.config.stash[_ACCEPTANCE_KEY]

    def record(number, passed, detail):
        line = f"acceptance {number}: {'PASS' if passed else 'FAIL'} | {detail}"
        results[number] = line
        print(line)

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    results = config.stash.get(_ACCEPTANCE_KEY, {})
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(results):
        terminalreporter.write_line(results[number])
