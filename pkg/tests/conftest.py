import numpy as np
import pytest

from ppgm import numerics as nx
from ppgm.graphs import SyntheticConfig, generate_synthetic_dataset


@pytest.fixture(scope="session")
def small_cls_dataset():
    cfg = SyntheticConfig(graphs=24, pairs=(60, 20, 20), min_nodes=6, max_nodes=10)
    return generate_synthetic_dataset(cfg, seed=3)


@pytest.fixture(scope="session")
def small_reg_dataset():
    cfg = SyntheticConfig(graphs=16, pairs=(30, 10, 10), min_nodes=4, max_nodes=7, task="reg")
    return generate_synthetic_dataset(cfg, seed=5)


@pytest.fixture
def tensor_param():
    def make(shape, rng, name):
        return nx.Tensor(rng.standard_normal(shape), requires_grad=True, name=name)
    return make


# --- acceptance summary --------------------------------------------------------

_CRITERIA = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    report = (yield).get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or (report.when != "call" and report.passed):
        return
    detail = dict(item.user_properties).get("detail", "")
    if report.failed and not detail:
        detail = str(call.excinfo.value).splitlines()[0] if call.excinfo else "error"
    _CRITERIA[mark.args[0]] = ("PASS" if report.passed else "FAIL", item.name, detail)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        verdict, name, detail = _CRITERIA[n]
        terminalreporter.write_line(f"criterion {n:2d} {verdict}  {name}  {detail}")
