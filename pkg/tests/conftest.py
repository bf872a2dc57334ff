import numpy as np
import pytest

from relaxbound.network import Conv2d, InputDomain, example_network, random_network
from relaxbound.relaxation import interval_propagate

_ACCEPTANCE = {}


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def example():
    net = example_network()
    domain = InputDomain.box([-1.0, -1.0], [1.0, 1.0])
    return net, domain, interval_propagate(net, domain)


def small_problem(rng, sizes=(3, 4, 4, 1)):
    """Random scalar-output net, a box around the origin and its interval bounds."""
    net = random_network(rng, list(sizes))
    domain = InputDomain.box(-np.ones(sizes[0]), np.ones(sizes[0]))
    return net, domain, interval_propagate(net, domain)


def random_conv(rng, max_c=3, max_hw=8):
    c_in, c_out = rng.integers(1, max_c + 1, size=2)
    h, w = rng.integers(2, max_hw + 1, size=2)
    k1, k2 = rng.integers(1, min(h, w, 3) + 1, size=2)
    stride = int(rng.integers(1, 3))
    padding = int(rng.integers(0, 2))
    return Conv2d(rng.normal(size=(c_out, c_in, k1, k2)), rng.normal(size=c_out), (c_in, h, w), stride, padding)


def relu_trace(net, x0):
    """Exact primal point ``(x, z)`` induced by an input, with ``z`` the active indicator."""
    trace = net.trace(x0)
    x = [np.asarray(x0, float)] + [post for _, post in trace[:-1]]
    z = [None] + [(pre > 0).astype(float) for pre, _ in trace[:-1]]
    return x, z


def pytest_runtest_logreport(report):
    criterion = getattr(report, "criterion", None)
    if criterion is None:
        for key, value in report.user_properties:
            if key == "criterion":
                criterion = value
    if criterion is None:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        _ACCEPTANCE[criterion] = report.outcome


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for criterion in sorted(_ACCEPTANCE):
        outcome = _ACCEPTANCE[criterion]
        terminalreporter.write_line(f"{'PASS' if outcome == 'passed' else 'FAIL'}  {criterion}")
