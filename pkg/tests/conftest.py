import numpy as np
import pytest

from protobft import numeric
from protobft.softpool import KernelSpec


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_params(rng, input_dim=5, proto_shape=(4, 4), num_classes=3, scale=1.0):
    p = numeric.init_params(input_dim, proto_shape, num_classes, rng)
    return p.replace_tensors([t * scale for t in p.tensors()])


def max_relative_error(a, b, floor=1e-6):
    a, b = np.asarray(a), np.asarray(b)
    return float(np.max(np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)))


SPEC2 = KernelSpec(2, 2)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
