import sys

import numpy as np
import pytest

from omsearch.features import MultiModalFeature, normalize_feature


def random_feature(rng, d, presence=(True, True, True)):
    vecs = rng.standard_normal((3, d))
    return normalize_feature(MultiModalFeature(vecs, presence))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda l: int(l.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
