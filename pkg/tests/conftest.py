import numpy as np
import pytest

from atmodel.bernstein import SupportBounds
from atmodel.core import ModelSpec, ParamVector, RowSet


def random_model(rng, M, p, n_series=0, n_exog=0, base="standard_normal", scale=1.0):
    spec = ModelSpec(M=M, p=p, bounds=SupportBounds(-2.0, 3.0), base=base,
                     n_series=n_series, n_exog=n_exog)
    params = ParamVector.from_flat(scale * rng.normal(size=spec.n_params), spec)
    return spec, params


def random_rows(rng, spec, n):
    lo, w = spec.bounds.lower, spec.bounds.width
    draw = lambda *shape: rng.uniform(lo - 0.3 * w, lo + 1.3 * w, size=shape)
    return RowSet(draw(n), draw(n, spec.p), rng.normal(size=(n, spec.n_exog)),
                  rng.integers(0, max(spec.n_series, 1), n))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
