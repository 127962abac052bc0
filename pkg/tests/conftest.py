import numpy as np
import pytest
from hypothesis import HealthCheck, settings
from hypothesis import strategies as st

from afprop.algebra import AlgebraShape, BlockElement

settings.register_profile(
    "default", max_examples=40, deadline=None, suppress_health_check=[HealthCheck.too_slow], derandomize=True
)
settings.load_profile("default")


shapes = st.lists(st.integers(1, 4), min_size=1, max_size=3).map(lambda d: AlgebraShape(tuple(d)))


@st.composite
def elements(draw, shape=None, self_adjoint=False):
    shape = shape or draw(shapes)
    seed = draw(st.integers(0, 2**32 - 1))
    rng = np.random.default_rng(seed)
    blocks = []
    for d in shape:
        z = rng.standard_normal((d, d)) + 1j * rng.standard_normal((d, d))
        if self_adjoint:
            z = (z + z.conj().T) / 2
        blocks.append(z)
    return BlockElement(shape, tuple(blocks))


@st.composite
def element_pairs(draw, self_adjoint=False):
    shape = draw(shapes)
    return draw(elements(shape, self_adjoint)), draw(elements(shape, self_adjoint))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# acceptance lines, printed in the terminal summary whatever the capture mode
ACCEPTANCE: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[k])
