import pytest
import torch

from dirl.datagen import generate
from dirl.types import ModelConfig

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def f64():
    old = torch.get_default_dtype()
    torch.set_default_dtype(torch.float64)
    yield
    torch.set_default_dtype(old)


@pytest.fixture(scope="session")
def desk_cfg():
    return ModelConfig()


@pytest.fixture(scope="session")
def tiny_data():
    return generate(seed=3, count=6, size=32)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
