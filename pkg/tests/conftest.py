import numpy as np
import pytest
import torch

from diffir.model import ModelConfig


@pytest.fixture
def toy_cfg():
    return ModelConfig.toy("inpainting")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def central_diff(f, x: torch.Tensor, direction: torch.Tensor, h: float = 1e-6) -> float:
    """Directional derivative of scalar f at x by central differences."""
    with torch.no_grad():
        orig = x.detach().clone()
        x.copy_(orig + h * direction)
        fp = float(f())
        x.copy_(orig - h * direction)
        fm = float(f())
        x.copy_(orig)
    return (fp - fm) / (2 * h)


def rel_err(a: float, b: float) -> float:
    return abs(a - b) / max(abs(a), abs(b), 1e-12)


@pytest.fixture(scope="session")
def acceptance(request):
    """Collects one (criterion, passed, detail) line per acceptance check."""
    lines = request.config.stash.setdefault(_ACCEPTANCE_KEY, [])

    def report(n: int, name: str, passed: bool, detail: str = "") -> None:
        line = f"criterion {n:2d} [{'PASS' if passed else 'FAIL'}] {name}" + (f" -- {detail}" if detail else "")
        lines.append(line)
        print(line)
        assert passed, line

    return report


_ACCEPTANCE_KEY = pytest.StashKey[list]()


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_ACCEPTANCE_KEY, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
