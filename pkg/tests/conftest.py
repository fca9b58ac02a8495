import numpy as np

from fairmech.dist import Tabulated, TruncatedExponential, Uniform


def random_distribution(rng: np.random.Generator):
    """A random regular distribution of one of the shipped kinds."""
    kind = rng.integers(3)
    lo = float(rng.uniform(-1.0, 0.5))
    width = float(rng.uniform(0.5, 2.0))
    if kind == 0:
        return Uniform(lo, lo + width)
    if kind == 1:
        return TruncatedExponential(float(rng.uniform(0.2, 3.0)), lo, lo + width)
    # increasing density keeps the tabulated law regular
    frac = float(rng.uniform(0.3, 0.7))
    c = frac * float(rng.uniform(0.3, 0.9))
    return Tabulated((lo, lo + frac * width, lo + width), (0.0, c, 1.0))


ACCEPTANCE_LINES: dict[int, str] = {}


def record_criterion(number: int, name: str, passed: bool, detail: str) -> None:
    line = f"criterion {number} [{'PASS' if passed else 'FAIL'}] {name}: {detail}"
    ACCEPTANCE_LINES[number] = line
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for number in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[number])
