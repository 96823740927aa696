import pytest

from zswapsim.generate import GeneratorSpec, generate
from zswapsim.sizes import PAGE_SIZE

# Reference workload: 10 apps of 1024 pages, memory for 35% of the footprint.
REFERENCE = dict(apps=10, pages_per_app=1024, relaunches=6, hot_similarity=0.7, reuse=0.98,
                 consecutive_p2=0.8, seed=42)
MEMORY_FRACTION = 0.35

_results = []


def record(criterion, ok, detail=""):
    """Remember an acceptance verdict; printed in the terminal summary."""
    _results.append((criterion, ok, detail))
    return ok


def pytest_terminal_summary(terminalreporter):
    if not _results:
        return
    terminalreporter.section("acceptance criteria")
    for criterion, ok, detail in sorted(_results, key=lambda r: r[0]):
        terminalreporter.write_line(f"criterion {criterion}: {'PASS' if ok else 'FAIL'}  {detail}")


def memory_for(spec, fraction=MEMORY_FRACTION):
    total = sum(spec.footprints())
    return int(total * fraction) * PAGE_SIZE


@pytest.fixture(scope="session")
def reference_spec():
    return GeneratorSpec(**REFERENCE)


@pytest.fixture(scope="session")
def reference_trace(reference_spec):
    return generate(reference_spec)


@pytest.fixture(scope="session")
def small_trace():
    return generate(GeneratorSpec(apps=3, pages_per_app=256, relaunches=5, seed=3))
