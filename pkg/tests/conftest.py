import pytest

from rescrnet.data import generate_synthetic_dataset

# (criterion number, "PASS"/"FAIL", detail) lines collected by test_acceptance.py
ACCEPTANCE_LINES: dict[int, str] = {}


@pytest.fixture(scope="session")
def small_dataset(tmp_path_factory):
    """12 synthetic 32x32 samples, 9 train / 3 val."""
    root = tmp_path_factory.mktemp("synth_small")
    generate_synthetic_dataset(str(root), 12, rows=32, cols=32, seed=1, val_fraction=0.25)
    return root


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[n])
