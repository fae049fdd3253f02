import pytest

from kickratchet.sweep import SweepConfig

TINY = dict(k_list=(5.0, 5.5), gamma_list=(0.5,), ensemble_size=2000, transient=100,
            measure_steps=100, ulam_m=48, n_tr=400, k_eigs=10, krylov_dim=40)


@pytest.fixture
def tiny_config(tmp_path):
    """Two-point configuration small enough to run every task in seconds."""
    return SweepConfig(output_dir=str(tmp_path / "store"), **TINY)


# acceptance verdict lines, echoed at the end of the run
ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
