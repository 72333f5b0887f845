import pytest

from cascade_verify.cli import main


def run_micro(out, seed=0):
    code = main(["run", "--profile", "micro", "--seed", str(seed), "--jobs", "1", "--out", str(out)])
    assert code == 0
    return out


@pytest.fixture(scope="session")
def micro_run(tmp_path_factory):
    """A complete synth -> train -> evaluate run on the micro profile."""
    return run_micro(tmp_path_factory.mktemp("micro") / "run")


# criterion number -> (passed, detail); filled by test_acceptance.py
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
