import sys
from pathlib import Path

import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, str(Path(__file__).parent))

# numba compiles on first use, so the first example of a property can be slow
settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

DATA = Path(__file__).parent / "data"


@pytest.fixture(scope="session")
def synthetic_model():
    """(model, seconds) for the 40-pair synthetic corpus; about 100 s, shared by the acceptance checks."""
    import time

    import synth
    from refcolor import trainer

    t0 = time.process_time()
    pairs = [trainer.TrainingPair.from_images(gt, ref) for _, gt, ref in synth.corpus(20, seed=0)]
    return trainer.train_model(pairs), time.process_time() - t0


@pytest.fixture
def criterion(request):
    """Record one acceptance line (printed in the terminal summary), then assert it."""
    lines = request.config.__dict__.setdefault("_acceptance_lines", [])

    def record(name: str, ok: bool, detail: str):
        lines.append(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
        assert ok, detail

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.__dict__.get("_acceptance_lines")
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
