import numpy as np
import pytest

from stqa.data import SynthConfig, generate_synthetic, load_dataset


@pytest.fixture(scope="session")
def small_dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("synth") / "ds"
    generate_synthetic(root, SynthConfig(n_questions=60), seed=11)
    return load_dataset(root)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


_verdicts = pytest.StashKey[list]()


@pytest.fixture
def criterion(request):
    """Record one acceptance verdict; the terminal summary prints every line."""
    store = request.config.stash.setdefault(_verdicts, [])

    class Recorder:
        def __init__(self):
            self.detail = ""

        def __call__(self, number, title):
            self.number, self.title = number, title
            return self

        def __enter__(self):
            return self

        def __exit__(self, exc_type, exc, tb):
            verdict = "PASS" if exc_type is None else "FAIL"
            line = f"criterion {self.number} {self.title}: {verdict}"
            store.append(line + (f"  ({self.detail})" if self.detail else ""))
            print(store[-1])
            return False

    return Recorder()


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_verdicts, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
