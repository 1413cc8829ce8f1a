import numpy as np
import pytest

from attacksearch.diffmodel import Classifier, TrainConfig, make_desk_dataset, train_adversarial, train_standard

_ACCEPTANCE_LINES: list[str] = []


def record_criterion(number: int, title: str, ok: bool, detail: str = "") -> None:
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {number:>2}: {title}" + (f" ({detail})" if detail else "")
    print(line)
    _ACCEPTANCE_LINES.append(line)


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE_LINES, key=lambda s: int(s.split("criterion")[1].split(":")[0])):
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def desk():
    return make_desk_dataset()


@pytest.fixture(scope="session")
def std_victim(desk):
    return train_standard(desk[0], TrainConfig())


@pytest.fixture(scope="session")
def at_victim(desk):
    return train_adversarial(desk[0], TrainConfig(adversarial=True))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_net(seed: int, dims=(6, 7, 5), activation="tanh", scale=1.0) -> Classifier:
    m = Classifier.initialize(list(dims), activation, seed)
    r = np.random.default_rng(seed + 1000)
    m.weights = [w * scale for w in m.weights]
    m.biases = [r.normal(0, 0.3, size=b.shape) for b in m.biases]
    return m
