import numpy as np
import pytest

from steallab import datasets as ds
from steallab.attack import EvalSet
from steallab.models import ClassifierSpec, GeneratorSpec, build_classifier, build_generator
from steallab.training import VictimTrainConfig, train_classifier


@pytest.fixture(scope="session")
def small_blobs():
    """A quickly trained 3-class 2-D victim plus its held-out split."""
    train, test = ds.generate(ds.TaskSpec("gaussian_blobs", 3, 2, samples_per_class=100,
                                          test_samples_per_class=50, separation=4.0))
    victim = build_classifier(ClassifierSpec((2,), 3, "tiny"), 0)
    train_classifier(victim, train, VictimTrainConfig(epochs=5), np.random.default_rng(0))
    return victim, EvalSet.from_victim(victim, test)


def tiny_pair(seed=0):
    clone = build_classifier(ClassifierSpec((2,), 3, "tiny"), seed)
    gen = build_generator(GeneratorSpec((2,), latent_dim=8, num_conv_blocks=1, base_channels=16), seed)
    return clone, gen


# -- acceptance summary lines ---------------------------------------------------------

ACCEPTANCE_LINES: dict[int, str] = {}


def record_acceptance(number: int, passed: bool, detail: str) -> None:
    ACCEPTANCE_LINES[number] = f"criterion {number}: {'PASS' if passed else 'FAIL'} | {detail}"


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for number in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[number])
