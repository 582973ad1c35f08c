import numpy as np
import pytest

from ergohrc.hmm import GaussianHmm, left_right_mask
from ergohrc.mocap import load_catalog


@pytest.fixture(scope="session")
def catalog():
    return load_catalog()


def random_left_right(rng, n_states, n_features, strict=False):
    """A random valid left-right model, independent of the library initialiser."""
    trans = rng.uniform(0.05, 1.0, (n_states, n_states)) * left_right_mask(n_states)
    trans /= trans.sum(axis=1, keepdims=True)
    if strict:
        initial = np.eye(n_states)[0]
    else:
        initial = rng.uniform(0.05, 1.0, n_states)
        initial /= initial.sum()
    means = rng.normal(0.0, 2.0, (n_states, n_features))
    variances = rng.uniform(0.3, 2.0, (n_states, n_features))
    return GaussianHmm(initial, trans, means, variances)


def sample_hmm(model, length, rng):
    """Draw one observation sequence by ancestral sampling."""
    k = model.n_states
    state = rng.choice(k, p=model.initial)
    out = np.empty((length, model.n_features))
    for t in range(length):
        out[t] = rng.normal(model.means[state], np.sqrt(model.variances[state]))
        state = rng.choice(k, p=model.transitions[state])
    return out


#: One line per acceptance criterion, filled by test_acceptance.py.
ACCEPTANCE_LINES = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[n])
