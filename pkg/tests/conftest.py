import numpy as np
import pytest

from mmc_irt.data import ResponseMatrix
from mmc_irt.models import MmcModel, NrModel
from mmc_irt.simulation import sample_responses

# published example item: correct option is index 4
PUBLISHED_ITEM_A = [1.84, -1.09, -0.76, -1.09, 1.09]
PUBLISHED_ITEM_B = [-3.27, 0.34, 0.21, 0.47, 2.25]


def random_nr(rng, n_items=5, n_options=4, scale=1.0):
    cats = np.full(n_items, n_options)
    correct = rng.integers(0, n_options, n_items)
    a = rng.normal(0, scale, (n_items, n_options))
    a[np.arange(n_items), correct] = np.abs(a[np.arange(n_items), correct]) + 0.5
    return NrModel(cats, correct, a=a, b=rng.normal(0, scale, (n_items, n_options)))


def random_mmc(rng, n_items=5, n_options=4, depth=1, weight_scale=1.0):
    cats = np.full(n_items, n_options)
    shape0 = (n_items, n_options, 3)
    weights = [rng.normal(0, weight_scale, shape0)]
    weights += [rng.normal(0, weight_scale, (n_items, n_options, 3, 3)) for _ in range(depth - 1)]
    biases = [rng.normal(0, 1, shape0) for _ in range(depth)]
    return MmcModel(
        cats, rng.integers(0, n_options, n_items),
        tau=rng.uniform(0.2, 2.0, n_items), b=rng.normal(0, 1, (n_items, n_options)),
        weights=weights, biases=biases,
    )


def simulate(model, n, seed, latent="normal"):
    rng = np.random.default_rng(seed)
    theta = rng.standard_normal(n)
    codes = sample_responses(model, theta, rng)
    return ResponseMatrix(
        codes, model.categories, model.correct,
        tuple(f"i{j}" for j in range(model.n_items)), theta=theta,
    )


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def nr_data():
    model = random_nr(np.random.default_rng(7), n_items=8, n_options=4)
    return model, simulate(model, 400, 8)


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
