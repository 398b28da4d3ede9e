import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mmc_irt._subnet_py import concave, convex, elu, saturated
from mmc_irt.models import (
    MmcItemParams,
    MmcModel,
    ModelError,
    MonotoneSubnet,
    NrItemParams,
    NrModel,
    load_model,
    mmc_probs,
    model_from_dict,
    model_probs,
    monotone_forward,
    nr_probs,
    save_model,
    softplus,
    softplus_inverse,
)

from .conftest import PUBLISHED_ITEM_A, PUBLISHED_ITEM_B, random_mmc, random_nr

# direct softmax evaluation of the published item with plain math (see test below)
PUBLISHED_P_CORRECT_AT_2 = 0.975405267934558
PUBLISHED_P_CORRECT_AT_4 = 0.9254196843094398


def test_nr_uniform():
    assert np.allclose(nr_probs(NrItemParams(np.zeros(4), np.zeros(4)), 0.3), 0.25)


def test_nr_shift_invariance(rng):
    a, b = rng.normal(size=5), rng.normal(size=5)
    p = nr_probs(NrItemParams(a, b), 1.3)
    q = nr_probs(NrItemParams(a, b + 7.5), 1.3)
    assert np.max(np.abs(p - q)) < 1e-12


def test_nr_overflow_safe():
    p = nr_probs(NrItemParams(np.array([100.0, 0.0]), np.zeros(2)), 10.0)
    assert np.all(np.isfinite(p)) and abs(p.sum() - 1) < 1e-12


def test_nr_rejects_nonfinite():
    with pytest.raises(ModelError):
        nr_probs(NrItemParams(np.array([np.nan, 0.0]), np.zeros(2)), 0.0)


def test_published_nr_item_decreases():
    item = NrItemParams(np.array(PUBLISHED_ITEM_A), np.array(PUBLISHED_ITEM_B))
    p2, p4 = nr_probs(item, 2.0)[4], nr_probs(item, 4.0)[4]
    assert p4 < p2
    assert p2 == pytest.approx(PUBLISHED_P_CORRECT_AT_2, abs=1e-14)
    assert p4 == pytest.approx(PUBLISHED_P_CORRECT_AT_4, abs=1e-14)


def test_activation_shapes():
    y = np.linspace(-3, 3, 61)
    assert np.all(np.diff(convex(y)) > 0) and np.all(np.diff(concave(y)) > 0)
    assert np.all(np.diff(saturated(y)) > 0)
    assert saturated(np.array([0.0]))[0] == 0.0
    # both branches meet at 0
    assert abs(elu(np.array([1.0]))[0] - 1.0) < 1e-15
    left, right = saturated(np.array([-1e-9, 1e-9]))
    assert abs(left) < 1e-8 and abs(right) < 1e-8
    assert np.all(np.abs(saturated(np.linspace(-40, 40, 81))) <= 2.0)


def test_degenerate_subnet_is_constant():
    net = MonotoneSubnet([np.full(3, -50.0), np.full((3, 3), -50.0)], [np.zeros(3), np.zeros(3)])
    vals = [monotone_forward(net, t) for t in (-5.0, 0.0, 5.0)]
    assert np.ptp(vals) < 1e-12


def test_mmc_uniform_when_degenerate():
    nets = [MonotoneSubnet([np.full(3, -60.0)], [np.full(3, -1.0)]) for _ in range(4)]
    # each delta is the constant -(elu(-1)) + ... ; all equal, so only b matters
    params = MmcItemParams(1.0, np.zeros(4), nets)
    p = mmc_probs(params, 2, 0.5)
    # correct option sums all four constant deltas, so compare against an explicit softmax
    d = monotone_forward(nets[0], 0.5)
    z = np.full(4, d)
    z[2] = 4 * d
    assert np.allclose(p, np.exp(z) / np.exp(z).sum())
    zero_nets = [MonotoneSubnet([np.full(3, -60.0)], [np.zeros(3)]) for _ in range(4)]
    assert np.allclose(mmc_probs(MmcItemParams(1.0, np.zeros(4), zero_nets), 0, 1.0), 0.25)


@given(st.integers(0, 2**31), st.integers(1, 3))
@settings(max_examples=50, deadline=None)
def test_subnet_monotone(seed, depth):
    rng = np.random.default_rng(seed)
    net = MonotoneSubnet(
        [rng.normal(0, 2, 3)] + [rng.normal(0, 2, (3, 3)) for _ in range(depth - 1)],
        [rng.normal(0, 2, 3) for _ in range(depth)],
    )
    grid = np.linspace(-10, 10, 201)
    assert np.all(np.diff(net(grid)) >= -1e-12)
    assert monotone_forward(net, 2.0) >= monotone_forward(net, 1.0)


@given(st.integers(0, 2**31), st.integers(1, 3))
@settings(max_examples=50, deadline=None)
def test_mmc_correct_option_monotone(seed, depth):
    model = random_mmc(np.random.default_rng(seed), n_items=3, depth=depth, weight_scale=2.0)
    grid = np.linspace(-10, 10, 201)
    p = model.probs(grid)
    pc = p[:, np.arange(3), model.correct]
    assert np.all(np.diff(pc, axis=0) >= -1e-9)


def test_mmc_negative_tau_reverses(rng):
    model = random_mmc(rng, n_items=4)
    flipped = MmcModel(model.categories, model.correct, tau=-model.tau, b=model.b,
                       weights=model.weights, biases=model.biases)
    grid = np.linspace(-10, 10, 201)
    pc = flipped.probs(grid)[:, np.arange(4), model.correct]
    assert np.all(np.diff(pc, axis=0) <= 1e-9)


def test_batch_matches_single_item_calls(rng):
    nr, mmc = random_nr(rng), random_mmc(rng, depth=2)
    thetas = np.array([-2.0, 0.1, 3.3])
    for t_idx, t in enumerate(thetas):
        for j in range(nr.n_items):
            assert np.allclose(nr.probs(thetas)[t_idx, j], nr_probs(nr.item(j), t), atol=1e-14)
            assert np.allclose(
                mmc.probs(thetas)[t_idx, j], mmc_probs(mmc.item(j), mmc.correct[j], t), atol=1e-13
            )


def test_single_person_single_item():
    m = NrModel([3], [0])
    assert np.allclose(model_probs(m, [0.0])[0, 0], 1 / 3)


def test_normalization_sweep(rng):
    grid = np.linspace(-10, 10, 201)
    for model in (random_nr(rng, 80, 6), random_mmc(rng, 80, 6, depth=2)):
        p = model.probs(grid)
        assert p.shape == (201, 80, 6)
        assert np.max(np.abs(p.sum(axis=2) - 1)) < 1e-10


def test_mixed_option_counts_pad_with_zero():
    m = NrModel([2, 4], [1, 3])
    p = m.probs([0.0])
    assert p[0, 0, 2:].tolist() == [0.0, 0.0]
    assert np.isneginf(m.log_probs([0.0])[0, 0, 3])


def test_parameter_counts():
    # 80 items with 332 options in total
    cats = np.array([4] * 68 + [5] * 12)
    assert cats.sum() == 332
    assert NrModel(cats, np.zeros(80, int)).n_parameters() == 664
    assert MmcModel(cats, np.zeros(80, int)).n_parameters() == 2404
    deep = MmcModel(cats, np.zeros(80, int), weights=[np.zeros((80, 5, 3)), np.zeros((80, 5, 3, 3))])
    assert deep.n_parameters() == 332 * 19 + 80


def test_softplus_inverse_roundtrip():
    y = np.array([1e-6, 0.05, 1.0, 30.0])
    assert np.allclose(softplus(softplus_inverse(y)), y, rtol=1e-12)


def test_serialization_bit_faithful(tmp_path, rng):
    for model in (random_nr(rng), random_mmc(rng, depth=3)):
        path = tmp_path / f"{model.variant}.json"
        save_model(model, path)
        back = load_model(path)
        assert type(back) is type(model)
        assert back.to_dict() == model.to_dict()
        grid = np.linspace(-3, 3, 7)
        assert np.array_equal(back.probs(grid), model.probs(grid))


def test_deserialize_rejects_bad_input(rng):
    d = random_nr(rng).to_dict()
    with pytest.raises(ModelError):
        model_from_dict({**d, "version": 99})
    with pytest.raises(ModelError):
        model_from_dict({**d, "variant": "xyz"})


def test_frozen_model_is_read_only(rng):
    m = random_nr(rng).freeze()
    with pytest.raises(ValueError):
        m.a[0, 0] = 1.0
