import json

import numpy as np
import pytest

from mmc_irt.autodiff import loss_and_grad
from mmc_irt.data import ResponseMatrix, one_hot
from mmc_irt.training import (
    FittedModel,
    Hyperparams,
    OptimizerState,
    amsgrad_step,
    build_autoencoder,
    encode,
    fit,
    params_from_fitted,
)

from .conftest import random_nr, simulate


def test_amsgrad_zero_gradient_keeps_params():
    state = OptimizerState.zeros(3)
    params = np.array([1.0, -2.0, 0.5])
    amsgrad_step(state, params, np.zeros(3), 0.1)
    assert params.tolist() == [1.0, -2.0, 0.5]


def test_amsgrad_first_step_by_hand():
    # m = 0.1, v = 0.001; bias corrections give m_hat = 1 and sqrt(v_hat) = 1
    state = OptimizerState.zeros(1)
    params = np.zeros(1)
    amsgrad_step(state, params, np.ones(1), 0.1, 0.9, 0.999, 1e-8)
    assert params[0] == pytest.approx(-0.1 / (1 + 1e-8), rel=1e-12)


def test_amsgrad_vmax_is_running_max():
    state = OptimizerState.zeros(2)
    params = np.zeros(2)
    history = []
    for g in ([3.0, 1.0], [0.0, 0.0], [1.0, 5.0], [0.1, 0.1]):
        amsgrad_step(state, params, np.array(g), 0.01)
        history.append(state.v_max.copy())
    assert np.all(np.diff(np.array(history), axis=0) >= 0)
    a, b = OptimizerState.zeros(2), OptimizerState.zeros(2)
    amsgrad_step(a, np.zeros(2), np.array([3.0, 3.0]), 0.1)
    amsgrad_step(b, np.zeros(2), np.array([3.0, 3.0]), 0.1)
    amsgrad_step(b, np.zeros(2), np.array([3.0, 1.0]), 0.1)
    assert np.all(b.v_max >= a.v_max)


def test_hyperparam_validation(tmp_path):
    for bad in ({"learning_rate": 0}, {"batch_size": 0}, {"hidden_layers": 0}):
        with pytest.raises(ValueError):
            Hyperparams(**bad)
    with pytest.raises(ValueError, match="unknown"):
        Hyperparams.from_dict({"momentum": 0.9})
    path = tmp_path / "hp.json"
    path.write_text(json.dumps({"learning_rate": 0.08, "batch_size": 32}))
    assert Hyperparams.from_json(path).batch_size == 32


def test_build_autoencoder_widths():
    rm = ResponseMatrix(np.zeros((3, 20), int), np.full(20, 5), np.zeros(20, int), tuple(map(str, range(20))))
    enc, model, params = build_autoencoder("mmc", rm, Hyperparams())
    assert enc.input_width == 100 and enc.hidden_width == 200
    assert enc.W2.shape == (200, 1)
    assert params["dec.w0"].shape == (20, 5, 3) and params["dec.c0"].shape == (20, 5, 3)
    assert np.allclose(model.tau, 1.0)
    _, nr_model, _ = build_autoencoder("nr", rm, Hyperparams())
    assert nr_model.n_parameters() == 2 * 100


@pytest.fixture(scope="module")
def nr_fit():
    model = random_nr(np.random.default_rng(21), n_items=10, n_options=4)
    rm = simulate(model, 2000, 22)
    return rm, fit("nr", rm, Hyperparams(epochs=40, seed=3))


def test_fit_beats_uniform_and_starts_near_uniform(nr_fit):
    rm, fitted = nr_fit
    uniform = float(np.log(rm.categories).sum())
    assert fitted.log[0]["train_nll"] == pytest.approx(uniform, rel=0.2)
    assert min(row["train_nll"] for row in fitted.log[1:]) <= uniform
    theta = encode(fitted, rm)
    assert -fitted.model.loglik(theta, rm.codes).mean() < uniform


def test_training_nll_trend(nr_fit):
    _, fitted = nr_fit
    nll = np.array([row["train_nll"] for row in fitted.log[1:21]])
    smooth = np.convolve(nll, np.ones(5) / 5, mode="valid")
    assert np.all(np.diff(smooth) <= 1e-9)


def test_fit_is_deterministic(nr_fit):
    rm, fitted = nr_fit
    again = fit("nr", rm, Hyperparams(epochs=40, seed=3))
    assert again.log == fitted.log
    assert np.array_equal(again.model.a, fitted.model.a)


def test_latent_standardized(nr_fit):
    rm, fitted = nr_fit
    theta = fitted.encoder.raw(one_hot(rm))
    assert abs(theta.mean()) < 1e-8 and abs(theta.std() - 1) < 1e-8


def test_encoder_matches_training_forward(nr_fit):
    rm, fitted = nr_fit
    params, layout = params_from_fitted(fitted)
    x = one_hot(rm, np.arange(50))
    _, _, theta = loss_and_grad(params, x, rm.codes[:50], layout)
    assert np.allclose(theta, fitted.encoder.raw(x), atol=1e-12)


def test_fitted_model_is_frozen(nr_fit):
    _, fitted = nr_fit
    with pytest.raises(ValueError):
        fitted.model.b[0, 0] = 3.0


def test_fitted_roundtrip(tmp_path, nr_fit):
    rm, fitted = nr_fit
    path = tmp_path / "fit.json"
    fitted.save(path)
    back = FittedModel.load(path)
    assert np.array_equal(encode(back, rm), encode(fitted, rm))
    fitted.write_log_csv(tmp_path / "log.csv")
    lines = (tmp_path / "log.csv").read_text().splitlines()
    assert lines[0] == "epoch,train_nll,val_nll" and len(lines) == len(fitted.log) + 1


def test_mmc_fit_small():
    model = random_nr(np.random.default_rng(5), n_items=6, n_options=3)
    rm = simulate(model, 300, 6)
    fitted = fit("mmc", rm, Hyperparams(epochs=15, hidden_layers=2, seed=1))
    assert fitted.model.depth == 2
    assert np.all(np.isfinite(encode(fitted, rm)))


def test_unknown_variant_and_empty_data():
    rm = ResponseMatrix(np.zeros((0, 1), int), [2], [0], ("a",))
    with pytest.raises(ValueError):
        fit("nr", rm)
    with pytest.raises(ValueError):
        fit("xyz", ResponseMatrix(np.zeros((2, 1), int), [2], [0], ("a",)))
