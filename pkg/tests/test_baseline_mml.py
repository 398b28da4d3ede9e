import numpy as np
import pytest

from mmc_irt.baseline_mml import (
    ConvergenceWarning,
    QuadratureRule,
    e_step,
    initial_params,
    mml_fit_nr,
    mml_score,
)
from mmc_irt.data import ResponseMatrix, one_hot
from mmc_irt.models import NrModel
from mmc_irt.scoring import score_ml

from .conftest import simulate
from .oracles import brute_force_ml, direct_2pl_mml


def _reference_coded(rng, n_items, n_options=4):
    a = rng.normal(0, 0.8, (n_items, n_options))
    b = rng.normal(0, 0.7, (n_items, n_options))
    a[:, 0] = b[:, 0] = 0.0
    # make option 1 the most discriminating so the key is sensible
    a[:, 1] = np.abs(a[:, 1]) + 0.8
    return NrModel(np.full(n_items, n_options), np.ones(n_items, int), a=a, b=b)


def test_quadrature_rule():
    q = QuadratureRule.normal()
    assert len(q.nodes) == 61 and q.nodes[0] == -5.0 and q.nodes[-1] == 5.0
    assert np.all(q.weights > 0)
    assert abs(q.weights.sum() - 1.0) < 1e-12


@pytest.fixture(scope="module")
def recovery():
    true = _reference_coded(np.random.default_rng(50), 20)
    rm = simulate(true, 5000, 51)
    return true, rm, mml_fit_nr(rm)


def test_parameter_recovery(recovery):
    true, _, fitted = recovery
    est = fitted.model
    free = true.mask.copy()
    free[:, 0] = False
    assert np.corrcoef(true.a[free], est.a[free])[0, 1] >= 0.9
    assert np.corrcoef(true.b[free], est.b[free])[0, 1] >= 0.9


def test_em_monotone(recovery):
    _, _, fitted = recovery
    ll = np.array([row["marginal_loglik"] for row in fitted.log])
    assert np.all(np.diff(ll) >= -1e-8)
    assert fitted.hyperparams["converged"]


def test_reference_category_exactly_zero(recovery):
    _, _, fitted = recovery
    assert np.all(fitted.model.a[:, 0] == 0.0)
    assert np.all(fitted.model.b[:, 0] == 0.0)
    assert fitted.fitter == "mml" and fitted.encoder is None


def test_denser_rule_agrees(recovery):
    _, _, fitted = recovery
    model = fitted.model
    coarse, dense = QuadratureRule.normal(61), QuadratureRule.normal(610)
    m_coarse = np.einsum("q,qjm->jm", coarse.weights, model.probs(coarse.nodes))
    m_dense = np.einsum("q,qjm->jm", dense.weights, model.probs(dense.nodes))
    assert np.max(np.abs(m_coarse - m_dense)) < 1e-6


def test_two_category_matches_direct_2pl():
    rng = np.random.default_rng(60)
    a = np.zeros((5, 2))
    b = np.zeros((5, 2))
    a[:, 1] = rng.uniform(0.6, 2.0, 5)
    b[:, 1] = rng.normal(0, 0.8, 5)
    rm = simulate(NrModel(np.full(5, 2), np.ones(5, int), a=a, b=b), 2000, 61)
    quad = QuadratureRule.normal()
    fitted = mml_fit_nr(rm, quad, tol=1e-6)
    slope, intercept = direct_2pl_mml(rm.codes, quad.nodes, quad.weights)
    em = fitted.model.probs(quad.nodes)[:, :, 1]
    direct = 1.0 / (1.0 + np.exp(-(quad.nodes[:, None] * slope + intercept)))
    assert np.max(np.abs(em - direct)) < 0.01


def test_e_step_posteriors_normalised():
    model = _reference_coded(np.random.default_rng(1), 4)
    rm = simulate(model, 30, 2)
    a, b = initial_params(rm)
    post, marginal = e_step(one_hot(rm), a, b, model.mask, QuadratureRule.normal())
    assert np.allclose(post.sum(axis=1), 1.0)
    assert np.isfinite(marginal) and marginal < 0


def test_initial_params_reference_coded():
    rm = ResponseMatrix([[0, 1], [1, 1], [2, 0]], [3, 2], [1, 1], ("a", "b"))
    a, b = initial_params(rm)
    assert np.all(a[:, 0] == 0) and np.all(b[:, 0] == 0)
    assert b[0, 1] == pytest.approx(0.0)


def test_non_convergence_warns_and_returns():
    model = _reference_coded(np.random.default_rng(3), 4)
    rm = simulate(model, 200, 4)
    with pytest.warns(ConvergenceWarning):
        fitted = mml_fit_nr(rm, max_iter=2)
    assert not fitted.hyperparams["converged"] and len(fitted.log) == 3


def test_mml_score(recovery):
    _, rm, fitted = recovery
    sub = rm.subset(rows=np.arange(40))
    first = mml_score(fitted, sub).theta
    assert np.array_equal(first, mml_score(fitted, sub).theta)
    assert np.array_equal(first, score_ml(fitted.model, sub).theta)
    assert np.max(np.abs(first - brute_force_ml(fitted.model, sub.codes))) < 1e-3
    with pytest.raises(ValueError):
        mml_score(fitted, sub, "nn")


def test_all_reference_respondent_scores_at_floor():
    a = np.array([[0.0, 1.0, 0.5], [0.0, 2.0, 0.3]])
    model = NrModel([3, 3], [1, 1], a=a, b=np.zeros((2, 3)))
    rm = ResponseMatrix([[0, 0]], [3, 3], [1, 1], ("a", "b"))
    assert mml_score(model, rm).theta[0] == -10.0
