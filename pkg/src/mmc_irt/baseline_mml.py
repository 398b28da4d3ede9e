"""Marginal maximum likelihood for the NR model (Bock-Aitkin EM on a fixed quadrature)."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .data import ResponseMatrix, one_hot
from .models import THETA_BOUNDS, NrModel, log_softmax, option_mask
from .scoring import ThetaEstimates, score_ml
from .training import FittedModel


class ConvergenceWarning(UserWarning):
    pass


@dataclass(frozen=True)
class QuadratureRule:
    nodes: np.ndarray
    weights: np.ndarray

    @classmethod
    def normal(cls, n_nodes: int = 61, limit: float = 5.0) -> QuadratureRule:
        nodes = np.linspace(-limit, limit, n_nodes)
        w = np.exp(-0.5 * nodes**2)
        return cls(nodes, w / w.sum())

    @property
    def log_weights(self) -> np.ndarray:
        return np.log(self.weights)


def _log_table(a, b, mask, nodes):
    """(Q, J, M) unfloored log-probabilities at the nodes; padded entries -inf."""
    z = nodes[:, None, None] * a[None] + b[None]
    return log_softmax(z, mask)


def e_step(x, a, b, mask, quad: QuadratureRule):
    """Posterior node weights (N, Q) and the marginal log-likelihood."""
    table = _log_table(a, b, mask, quad.nodes)[:, mask]  # (Q, sum M)
    ll = x @ table.T + quad.log_weights[None]
    norm = logsumexp(ll, axis=1)
    return np.exp(ll - norm[:, None]), float(norm.sum())


def _expected_q(a, b, mask, nodes, counts):
    lp = _log_table(a, b, mask, nodes)
    return np.where(mask[None], counts * np.where(mask[None], lp, 0.0), 0.0).sum(axis=(0, 2))


def m_step(a, b, mask, nodes, counts, newton_iter: int = 5):
    """Raise each item's expected complete-data log-likelihood by damped Newton steps.

    ``counts`` is (Q, J, M): expected number of persons at each node choosing
    each option. Option 0 is the reference with a = b = 0.
    """
    _, j_count, m_max = counts.shape
    k = m_max - 1
    free = mask[:, 1:]  # (J, K)
    n_q = counts.sum(axis=2)  # (Q, J)
    design = np.stack([nodes, np.ones_like(nodes)], axis=1)  # (Q, 2): d z / d(a, b)
    a, b = a.copy(), b.copy()
    current = _expected_q(a, b, mask, nodes, counts)
    for _ in range(newton_iter):
        p = np.exp(_log_table(a, b, mask, nodes))[:, :, 1:]  # (Q, J, K)
        resid = counts[:, :, 1:] - n_q[:, :, None] * p
        grad = np.einsum("qjk,qd->jkd", resid, design).reshape(j_count, 2 * k)
        # Fisher information of the multinomial logit with reference category
        cov = np.einsum("qjk,kl->qjkl", p, np.eye(k)) - p[:, :, :, None] * p[:, :, None, :]
        info = np.einsum("qj,qjkl,qd,qe->jkdle", n_q, cov, design, design).reshape(j_count, 2 * k, 2 * k)
        active = np.repeat(free, 2, axis=1)
        info = np.where(active[:, :, None] & active[:, None, :], info, 0.0)
        rows, cols = np.nonzero(~active)
        info[rows, cols, cols] = 1.0  # padded options: identity keeps the system solvable
        grad = np.where(active, grad, 0.0)
        step = np.empty_like(grad)
        for j in range(j_count):
            try:
                chol = np.linalg.cholesky(info[j] + 1e-10 * np.eye(2 * k))
                step[j] = np.linalg.solve(chol.T, np.linalg.solve(chol, grad[j]))
            except np.linalg.LinAlgError:
                step[j] = 0.1 * grad[j] / max(1.0, float(np.abs(grad[j]).max()))
        step = step.reshape(j_count, k, 2)
        scale = np.ones(j_count)
        accepted = np.zeros(j_count, dtype=bool)
        for _ in range(30):
            a_try, b_try = a.copy(), b.copy()
            a_try[:, 1:] += np.where(free, scale[:, None] * step[:, :, 0], 0.0)
            b_try[:, 1:] += np.where(free, scale[:, None] * step[:, :, 1], 0.0)
            trial = _expected_q(a_try, b_try, mask, nodes, counts)
            ok = (trial >= current) & ~accepted
            a[ok], b[ok] = a_try[ok], b_try[ok]
            current = np.where(ok, trial, current)
            accepted |= ok
            if accepted.all():
                break
            scale = np.where(accepted, scale, scale * 0.5)
        if np.abs(step).max() < 1e-10:
            break
    return a, b


def initial_params(rm: ResponseMatrix):
    mask = option_mask(rm.categories)
    j_count, m_max = mask.shape
    freq = np.ones((j_count, m_max))
    for j in range(j_count):
        freq[j, : rm.categories[j]] = np.bincount(rm.codes[:, j], minlength=rm.categories[j]) + 0.5
    b = np.where(mask, np.log(freq / freq[:, :1]), 0.0)
    a = np.zeros((j_count, m_max))
    a[np.arange(j_count), rm.correct] = 1.0
    a = np.where(mask, a - a[:, :1], 0.0)
    return a, b


def mml_fit_nr(train: ResponseMatrix, quad: QuadratureRule | None = None, max_iter: int = 500,
               tol: float = 1e-4, bounds=THETA_BOUNDS) -> FittedModel:
    """Fit NR item parameters by EM, integrating theta over a standard normal.

    Stops once no parameter moves by ``tol`` or more in an iteration. Without
    convergence the last iterate is returned and a ConvergenceWarning issued.
    """
    quad = quad or QuadratureRule.normal()
    mask = option_mask(train.categories)
    x = one_hot(train)
    a, b = initial_params(train)
    trace = []
    converged = False
    for it in range(1, max_iter + 1):
        post, marginal = e_step(x, a, b, mask, quad)
        trace.append({"iteration": it - 1, "marginal_loglik": marginal})
        r = post.T @ x  # (Q, sum M)
        counts = np.zeros((len(quad.nodes), *mask.shape))
        counts[:, mask] = r
        a_new, b_new = m_step(a, b, mask, quad.nodes, counts)
        change = max(np.abs(a_new - a).max(), np.abs(b_new - b).max())
        a, b = a_new, b_new
        if change < tol:
            converged = True
            break
    _, marginal = e_step(x, a, b, mask, quad)
    trace.append({"iteration": it, "marginal_loglik": marginal})
    if not converged:
        warnings.warn(f"EM did not converge in {max_iter} iterations", ConvergenceWarning, stacklevel=2)
    model = NrModel(train.categories, train.correct, bounds, train.missing_as_category, a=a, b=b).freeze()
    info = {
        "variant": "nr",
        "quadrature_nodes": len(quad.nodes),
        "quadrature_limit": float(quad.nodes[-1]),
        "max_iter": max_iter,
        "tol": tol,
        "iterations": it,
        "converged": converged,
    }
    return FittedModel(model, None, "mml", info, trace)


def mml_score(fitted, rm: ResponseMatrix, method: str = "ml") -> ThetaEstimates:
    if method.lower() != "ml":
        raise ValueError("MML fits have no encoder; only ML scoring is available")
    return score_ml(fitted, rm)
