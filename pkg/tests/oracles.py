"""Independent reference computations used by the tests.

None of these go through the package's tape or kernels.
"""

import numpy as np

LD = np.longdouble


def _elu(y):
    return np.where(y > 0, y, np.expm1(np.minimum(y, 0)))


def _activate(y):
    """Convex, concave, saturated along the last axis (ELU parameter 1)."""
    c = _elu(y[..., 0])
    k = -_elu(-y[..., 1])
    s = np.where(y[..., 2] < 0, _elu(y[..., 2] + 1) - 1, 1 - _elu(1 - y[..., 2]))
    return np.stack([c, k, s], axis=-1)


def _softplus(x):
    return np.logaddexp(LD(0), x)


def autoencoder_nll(vector, slices, shapes, layout, x, codes, floor=1e-10):
    """Negative log-likelihood of the autoencoder in extended precision.

    ``vector`` is the flat parameter vector (any float dtype), addressed with
    the given name -> slice / shape maps.
    """
    v = np.asarray(vector, dtype=LD)

    def p(name):
        return v[slices[name]].reshape(shapes[name])

    x = np.asarray(x, dtype=LD)
    h = _elu(x @ p("enc.W1") + p("enc.b1"))
    theta = (h @ p("enc.W2") + p("enc.b2"))[:, 0]
    log_floor = np.log(LD(floor))
    total = LD(0)
    for j, m_count in enumerate(layout.categories):
        if layout.variant == "nr":
            z = theta[:, None] * p("dec.a")[j, :m_count] + p("dec.b")[j, :m_count]
        else:
            deltas = []
            for m in range(m_count):
                act = None
                for layer in range(layout.n_layers):
                    w = _softplus(p(f"dec.w{layer}")[j, m])
                    pre = theta[:, None] * w if layer == 0 else act @ w.T
                    act = _activate(pre + p(f"dec.c{layer}")[j, m])
                deltas.append(act.sum(axis=1))
            deltas = np.stack(deltas, axis=1)
            shaped = deltas.copy()
            shaped[:, layout.correct[j]] = deltas.sum(axis=1)
            z = p("dec.tau")[j] * shaped + p("dec.b")[j, :m_count]
        zmax = z.max(axis=1, keepdims=True)
        lse = zmax[:, 0] + np.log(np.exp(z - zmax).sum(axis=1))
        lp = z[np.arange(len(theta)), codes[:, j]] - lse
        total -= np.maximum(lp, log_floor).sum()
    return total


def finite_difference_grad(vector, slices, shapes, layout, x, codes, coords, eps=1e-5):
    """Central differences of :func:`autoencoder_nll` at the given coordinates."""
    base = np.asarray(vector, dtype=LD)
    out = np.empty(len(coords))
    for i, k in enumerate(coords):
        up, down = base.copy(), base.copy()
        up[k] += LD(eps)
        down[k] -= LD(eps)
        diff = autoencoder_nll(up, slices, shapes, layout, x, codes) - autoencoder_nll(
            down, slices, shapes, layout, x, codes
        )
        out[i] = float(diff / (2 * LD(eps)))
    return out


def max_relative_error(analytic, numeric, floor=1e-8):
    analytic, numeric = np.asarray(analytic, float), np.asarray(numeric, float)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / denom))


def brute_force_ml(model, codes, n_points=20001):
    """Argmax of each person's log-likelihood over a dense uniform grid (lowest theta on ties)."""
    grid = np.linspace(*model.bounds, n_points)
    lp = model.log_probs(grid)  # (G, J, M)
    codes = np.asarray(codes)
    out = np.empty(len(codes))
    for i, row in enumerate(codes):
        ll = lp[:, np.arange(len(row)), row].sum(axis=1)
        out[i] = grid[np.argmax(ll)]
    return out


def naive_holdout_loglik(model, codes, theta, floor=1e-10):
    """Mean over persons of summed clamped log-probabilities, by double loop."""
    total = 0.0
    for i, row in enumerate(codes):
        probs = model.probs(np.array([theta[i]]))[0]
        for j, m in enumerate(row):
            total += np.log(max(probs[j, m], floor))
    return total / len(codes)


def direct_2pl_mml(codes, nodes, weights):
    """2PL marginal ML by direct L-BFGS on the quadrature-approximated likelihood.

    Returns (slopes, intercepts) of P(x=1 | theta) = sigmoid(a theta + b).
    """
    from scipy.optimize import minimize
    from scipy.special import expit, logsumexp

    codes = np.asarray(codes, dtype=float)
    n_items = codes.shape[1]
    logw = np.log(weights)

    def nll(v):
        a, b = v[:n_items], v[n_items:]
        z = nodes[:, None] * a[None] + b[None]  # (Q, J)
        lp1, lp0 = -np.logaddexp(0, -z), -np.logaddexp(0, z)
        ll = codes @ lp1.T + (1 - codes) @ lp0.T + logw[None]
        norm = logsumexp(ll, axis=1)
        post = np.exp(ll - norm[:, None])
        resid = (codes[:, None, :] - expit(z)[None]) * post[:, :, None]  # (N, Q, J)
        ga = -(resid * nodes[None, :, None]).sum(axis=(0, 1))
        gb = -resid.sum(axis=(0, 1))
        return -norm.sum(), np.concatenate([ga, gb])

    v0 = np.concatenate([np.ones(n_items), np.zeros(n_items)])
    res = minimize(nll, v0, jac=True, method="L-BFGS-B", options={"gtol": 1e-8, "maxiter": 2000})
    return res.x[:n_items], res.x[n_items:]
