"""Vectorized numpy implementation of the monotone subnet kernels.

Layout: ``theta`` has shape (B,); layer 0 weights/biases have shape (J, M, 3);
deeper layer weights have shape (J, M, 3, 3) (row = output neuron) and biases
(J, M, 3). Weights passed here are the *effective* (already positive) ones.
"""

import numpy as np


def elu(y):
    return np.where(y > 0, y, np.expm1(np.minimum(y, 0.0)))


def elu_grad(y):
    return np.where(y > 0, 1.0, np.exp(np.minimum(y, 0.0)))


def convex(y):
    return elu(y)


def concave(y):
    return -elu(-y)


def saturated(y):
    return np.where(y < 0, elu(y + 1.0) - 1.0, concave(y - 1.0) + 1.0)


def convex_grad(y):
    return elu_grad(y)


def concave_grad(y):
    return elu_grad(-y)


def saturated_grad(y):
    return np.where(y < 0, elu_grad(y + 1.0), elu_grad(1.0 - y))


def activate(y):
    """Apply the convex / concave / saturated activations along the last axis."""
    return np.stack([convex(y[..., 0]), concave(y[..., 1]), saturated(y[..., 2])], axis=-1)


def activate_grad(y):
    return np.stack(
        [convex_grad(y[..., 0]), concave_grad(y[..., 1]), saturated_grad(y[..., 2])], axis=-1
    )


def subnet_forward(theta, weights, biases, keep=False):
    theta = np.asarray(theta, dtype=float)
    y = weights[0][None] * theta[:, None, None, None] + biases[0][None]
    pre = [y]
    h = activate(y)
    for w, b in zip(weights[1:], biases[1:]):
        y = np.einsum("jmkl,bjml->bjmk", w, h, optimize=False) + b[None]
        pre.append(y)
        h = activate(y)
    delta = h.sum(axis=-1)
    return (delta, pre) if keep else delta


def subnet_backward(grad_delta, theta, weights, biases, pre=None):
    theta = np.asarray(theta, dtype=float)
    if pre is None:
        _, pre = subnet_forward(theta, weights, biases, keep=True)
    n_layers = len(weights)
    grad_w = [None] * n_layers
    grad_b = [None] * n_layers
    gh = np.repeat(grad_delta[..., None], 3, axis=-1)
    for layer in range(n_layers - 1, -1, -1):
        gy = gh * activate_grad(pre[layer])
        grad_b[layer] = gy.sum(axis=0)
        if layer == 0:
            grad_w[0] = np.einsum("bjmk,b->jmk", gy, theta, optimize=False)
            grad_theta = np.einsum("bjmk,jmk->b", gy, weights[0], optimize=False)
        else:
            h_prev = activate(pre[layer - 1])
            grad_w[layer] = np.einsum("bjmk,bjml->jmkl", gy, h_prev, optimize=False)
            gh = np.einsum("bjmk,jmkl->bjml", gy, weights[layer], optimize=False)
    return grad_theta, grad_w, grad_b
