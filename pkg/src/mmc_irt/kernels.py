"""Monotone subnet kernels with a compiled backend and a numpy fallback.

The compiled extension is used when it imports and ``MMC_IRT_PURE`` is unset;
otherwise the vectorized numpy path runs. Both share one calling convention.
"""

from __future__ import annotations

import os

import numpy as np

from . import _subnet_py

try:
    if os.environ.get("MMC_IRT_PURE"):
        raise ImportError("pure-Python kernels requested")
    from . import _subnet as _compiled
except ImportError:
    _compiled = None

BACKEND = "cython" if _compiled is not None else "numpy"


def _stack(weights, biases):
    w0 = np.ascontiguousarray(weights[0], dtype=float)
    j, m = w0.shape[:2]
    if len(weights) > 1:
        wd = np.ascontiguousarray(np.stack(weights[1:]), dtype=float)
    else:
        wd = np.zeros((0, j, m, 3, 3))
    bs = np.ascontiguousarray(np.stack(biases), dtype=float)
    return w0, wd, bs


def subnet_forward(theta, weights, biases, backend: str | None = None) -> np.ndarray:
    """Sum of final-layer activations for every (person, item, option).

    ``weights`` are effective (positive) weights, one array per layer.
    """
    theta = np.ascontiguousarray(theta, dtype=float)
    if (backend or BACKEND) == "cython" and _compiled is not None:
        return _compiled.forward(theta, *_stack(weights, biases))
    return _subnet_py.subnet_forward(theta, weights, biases)


def subnet_backward(grad_delta, theta, weights, biases, backend: str | None = None):
    """Gradients of ``sum(grad_delta * delta)`` w.r.t. theta, weights and biases."""
    theta = np.ascontiguousarray(theta, dtype=float)
    grad_delta = np.ascontiguousarray(grad_delta, dtype=float)
    if (backend or BACKEND) == "cython" and _compiled is not None:
        gt, gw0, gwd, gbs = _compiled.backward(grad_delta, theta, *_stack(weights, biases))
        return gt, [gw0, *list(gwd)], list(gbs)
    return _subnet_py.subnet_backward(grad_delta, theta, weights, biases)


def available_backends() -> list[str]:
    return ["numpy"] + (["cython"] if _compiled is not None else [])
