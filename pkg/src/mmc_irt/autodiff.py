"""Array-level reverse-mode differentiation for the autoencoder loss.

Only the handful of operations the encoder/decoder graph needs are provided.
Nodes are appended to a :class:`Tape` as they are created, so creation order
is a topological order and the backward pass simply walks the tape in reverse.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from ._subnet_py import elu, elu_grad
from .models import LOG_FLOOR, correct_sum_map, option_mask, softplus


class NumericError(FloatingPointError):
    """Raised when the forward pass produces NaN or infinite values."""


class Node:
    __slots__ = ("value", "grad", "parents", "backward_fn", "needs_grad")

    def __init__(self, value, parents=(), backward_fn=None, needs_grad=False):
        self.value = value
        self.grad = None
        self.parents = parents
        self.backward_fn = backward_fn
        self.needs_grad = needs_grad

    @property
    def shape(self):
        return np.shape(self.value)


def _unbroadcast(grad, shape):
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Tape:
    def __init__(self):
        self.nodes: list[Node] = []

    def _record(self, value, parents, backward_fn):
        needs = any(p.needs_grad for p in parents)
        node = Node(value, tuple(parents), backward_fn if needs else None, needs)
        self.nodes.append(node)
        return node

    def leaf(self, value) -> Node:
        node = Node(np.asarray(value, dtype=float), needs_grad=True)
        self.nodes.append(node)
        return node

    def constant(self, value) -> Node:
        return Node(np.asarray(value, dtype=float))

    # elementwise and linear ops
    def add(self, a: Node, b: Node) -> Node:
        def back(g):
            return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

        return self._record(a.value + b.value, (a, b), back)

    def mul(self, a: Node, b: Node) -> Node:
        def back(g):
            return _unbroadcast(g * b.value, a.shape), _unbroadcast(g * a.value, b.shape)

        return self._record(a.value * b.value, (a, b), back)

    def matmul(self, a: Node, b: Node) -> Node:
        def back(g):
            ga = g @ b.value.T if a.needs_grad else None
            gb = a.value.T @ g if b.needs_grad else None
            return ga, gb

        return self._record(a.value @ b.value, (a, b), back)

    def einsum(self, spec: str, a: Node, b: Node) -> Node:
        """Two-operand einsum without repeated or summed-only-on-one-side indices."""
        ins, out = spec.split("->")
        sa, sb = ins.split(",")

        def back(g):
            ga = np.einsum(f"{out},{sb}->{sa}", g, b.value) if a.needs_grad else None
            gb = np.einsum(f"{sa},{out}->{sb}", a.value, g) if b.needs_grad else None
            return ga, gb

        return self._record(np.einsum(spec, a.value, b.value), (a, b), back)

    def sum(self, a: Node) -> Node:
        def back(g):
            return (np.broadcast_to(g, a.shape).copy(),)

        return self._record(np.sum(a.value), (a,), back)

    def elu(self, a: Node) -> Node:
        def back(g):
            return (g * elu_grad(a.value),)

        return self._record(elu(a.value), (a,), back)

    def softplus(self, a: Node) -> Node:
        def back(g):
            # d/dx log(1 + e^x) = sigmoid(x)
            return (g * np.exp(-np.logaddexp(0.0, -a.value)),)

        return self._record(softplus(a.value), (a,), back)

    def reshape(self, a: Node, shape) -> Node:
        def back(g):
            return (g.reshape(a.shape),)

        return self._record(np.reshape(a.value, shape), (a,), back)

    # fused ops
    def monotone_subnet(self, theta: Node, weights: list, biases: list) -> Node:
        """delta (B, J, M) from theta (B,) and effective subnet weights."""
        wv = [w.value for w in weights]
        bv = [b.value for b in biases]
        value = kernels.subnet_forward(theta.value, wv, bv)

        def back(g):
            gt, gw, gb = kernels.subnet_backward(g, theta.value, wv, bv)
            return (gt, *gw, *gb)

        return self._record(value, (theta, *weights, *biases), back)

    def categorical_nll(self, z: Node, mask: np.ndarray, codes: np.ndarray) -> Node:
        """-sum log(max(softmax(z)[observed], 1e-10)) over persons and items."""
        zm = np.where(mask[None], z.value, -np.inf)
        zmax = zm.max(axis=2, keepdims=True)
        e = np.exp(zm - zmax)
        tot = e.sum(axis=2, keepdims=True)
        lse = zmax + np.log(tot)
        z_obs = np.take_along_axis(z.value, codes[:, :, None], axis=2)
        lp_obs = (z_obs - lse)[:, :, 0]
        value = -np.maximum(lp_obs, LOG_FLOOR).sum()

        def back(g):
            p = e / tot
            active = (lp_obs > LOG_FLOOR)[:, :, None]
            grad = p.copy()
            np.put_along_axis(grad, codes[:, :, None], np.take_along_axis(p, codes[:, :, None], axis=2) - 1.0, axis=2)
            return (g * grad * active,)

        return self._record(value, (z,), back)

    def backward(self, out: Node) -> None:
        out.grad = np.ones_like(out.value, dtype=float)
        for node in reversed(self.nodes):
            if node.grad is None or node.backward_fn is None:
                continue
            for parent, g in zip(node.parents, node.backward_fn(node.grad)):
                if g is None or not parent.needs_grad:
                    continue
                parent.grad = g if parent.grad is None else parent.grad + g


# parameter storage ------------------------------------------------------------


class ParamStore:
    """All trainable scalars in one flat vector, addressed by name."""

    def __init__(self, shapes: dict):
        self.slices = {}
        self.shapes = {}
        offset = 0
        for name, shape in shapes.items():
            size = int(np.prod(shape))
            self.slices[name] = slice(offset, offset + size)
            self.shapes[name] = tuple(shape)
            offset += size
        self.vector = np.zeros(offset)

    def __len__(self):
        return self.vector.size

    def names(self):
        return list(self.slices)

    def __getitem__(self, name) -> np.ndarray:
        return self.vector[self.slices[name]].reshape(self.shapes[name])

    def __setitem__(self, name, value):
        self.vector[self.slices[name]] = np.asarray(value, dtype=float).ravel()

    def copy(self) -> ParamStore:
        other = ParamStore.__new__(ParamStore)
        other.slices = dict(self.slices)
        other.shapes = dict(self.shapes)
        other.vector = self.vector.copy()
        return other

    def flatten_grads(self, grads: dict) -> np.ndarray:
        out = np.zeros_like(self.vector)
        for name, g in grads.items():
            if g is not None:
                out[self.slices[name]] = np.asarray(g).ravel()
        return out


@dataclass(frozen=True)
class AutoencoderLayout:
    """Static structure shared by the loss graph and the numpy re-evaluation."""

    variant: str
    categories: tuple
    correct: tuple
    n_layers: int = 1
    bounds: tuple = (-10.0, 10.0)

    @property
    def mask(self):
        return option_mask(self.categories)

    @property
    def width(self) -> int:
        return int(sum(self.categories))

    @property
    def hidden(self) -> int:
        return 2 * self.width

    def param_shapes(self) -> dict:
        j, m = len(self.categories), max(self.categories)
        shapes = {
            "enc.W1": (self.width, self.hidden),
            "enc.b1": (self.hidden,),
            "enc.W2": (self.hidden, 1),
            "enc.b2": (1,),
        }
        if self.variant == "nr":
            shapes.update({"dec.a": (j, m), "dec.b": (j, m)})
        elif self.variant == "mmc":
            shapes.update({"dec.tau": (j,), "dec.b": (j, m)})
            for layer in range(self.n_layers):
                shapes[f"dec.w{layer}"] = (j, m, 3) if layer == 0 else (j, m, 3, 3)
                shapes[f"dec.c{layer}"] = (j, m, 3)
        else:
            raise ValueError(f"unknown variant {self.variant!r}")
        return shapes


def build_graph(tape: Tape, params: ParamStore, layout: AutoencoderLayout, batch, codes):
    """Record encoder + decoder + loss; returns (loss node, theta node, leaves)."""
    leaves = {name: tape.leaf(params[name]) for name in params.names()}
    x = tape.constant(batch)
    hidden = tape.elu(tape.add(tape.matmul(x, leaves["enc.W1"]), leaves["enc.b1"]))
    raw = tape.add(tape.matmul(hidden, leaves["enc.W2"]), leaves["enc.b2"])
    theta = tape.reshape(raw, (batch.shape[0],))
    if layout.variant == "nr":
        th = tape.reshape(theta, (batch.shape[0], 1, 1))
        z = tape.add(tape.mul(th, leaves["dec.a"]), leaves["dec.b"])
    else:
        weights = [tape.softplus(leaves[f"dec.w{k}"]) for k in range(layout.n_layers)]
        biases = [leaves[f"dec.c{k}"] for k in range(layout.n_layers)]
        delta = tape.monotone_subnet(theta, weights, biases)
        sum_map = tape.constant(correct_sum_map(layout.categories, layout.correct))
        shaped = tape.einsum("bjt,jtm->bjm", delta, sum_map)
        z = tape.add(tape.mul(shaped, tape.reshape(leaves["dec.tau"], (1, -1, 1))), leaves["dec.b"])
    loss = tape.categorical_nll(z, layout.mask, np.asarray(codes, dtype=np.int64))
    return loss, theta, leaves


def forward_nll(params: ParamStore, batch, codes, layout: AutoencoderLayout) -> float:
    """Negative log-likelihood of a batch (sum over persons and items)."""
    tape = Tape()
    loss, _, _ = build_graph(tape, params, layout, batch, codes)
    value = float(loss.value)
    if not np.isfinite(value):
        raise NumericError("non-finite loss in forward pass")
    return value


def loss_and_grad(params: ParamStore, batch, codes, layout: AutoencoderLayout):
    """(loss, flat gradient vector, theta values of the batch)."""
    tape = Tape()
    loss, theta, leaves = build_graph(tape, params, layout, batch, codes)
    value = float(loss.value)
    if not np.isfinite(value):
        raise NumericError("non-finite loss in forward pass")
    tape.backward(loss)
    grads = params.flatten_grads({name: leaf.grad for name, leaf in leaves.items()})
    return value, grads, theta.value


def backward(params: ParamStore, batch, codes, layout: AutoencoderLayout) -> np.ndarray:
    return loss_and_grad(params, batch, codes, layout)[1]
