"""Reverse-mode automatic differentiation for the attention pipeline.

A tape records every operation of a fixed, closed set: matrix multiply,
add, relu, layer norm, masked softmax, logistic, elementwise scaling,
slicing (with concatenation and scatter as its duals), broadcasting,
and the fused binary cross-entropy head.  Arrays may carry arbitrary
leading batch dimensions; operations contract over the trailing axes
exactly as the single-example pipeline does, so a batched tape forward
reproduces the plain forward column for column.

The Eager class exposes the same method surface but computes plain
arrays without recording, sharing the forward formulas, so evaluation
code and training code run one implementation.
"""

from __future__ import annotations

import warnings

import numpy as np

from .errors import ConfigError

LN_EPS = 1e-5
BCE_CLAMP = 1e-12


def _mt(x: np.ndarray) -> np.ndarray:
    return np.swapaxes(x, -1, -2)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum an upstream gradient back down to a broadcast operand's shape."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.reshape(shape)


# ---------------------------------------------------------------------------
# Shared forward formulas


def matmul_values(av, bv, ta=False, tb=False):
    left = _mt(av) if ta else av
    right = _mt(bv) if tb else bv
    return left @ right


def layer_norm_values(xv, gv, bv):
    """Column-wise normalization; returns (normalized, affine output)."""
    mean = xv.mean(axis=-2, keepdims=True)
    var = xv.var(axis=-2, keepdims=True)
    normed = (xv - mean) / np.sqrt(var + LN_EPS)
    return normed, gv[..., :, None] * normed + bv[..., :, None]


def softmax_mask_values(sv, allowed):
    masked = np.where(allowed, sv, -np.inf)
    masked = masked - masked.max(axis=-2, keepdims=True)
    w = np.exp(masked)
    return w / w.sum(axis=-2, keepdims=True)


def logistic_values(xv):
    out = np.empty_like(xv)
    pos = xv >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-xv[pos]))
    ex = np.exp(xv[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def bce_values(pv, bv):
    """Returns (clipped probabilities, mean loss as a 0-d array)."""
    clipped = np.clip(pv, BCE_CLAMP, 1.0 - BCE_CLAMP)
    losses = -(bv * np.log(clipped) + (1.0 - bv) * np.log1p(-clipped))
    return clipped, np.asarray(losses.mean())


def _check_mask(allowed) -> np.ndarray:
    allowed = np.asarray(allowed, dtype=bool)
    if not np.all(allowed.any(axis=-2)):
        raise ConfigError("mask blocks every position for some column")
    return allowed


def _check_ln_rows(xv) -> None:
    if xv.shape[-2] < 2:
        raise ConfigError("layer norm needs at least two rows per column")


# ---------------------------------------------------------------------------
# Recorded execution


class Node:
    """One recorded value with storage for its adjoint."""

    __slots__ = ("value", "parents", "grad_fn", "recompute_fn", "requires_grad",
                 "grad", "name", "clamped")

    def __init__(self, value, parents=(), grad_fn=None, recompute_fn=None,
                 requires_grad=False, name=""):
        self.value = value
        self.parents = parents
        self.grad_fn = grad_fn
        self.recompute_fn = recompute_fn
        self.requires_grad = requires_grad
        self.grad = None
        self.name = name
        self.clamped = False


class Tape:
    """Records a computation and plays its adjoints backward."""

    def __init__(self) -> None:
        self.nodes: list[Node] = []

    # -- node creation ------------------------------------------------------

    def _register(self, node: Node) -> Node:
        self.nodes.append(node)
        return node

    def leaf(self, value, name: str = "") -> Node:
        """A trainable input; backward() leaves its gradient on .grad."""
        return self._register(
            Node(np.asarray(value, dtype=np.float64), requires_grad=True, name=name)
        )

    def constant(self, value, name: str = "") -> Node:
        """Data the loss is never differentiated against."""
        return self._register(
            Node(np.asarray(value, dtype=np.float64), requires_grad=False, name=name)
        )

    def _op(self, value, parents, grad_fn, recompute_fn, name) -> Node:
        requires = any(p.requires_grad for p in parents)
        node = Node(value, parents, grad_fn, recompute_fn, requires, name)
        return self._register(node)

    # -- operator set -------------------------------------------------------

    def matmul(self, a: Node, b: Node, ta: bool = False, tb: bool = False) -> Node:
        value = matmul_values(a.value, b.value, ta, tb)

        def grad_fn(g):
            av, bv = a.value, b.value
            left = _mt(av) if ta else av
            right = _mt(bv) if tb else bv
            ga = gb = None
            if a.requires_grad:
                gl = g @ _mt(right)
                ga = _unbroadcast(_mt(gl) if ta else gl, av.shape)
            if b.requires_grad:
                gr = _mt(left) @ g
                gb = _unbroadcast(_mt(gr) if tb else gr, bv.shape)
            return ga, gb

        return self._op(value, (a, b), grad_fn,
                        lambda: matmul_values(a.value, b.value, ta, tb), "matmul")

    def add(self, a: Node, b: Node) -> Node:
        value = a.value + b.value

        def grad_fn(g):
            return (_unbroadcast(g, a.value.shape),
                    _unbroadcast(g, b.value.shape))

        return self._op(value, (a, b), grad_fn,
                        lambda: a.value + b.value, "add")

    def scale(self, x: Node, s) -> Node:
        """Elementwise scaling by a constant scalar/array or another node."""
        if isinstance(s, Node):
            value = x.value * s.value

            def grad_fn(g):
                return (_unbroadcast(g * s.value, x.value.shape),
                        _unbroadcast(g * x.value, s.value.shape))

            return self._op(value, (x, s), grad_fn,
                            lambda: x.value * s.value, "scale")
        factor = np.asarray(s, dtype=np.float64)
        value = x.value * factor

        def grad_const(g):
            return (_unbroadcast(g * factor, x.value.shape),)

        return self._op(value, (x,), grad_const,
                        lambda: x.value * factor, "scale")

    def relu(self, x: Node) -> Node:
        value = np.maximum(x.value, 0.0)

        def grad_fn(g):
            return (g * (x.value > 0.0),)

        return self._op(value, (x,), grad_fn,
                        lambda: np.maximum(x.value, 0.0), "relu")

    def layer_norm(self, x: Node, gain: Node, bias: Node) -> Node:
        """Column-wise normalization over the row axis (axis -2)."""
        _check_ln_rows(x.value)
        normed, value = layer_norm_values(x.value, gain.value, bias.value)

        def grad_fn(g):
            var = x.value.var(axis=-2, keepdims=True)
            inv_std = 1.0 / np.sqrt(var + LN_EPS)
            g_normed = g * gain.value[..., :, None]
            mean_g = g_normed.mean(axis=-2, keepdims=True)
            mean_gx = (g_normed * normed).mean(axis=-2, keepdims=True)
            gx = inv_std * (g_normed - mean_g - normed * mean_gx)
            ggain = _unbroadcast((g * normed).sum(axis=-1), gain.value.shape)
            gbias = _unbroadcast(g.sum(axis=-1), bias.value.shape)
            return gx, ggain, gbias

        return self._op(
            value, (x, gain, bias), grad_fn,
            lambda: layer_norm_values(x.value, gain.value, bias.value)[1],
            "layer_norm",
        )

    def softmax_mask(self, scores: Node, allowed: np.ndarray) -> Node:
        """Column-wise masked softmax; blocked rows get exactly zero weight."""
        allowed = _check_mask(allowed)
        value = softmax_mask_values(scores.value, allowed)

        def grad_fn(g):
            inner = (g * value).sum(axis=-2, keepdims=True)
            return (value * (g - inner),)

        return self._op(value, (scores,), grad_fn,
                        lambda: softmax_mask_values(scores.value, allowed),
                        "softmax_mask")

    def logistic(self, x: Node) -> Node:
        value = logistic_values(x.value)

        def grad_fn(g):
            return (g * value * (1.0 - value),)

        return self._op(value, (x,), grad_fn,
                        lambda: logistic_values(x.value), "logistic")

    def slice(self, x: Node, key) -> Node:
        value = x.value[key]

        def grad_fn(g):
            gx = np.zeros_like(x.value)
            np.add.at(gx, key, g)
            return (gx,)

        return self._op(value, (x,), grad_fn, lambda: x.value[key], "slice")

    def concat(self, parts: list[Node], axis: int = -1) -> Node:
        """Stitch nodes along an axis; the adjoint splits the gradient.

        This is the inverse of slicing and shares its bookkeeping.
        """
        value = np.concatenate([p.value for p in parts], axis=axis)
        sizes = [p.value.shape[axis] for p in parts]
        splits = np.cumsum(sizes)[:-1]

        def grad_fn(g):
            return tuple(np.split(g, splits, axis=axis))

        return self._op(value, tuple(parts), grad_fn,
                        lambda: np.concatenate([p.value for p in parts], axis=axis),
                        "concat")

    def broadcast(self, x: Node, shape: tuple) -> Node:
        value = np.broadcast_to(x.value, shape).copy()

        def grad_fn(g):
            return (_unbroadcast(g, x.value.shape),)

        return self._op(value, (x,), grad_fn,
                        lambda: np.broadcast_to(x.value, shape).copy(), "broadcast")

    def bce(self, probs: Node, bits: Node) -> Node:
        """Fused mean binary cross-entropy over every element.

        Probabilities landing exactly on 0 or 1 are clamped to the
        [1e-12, 1-1e-12] interval and the node is flagged.
        """
        clipped, value = bce_values(probs.value, bits.value)
        node = self._op(value, (probs, bits), None,
                        lambda: bce_values(probs.value, bits.value)[1], "bce")
        node.clamped = bool(np.any(clipped != probs.value))

        def grad_fn(g):
            count = probs.value.size
            inside = (probs.value > BCE_CLAMP) & (probs.value < 1.0 - BCE_CLAMP)
            dp = (-bits.value / clipped + (1.0 - bits.value) / (1.0 - clipped))
            dp = np.where(inside, dp, 0.0) * (g / count)
            db = (np.log1p(-clipped) - np.log(clipped)) * (g / count)
            return dp, _unbroadcast(db, bits.value.shape)

        node.grad_fn = grad_fn
        return node

    # -- execution ----------------------------------------------------------

    def backward(self, root: Node) -> None:
        """Accumulate adjoints of every node feeding the scalar root."""
        if root.value.ndim != 0:
            raise ConfigError("backward needs a scalar root")
        for node in self.nodes:
            node.grad = None
        root.grad = np.asarray(1.0)
        for node in reversed(self.nodes):
            if node.grad is None or node.grad_fn is None:
                continue
            if not node.requires_grad:
                continue
            grads = node.grad_fn(node.grad)
            for parent, grad in zip(node.parents, grads):
                if not parent.requires_grad or grad is None:
                    continue
                if parent.grad is None:
                    parent.grad = np.zeros_like(parent.value)
                parent.grad = parent.grad + grad

    def replay(self) -> bool:
        """Recompute every node from its parents; True if all bit-identical."""
        for node in self.nodes:
            if node.recompute_fn is None:
                continue
            redone = node.recompute_fn()
            if not np.array_equal(np.asarray(redone), node.value):
                return False
        return True


class Eager:
    """Same surface as Tape, computing plain arrays with no recording."""

    @staticmethod
    def leaf(value, name: str = "") -> np.ndarray:
        return np.asarray(value, dtype=np.float64)

    @staticmethod
    def constant(value, name: str = "") -> np.ndarray:
        return np.asarray(value, dtype=np.float64)

    @staticmethod
    def matmul(a, b, ta: bool = False, tb: bool = False) -> np.ndarray:
        return matmul_values(a, b, ta, tb)

    @staticmethod
    def add(a, b) -> np.ndarray:
        return a + b

    @staticmethod
    def scale(x, s) -> np.ndarray:
        return x * (s if isinstance(s, np.ndarray) else np.asarray(s))

    @staticmethod
    def relu(x) -> np.ndarray:
        return np.maximum(x, 0.0)

    @staticmethod
    def layer_norm(x, gain, bias) -> np.ndarray:
        _check_ln_rows(x)
        return layer_norm_values(x, gain, bias)[1]

    @staticmethod
    def softmax_mask(scores, allowed) -> np.ndarray:
        return softmax_mask_values(scores, _check_mask(allowed))

    @staticmethod
    def logistic(x) -> np.ndarray:
        return logistic_values(x)

    @staticmethod
    def slice(x, key) -> np.ndarray:
        return x[key]

    @staticmethod
    def concat(parts, axis: int = -1) -> np.ndarray:
        return np.concatenate(list(parts), axis=axis)

    @staticmethod
    def broadcast(x, shape) -> np.ndarray:
        return np.broadcast_to(x, shape).copy()

    @staticmethod
    def bce(probs, bits) -> np.ndarray:
        return bce_values(probs, bits)[1]


def node_value(x) -> np.ndarray:
    """The array behind either a tape node or an eager array."""
    return x.value if isinstance(x, Node) else x


def bce_loss(probs, bits) -> float:
    """Mean binary cross-entropy between probabilities and bit labels.

    Probabilities exactly at 0 or 1 are clamped to 1e-12 away from the
    edge and a warning is issued, since they would otherwise produce
    infinities.
    """
    probs = np.asarray(probs, dtype=np.float64)
    bits = np.asarray(bits, dtype=np.float64)
    if probs.shape != bits.shape:
        raise ConfigError("probs and bits must have matching shapes")
    clipped, value = bce_values(probs, bits)
    if np.any(clipped != probs):
        warnings.warn("probabilities clamped away from {0, 1}", RuntimeWarning)
    return float(value)
