"""Minimal reverse-mode automatic differentiation over numpy arrays.

A Tensor wraps a float64 ndarray and remembers how it was produced; calling
``backward()`` on a scalar result walks the tape in reverse topological order
and accumulates gradients into every reachable tensor.  The op set is exactly
what the graph network needs: dense and sparse matrix products, elementwise
arithmetic, rectified linear units, row gathering and column concatenation,
layer normalization, stable sigmoid/log-sigmoid, and a one-dimensional
log-softmax.

Order-canonical reductions
--------------------------
Floating-point addition is not associative, so the order in which neighbor
contributions are summed leaks the node numbering into the low bits of the
result.  ``sorted_sum`` and ``sparse_matmul`` therefore sort the terms by
value before reducing: the result is a function of the term multiset only,
which makes graph-network outputs bit-for-bit equivariant under node
relabeling.  Gradients use plain (fixed-order) arithmetic — they only need
to be deterministic for a given input, not canonical across relabelings.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp


class NonFiniteGradientError(RuntimeError):
    """A gradient overflowed or turned into NaN during the backward pass."""


def sorted_sum(values):
    """Sum of a 1-D array in ascending value order (order-canonical)."""
    return float(np.sum(np.sort(np.asarray(values, dtype=float))))


def _unbroadcast(grad, shape):
    """Reduce ``grad`` back to ``shape`` by summing the broadcast axes."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    """A node in the computation tape."""

    __slots__ = ("value", "grad", "_parents", "_backward", "name")

    def __init__(self, value, parents=(), backward=None, name=None):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = None
        self._parents = tuple(parents)
        self._backward = backward
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        tag = f" {self.name!r}" if self.name else ""
        return f"Tensor{tag}(shape={self.value.shape})"

    # -- arithmetic sugar ---------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __sub__(self, other):
        return add(self, -as_tensor(other))

    def __rsub__(self, other):
        return add(as_tensor(other), -self)

    def __truediv__(self, other):
        return div(self, other)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self):
        return tensor_sum(self)

    def mean(self):
        return tensor_mean(self)

    def relu(self):
        return relu(self)

    def flatten(self):
        return flatten(self)

    # -- the backward pass --------------------------------------------------

    def backward(self):
        """Accumulate d(self)/d(leaf) into .grad over the whole tape.

        ``self`` must be a scalar.  Raises NonFiniteGradientError the moment
        any accumulated gradient stops being finite, naming the tensor.
        """
        if self.value.size != 1:
            raise ValueError("backward() starts from a scalar loss")
        order = []
        seen = set()

        def visit(t):
            if id(t) in seen:
                return
            seen.add(id(t))
            for p in t._parents:
                visit(p)
            order.append(t)

        visit(self)
        for t in order:
            t.grad = np.zeros_like(t.value)
        self.grad = np.ones_like(self.value)
        for t in reversed(order):
            if t._backward is not None:
                t._backward(t.grad)
            if not np.all(np.isfinite(t.grad)):
                raise NonFiniteGradientError(
                    f"non-finite gradient at {t.name or 'unnamed tensor'} "
                    f"with shape {t.value.shape}")


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def parameter(value, name=None):
    """A leaf tensor holding trainable weights."""
    return Tensor(np.array(value, dtype=np.float64), name=name)


# -- elementwise ops --------------------------------------------------------


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.value + b.value, parents=(a, b))

    def backward(g):
        a.grad += _unbroadcast(g, a.value.shape)
        b.grad += _unbroadcast(g, b.value.shape)

    out._backward = backward
    return out


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.value * b.value, parents=(a, b))

    def backward(g):
        a.grad += _unbroadcast(g * b.value, a.value.shape)
        b.grad += _unbroadcast(g * a.value, b.value.shape)

    out._backward = backward
    return out


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.value / b.value, parents=(a, b))

    def backward(g):
        a.grad += _unbroadcast(g / b.value, a.value.shape)
        b.grad += _unbroadcast(-g * a.value / (b.value * b.value),
                               b.value.shape)

    out._backward = backward
    return out


def relu(x):
    x = as_tensor(x)
    out = Tensor(np.maximum(x.value, 0.0), parents=(x,))

    def backward(g):
        x.grad += g * (x.value > 0.0)

    out._backward = backward
    return out


def exp(x):
    x = as_tensor(x)
    out = Tensor(np.exp(x.value), parents=(x,))

    def backward(g):
        x.grad += g * out.value

    out._backward = backward
    return out


def log(x):
    x = as_tensor(x)
    out = Tensor(np.log(x.value), parents=(x,))

    def backward(g):
        x.grad += g / x.value

    out._backward = backward
    return out


def sigmoid(x):
    x = as_tensor(x)
    v = x.value
    # evaluate in the numerically safe branch on each side
    s = np.where(v >= 0, 1.0 / (1.0 + np.exp(-np.abs(v))),
                 np.exp(-np.abs(v)) / (1.0 + np.exp(-np.abs(v))))
    out = Tensor(s, parents=(x,))

    def backward(g):
        x.grad += g * s * (1.0 - s)

    out._backward = backward
    return out


def log_sigmoid(x):
    """log(sigmoid(x)) = -softplus(-x), stable for large |x|."""
    x = as_tensor(x)
    v = x.value
    out_value = np.where(v >= 0, -np.log1p(np.exp(-np.abs(v))),
                         v - np.log1p(np.exp(-np.abs(v))))
    out = Tensor(out_value, parents=(x,))

    def backward(g):
        # d/dx log(sigmoid(x)) = sigmoid(-x)
        s = np.where(v >= 0, np.exp(-np.abs(v)) / (1.0 + np.exp(-np.abs(v))),
                     1.0 / (1.0 + np.exp(-np.abs(v))))
        x.grad += g * s

    out._backward = backward
    return out


# -- shape ops --------------------------------------------------------------


def flatten(x):
    x = as_tensor(x)
    out = Tensor(x.value.reshape(-1), parents=(x,))

    def backward(g):
        x.grad += g.reshape(x.value.shape)

    out._backward = backward
    return out


def concat_columns(tensors):
    tensors = [as_tensor(t) for t in tensors]
    out = Tensor(np.concatenate([t.value for t in tensors], axis=1),
                 parents=tuple(tensors))
    widths = [t.value.shape[1] for t in tensors]

    def backward(g):
        start = 0
        for t, w in zip(tensors, widths):
            t.grad += g[:, start:start + w]
            start += w

    out._backward = backward
    return out


def gather_rows(x, indices):
    x = as_tensor(x)
    indices = np.asarray(indices, dtype=int)
    out = Tensor(x.value[indices], parents=(x,))

    def backward(g):
        np.add.at(x.grad, indices, g)

    out._backward = backward
    return out


# -- reductions -------------------------------------------------------------


def tensor_sum(x):
    x = as_tensor(x)
    out = Tensor(x.value.sum(), parents=(x,))

    def backward(g):
        x.grad += np.broadcast_to(g, x.value.shape)

    out._backward = backward
    return out


def tensor_mean(x):
    x = as_tensor(x)
    n = x.value.size
    out = Tensor(x.value.sum() / n, parents=(x,))

    def backward(g):
        x.grad += np.broadcast_to(g / n, x.value.shape)

    out._backward = backward
    return out


# -- linear algebra ---------------------------------------------------------


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.value @ b.value, parents=(a, b))

    def backward(g):
        a.grad += g @ b.value.T
        b.grad += a.value.T @ g

    out._backward = backward
    return out


def sparse_matmul(matrix, x):
    """Product of a constant sparse matrix with a tensor, order-canonical.

    Each output entry is the sum of its nonzero terms taken in ascending
    value order, so relabeling the matrix columns (with the matching row
    permutation of ``x``) reproduces the permuted output bit-for-bit.  The
    backward pass multiplies by the transpose with ordinary sparse kernels.
    """
    matrix = matrix.tocsr()
    x = as_tensor(x)
    terms = matrix.data[:, None] * x.value[matrix.indices, :]
    result = np.zeros((matrix.shape[0], x.value.shape[1]))
    indptr = matrix.indptr
    for i in range(matrix.shape[0]):
        seg = terms[indptr[i]:indptr[i + 1]]
        if seg.shape[0]:
            result[i] = np.sum(np.sort(seg, axis=0), axis=0)
    out = Tensor(result, parents=(x,))
    transpose = matrix.T.tocsr()

    def backward(g):
        x.grad += transpose @ g

    out._backward = backward
    return out


def layer_norm(x, gain, bias, eps=1e-5):
    """Row-wise normalization to zero mean / unit variance, then affine."""
    x, gain, bias = as_tensor(x), as_tensor(gain), as_tensor(bias)
    v = x.value
    d = v.shape[1]
    mu = v.mean(axis=1, keepdims=True)
    centered = v - mu
    var = (centered * centered).mean(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    x_hat = centered * inv
    out = Tensor(x_hat * gain.value + bias.value, parents=(x, gain, bias))

    def backward(g):
        gain.grad += _unbroadcast(g * x_hat, gain.value.shape)
        bias.grad += _unbroadcast(g, bias.value.shape)
        g_hat = g * gain.value
        g_var = np.sum(g_hat * centered, axis=1, keepdims=True) * (-0.5) * inv ** 3
        g_mu = np.sum(-g_hat * inv, axis=1, keepdims=True) \
            + g_var * np.mean(-2.0 * centered, axis=1, keepdims=True)
        x.grad += g_hat * inv + g_var * 2.0 * centered / d + g_mu / d

    out._backward = backward
    return out


def log_softmax(x):
    """Log-probabilities of a 1-D logit vector, order-canonical normalizer.

    Max-shifted for stability; the sum of shifted exponentials is taken in
    ascending value order so the distribution over a candidate set does not
    depend on how the candidates were numbered.
    """
    x = as_tensor(x)
    v = x.value
    if v.ndim != 1 or v.size == 0:
        raise ValueError("log_softmax expects a non-empty 1-D vector")
    shift = v - v.max()
    total = sorted_sum(np.exp(shift))
    out_value = shift - np.log(total)
    out = Tensor(out_value, parents=(x,))
    p = np.exp(out_value)

    def backward(g):
        x.grad += g - p * g.sum()

    out._backward = backward
    return out


# -- optimization -----------------------------------------------------------


class Adam:
    """Adam over a name -> Tensor parameter dictionary."""

    def __init__(self, params, lr=1e-4, betas=(0.9, 0.999), eps=1e-8):
        self.params = params
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.t = 0
        self._m = {k: np.zeros_like(p.value) for k, p in params.items()}
        self._v = {k: np.zeros_like(p.value) for k, p in params.items()}

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def step(self):
        self.t += 1
        for key, p in self.params.items():
            if p.grad is None:
                continue
            g = p.grad
            if not np.all(np.isfinite(g)):
                raise NonFiniteGradientError(f"non-finite gradient for {key}")
            m = self._m[key]
            v = self._v[key]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            m_hat = m / (1.0 - self.beta1 ** self.t)
            v_hat = v / (1.0 - self.beta2 ** self.t)
            p.value -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)
