"""Minimal dense autograd engine: 2-D float64 tensors, a small fixed op set,
reverse-mode gradients via the recorded computation, and a finite-difference
gradient checker.

Everything is double precision. Ops record their backward closure on the
output node; ``gradient(loss)`` walks the recording in reverse topological
order. The op set is intentionally tiny: matmul, bias add, elementwise
add/mul/affine, relu/tanh/sigmoid, log/exp, full reductions, row L2
normalization, and a fused diagonal-target softmax cross-entropy.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

ACTIVATIONS = ("relu", "tanh", "sigmoid", "identity")


class ShapeError(ValueError):
    """Operands have incompatible dimensions."""


class TapeStateError(RuntimeError):
    """Backward requested on a node with no recorded computation."""


class Tensor2:
    """A rows x cols float64 matrix, optionally tracked for gradients.

    Values are immutable once produced by an op; ``grad`` accumulates the
    gradient of the most recent ``gradient()`` call.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.ascontiguousarray(data, dtype=np.float64)
        if arr.ndim == 1:
            arr = arr.reshape(1, -1)
        if arr.ndim != 2:
            raise ShapeError(f"Tensor2 must be 2-D, got shape {arr.shape}")
        self.data = arr
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = ()
        self._backward = None

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def cols(self) -> int:
        return self.data.shape[1]

    @property
    def shape(self):
        return self.data.shape

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a 1x1 tensor, got {self.shape}")
        return float(self.data[0, 0])

    def __repr__(self):
        return f"Tensor2(shape={self.shape}, requires_grad={self.requires_grad})"


def constant(data) -> Tensor2:
    """Wrap an array as a non-learnable tensor."""
    return Tensor2(data, requires_grad=False)


def parameter(data) -> Tensor2:
    """Wrap an array as a learnable tensor."""
    return Tensor2(data, requires_grad=True)


def _make(data, parents, backward) -> Tensor2:
    out = Tensor2(data)
    out.requires_grad = any(p.requires_grad for p in parents)
    if out.requires_grad or parents:
        out._parents = tuple(parents)
        out._backward = backward
    if not np.all(np.isfinite(out.data)):
        raise FloatingPointError("op produced a non-finite value")
    return out


def _accum(t: Tensor2, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = g.copy()
    else:
        t.grad += g


def matmul(a: Tensor2, b: Tensor2, transpose_b: bool = False) -> Tensor2:
    """a @ b, or a @ b.T when transpose_b is set."""
    bd = b.data.T if transpose_b else b.data
    if a.cols != bd.shape[0]:
        raise ShapeError(f"matmul: {a.shape} x {b.shape} (transpose_b={transpose_b})")
    out_data = a.data @ bd

    def backward(g):
        if transpose_b:
            _accum(a, g @ b.data)
            _accum(b, g.T @ a.data)
        else:
            _accum(a, g @ b.data.T)
            _accum(b, a.data.T @ g)

    return _make(out_data, (a, b), backward)


def add(a: Tensor2, b: Tensor2) -> Tensor2:
    if a.shape != b.shape:
        raise ShapeError(f"add: {a.shape} vs {b.shape}")

    def backward(g):
        _accum(a, g)
        _accum(b, g)

    return _make(a.data + b.data, (a, b), backward)


def add_bias(x: Tensor2, bias: Tensor2) -> Tensor2:
    """Add a 1 x cols row vector to every row of x."""
    if bias.rows != 1 or bias.cols != x.cols:
        raise ShapeError(f"add_bias: x {x.shape}, bias {bias.shape}")

    def backward(g):
        _accum(x, g)
        _accum(bias, g.sum(axis=0, keepdims=True))

    return _make(x.data + bias.data, (x, bias), backward)


def mul(a: Tensor2, b: Tensor2) -> Tensor2:
    if a.shape != b.shape:
        raise ShapeError(f"mul: {a.shape} vs {b.shape}")

    def backward(g):
        _accum(a, g * b.data)
        _accum(b, g * a.data)

    return _make(a.data * b.data, (a, b), backward)


def affine(x: Tensor2, scale: float, shift: float = 0.0) -> Tensor2:
    """scale * x + shift with python-float constants."""

    def backward(g):
        _accum(x, g * scale)

    return _make(scale * x.data + shift, (x,), backward)


def relu(x: Tensor2) -> Tensor2:
    out_data = np.maximum(x.data, 0.0)

    def backward(g):
        _accum(x, g * (x.data > 0.0))

    return _make(out_data, (x,), backward)


def tanh(x: Tensor2) -> Tensor2:
    out_data = np.tanh(x.data)

    def backward(g):
        _accum(x, g * (1.0 - out_data * out_data))

    return _make(out_data, (x,), backward)


def sigmoid(x: Tensor2) -> Tensor2:
    out_data = np.empty_like(x.data)
    pos = x.data >= 0
    out_data[pos] = 1.0 / (1.0 + np.exp(-x.data[pos]))
    ex = np.exp(x.data[~pos])
    out_data[~pos] = ex / (1.0 + ex)

    def backward(g):
        _accum(x, g * out_data * (1.0 - out_data))

    return _make(out_data, (x,), backward)


def log(x: Tensor2) -> Tensor2:
    if np.any(x.data <= 0.0):
        raise FloatingPointError("log of a non-positive value")

    def backward(g):
        _accum(x, g / x.data)

    return _make(np.log(x.data), (x,), backward)


def exp(x: Tensor2) -> Tensor2:
    out_data = np.exp(x.data)

    def backward(g):
        _accum(x, g * out_data)

    return _make(out_data, (x,), backward)


def reduce_sum(x: Tensor2) -> Tensor2:
    def backward(g):
        _accum(x, np.full_like(x.data, g[0, 0]))

    return _make([[x.data.sum()]], (x,), backward)


def reduce_mean(x: Tensor2) -> Tensor2:
    n = x.data.size

    def backward(g):
        _accum(x, np.full_like(x.data, g[0, 0] / n))

    return _make([[x.data.mean()]], (x,), backward)


def l2_normalize_rows(x: Tensor2, eps: float = 1e-12) -> Tensor2:
    """Scale every row to unit L2 norm."""
    norms = np.sqrt((x.data * x.data).sum(axis=1, keepdims=True))
    norms = np.maximum(norms, eps)
    out_data = x.data / norms

    def backward(g):
        # d(x/|x|) pulls back as (g - y * <y, g>_row) / |x|
        dot = (g * out_data).sum(axis=1, keepdims=True)
        _accum(x, (g - out_data * dot) / norms)

    return _make(out_data, (x,), backward)


def softmax_xent_diag(logits: Tensor2, row_weights: np.ndarray | None = None) -> Tensor2:
    """Fused stable cross-entropy with the diagonal as targets.

    loss = (1/B) * sum_i w_i * (logsumexp(logits[i]) - logits[i][i]),
    with w = 1 when row_weights is None. Weights are plain constants.
    """
    z = logits.data
    if z.shape[0] != z.shape[1]:
        raise ShapeError(f"softmax_xent_diag needs square logits, got {z.shape}")
    b = z.shape[0]
    if row_weights is None:
        w = np.ones(b)
    else:
        w = np.asarray(row_weights, dtype=np.float64).reshape(-1)
        if w.shape[0] != b:
            raise ShapeError(f"row_weights length {w.shape[0]} != batch {b}")
    m = z.max(axis=1, keepdims=True)
    ez = np.exp(z - m)
    denom = ez.sum(axis=1, keepdims=True)
    lse = m[:, 0] + np.log(denom[:, 0])
    losses = lse - np.diag(z)
    loss = float((w * losses).sum() / b)
    probs = ez / denom

    def backward(g):
        d = probs.copy()
        d[np.arange(b), np.arange(b)] -= 1.0
        _accum(logits, d * (g[0, 0] * w / b)[:, None])

    return _make([[loss]], (logits,), backward)


def gradient(loss: Tensor2) -> None:
    """Reverse-mode pass from a recorded scalar loss; fills ``.grad`` fields.

    Raises TapeStateError when the node was not produced by a recorded
    computation. Gradients accumulate across calls until cleared.
    """
    if loss.data.size != 1:
        raise ShapeError(f"gradient() needs a scalar loss, got shape {loss.shape}")
    if loss._backward is None:
        raise TapeStateError("no recorded computation leads to this node")

    order = []
    seen = set()
    stack = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))

    loss.grad = np.ones((1, 1))
    for node in reversed(order):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)


def grads_for(loss: Tensor2, params: list[Tensor2]) -> list[np.ndarray]:
    """Gradients for ``params``; parameters the loss never touched get zeros."""
    gradient(loss)
    return [p.grad if p.grad is not None else np.zeros_like(p.data) for p in params]


def zero_grads(params) -> None:
    for p in params:
        p.grad = None


@dataclass
class MlpLayer:
    weight: Tensor2  # out x in
    bias: Tensor2  # 1 x out
    activation: str = "identity"

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.weight.rows != self.bias.cols or self.bias.rows != 1:
            raise ShapeError(
                f"layer weight {self.weight.shape} incompatible with bias {self.bias.shape}"
            )


@dataclass
class MlpParams:
    layers: list[MlpLayer] = field(default_factory=list)

    def __post_init__(self):
        for prev, cur in zip(self.layers, self.layers[1:]):
            if cur.weight.cols != prev.weight.rows:
                raise ShapeError(
                    f"layer dims mismatch: {prev.weight.shape} -> {cur.weight.shape}"
                )

    @property
    def in_dim(self) -> int:
        return self.layers[0].weight.cols

    @property
    def out_dim(self) -> int:
        return self.layers[-1].weight.rows

    def parameters(self) -> list[Tensor2]:
        out = []
        for layer in self.layers:
            out.append(layer.weight)
            out.append(layer.bias)
        return out


_ACT_FNS = {"relu": relu, "tanh": tanh, "sigmoid": sigmoid, "identity": lambda t: t}


def mlp_forward(params: MlpParams, x: Tensor2) -> Tensor2:
    """Apply every layer: act(x @ W.T + b)."""
    h = x
    for layer in params.layers:
        h = add_bias(matmul(h, layer.weight, transpose_b=True), layer.bias)
        h = _ACT_FNS[layer.activation](h)
    return h


def mlp_init(
    dims: list[int],
    activations: list[str] | str,
    rng: np.random.Generator,
    zero_last: bool = False,
) -> MlpParams:
    """He-style random init; ``zero_last`` zeroes the final layer (residual use)."""
    n_layers = len(dims) - 1
    if isinstance(activations, str):
        activations = [activations] * (n_layers - 1) + ["identity"]
    if len(activations) != n_layers:
        raise ValueError("one activation per layer required")
    layers = []
    for i in range(n_layers):
        fan_in = dims[i]
        w = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(dims[i + 1], dims[i]))
        if zero_last and i == n_layers - 1:
            w = np.zeros_like(w)
        layers.append(
            MlpLayer(parameter(w), parameter(np.zeros((1, dims[i + 1]))), activations[i])
        )
    return MlpParams(layers)


def grad_check(loss_fn, params: list[Tensor2], eps: float = 1e-5) -> float:
    """Max symmetric relative error between recorded and central-difference grads.

    ``loss_fn(params) -> Tensor2`` must rebuild the computation on every call.
    Error per coordinate: |analytic - numeric| / max(1e-12, |analytic| + |numeric|).
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    zero_grads(params)
    loss = loss_fn(params)
    analytic = grads_for(loss, params)
    zero_grads(params)

    worst = 0.0
    for p, ga in zip(params, analytic):
        flat = p.data.reshape(-1)
        ga_flat = ga.reshape(-1)
        for idx in range(flat.size):
            orig = flat[idx]
            flat[idx] = orig + eps
            f_plus = loss_fn(params).item()
            flat[idx] = orig - eps
            f_minus = loss_fn(params).item()
            flat[idx] = orig
            if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
                raise FloatingPointError(
                    f"non-finite loss while perturbing coordinate {idx}"
                )
            numeric = (f_plus - f_minus) / (2.0 * eps)
            err = abs(ga_flat[idx] - numeric) / max(1e-12, abs(ga_flat[idx]) + abs(numeric))
            worst = max(worst, err)
    zero_grads(params)
    return worst
