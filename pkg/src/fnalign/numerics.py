"""Dense float64 tensor graph with hand-derived reverse-mode gradients.

Values are plain numpy float64 arrays (0-d arrays play the role of scalars).
Each operation builds a Node holding the forward value, a gradient buffer of
the same shape, and a backward rule that scatters d(loss)/d(output) into its
inputs. The graph is fixed and shallow, so every rule is written out by hand
and certified by `finite_difference_check`.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import DegenerateInputError, DimensionError, NumericError


def as_f64(value) -> np.ndarray:
    return np.asarray(value, dtype=np.float64)


class Node:
    """Graph node: forward value, gradient buffer, and producing rule."""

    __slots__ = ("value", "grad", "_parents", "_backward")

    def __init__(self, value, parents: tuple = (), backward: Callable[[], None] | None = None):
        self.value = as_f64(value)
        self.grad = np.zeros_like(self.value)
        self._parents = parents
        self._backward = backward

    @property
    def shape(self) -> tuple:
        return self.value.shape

    def item(self) -> float:
        return float(self.value)

    def __repr__(self) -> str:
        return f"Node(shape={self.value.shape}, leaf={not self._parents})"


def param(value) -> Node:
    """Leaf node owning its array; perturbations mutate `value` in place."""
    return Node(value)


def constant(value) -> Node:
    return Node(value)


def zero_grads(nodes: Iterable[Node]) -> None:
    for node in nodes:
        node.grad[...] = 0.0


def _require_same_shape(a: Node, b: Node, op: str) -> None:
    if a.value.shape != b.value.shape:
        raise DimensionError(f"{op}: shapes {a.value.shape} and {b.value.shape} do not conform")


# ---------------------------------------------------------------------------
# elementwise and linear algebra
# ---------------------------------------------------------------------------

def add(a: Node, b: Node) -> Node:
    _require_same_shape(a, b, "add")
    out = Node(a.value + b.value, (a, b))

    def _backward():
        a.grad += out.grad
        b.grad += out.grad

    out._backward = _backward
    return out


def sub(a: Node, b: Node) -> Node:
    _require_same_shape(a, b, "sub")
    out = Node(a.value - b.value, (a, b))

    def _backward():
        a.grad += out.grad
        b.grad -= out.grad

    out._backward = _backward
    return out


def mul(a: Node, b: Node) -> Node:
    _require_same_shape(a, b, "mul")
    out = Node(a.value * b.value, (a, b))

    def _backward():
        a.grad += out.grad * b.value
        b.grad += out.grad * a.value

    out._backward = _backward
    return out


def scale(x: Node, c: float) -> Node:
    out = Node(x.value * c, (x,))

    def _backward():
        x.grad += out.grad * c

    out._backward = _backward
    return out


def neg(x: Node) -> Node:
    return scale(x, -1.0)


def add_const(x: Node, c) -> Node:
    out = Node(x.value + as_f64(c), (x,))

    def _backward():
        x.grad += out.grad

    out._backward = _backward
    return out


def square(x: Node) -> Node:
    out = Node(x.value * x.value, (x,))

    def _backward():
        x.grad += out.grad * 2.0 * x.value

    out._backward = _backward
    return out


def matmul(A: Node, B: Node) -> Node:
    """2-d @ 1-d or 2-d @ 2-d; dL/dA = g outer/@ B, dL/dB = A.T @ g."""
    av, bv = A.value, B.value
    if av.ndim != 2 or bv.ndim not in (1, 2) or av.shape[1] != bv.shape[0]:
        raise DimensionError(f"matmul: shapes {av.shape} and {bv.shape} do not conform")
    out = Node(av @ bv, (A, B))

    if bv.ndim == 1:
        def _backward():
            A.grad += np.outer(out.grad, bv)
            B.grad += av.T @ out.grad
    else:
        def _backward():
            A.grad += out.grad @ bv.T
            B.grad += av.T @ out.grad

    out._backward = _backward
    return out


def transpose(A: Node) -> Node:
    out = Node(A.value.T, (A,))

    def _backward():
        A.grad += out.grad.T

    out._backward = _backward
    return out


def dot(a: Node, b: Node) -> Node:
    _require_same_shape(a, b, "dot")
    out = Node(np.dot(a.value, b.value), (a, b))

    def _backward():
        a.grad += out.grad * b.value
        b.grad += out.grad * a.value

    out._backward = _backward
    return out


def affine(x: Node, W: Node, b: Node) -> Node:
    """y = W @ x + b with dL/dx = W.T g, dL/dW = g outer x, dL/db = g."""
    wv, xv, bv = W.value, x.value, b.value
    if wv.ndim != 2 or xv.ndim != 1 or wv.shape[1] != xv.shape[0] or bv.shape != (wv.shape[0],):
        raise DimensionError(
            f"affine: W {wv.shape}, x {xv.shape}, b {bv.shape} do not conform")
    out = Node(wv @ xv + bv, (x, W, b))

    def _backward():
        x.grad += wv.T @ out.grad
        W.grad += np.outer(out.grad, xv)
        b.grad += out.grad

    out._backward = _backward
    return out


def concat(parts: Sequence[Node]) -> Node:
    out = Node(np.concatenate([p.value for p in parts]), tuple(parts))
    offsets = np.cumsum([0] + [p.value.shape[0] for p in parts])

    def _backward():
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            p.grad += out.grad[lo:hi]

    out._backward = _backward
    return out


def stack(rows: Sequence[Node]) -> Node:
    out = Node(np.stack([r.value for r in rows]), tuple(rows))

    def _backward():
        for j, r in enumerate(rows):
            r.grad += out.grad[j]

    out._backward = _backward
    return out


def hconcat(parts: Sequence[Node]) -> Node:
    """Concatenate 2-d nodes along columns."""
    out = Node(np.concatenate([p.value for p in parts], axis=1), tuple(parts))
    offsets = np.cumsum([0] + [p.value.shape[1] for p in parts])

    def _backward():
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            p.grad += out.grad[:, lo:hi]

    out._backward = _backward
    return out


def unfold(H: Node, k: int) -> Node:
    """Sliding k-row windows of an (n, d) matrix with k-1 zero rows padded on
    the left: row j of the output is [H[j-k+1], ..., H[j]] flattened, so the
    output keeps length n. Backward sums the shifted column blocks back."""
    n, d = H.value.shape
    padded = np.concatenate([np.zeros((k - 1, d)), H.value], axis=0)
    windows = np.concatenate([padded[a:a + n] for a in range(k)], axis=1)
    out = Node(windows, (H,))

    def _backward():
        gpad = np.zeros((n + k - 1, d))
        for a in range(k):
            gpad[a:a + n] += out.grad[:, a * d:(a + 1) * d]
        H.grad += gpad[k - 1:]

    out._backward = _backward
    return out


def pick(x: Node, index: int) -> Node:
    out = Node(x.value[index], (x,))

    def _backward():
        x.grad[index] += out.grad

    out._backward = _backward
    return out


def row(x: Node, index: int) -> Node:
    out = Node(x.value[index], (x,))

    def _backward():
        x.grad[index] += out.grad

    out._backward = _backward
    return out


def vsum(x: Node) -> Node:
    out = Node(np.sum(x.value), (x,))

    def _backward():
        x.grad += out.grad

    out._backward = _backward
    return out


def add_n(terms: Sequence[Node]) -> Node:
    first = terms[0].value
    for t in terms[1:]:
        if t.value.shape != first.shape:
            raise DimensionError(
                f"add_n: shapes {first.shape} and {t.value.shape} do not conform")
    out = Node(sum(t.value for t in terms), tuple(terms))

    def _backward():
        for t in terms:
            t.grad += out.grad

    out._backward = _backward
    return out


def mean_nodes(terms: Sequence[Node]) -> Node:
    if not terms:
        raise DimensionError("mean_nodes: empty batch")
    return scale(add_n(terms), 1.0 / len(terms))


def gather_rows(table: Node, indices: np.ndarray) -> Node:
    out = Node(table.value[indices], (table,))

    def _backward():
        np.add.at(table.grad, indices, out.grad)

    out._backward = _backward
    return out


# ---------------------------------------------------------------------------
# nonlinearities
# ---------------------------------------------------------------------------

def tanh(x: Node) -> Node:
    y = np.tanh(x.value)
    out = Node(y, (x,))

    def _backward():
        x.grad += out.grad * (1.0 - y * y)

    out._backward = _backward
    return out


def _sigmoid_value(z: np.ndarray) -> np.ndarray:
    # exp(-|z|) never overflows; both branches share it.
    a = np.exp(-np.abs(z))
    return np.where(z >= 0, 1.0 / (1.0 + a), a / (1.0 + a))


def sigmoid(x: Node) -> Node:
    y = _sigmoid_value(x.value)
    out = Node(y, (x,))

    def _backward():
        x.grad += out.grad * y * (1.0 - y)

    out._backward = _backward
    return out


def relu(x: Node) -> Node:
    out = Node(np.maximum(x.value, 0.0), (x,))

    def _backward():
        x.grad += out.grad * (x.value > 0.0)

    out._backward = _backward
    return out


def clamp(x: Node, lo: float, hi: float) -> Node:
    """Gradient passes only where lo < x < hi, so saturated probabilities
    cannot blow up a downstream log."""
    out = Node(np.clip(x.value, lo, hi), (x,))

    def _backward():
        x.grad += out.grad * ((x.value > lo) & (x.value < hi))

    out._backward = _backward
    return out


def log(x: Node) -> Node:
    out = Node(np.log(x.value), (x,))

    def _backward():
        x.grad += out.grad / x.value

    out._backward = _backward
    return out


def softmax(v: Node) -> Node:
    """Max-subtracted softmax; dL/dv = y * (g - <g, y>)."""
    if v.value.ndim != 1 or v.value.shape[0] < 1:
        raise DimensionError(f"softmax: need a nonempty vector, got shape {v.value.shape}")
    shifted = v.value - np.max(v.value)
    e = np.exp(shifted)
    y = e / np.sum(e)
    out = Node(y, (v,))

    def _backward():
        g = out.grad
        v.grad += y * (g - np.dot(g, y))

    out._backward = _backward
    return out


def cosine(a: Node, b: Node) -> Node:
    """cos(a, b); d/da = b/(|a||b|) - cos * a/|a|^2 and symmetrically."""
    _require_same_shape(a, b, "cosine")
    na = float(np.linalg.norm(a.value))
    nb = float(np.linalg.norm(b.value))
    if na == 0.0 or nb == 0.0:
        raise DegenerateInputError("cosine: zero-norm input")
    c = float(np.dot(a.value, b.value) / (na * nb))
    out = Node(c, (a, b))

    def _backward():
        g = out.grad
        a.grad += g * (b.value / (na * nb) - c * a.value / (na * na))
        b.grad += g * (a.value / (na * nb) - c * b.value / (nb * nb))

    out._backward = _backward
    return out


# ---------------------------------------------------------------------------
# training-specific plumbing
# ---------------------------------------------------------------------------

def grl(x: Node) -> Node:
    """Forward identity; backward multiplies the incoming gradient by -1."""
    out = Node(x.value, (x,))

    def _backward():
        x.grad -= out.grad

    out._backward = _backward
    return out


def stop_gradient(x: Node) -> Node:
    """Forward identity that blocks all gradient flow into `x`."""
    return Node(x.value)


def dropout(x: Node, rate: float, rng: np.random.Generator) -> Node:
    """Inverted dropout; identity when rate == 0."""
    if rate == 0.0:
        return x
    keep = (rng.random(x.value.shape) >= rate) / (1.0 - rate)
    out = Node(x.value * keep, (x,))

    def _backward():
        x.grad += out.grad * keep

    out._backward = _backward
    return out


# ---------------------------------------------------------------------------
# backward pass and the finite-difference oracle
# ---------------------------------------------------------------------------

def _topo_order(root: Node) -> list[Node]:
    order: list[Node] = []
    discovered: set[int] = set()
    stack: list[tuple[Node, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in discovered:
            continue
        discovered.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in discovered:
                stack.append((p, False))
    return order


def backward(root: Node) -> None:
    """Accumulate d(root)/d(node) into every reachable node's grad buffer."""
    if root.value.size != 1:
        raise DimensionError(f"backward: root must be scalar, got shape {root.value.shape}")
    root.grad = root.grad + 1.0
    for node in reversed(_topo_order(root)):
        if node._backward is not None:
            node._backward()


def _named_params(params) -> list[tuple[str, Node]]:
    if hasattr(params, "named"):
        return list(params.named())
    if isinstance(params, dict):
        return list(params.items())
    return [(f"p{i}", node) for i, node in enumerate(params)]


def finite_difference_check(
    loss_fn: Callable,
    params,
    eps: float = 1e-5,
    sample_count: int = 50,
    seed: int = 0,
) -> float:
    """Compare analytic gradients against central differences.

    `loss_fn(params)` must rebuild its graph from the live parameter nodes and
    return the scalar loss node. For `sample_count` randomly chosen parameter
    coordinates, returns the maximum relative error with denominator
    max(|analytic|, |numeric|, 1e-8).
    """
    if eps <= 0:
        raise ValueError("finite_difference_check: eps must be positive")
    named = _named_params(params)
    zero_grads(node for _, node in named)
    loss = loss_fn(params)
    if not np.isfinite(loss.value):
        raise NumericError("finite_difference_check: non-finite loss")
    backward(loss)
    analytic = {name: node.grad.copy() for name, node in named}

    sizes = [node.value.size for _, node in named]
    total = int(np.sum(sizes))
    bounds = np.cumsum([0] + sizes)
    rng = np.random.default_rng(seed)
    coords = rng.integers(0, total, size=sample_count)

    worst = 0.0
    for c in coords:
        slot = int(np.searchsorted(bounds, c, side="right") - 1)
        name, node = named[slot]
        idx = np.unravel_index(int(c) - int(bounds[slot]), node.value.shape)
        orig = node.value[idx]
        node.value[idx] = orig + eps
        f_plus = float(loss_fn(params).value)
        node.value[idx] = orig - eps
        f_minus = float(loss_fn(params).value)
        node.value[idx] = orig
        if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
            raise NumericError(f"finite_difference_check: non-finite loss near {name}{idx}")
        numeric = (f_plus - f_minus) / (2.0 * eps)
        a = float(analytic[name][idx])
        rel = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
        worst = max(worst, rel)
    return worst
