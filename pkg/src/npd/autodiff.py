"""Reverse-mode automatic differentiation over dense float64 arrays.

Tensors are plain numpy float64 ndarrays (row-major); a Node wraps a value
tensor together with a same-shaped gradient buffer and a backward closure.
Graphs are built dynamically per batch, so variable sequence lengths need
no padding logic here. Gradients accumulate with ``+=`` across node reuse;
callers zero them between optimizer steps.

The op set is what the emotion model needs: dense matmul in its vector and
matrix flavors, elementwise add/mul/tanh/sigmoid/log/clip, stabilized
softmax (plain, and row-wise with a validity mask for padded batches),
concatenation, gather/slice/stack plumbing for batched sequences, inverted
dropout, and the gradient-reversal node that flips the sign of gradients
flowing into the shared encoder from the attribute discriminators.
"""

import numpy as np

from .errors import ConfigError, ContractError, DimensionError


def as_tensor(x) -> np.ndarray:
    """Coerce to a float64 ndarray (the toolkit's tensor type)."""
    return np.asarray(x, dtype=np.float64)


class Node:
    """One vertex of the computation graph.

    value and grad always share a shape; parents are ordered; _backward,
    when set, propagates this node's grad into its parents' grads.
    needs_grad marks nodes on a path from a parameter; gradient work into
    pure-constant subgraphs is skipped, and their zero grad buffers are
    materialized only if someone actually reads them.
    """

    __slots__ = ("value", "_grad", "op", "parents", "_backward", "needs_grad")

    def __init__(self, value, op: str = "leaf", parents: tuple = (),
                 needs_grad: bool | None = None):
        self.value = as_tensor(value)
        self._grad = None
        self.op = op
        self.parents = parents
        self._backward = None
        if needs_grad is None:
            needs_grad = any(p.needs_grad for p in parents)
        self.needs_grad = needs_grad

    @property
    def grad(self) -> np.ndarray:
        if self._grad is None:
            self._grad = np.zeros_like(self.value)
        return self._grad

    @grad.setter
    def grad(self, value) -> None:
        self._grad = value

    def __repr__(self):
        return f"Node(op={self.op!r}, shape={self.value.shape})"


def constant(x) -> Node:
    return Node(x, op="const", needs_grad=False)


def param(x) -> Node:
    node = Node(x, op="param", needs_grad=True)
    node.grad  # materialize eagerly: optimizers index params' grads directly
    return node


def _sigmoid_stable(x: np.ndarray) -> np.ndarray:
    # 1/(1+exp(-x)) is value-correct over all of float64: exp overflow gives
    # inf and 1/(1+inf) == 0; only the warning needs suppressing
    with np.errstate(over="ignore"):
        return 1.0 / (1.0 + np.exp(-x))


def add(a: Node, b: Node) -> Node:
    if a.value.shape != b.value.shape:
        raise DimensionError(f"add: shapes {a.value.shape} and {b.value.shape} differ")
    out = Node(a.value + b.value, op="add", parents=(a, b))
    if out.needs_grad:
        def _backward():
            if a.needs_grad:
                a.grad += out.grad
            if b.needs_grad:
                b.grad += out.grad

        out._backward = _backward
    return out


def mul(a: Node, b: Node) -> Node:
    if a.value.shape != b.value.shape:
        raise DimensionError(f"mul: shapes {a.value.shape} and {b.value.shape} differ")
    out = Node(a.value * b.value, op="mul", parents=(a, b))
    if out.needs_grad:
        def _backward():
            if a.needs_grad:
                a.grad += out.grad * b.value
            if b.needs_grad:
                b.grad += out.grad * a.value

        out._backward = _backward
    return out


def scale_shift(x: Node, k: float, c: float = 0.0) -> Node:
    """k*x + c with python-scalar k, c."""
    out = Node(k * x.value + c, op="scale_shift", parents=(x,))
    if out.needs_grad:
        def _backward():
            x.grad += k * out.grad

        out._backward = _backward
    return out


def tanh(x: Node) -> Node:
    out = Node(np.tanh(x.value), op="tanh", parents=(x,))
    if out.needs_grad:
        def _backward():
            x.grad += (1.0 - out.value * out.value) * out.grad

        out._backward = _backward
    return out


def sigmoid(x: Node) -> Node:
    out = Node(_sigmoid_stable(x.value), op="sigmoid", parents=(x,))
    if out.needs_grad:
        def _backward():
            x.grad += out.value * (1.0 - out.value) * out.grad

        out._backward = _backward
    return out


def log(x: Node) -> Node:
    out = Node(np.log(x.value), op="log", parents=(x,))
    if out.needs_grad:
        def _backward():
            x.grad += out.grad / x.value

        out._backward = _backward
    return out


def clip(x: Node, lo: float, hi: float) -> Node:
    """Clamp values to [lo, hi]; gradient passes through only where unclamped."""
    out = Node(np.clip(x.value, lo, hi), op="clip", parents=(x,))
    if out.needs_grad:
        inside = (x.value >= lo) & (x.value <= hi)

        def _backward():
            x.grad += out.grad * inside

        out._backward = _backward
    return out


def matmul(a: Node, b: Node) -> Node:
    """Matrix product; supports 2Dx2D, 2Dx1D, 1Dx2D and 1Dx1D (dot)."""
    av, bv = a.value, b.value
    if av.ndim == 0 or bv.ndim == 0 or av.ndim > 2 or bv.ndim > 2:
        raise DimensionError(f"matmul: unsupported ranks {av.shape} x {bv.shape}")
    if av.shape[-1] != bv.shape[0]:
        raise DimensionError(f"matmul: inner dims of {av.shape} and {bv.shape} disagree")
    out = Node(av @ bv, op="matmul", parents=(a, b))
    if out.needs_grad:
        def _backward():
            g = out.grad
            if av.ndim == 2 and bv.ndim == 2:
                if a.needs_grad:
                    a.grad += g @ bv.T
                if b.needs_grad:
                    b.grad += av.T @ g
            elif av.ndim == 2 and bv.ndim == 1:
                if a.needs_grad:
                    a.grad += np.outer(g, bv)
                if b.needs_grad:
                    b.grad += av.T @ g
            elif av.ndim == 1 and bv.ndim == 2:
                if a.needs_grad:
                    a.grad += bv @ g
                if b.needs_grad:
                    b.grad += np.outer(av, g)
            else:  # 1D . 1D -> scalar
                if a.needs_grad:
                    a.grad += g * bv
                if b.needs_grad:
                    b.grad += g * av

        out._backward = _backward
    return out


def add_rowvec(mat: Node, vec: Node) -> Node:
    """Add a length-d vector to every row of an [n x d] matrix (bias add)."""
    if mat.value.ndim != 2 or vec.value.ndim != 1 or mat.value.shape[1] != vec.value.shape[0]:
        raise DimensionError(f"add_rowvec: {mat.value.shape} + {vec.value.shape}")
    out = Node(mat.value + vec.value[None, :], op="add_rowvec", parents=(mat, vec))
    if out.needs_grad:
        def _backward():
            if mat.needs_grad:
                mat.grad += out.grad
            if vec.needs_grad:
                vec.grad += out.grad.sum(axis=0)

        out._backward = _backward
    return out


def tile_rows(vec: Node, n: int) -> Node:
    """Repeat a length-d vector as n rows (e.g. a trainable initial state per batch row)."""
    if vec.value.ndim != 1:
        raise DimensionError(f"tile_rows: expected vector, got {vec.value.shape}")
    out = Node(np.broadcast_to(vec.value, (n, vec.value.shape[0])).copy(),
               op="tile_rows", parents=(vec,))
    if out.needs_grad:
        def _backward():
            vec.grad += out.grad.sum(axis=0)

        out._backward = _backward
    return out


def mul_colvec(mat: Node, col: Node) -> Node:
    """Scale row i of an [n x d] matrix by col[i]."""
    if mat.value.ndim != 2 or col.value.ndim != 1 or mat.value.shape[0] != col.value.shape[0]:
        raise DimensionError(f"mul_colvec: {mat.value.shape} * {col.value.shape}")
    out = Node(mat.value * col.value[:, None], op="mul_colvec", parents=(mat, col))
    if out.needs_grad:
        def _backward():
            if mat.needs_grad:
                mat.grad += out.grad * col.value[:, None]
            if col.needs_grad:
                col.grad += (out.grad * mat.value).sum(axis=1)

        out._backward = _backward
    return out


def cols(mat: Node, j0: int, j1: int) -> Node:
    """Column slice [:, j0:j1] of a matrix."""
    if mat.value.ndim != 2:
        raise DimensionError(f"cols: expected matrix, got {mat.value.shape}")
    out = Node(mat.value[:, j0:j1], op="cols", parents=(mat,))
    if out.needs_grad:
        def _backward():
            mat.grad[:, j0:j1] += out.grad

        out._backward = _backward
    return out


def row_block(mat: Node, i0: int, i1: int) -> Node:
    """Row slice [i0:i1, :] of a matrix."""
    if mat.value.ndim != 2:
        raise DimensionError(f"row_block: expected matrix, got {mat.value.shape}")
    out = Node(mat.value[i0:i1], op="row_block", parents=(mat,))
    if out.needs_grad:
        def _backward():
            mat.grad[i0:i1] += out.grad

        out._backward = _backward
    return out


def vstack_rows(items: list[Node]) -> Node:
    """Stack T [n x d] matrices into one [T*n x d] matrix, block t first.

    Lets per-step projections collapse into one large matmul.
    """
    if not items:
        raise DimensionError("vstack_rows: empty input")
    n = items[0].value.shape[0]
    out = Node(np.concatenate([it.value for it in items], axis=0),
               op="vstack_rows", parents=tuple(items))
    if out.needs_grad:
        def _backward():
            for t, it in enumerate(items):
                if it.needs_grad:
                    it.grad += out.grad[t * n : (t + 1) * n]

        out._backward = _backward
    return out


def unstack_to_cols(vec: Node, blocks: int, n: int) -> Node:
    """Reinterpret a length blocks*n vector (block-major) as an [n x blocks] matrix."""
    if vec.value.shape != (blocks * n,):
        raise DimensionError(f"unstack_to_cols: expected ({blocks * n},), got {vec.value.shape}")
    out = Node(np.ascontiguousarray(vec.value.reshape(blocks, n).T),
               op="unstack_to_cols", parents=(vec,))
    if out.needs_grad:
        def _backward():
            vec.grad += np.ascontiguousarray(out.grad.T).reshape(-1)

        out._backward = _backward
    return out


def concat(a: Node, b: Node) -> Node:
    """Concatenate along the last axis; vectors give [p+q], matrices [n x (p+q)]."""
    av, bv = a.value, b.value
    if av.ndim != bv.ndim or av.ndim not in (1, 2):
        raise DimensionError(f"concat: incompatible ranks {av.shape}, {bv.shape}")
    if av.ndim == 2 and av.shape[0] != bv.shape[0]:
        raise DimensionError(f"concat: row counts differ {av.shape}, {bv.shape}")
    p = av.shape[-1]
    out = Node(np.concatenate([av, bv], axis=-1), op="concat", parents=(a, b))
    if out.needs_grad:
        def _backward():
            if av.ndim == 1:
                if a.needs_grad:
                    a.grad += out.grad[:p]
                if b.needs_grad:
                    b.grad += out.grad[p:]
            else:
                if a.needs_grad:
                    a.grad += out.grad[:, :p]
                if b.needs_grad:
                    b.grad += out.grad[:, p:]

        out._backward = _backward
    return out


def softmax(logits: Node) -> Node:
    """Stabilized softmax over a length-n vector, n >= 1."""
    if logits.value.ndim != 1 or logits.value.shape[0] < 1:
        raise DimensionError(f"softmax: expected nonempty vector, got {logits.value.shape}")
    z = logits.value - logits.value.max()
    e = np.exp(z)
    p = e / e.sum()
    out = Node(p, op="softmax", parents=(logits,))
    if out.needs_grad:
        def _backward():
            g = out.grad
            logits.grad += p * (g - np.dot(g, p))

        out._backward = _backward
    return out


def softmax_rows(logits: Node, mask: np.ndarray | None = None) -> Node:
    """Row-wise stabilized softmax over an [n x k] matrix.

    mask, when given, is a constant {0,1} array of the same shape; masked-out
    entries get probability exactly 0 and each row must keep at least one
    valid entry.
    """
    x = logits.value
    if x.ndim != 2 or x.shape[1] < 1:
        raise DimensionError(f"softmax_rows: expected nonempty matrix, got {x.shape}")
    if mask is None:
        z = x - x.max(axis=1, keepdims=True)
        e = np.exp(z)
    else:
        neg = np.where(mask > 0, x, -np.inf)
        z = neg - neg.max(axis=1, keepdims=True)
        with np.errstate(invalid="ignore"):
            e = np.exp(z)
        e = np.where(mask > 0, e, 0.0)
    p = e / e.sum(axis=1, keepdims=True)
    out = Node(p, op="softmax_rows", parents=(logits,))
    if out.needs_grad:
        def _backward():
            g = out.grad
            logits.grad += p * (g - (g * p).sum(axis=1, keepdims=True))

        out._backward = _backward
    return out


def summation(x: Node) -> Node:
    """Sum of all elements, as a 0-d scalar node."""
    out = Node(x.value.sum(), op="sum", parents=(x,))
    if out.needs_grad:
        def _backward():
            x.grad += out.grad

        out._backward = _backward
    return out


def rows(table: Node, ids: np.ndarray) -> Node:
    """Gather rows of a [V x d] matrix; repeated ids accumulate gradient."""
    idx = np.asarray(ids, dtype=np.int64)
    if table.value.ndim != 2:
        raise DimensionError(f"rows: expected matrix, got {table.value.shape}")
    if idx.size and (idx.min() < 0 or idx.max() >= table.value.shape[0]):
        raise ContractError(f"rows: id out of range for table with {table.value.shape[0]} rows")
    out = Node(table.value[idx], op="rows", parents=(table,))
    if out.needs_grad:
        def _backward():
            np.add.at(table.grad, idx, out.grad)

        out._backward = _backward
    return out


def pick_cols(mat: Node, idx: np.ndarray) -> Node:
    """Select mat[i, idx[i]] for each row i, giving a length-n vector."""
    j = np.asarray(idx, dtype=np.int64)
    n = mat.value.shape[0]
    if mat.value.ndim != 2 or j.shape != (n,):
        raise DimensionError(f"pick_cols: {mat.value.shape} with index shape {j.shape}")
    r = np.arange(n)
    out = Node(mat.value[r, j], op="pick_cols", parents=(mat,))
    if out.needs_grad:
        def _backward():
            mat.grad[r, j] += out.grad

        out._backward = _backward
    return out


def stack_cols(vecs: list[Node]) -> Node:
    """Stack T length-n vectors into an [n x T] matrix."""
    if not vecs:
        raise DimensionError("stack_cols: empty input")
    out = Node(np.stack([v.value for v in vecs], axis=1), op="stack_cols",
               parents=tuple(vecs))
    if out.needs_grad:
        def _backward():
            for t, v in enumerate(vecs):
                if v.needs_grad:
                    v.grad += out.grad[:, t]

        out._backward = _backward
    return out


def weighted_sum(weights: Node, items: list[Node]) -> Node:
    """Pool T [n x d] matrices with per-row weights from an [n x T] matrix.

    out[i] = sum_t weights[i, t] * items[t][i]; this is attention pooling
    fused into one node to keep graphs small on long sequences.
    """
    w = weights.value
    if w.ndim != 2 or w.shape[1] != len(items):
        raise DimensionError(f"weighted_sum: weights {w.shape} vs {len(items)} items")
    stacked = np.stack([it.value for it in items])  # [T x n x d]
    out = Node(np.einsum("nt,tnd->nd", w, stacked), op="weighted_sum",
               parents=(weights, *items))
    if out.needs_grad:
        def _backward():
            g = out.grad
            if weights.needs_grad:
                weights.grad += np.einsum("nd,tnd->nt", g, stacked)
            for t, it in enumerate(items):
                if it.needs_grad:
                    it.grad += g * w[:, t : t + 1]

        out._backward = _backward
    return out


def grad_reverse(x: Node, lambda_rev: float) -> Node:
    """Identity forward; backward multiplies the incoming gradient by -lambda_rev.

    Inserted between the shared encoder and an attribute discriminator, this
    realizes the saddle-point update: the discriminator descends its loss
    while the encoder ascends it, in a single joint backward pass.
    """
    if lambda_rev < 0:
        raise ConfigError(f"grad_reverse: lambda_rev must be >= 0, got {lambda_rev}")
    out = Node(x.value, op="grad_reverse", parents=(x,))
    if out.needs_grad:
        def _backward():
            x.grad += -lambda_rev * out.grad

        out._backward = _backward
    return out


def dropout(x: Node, rate: float, rng: np.random.Generator, train_mode: bool) -> Node:
    """Inverted dropout: zero each element with probability rate, scale survivors.

    Identity in eval mode and at rate 0.
    """
    if not 0.0 <= rate < 1.0:
        raise ConfigError(f"dropout: rate must be in [0, 1), got {rate}")
    if not train_mode or rate == 0.0:
        return x
    keep = (rng.random(x.value.shape) >= rate) / (1.0 - rate)
    out = Node(x.value * keep, op="dropout", parents=(x,))
    if out.needs_grad:
        def _backward():
            x.grad += out.grad * keep

        out._backward = _backward
    return out


def backward(loss: Node) -> None:
    """Backpropagate from a scalar loss through the whole reachable graph.

    Visits each node exactly once in reverse topological order; nodes not on
    a path to the loss keep their (zero) gradients. Constant-only subgraphs
    are pruned from the traversal.
    """
    if loss.value.size != 1:
        raise ContractError(f"backward: loss must be scalar, got shape {loss.value.shape}")
    order = []
    visited = set()
    stack = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if p.needs_grad and id(p) not in visited:
                stack.append((p, False))
    loss.grad += 1.0
    for node in reversed(order):
        if node._backward is not None:
            node._backward()
