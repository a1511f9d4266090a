"""Reverse-mode automatic differentiation over dense numpy arrays.

The operation set is deliberately small: affine maps, elementwise
nonlinearities, concatenation/stacking, row gathers (embedding lookup),
grouped softmax, a fused LSTM sequence encoder, dot products, scalar
scaling, and binary cross-entropy. That is exactly what the propagation
model needs; there is no broadcasting, no views, no fusion beyond the LSTM.

Arrays keep whatever dtype they were created with. Training code uses
float32; the finite-difference harness re-runs the same graph in float64.
"""

from __future__ import annotations

import numpy as np

BCE_EPS = 1e-7


class Value:
    """A node in the computation graph: an ndarray plus its backprop record.

    ``grad`` is allocated on demand during :meth:`backward` and accumulates
    across repeated backward passes until reset by the owner.
    """

    __slots__ = ("data", "grad", "_parents", "_bwd")

    def __init__(self, data, _parents=(), _bwd=None):
        self.data = np.asarray(data)
        self.grad = None
        self._parents = _parents
        self._bwd = _bwd

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def backward(self):
        """Populate ``grad`` of every Value reachable from this scalar."""
        if self.data.size != 1:
            raise ValueError(f"backward requires a scalar, got shape {self.data.shape}")
        topo = _topological_order(self)
        for v in topo:
            if v.grad is None:
                v.grad = np.zeros_like(v.data)
        self.grad = self.grad + np.ones_like(self.data)
        for v in reversed(topo):
            if v._bwd is not None:
                v._bwd(v.grad)

    def is_finite(self) -> bool:
        return bool(np.isfinite(self.data).all())

    def __repr__(self):
        return f"Value(shape={self.data.shape}, dtype={self.data.dtype})"


def _topological_order(root: Value) -> list[Value]:
    # Iterative DFS: graphs routinely exceed the interpreter recursion limit.
    order = []
    visited = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in visited:
                stack.append((parent, False))
    return order


def constant(array, dtype=None) -> Value:
    """A leaf Value; gradients flow into it but nothing flows out."""
    data = np.asarray(array, dtype=dtype)
    return Value(data)


def zeros(shape, dtype=np.float32) -> Value:
    return Value(np.zeros(shape, dtype=dtype))


# ---------------------------------------------------------------------------
# affine / structural ops
# ---------------------------------------------------------------------------


def linear(x: Value, weight: Value, bias: Value | None = None) -> Value:
    """weight @ x (+ bias). ``x`` is a vector (m,) or a matrix (T, m) of rows."""
    w = weight.data
    if w.ndim != 2:
        raise ValueError(f"weight must be 2-D, got {w.shape}")
    if x.data.ndim == 1:
        if x.data.shape[0] != w.shape[1]:
            raise ValueError(f"linear: x {x.data.shape} does not conform to weight {w.shape}")
        out = w @ x.data
        if bias is not None:
            if bias.data.shape != (w.shape[0],):
                raise ValueError(f"linear: bias {bias.data.shape} does not conform to weight {w.shape}")
            out = out + bias.data

        def bwd(g, x=x, weight=weight, bias=bias):
            weight.grad += np.outer(g, x.data)
            x.grad += weight.data.T @ g
            if bias is not None:
                bias.grad += g

        parents = (x, weight) if bias is None else (x, weight, bias)
        return Value(out, parents, bwd)

    if x.data.ndim == 2:
        if x.data.shape[1] != w.shape[1]:
            raise ValueError(f"linear: x {x.data.shape} does not conform to weight {w.shape}")
        out = x.data @ w.T
        if bias is not None:
            out = out + bias.data

        def bwd(g, x=x, weight=weight, bias=bias):
            weight.grad += g.T @ x.data
            x.grad += g @ weight.data
            if bias is not None:
                bias.grad += g.sum(axis=0)

        parents = (x, weight) if bias is None else (x, weight, bias)
        return Value(out, parents, bwd)

    raise ValueError(f"linear: unsupported input rank {x.data.ndim}")


def concat(parts: list[Value]) -> Value:
    """Concatenate Values (vectors or scalars) into one vector."""
    if not parts:
        raise ValueError("concat of empty list")
    out = np.concatenate([np.atleast_1d(p.data) for p in parts])
    sizes = [p.data.size for p in parts]

    def bwd(g, parts=parts, sizes=sizes):
        off = 0
        for p, s in zip(parts, sizes):
            p.grad += g[off:off + s].reshape(p.data.shape)
            off += s

    return Value(out, tuple(parts), bwd)


def stack_rows(rows_: list[Value]) -> Value:
    """Stack 1-D Values of equal length into a (T, n) matrix."""
    if not rows_:
        raise ValueError("stack_rows of empty list")
    out = np.stack([r.data for r in rows_])

    def bwd(g, rows_=rows_):
        for t, r in enumerate(rows_):
            r.grad += g[t]

    return Value(out, tuple(rows_), bwd)


def rows(matrix: Value, indices) -> Value:
    """Gather rows of a 2-D Value (embedding lookup); grad scatter-adds back."""
    idx = np.asarray(indices, dtype=np.intp)
    out = matrix.data[idx]

    def bwd(g, matrix=matrix, idx=idx):
        np.add.at(matrix.grad, idx, g)

    return Value(out, (matrix,), bwd)


def row(matrix: Value, i: int) -> Value:
    """One row of a 2-D Value."""
    out = matrix.data[i]

    def bwd(g, matrix=matrix, i=i):
        matrix.grad[i] += g

    return Value(out, (matrix,), bwd)


def element(vec: Value, i: int) -> Value:
    """One element of a 1-D Value, as a scalar."""
    out = vec.data[i]

    def bwd(g, vec=vec, i=i):
        vec.grad[i] += g

    return Value(out, (vec,), bwd)


def sum_rows(matrix: Value) -> Value:
    """Column sums of a (T, n) Value -> (n,)."""
    out = matrix.data.sum(axis=0)

    def bwd(g, matrix=matrix):
        matrix.grad += g[None, :]

    return Value(out, (matrix,), bwd)


def tile_rows(vec: Value, count: int) -> Value:
    """Repeat a vector as the rows of a (count, n) matrix."""
    if vec.data.ndim != 1:
        raise ValueError(f"tile_rows expects a vector, got shape {vec.data.shape}")
    out = np.broadcast_to(vec.data, (count, vec.data.shape[0])).copy()

    def bwd(g, vec=vec):
        vec.grad += g.sum(axis=0)

    return Value(out, (vec,), bwd)


def hconcat(parts: list[Value]) -> Value:
    """Concatenate matrices of equal row count along columns."""
    if not parts:
        raise ValueError("hconcat of empty list")
    out = np.concatenate([p.data for p in parts], axis=1)
    widths = [p.data.shape[1] for p in parts]

    def bwd(g, parts=parts, widths=widths):
        off = 0
        for p, w in zip(parts, widths):
            p.grad += g[:, off:off + w]
            off += w

    return Value(out, tuple(parts), bwd)


# ---------------------------------------------------------------------------
# arithmetic
# ---------------------------------------------------------------------------


def add(a: Value, b: Value) -> Value:
    if a.data.shape != b.data.shape:
        raise ValueError(f"add: shape mismatch {a.data.shape} vs {b.data.shape}")
    out = a.data + b.data

    def bwd(g, a=a, b=b):
        a.grad += g
        b.grad += g

    return Value(out, (a, b), bwd)


def add_n(values: list[Value]) -> Value:
    """Elementwise sum of same-shaped Values."""
    if not values:
        raise ValueError("add_n of empty list")
    if len(values) == 1:
        return values[0]
    out = values[0].data.copy()
    for v in values[1:]:
        if v.data.shape != out.shape:
            raise ValueError(f"add_n: shape mismatch {v.data.shape} vs {out.shape}")
        out += v.data

    def bwd(g, values=values):
        for v in values:
            v.grad += g

    return Value(out, tuple(values), bwd)


def mul(a: Value, b: Value) -> Value:
    """Elementwise product; also covers scalar*scalar."""
    if a.data.shape != b.data.shape:
        raise ValueError(f"mul: shape mismatch {a.data.shape} vs {b.data.shape}")
    out = a.data * b.data

    def bwd(g, a=a, b=b):
        a.grad += g * b.data
        b.grad += g * a.data

    return Value(out, (a, b), bwd)


def scale(v: Value, s) -> Value:
    """Multiply by a python float or a scalar Value."""
    if isinstance(s, Value):
        if s.data.size != 1:
            raise ValueError(f"scale expects a scalar Value, got shape {s.data.shape}")
        out = v.data * s.data

        def bwd(g, v=v, s=s):
            v.grad += g * s.data
            s.grad += np.sum(g * v.data)

        return Value(out, (v, s), bwd)

    f = float(s)
    out = v.data * f

    def bwd(g, v=v, f=f):
        v.grad += g * f

    return Value(out, (v,), bwd)


def dot(a: Value, b: Value) -> Value:
    if a.data.ndim != 1 or a.data.shape != b.data.shape:
        raise ValueError(f"dot: need equal-length vectors, got {a.data.shape} vs {b.data.shape}")
    out = a.data @ b.data

    def bwd(g, a=a, b=b):
        a.grad += g * b.data
        b.grad += g * a.data

    return Value(out, (a, b), bwd)


# ---------------------------------------------------------------------------
# nonlinearities
# ---------------------------------------------------------------------------


def relu(v: Value) -> Value:
    out = np.maximum(v.data, 0)

    def bwd(g, v=v):
        v.grad += g * (v.data > 0)

    return Value(out, (v,), bwd)


def tanh(v: Value) -> Value:
    out = np.tanh(v.data)

    def bwd(g, v=v, out=out):
        v.grad += g * (1.0 - out * out)

    return Value(out, (v,), bwd)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # sigmoid(x) = (tanh(x/2) + 1) / 2: stable in both tails, one libm call
    return 0.5 * (np.tanh(0.5 * x) + 1.0)


def sigmoid(v: Value) -> Value:
    out = _sigmoid(v.data)

    def bwd(g, v=v, out=out):
        v.grad += g * out * (1.0 - out)

    return Value(out, (v,), bwd)


# ---------------------------------------------------------------------------
# grouped softmax
# ---------------------------------------------------------------------------


def grouped_softmax(scores: Value, groups) -> Value:
    """Softmax normalized independently within each group of indices.

    ``groups`` must partition ``range(len(scores))`` into nonempty groups.
    Output order matches input order; each group's outputs sum to one.
    """
    if scores.data.ndim != 1:
        raise ValueError(f"grouped_softmax expects a vector, got shape {scores.data.shape}")
    n = scores.data.shape[0]
    seen = np.zeros(n, dtype=bool)
    for group in groups:
        if len(group) == 0:
            raise ValueError("grouped_softmax: empty group")
        for i in group:
            if i < 0 or i >= n or seen[i]:
                raise ValueError("grouped_softmax: groups must partition the index range")
            seen[i] = True
    if not seen.all():
        raise ValueError("grouped_softmax: groups must cover every index")

    out = np.empty_like(scores.data)
    for group in groups:
        idx = np.asarray(group, dtype=np.intp)
        s = scores.data[idx]
        e = np.exp(s - s.max())
        out[idx] = e / e.sum()

    def bwd(g, scores=scores, groups=groups, out=out):
        for group in groups:
            idx = np.asarray(group, dtype=np.intp)
            p = out[idx]
            gi = g[idx]
            scores.grad[idx] += p * (gi - np.dot(gi, p))

    return Value(out, (scores,), bwd)


# ---------------------------------------------------------------------------
# LSTM sequence encoder (fused op)
# ---------------------------------------------------------------------------


class LstmParams:
    """Weights of one LSTM cell: per-gate input/recurrent matrices and biases."""

    GATES = ("i", "f", "g", "o")

    def __init__(self, w, u, b):
        self.w = w  # dict gate -> Value (hidden, input)
        self.u = u  # dict gate -> Value (hidden, hidden)
        self.b = b  # dict gate -> Value (hidden,)

    def values(self) -> list[Value]:
        out = []
        for gate in self.GATES:
            out.extend((self.w[gate], self.u[gate], self.b[gate]))
        return out

    @property
    def hidden_size(self) -> int:
        return self.w["i"].data.shape[0]


def seq_encode(tokens, params: LstmParams) -> Value:
    """Run the LSTM over a token sequence; returns the (T, n) matrix of states.

    ``tokens`` is either a list of (input,) Values or a single (T, input)
    Value. The recurrence (input/forget/output gates, cell state) is fused
    into one graph node with a hand-written backward pass over time; the four
    gates are packed into single matrices so each step costs two products.
    """
    if isinstance(tokens, list):
        if not tokens:
            raise ValueError("seq_encode: empty sequence")
        x = stack_rows(tokens)
    else:
        x = tokens
        if x.data.ndim != 2 or x.data.shape[0] == 0:
            raise ValueError("seq_encode: expects a nonempty (T, input) matrix")

    n = params.hidden_size
    T = x.data.shape[0]
    dtype = x.data.dtype
    gates = LstmParams.GATES
    W = np.concatenate([params.w[k].data for k in gates])   # (4n, in)
    U = np.concatenate([params.u[k].data for k in gates])   # (4n, n)
    B = np.concatenate([params.b[k].data for k in gates])   # (4n,)

    pre_x = x.data @ W.T + B          # (T, 4n): input projections for all steps
    A = np.empty((T, 4 * n), dtype=dtype)   # gate activations (i, f, g, o)
    C = np.empty((T, n), dtype=dtype)
    TC = np.empty((T, n), dtype=dtype)
    H = np.empty((T, n), dtype=dtype)

    h = np.zeros(n, dtype=dtype)
    c = np.zeros(n, dtype=dtype)
    for t in range(T):
        pre = pre_x[t] + U @ h
        a = A[t]
        a[:2 * n] = _sigmoid(pre[:2 * n])        # input, forget
        a[2 * n:3 * n] = np.tanh(pre[2 * n:3 * n])  # candidate cell
        a[3 * n:] = _sigmoid(pre[3 * n:])        # output
        c = a[n:2 * n] * c + a[:n] * a[2 * n:3 * n]
        C[t] = c
        TC[t] = np.tanh(c)
        h = a[3 * n:] * TC[t]
        H[t] = h

    def bwd(g):
        dA = np.empty((T, 4 * n), dtype=dtype)
        dh_next = np.zeros(n, dtype=dtype)
        dc_next = np.zeros(n, dtype=dtype)
        for t in range(T - 1, -1, -1):
            c_prev = C[t - 1] if t > 0 else np.zeros(n, dtype=dtype)
            a = A[t]
            i, f, gc, o = a[:n], a[n:2 * n], a[2 * n:3 * n], a[3 * n:]
            dh = g[t] + dh_next
            dc = dh * o * (1.0 - TC[t] * TC[t]) + dc_next
            da = dA[t]
            da[:n] = dc * gc * i * (1.0 - i)
            da[n:2 * n] = dc * c_prev * f * (1.0 - f)
            da[2 * n:3 * n] = dc * i * (1.0 - gc * gc)
            da[3 * n:] = dh * TC[t] * o * (1.0 - o)
            dh_next = U.T @ da
            dc_next = dc * f
        x.grad += dA @ W
        h_prev = np.vstack([np.zeros((1, n), dtype=dtype), H[:-1]])
        dW = dA.T @ x.data
        dU = dA.T @ h_prev
        dB = dA.sum(axis=0)
        for k, gate in enumerate(gates):
            params.w[gate].grad += dW[k * n:(k + 1) * n]
            params.u[gate].grad += dU[k * n:(k + 1) * n]
            params.b[gate].grad += dB[k * n:(k + 1) * n]

    parents = (x, *params.values())
    return Value(H, parents, bwd)


# ---------------------------------------------------------------------------
# loss
# ---------------------------------------------------------------------------


def bce_loss(probs: Value, labels) -> Value:
    """Mean binary cross-entropy; probabilities clamped to [eps, 1-eps]."""
    y = np.asarray(labels, dtype=probs.data.dtype)
    if probs.data.ndim != 1 or y.shape != probs.data.shape:
        raise ValueError(f"bce_loss: length mismatch {probs.data.shape} vs {y.shape}")
    p = np.clip(probs.data, BCE_EPS, 1.0 - BCE_EPS)
    k = p.shape[0]
    out = -(y * np.log(p) + (1.0 - y) * np.log(1.0 - p)).mean()

    def bwd(g, probs=probs, p=p, y=y, k=k):
        inside = (probs.data > BCE_EPS) & (probs.data < 1.0 - BCE_EPS)
        probs.grad += g * inside * (p - y) / (p * (1.0 - p)) / k

    return Value(np.asarray(out, dtype=probs.data.dtype), (probs,), bwd)


# ---------------------------------------------------------------------------
# finite-difference gradient checking
# ---------------------------------------------------------------------------


def finite_difference_check(build, arrays, h=1e-5, rng=None, sample=None):
    """Compare analytic gradients of ``build`` against central differences.

    ``build`` maps a dict of leaf Values to a scalar loss Value and must be
    pure. ``arrays`` holds the leaf data; the check always runs in float64.
    Returns the maximum per-coordinate relative error. If ``sample`` is
    given, only that many randomly chosen coordinates per array are probed.
    """
    arrays64 = {k: np.asarray(a, dtype=np.float64) for k, a in arrays.items()}

    def evaluate(data):
        return float(build({k: Value(a.copy()) for k, a in data.items()}).data)

    leaves = {k: Value(a.copy()) for k, a in arrays64.items()}
    loss = build(leaves)
    loss.backward()
    analytic = {k: v.grad.copy() for k, v in leaves.items()}

    max_err = 0.0
    for name, base in arrays64.items():
        flat_indices = np.arange(base.size)
        if sample is not None and base.size > sample:
            if rng is None:
                rng = np.random.default_rng(0)
            flat_indices = rng.choice(base.size, size=sample, replace=False)
        for flat in flat_indices:
            idx = np.unravel_index(int(flat), base.shape)
            plus = {k: a.copy() for k, a in arrays64.items()}
            minus = {k: a.copy() for k, a in arrays64.items()}
            plus[name][idx] += h
            minus[name][idx] -= h
            numeric = (evaluate(plus) - evaluate(minus)) / (2.0 * h)
            a = analytic[name][idx]
            err = abs(a - numeric) / max(abs(a), abs(numeric), 1e-5)
            max_err = max(max_err, err)
    return max_err
