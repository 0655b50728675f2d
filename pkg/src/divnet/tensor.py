"""Minimal reverse-mode autodiff over dense float64 arrays of rank <= 2.

Every array op records its parents and a backward closure; Tensor.backward()
replays the tape in reverse topological order. Scalars are rank-0 arrays.
Determinant forward/backward delegates the linear algebra to numpy (LU with
partial pivoting under the hood); everything else is hand-rolled.
"""

from __future__ import annotations

import numpy as np


class ShapeError(ValueError):
    pass


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_backward", "_parents")

    def __init__(self, data, requires_grad=False, _parents=()):
        self.data = np.asarray(data, dtype=np.float64)
        if self.data.ndim > 2:
            raise ShapeError(f"rank {self.data.ndim} > 2 not supported")
        self.requires_grad = bool(requires_grad)
        # allocated lazily on first accumulation (or by zero_grad); a node
        # that never receives a gradient contributes exact zeros either way
        self.grad = None
        self._backward = None
        self._parents = _parents

    @property
    def shape(self):
        return self.data.shape

    def zero_grad(self):
        if self.requires_grad:
            self.grad = np.zeros_like(self.data)

    def detach(self):
        return Tensor(self.data.copy())

    def item(self):
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # -- graph plumbing ----------------------------------------------------

    def _accum(self, g):
        # lazily allocate grad buffers for intermediates
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def backward(self):
        """Accumulate d(self)/d(leaf) into every requires_grad tensor.

        Gradients add up across calls; callers zero them between steps.
        """
        if self.data.shape != ():
            raise ShapeError(f"backward needs a scalar loss, got shape {self.shape}")
        topo = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        self._accum(np.ones_like(self.data))
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # -- elementwise arithmetic ---------------------------------------------

    @staticmethod
    def _lift(x):
        return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))

    @staticmethod
    def _reduce_to(g, shape):
        # undo the limited broadcasts we allow: scalar and single-row
        if g.shape == shape:
            return g
        if shape == ():
            return g.sum()
        if len(shape) == 2 and shape[0] == 1 and g.ndim == 2 and g.shape[1] == shape[1]:
            return g.sum(axis=0, keepdims=True)
        raise ShapeError(f"cannot reduce grad {g.shape} to {shape}")

    def _check_broadcast(self, other):
        a, b = self.shape, other.shape
        if a == b or a == () or b == ():
            return
        if len(a) == 2 and len(b) == 2 and a[1] == b[1] and (a[0] == 1 or b[0] == 1):
            return
        raise ShapeError(f"incompatible shapes {a} and {b}")

    def __add__(self, other):
        other = Tensor._lift(other)
        self._check_broadcast(other)
        out = Tensor(self.data + other.data,
                     requires_grad=self.requires_grad or other.requires_grad,
                     _parents=(self, other))
        if out.requires_grad:
            def _bw(g):
                if self.requires_grad:
                    self._accum(Tensor._reduce_to(g, self.shape))
                if other.requires_grad:
                    other._accum(Tensor._reduce_to(g, other.shape))
            out._backward = _bw
        return out

    __radd__ = __add__

    def __neg__(self):
        out = Tensor(-self.data, requires_grad=self.requires_grad, _parents=(self,))
        if out.requires_grad:
            out._backward = lambda g: self._accum(-g)
        return out

    def __sub__(self, other):
        return self + (-Tensor._lift(other))

    def __rsub__(self, other):
        return Tensor._lift(other) + (-self)

    def __mul__(self, other):
        other = Tensor._lift(other)
        self._check_broadcast(other)
        out = Tensor(self.data * other.data,
                     requires_grad=self.requires_grad or other.requires_grad,
                     _parents=(self, other))
        if out.requires_grad:
            def _bw(g):
                if self.requires_grad:
                    self._accum(Tensor._reduce_to(g * other.data, self.shape))
                if other.requires_grad:
                    other._accum(Tensor._reduce_to(g * self.data, other.shape))
            out._backward = _bw
        return out

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = Tensor._lift(other)
        self._check_broadcast(other)
        out = Tensor(self.data / other.data,
                     requires_grad=self.requires_grad or other.requires_grad,
                     _parents=(self, other))
        if out.requires_grad:
            def _bw(g):
                if self.requires_grad:
                    self._accum(Tensor._reduce_to(g / other.data, self.shape))
                if other.requires_grad:
                    other._accum(Tensor._reduce_to(
                        -g * self.data / (other.data ** 2), other.shape))
            out._backward = _bw
        return out

    # -- linear algebra -----------------------------------------------------

    def matmul(self, other):
        other = Tensor._lift(other)
        if self.data.ndim != 2 or other.data.ndim != 2:
            raise ShapeError(f"matmul needs rank-2 operands, got {self.shape} @ {other.shape}")
        if self.shape[1] != other.shape[0]:
            raise ShapeError(f"matmul inner dims disagree: {self.shape} @ {other.shape}")
        out = Tensor(self.data @ other.data,
                     requires_grad=self.requires_grad or other.requires_grad,
                     _parents=(self, other))
        if out.requires_grad:
            def _bw(g):
                if self.requires_grad:
                    self._accum(g @ other.data.T)
                if other.requires_grad:
                    other._accum(self.data.T @ g)
            out._backward = _bw
        return out

    __matmul__ = matmul

    def transpose(self):
        if self.data.ndim != 2:
            raise ShapeError(f"transpose needs rank 2, got {self.shape}")
        out = Tensor(self.data.T.copy(), requires_grad=self.requires_grad, _parents=(self,))
        if out.requires_grad:
            out._backward = lambda g: self._accum(g.T)
        return out

    @property
    def T(self):
        return self.transpose()

    def row(self, i):
        if self.data.ndim != 2:
            raise ShapeError(f"row needs rank 2, got {self.shape}")
        out = Tensor(self.data[i:i + 1].copy(), requires_grad=self.requires_grad,
                     _parents=(self,))
        if out.requires_grad:
            def _bw(g):
                if self.grad is None:
                    self.grad = np.zeros_like(self.data)
                self.grad[i:i + 1] += g
            out._backward = _bw
        return out

    # -- reductions and nonlinearities ---------------------------------------

    def sum(self):
        out = Tensor(self.data.sum(), requires_grad=self.requires_grad, _parents=(self,))
        if out.requires_grad:
            out._backward = lambda g: self._accum(np.full_like(self.data, float(g)))
        return out

    def mean(self):
        return self.sum() * (1.0 / self.data.size)

    def log(self):
        out = Tensor(np.log(self.data), requires_grad=self.requires_grad, _parents=(self,))
        if out.requires_grad:
            out._backward = lambda g: self._accum(g / self.data)
        return out

    def exp(self):
        out = Tensor(np.exp(self.data), requires_grad=self.requires_grad, _parents=(self,))
        if out.requires_grad:
            out._backward = lambda g: self._accum(g * out.data)
        return out

    def relu(self):
        out = Tensor(np.maximum(self.data, 0.0), requires_grad=self.requires_grad,
                     _parents=(self,))
        if out.requires_grad:
            out._backward = lambda g: self._accum(g * (self.data > 0.0))
        return out

    def clamp(self, lo, hi):
        out = Tensor(np.clip(self.data, lo, hi), requires_grad=self.requires_grad,
                     _parents=(self,))
        if out.requires_grad:
            mask = (self.data >= lo) & (self.data <= hi)
            out._backward = lambda g: self._accum(g * mask)
        return out


SIGMOID_FLOOR = 1e-308          # keeps outputs strictly inside (0, 1)
SIGMOID_CEIL = 1.0 - 2.0 ** -53


def sigmoid(x: Tensor) -> Tensor:
    # split by sign to avoid overflow in exp; clamp away exact 0/1 saturation
    d = x.data
    s = np.where(d >= 0, 1.0 / (1.0 + np.exp(-np.clip(d, 0, None))),
                 np.exp(np.clip(d, None, 0)) / (1.0 + np.exp(np.clip(d, None, 0))))
    s = np.clip(s, SIGMOID_FLOOR, SIGMOID_CEIL)
    out = Tensor(s, requires_grad=x.requires_grad, _parents=(x,))
    if out.requires_grad:
        out._backward = lambda g: x._accum(g * s * (1.0 - s))
    return out


def softmax_rows(x: Tensor) -> Tensor:
    """Row-wise softmax with per-row max subtraction. Rejects non-finite input."""
    if x.data.ndim != 2:
        raise ShapeError(f"softmax_rows needs rank 2, got {x.shape}")
    if not np.all(np.isfinite(x.data)):
        raise ValueError("softmax_rows: non-finite input")
    shifted = x.data - x.data.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=1, keepdims=True)
    out = Tensor(s, requires_grad=x.requires_grad, _parents=(x,))
    if out.requires_grad:
        def _bw(g):
            dot = (g * s).sum(axis=1, keepdims=True)
            x._accum(s * (g - dot))
        out._backward = _bw
    return out


def masked_softmax_rows(x: Tensor, mask: np.ndarray) -> Tensor:
    """Softmax over each row restricted to mask==True columns (-inf elsewhere)."""
    if x.data.ndim != 2:
        raise ShapeError(f"masked_softmax_rows needs rank 2, got {x.shape}")
    neg = np.where(mask, x.data, -np.inf)
    shifted = neg - neg.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=1, keepdims=True)
    out = Tensor(s, requires_grad=x.requires_grad, _parents=(x,))
    if out.requires_grad:
        def _bw(g):
            dot = (g * s).sum(axis=1, keepdims=True)
            x._accum(s * (g - dot))
        out._backward = _bw
    return out


LAYER_NORM_EPS = 1e-5


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor) -> Tensor:
    """Per-row standardization (population variance, eps inside the sqrt),
    followed by an affine gain/bias."""
    if x.data.ndim != 2:
        raise ShapeError(f"layer_norm needs rank-2 input, got {x.shape}")
    n = x.shape[1]
    mu = x.data.mean(axis=1, keepdims=True)
    var = x.data.var(axis=1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + LAYER_NORM_EPS)
    xhat = (x.data - mu) * inv_std
    g_row = gain.data.reshape(1, n)
    b_row = bias.data.reshape(1, n)
    out = Tensor(xhat * g_row + b_row,
                 requires_grad=x.requires_grad or gain.requires_grad or bias.requires_grad,
                 _parents=(x, gain, bias))
    if out.requires_grad:
        def _bw(g):
            if bias.requires_grad:
                bias._accum(g.sum(axis=0).reshape(bias.data.shape))
            if gain.requires_grad:
                gain._accum((g * xhat).sum(axis=0).reshape(gain.data.shape))
            if x.requires_grad:
                dxhat = g * g_row
                m1 = dxhat.mean(axis=1, keepdims=True)
                m2 = (dxhat * xhat).mean(axis=1, keepdims=True)
                x._accum(inv_std * (dxhat - m1 - xhat * m2))
        out._backward = _bw
    return out


DET_SINGULAR_EPS = 1e-8


def determinant(a: Tensor) -> Tensor:
    """det of a square matrix; backward via det(A) * inv(A)^T, regularized with
    A + eps*I when A is numerically singular."""
    if a.data.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ShapeError(f"determinant needs a square matrix, got {a.shape}")
    d = float(np.linalg.det(a.data))
    out = Tensor(d, requires_grad=a.requires_grad, _parents=(a,))
    if out.requires_grad:
        def _bw(g):
            m = a.data
            try:
                inv_t = np.linalg.inv(m).T
                adj = d * inv_t
                if not np.all(np.isfinite(adj)):
                    raise np.linalg.LinAlgError
            except np.linalg.LinAlgError:
                reg = m + DET_SINGULAR_EPS * np.eye(m.shape[0])
                adj = float(np.linalg.det(reg)) * np.linalg.inv(reg).T
            a._accum(float(g) * adj)
        out._backward = _bw
    return out


def cosine_rows(a: Tensor, b: Tensor) -> Tensor:
    """Cosine similarity of two row vectors; 0 when either has zero norm."""
    if a.data.ndim != 2 or a.shape[0] != 1 or b.data.ndim != 2 or b.shape[0] != 1:
        raise ShapeError(f"cosine_rows needs 1xn rows, got {a.shape}, {b.shape}")
    if a.shape[1] != b.shape[1]:
        raise ShapeError(f"cosine_rows width mismatch: {a.shape} vs {b.shape}")
    na = float(np.linalg.norm(a.data))
    nb = float(np.linalg.norm(b.data))
    if na == 0.0 or nb == 0.0:
        return Tensor(0.0)
    c = float((a.data @ b.data.T).item()) / (na * nb)
    out = Tensor(c, requires_grad=a.requires_grad or b.requires_grad, _parents=(a, b))
    if out.requires_grad:
        def _bw(g):
            gs = float(g)
            if a.requires_grad:
                a._accum(gs * (b.data / (na * nb) - c * a.data / (na * na)))
            if b.requires_grad:
                b._accum(gs * (a.data / (na * nb) - c * b.data / (nb * nb)))
        out._backward = _bw
    return out


def concat_rows(rows) -> Tensor:
    """Stack 1xn row tensors into an mxn tensor."""
    rows = list(rows)
    if not rows:
        raise ShapeError("concat_rows: empty list")
    out = Tensor(np.vstack([r.data for r in rows]),
                 requires_grad=any(r.requires_grad for r in rows),
                 _parents=tuple(rows))
    if out.requires_grad:
        def _bw(g):
            i = 0
            for r in rows:
                h = r.data.shape[0]
                if r.requires_grad:
                    r._accum(g[i:i + h])
                i += h
        out._backward = _bw
    return out


def concat_cols(parts) -> Tensor:
    """Concatenate rank-2 tensors with equal row counts along columns."""
    parts = list(parts)
    out = Tensor(np.hstack([p.data for p in parts]),
                 requires_grad=any(p.requires_grad for p in parts),
                 _parents=tuple(parts))
    if out.requires_grad:
        def _bw(g):
            j = 0
            for p in parts:
                w = p.data.shape[1]
                if p.requires_grad:
                    p._accum(g[:, j:j + w])
                j += w
        out._backward = _bw
    return out


def from_scalars(grid) -> Tensor:
    """Assemble a matrix from a nested list of scalar tensors.

    The same scalar may appear in several cells (symmetric kernels); its
    gradient accumulates once per occurrence.
    """
    rows = len(grid)
    cols = len(grid[0])
    data = np.empty((rows, cols))
    parents = []
    for i, row in enumerate(grid):
        if len(row) != cols:
            raise ShapeError("from_scalars: ragged grid")
        for j, s in enumerate(row):
            data[i, j] = float(s.data)
            parents.append(s)
    out = Tensor(data, requires_grad=any(p.requires_grad for p in parents),
                 _parents=tuple(parents))
    if out.requires_grad:
        def _bw(g):
            for i in range(rows):
                for j in range(cols):
                    s = grid[i][j]
                    if s.requires_grad or s._parents:
                        s._accum(np.asarray(g[i, j]))
        out._backward = _bw
    return out


def stack_scalars(scalars) -> Tensor:
    """Stack scalar tensors into a 1xn row."""
    return from_scalars([list(scalars)])


class Adam:
    """Adam with bias correction; step() consumes and zeroes gradients."""

    def __init__(self, params, lr=0.01, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for i, p in enumerate(self.params):
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            self.m[i] = b1 * self.m[i] + (1 - b1) * g
            self.v[i] = b2 * self.v[i] + (1 - b2) * g * g
            m_hat = self.m[i] / (1 - b1 ** self.t)
            v_hat = self.v[i] / (1 - b2 ** self.t)
            p.data -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)
            p.zero_grad()

    def state_dict(self):
        return {
            "t": self.t,
            "m": [m.tolist() for m in self.m],
            "v": [v.tolist() for v in self.v],
        }

    def load_state_dict(self, state):
        self.t = int(state["t"])
        self.m = [np.asarray(m, dtype=np.float64).reshape(p.data.shape)
                  for m, p in zip(state["m"], self.params)]
        self.v = [np.asarray(v, dtype=np.float64).reshape(p.data.shape)
                  for v, p in zip(state["v"], self.params)]
