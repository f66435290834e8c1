"""Minimal dense-tensor computation graph with reverse-mode differentiation.

Everything is float64.  A ``Graph`` is a flat, topologically ordered tape of
op records; tensors are lightweight handles into it.  Networks rebuild their
graph on every call (define-by-run), with parameters living outside the graph
in a plain ``dict[str, np.ndarray]``.

Broadcasting is deliberately restricted: ``add`` accepts a bias vector over
the last axis, ``mul`` accepts a python scalar; everything else requires
exact shape agreement so the shape rules stay auditable.

Checkpoint format (``save_checkpoint`` / ``load_checkpoint``): a JSON object

    {"format": "GRIDPATCH-CKPT-1",
     "meta": {...},                      # optional, caller-defined
     "params": {name: {"shape": [...], "values": [...]}}}

with values flattened row-major.  ``repr``-level float serialization makes
the round trip exact.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .kernels import conv1d_backward, conv1d_forward

CHECKPOINT_HEADER = "GRIDPATCH-CKPT-1"

_GELU_C = math.sqrt(2.0 / math.pi)


class ShapeError(ValueError):
    """Raised when op inputs do not conform to the op's shape rule."""

    def __init__(self, op: str, shapes, detail: str = ""):
        self.op = op
        self.shapes = [tuple(s) for s in shapes]
        msg = f"{op}: incompatible shapes {self.shapes}"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)


class GraphError(RuntimeError):
    pass


@dataclass
class Node:
    op: str
    inputs: tuple[int, ...]
    value: np.ndarray
    # maps the output gradient to one gradient per input, aligned with `inputs`
    grad_fn: Callable[[np.ndarray], tuple] | None = None
    trainable: bool = False
    name: str | None = None


class Tensor:
    """Handle to one node of a graph."""

    __slots__ = ("graph", "nid")

    def __init__(self, graph: "Graph", nid: int):
        self.graph = graph
        self.nid = nid

    @property
    def value(self) -> np.ndarray:
        return self.graph.nodes[self.nid].value

    @property
    def shape(self) -> tuple[int, ...]:
        return self.graph.nodes[self.nid].value.shape

    def __repr__(self):  # pragma: no cover - debugging aid
        return f"Tensor(nid={self.nid}, shape={self.shape})"


class Graph:
    """Topologically ordered op tape; node inputs always reference earlier nodes."""

    def __init__(self, check_finite: bool = True):
        self.nodes: list[Node] = []
        self.check_finite = check_finite

    # -- leaves ------------------------------------------------------------

    def _push(self, node: Node) -> Tensor:
        if self.check_finite and not np.all(np.isfinite(node.value)):
            raise GraphError(f"non-finite values produced by op '{node.op}'")
        self.nodes.append(node)
        return Tensor(self, len(self.nodes) - 1)

    def input(self, value) -> Tensor:
        arr = np.asarray(value, dtype=np.float64)
        return self._push(Node("leaf", (), arr))

    def param(self, name: str, value: np.ndarray) -> Tensor:
        arr = np.asarray(value, dtype=np.float64)
        return self._push(Node("leaf", (), arr, trainable=True, name=name))

    def param_leaves(self) -> dict[str, int]:
        return {n.name: i for i, n in enumerate(self.nodes) if n.trainable}

    # -- ops ---------------------------------------------------------------

    def matmul(self, a: Tensor, b: Tensor) -> Tensor:
        av, bv = a.value, b.value
        if av.ndim != 2 or bv.ndim != 2 or av.shape[1] != bv.shape[0]:
            raise ShapeError("matmul", [av.shape, bv.shape])
        out = av @ bv

        def grad(g):
            return g @ bv.T, av.T @ g

        return self._push(Node("matmul", (a.nid, b.nid), out, grad))

    def add(self, a: Tensor, b: Tensor) -> Tensor:
        av, bv = a.value, b.value
        if av.shape == bv.shape:
            def grad(g):
                return g, g
        elif bv.ndim == 1 and av.ndim >= 1 and av.shape[-1] == bv.shape[0]:
            # bias-add: vector broadcast over the last axis
            def grad(g):
                return g, g.reshape(-1, bv.shape[0]).sum(axis=0)
        else:
            raise ShapeError("add", [av.shape, bv.shape])
        return self._push(Node("add", (a.nid, b.nid), av + bv, grad))

    def mul(self, a: Tensor, b: Tensor) -> Tensor:
        av, bv = a.value, b.value
        if av.shape == bv.shape:
            def grad(g):
                return g * bv, g * av
        elif bv.ndim == 0:
            def grad(g):
                return g * bv, np.asarray((g * av).sum())
        else:
            raise ShapeError("elementwise-mul", [av.shape, bv.shape])
        return self._push(Node("elementwise-mul", (a.nid, b.nid), av * bv, grad))

    def scale(self, a: Tensor, c: float) -> Tensor:
        return self.mul(a, self.input(np.asarray(float(c))))

    def relu(self, a: Tensor) -> Tensor:
        av = a.value
        mask = av > 0.0

        def grad(g):
            return (g * mask,)

        return self._push(Node("relu", (a.nid,), av * mask, grad))

    def gelu(self, a: Tensor) -> Tensor:
        # tanh approximation; smooth, so finite-difference checks are clean
        av = a.value
        u = _GELU_C * (av + 0.044715 * av**3)
        t = np.tanh(u)
        out = 0.5 * av * (1.0 + t)

        def grad(g):
            du = _GELU_C * (1.0 + 3 * 0.044715 * av**2)
            return (g * (0.5 * (1.0 + t) + 0.5 * av * (1.0 - t**2) * du),)

        return self._push(Node("gelu", (a.nid,), out, grad))

    def tanh(self, a: Tensor) -> Tensor:
        out = np.tanh(a.value)

        def grad(g):
            return (g * (1.0 - out**2),)

        return self._push(Node("tanh", (a.nid,), out, grad))

    def softmax(self, a: Tensor) -> Tensor:
        av = a.value
        if av.ndim == 0:
            raise ShapeError("softmax-last-axis", [av.shape])
        z = av - av.max(axis=-1, keepdims=True)
        e = np.exp(z)
        out = e / e.sum(axis=-1, keepdims=True)

        def grad(g):
            dot = (g * out).sum(axis=-1, keepdims=True)
            return (out * (g - dot),)

        return self._push(Node("softmax-last-axis", (a.nid,), out, grad))

    def layer_norm(self, a: Tensor, eps: float = 1e-5) -> Tensor:
        av = a.value
        if av.ndim == 0:
            raise ShapeError("layer-norm", [av.shape])
        mu = av.mean(axis=-1, keepdims=True)
        var = av.var(axis=-1, keepdims=True)
        inv = 1.0 / np.sqrt(var + eps)
        xhat = (av - mu) * inv

        def grad(g):
            d = av.shape[-1]
            gm = g.mean(axis=-1, keepdims=True)
            gx = (g * xhat).mean(axis=-1, keepdims=True)
            return (inv * (g - gm - xhat * gx),)

        return self._push(Node("layer-norm", (a.nid,), xhat, grad))

    def conv1d(self, x: Tensor, w: Tensor) -> Tensor:
        xv, wv = x.value, w.value
        if xv.ndim != 2 or wv.ndim != 3 or wv.shape[1] != xv.shape[1]:
            raise ShapeError("conv1d", [xv.shape, wv.shape], "want (T,Cin) x (k,Cin,Cout)")
        out = conv1d_forward(xv, wv)

        def grad(g):
            return conv1d_backward(xv, wv, g)

        return self._push(Node("conv1d", (x.nid, w.nid), out, grad))

    def maxpool1d(self, a: Tensor) -> Tensor:
        # stride-2 pooling over axis 0 with ceil semantics; odd tails keep
        # their single element
        av = a.value
        if av.ndim != 2:
            raise ShapeError("maxpool1d-stride2", [av.shape])
        t = av.shape[0]
        t_out = (t + 1) // 2
        out = np.empty((t_out, av.shape[1]))
        argrow = np.empty((t_out, av.shape[1]), dtype=np.int64)
        for j in range(t_out):
            lo, hi = 2 * j, min(2 * j + 2, t)
            win = av[lo:hi]
            idx = win.argmax(axis=0)
            out[j] = win[idx, np.arange(av.shape[1])]
            argrow[j] = lo + idx

        def grad(g):
            gx = np.zeros_like(av)
            cols = np.arange(av.shape[1])
            for j in range(t_out):
                gx[argrow[j], cols] += g[j]
            return (gx,)

        return self._push(Node("maxpool1d-stride2", (a.nid,), out, grad))

    def mse_loss(self, pred: Tensor, target: Tensor) -> Tensor:
        pv, tv = pred.value, target.value
        if pv.shape != tv.shape:
            raise ShapeError("mse-loss", [pv.shape, tv.shape])
        diff = pv - tv
        n = diff.size
        out = np.asarray((diff**2).sum() / n)

        def grad(g):
            d = (2.0 / n) * diff * g
            return d, -d

        return self._push(Node("mse-loss", (pred.nid, target.nid), out, grad))

    def transpose(self, a: Tensor) -> Tensor:
        av = a.value
        if av.ndim != 2:
            raise ShapeError("transpose", [av.shape])

        def grad(g):
            return (g.T,)

        return self._push(Node("transpose", (a.nid,), av.T.copy(), grad))

    def gather_rows(self, a: Tensor, idx: np.ndarray) -> Tensor:
        av = a.value
        idx = np.asarray(idx, dtype=np.int64)
        if av.ndim != 2 or idx.ndim != 1:
            raise ShapeError("gather-rows", [av.shape])

        def grad(g):
            gx = np.zeros_like(av)
            np.add.at(gx, idx, g)
            return (gx,)

        return self._push(Node("gather-rows", (a.nid,), av[idx].copy(), grad))

    def scatter_rows(self, base: Tensor, rows: Tensor, idx: np.ndarray) -> Tensor:
        bv, rv = base.value, rows.value
        idx = np.asarray(idx, dtype=np.int64)
        if bv.ndim != 2 or rv.shape != (len(idx), bv.shape[1]):
            raise ShapeError("scatter-rows", [bv.shape, rv.shape])
        if len(np.unique(idx)) != len(idx):
            raise GraphError("scatter-rows: duplicate row indices")
        out = bv.copy()
        out[idx] = rv

        def grad(g):
            gb = g.copy()
            gb[idx] = 0.0
            return gb, g[idx].copy()

        return self._push(Node("scatter-rows", (base.nid, rows.nid), out, grad))

    def slice_rows(self, a: Tensor, start: int, stop: int) -> Tensor:
        av = a.value
        if av.ndim != 2 or not (0 <= start <= stop <= av.shape[0]):
            raise ShapeError("slice-rows", [av.shape], f"range {start}:{stop}")

        def grad(g):
            gx = np.zeros_like(av)
            gx[start:stop] = g
            return (gx,)

        return self._push(Node("slice-rows", (a.nid,), av[start:stop].copy(), grad))

    def concat_cols(self, a: Tensor, b: Tensor) -> Tensor:
        av, bv = a.value, b.value
        if av.ndim != 2 or bv.ndim != 2 or av.shape[0] != bv.shape[0]:
            raise ShapeError("concat-cols", [av.shape, bv.shape])
        split = av.shape[1]

        def grad(g):
            return g[:, :split].copy(), g[:, split:].copy()

        return self._push(Node("concat-cols", (a.nid, b.nid), np.concatenate([av, bv], axis=1), grad))

    def mean_rows(self, a: Tensor) -> Tensor:
        av = a.value
        if av.ndim != 2:
            raise ShapeError("mean-rows", [av.shape])
        n = av.shape[0]

        def grad(g):
            return (np.repeat(g, n, axis=0) / n,)

        return self._push(Node("mean-rows", (a.nid,), av.mean(axis=0, keepdims=True), grad))

    def broadcast_rows(self, a: Tensor, n: int) -> Tensor:
        av = a.value
        if av.ndim != 2 or av.shape[0] != 1:
            raise ShapeError("broadcast-rows", [av.shape])

        def grad(g):
            return (g.sum(axis=0, keepdims=True),)

        return self._push(Node("broadcast-rows", (a.nid,), np.repeat(av, n, axis=0), grad))

    def mean_all(self, a: Tensor) -> Tensor:
        av = a.value
        n = av.size

        def grad(g):
            return (np.full_like(av, float(g) / n),)

        return self._push(Node("mean-all", (a.nid,), np.asarray(av.mean()), grad))

    def sum_all(self, a: Tensor) -> Tensor:
        av = a.value

        def grad(g):
            return (np.full_like(av, float(g)),)

        return self._push(Node("sum-all", (a.nid,), np.asarray(av.sum()), grad))

    # -- reverse pass --------------------------------------------------------

    def backward(self, loss: Tensor) -> dict[str, np.ndarray]:
        """Gradients of a scalar loss w.r.t. every trainable leaf, by name.

        Leaves with no path to the loss get a zero gradient of their own shape.
        """
        ln = self.nodes[loss.nid]
        if ln.value.shape != ():
            raise GraphError(f"backward needs a scalar loss, got shape {ln.value.shape}")
        grads: list[np.ndarray | None] = [None] * (loss.nid + 1)
        grads[loss.nid] = np.asarray(1.0)
        for nid in range(loss.nid, -1, -1):
            g = grads[nid]
            node = self.nodes[nid]
            if g is None or node.grad_fn is None:
                continue
            for inp, gi in zip(node.inputs, node.grad_fn(g)):
                if grads[inp] is None:
                    grads[inp] = gi
                else:
                    grads[inp] = grads[inp] + gi
        out = {}
        for nid, node in enumerate(self.nodes):
            if node.trainable:
                g = grads[nid] if nid <= loss.nid else None
                out[node.name] = np.zeros_like(node.value) if g is None else np.asarray(g)
        return out


# mapping from the documented op-kind names to graph methods; ops that take
# static arguments (indices, slice bounds) are built through their methods
_OP_KINDS = {
    "matmul": Graph.matmul,
    "add": Graph.add,
    "elementwise-mul": Graph.mul,
    "relu": Graph.relu,
    "gelu": Graph.gelu,
    "tanh": Graph.tanh,
    "softmax-last-axis": Graph.softmax,
    "layer-norm": Graph.layer_norm,
    "conv1d": Graph.conv1d,
    "maxpool1d-stride2": Graph.maxpool1d,
    "mse-loss": Graph.mse_loss,
    "transpose": Graph.transpose,
    "mean-rows": Graph.mean_rows,
    "mean-all": Graph.mean_all,
    "sum-all": Graph.sum_all,
}


def forward_op(graph: Graph, kind: str, inputs: list[Tensor]) -> Tensor:
    """Apply an op by kind name; shape mismatches raise ShapeError."""
    try:
        fn = _OP_KINDS[kind]
    except KeyError:
        raise GraphError(f"unknown op kind '{kind}'") from None
    return fn(graph, *inputs)


def op_kinds() -> list[str]:
    return sorted(_OP_KINDS)


# ---------------------------------------------------------------------------
# parameter updates & checkpoints
# ---------------------------------------------------------------------------

def sgd_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray], learning_rate: float) -> dict[str, np.ndarray]:
    """In-place p <- p - lr*g for every param with a gradient entry."""
    if learning_rate <= 0:
        raise ValueError(f"learning_rate must be positive, got {learning_rate}")
    for name, g in grads.items():
        p = params[name]
        if p.shape != np.shape(g):
            raise ShapeError("sgd-step", [p.shape, np.shape(g)], name)
        p -= learning_rate * g
    return params


class Adam:
    """Adaptive stochastic-gradient update with bias correction.

    Stateful per-parameter moments keyed by name; shapes are checked on the
    first step for each name.
    """

    def __init__(self, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        if lr <= 0:
            raise ValueError(f"lr must be positive, got {lr}")
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.t = 0

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for name, g in grads.items():
            p = params[name]
            if p.shape != np.shape(g):
                raise ShapeError("adam-step", [p.shape, np.shape(g)], name)
            m = self.m.setdefault(name, np.zeros_like(p))
            v = self.v.setdefault(name, np.zeros_like(p))
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            mhat = m / (1 - b1**self.t)
            vhat = v / (1 - b2**self.t)
            p -= self.lr * mhat / (np.sqrt(vhat) + self.eps)


def clip_grad_norm(grads: dict[str, np.ndarray], max_norm: float) -> float:
    """Scale all gradients so their global L2 norm is at most max_norm."""
    total = math.sqrt(sum(float((g**2).sum()) for g in grads.values()))
    if total > max_norm > 0:
        s = max_norm / total
        for g in grads.values():
            g *= s
    return total


def save_checkpoint(path, params: dict[str, np.ndarray], meta: dict | None = None) -> None:
    doc = {
        "format": CHECKPOINT_HEADER,
        "meta": meta or {},
        "params": {
            name: {"shape": list(arr.shape), "values": [float(v) for v in np.ravel(arr)]}
            for name, arr in sorted(params.items())
        },
    }
    with open(path, "w") as fh:
        json.dump(doc, fh)


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("format") != CHECKPOINT_HEADER:
        raise ValueError(f"not a {CHECKPOINT_HEADER} checkpoint: {path}")
    params = {
        name: np.array(rec["values"], dtype=np.float64).reshape(rec["shape"])
        for name, rec in doc["params"].items()
    }
    return params, doc.get("meta", {})
