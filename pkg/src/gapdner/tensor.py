"""A small reverse-mode autodiff engine over float64 numpy arrays.

Only the operations the grid model needs are provided. Shapes must agree
exactly except for the leading batch dimensions of `affine`/`add_bias`,
which broadcast a trailing-axis bias or weight.
"""

from __future__ import annotations

import json
import math
import struct

import numpy as np

DTYPE = np.float64


class ShapeError(ValueError):
    pass


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad=False, name=None, _parents=(), _backward=None):
        self.data = np.asarray(data, dtype=DTYPE)
        self.requires_grad = requires_grad
        self.grad = None
        self._parents = _parents
        self._backward = _backward
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def numpy(self):
        return self.data

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        tag = f" {self.name}" if self.name else ""
        return f"Tensor{tag}(shape={self.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return add(self, scale(other, -1.0))

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __getitem__(self, key):
        return index(self, key)


def parameter(data, name=None) -> Tensor:
    return Tensor(np.array(data, dtype=DTYPE), requires_grad=True, name=name)


def constant(data) -> Tensor:
    return Tensor(data)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data, parents, backward) -> Tensor:
    parents = tuple(parents)
    if any(p.requires_grad for p in parents):
        return Tensor(data, requires_grad=True, _parents=parents, _backward=backward)
    return Tensor(data)


def _accum(t: Tensor, g):
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.array(g, dtype=DTYPE, copy=True)
    else:
        t.grad += g


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(x) into `.grad` of every requires_grad ancestor."""
    if loss.data.size != 1 or loss.ndim > 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    # iterative DFS post-order: a node is emitted only after all of its parents
    order, visited = [], {id(loss)}
    stack = [(loss, iter(loss._parents))]
    while stack:
        node, parents = stack[-1]
        for p in parents:
            if p.requires_grad and id(p) not in visited:
                visited.add(id(p))
                stack.append((p, iter(p._parents)))
                break
        else:
            stack.pop()
            order.append(node)
    upstream = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = upstream.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            _accum(node, g)
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            if id(parent) in upstream:
                upstream[id(parent)] = upstream[id(parent)] + pg
            else:
                upstream[id(parent)] = pg


# ---------------------------------------------------------------- elementwise

def _same_shape(a: Tensor, b: Tensor, op: str):
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} differ")


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _same_shape(a, b, "add")
    return _node(a.data + b.data, (a, b), lambda g: (g, g))


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _same_shape(a, b, "mul")
    return _node(a.data * b.data, (a, b), lambda g: (g * b.data, g * a.data))


def scale(a: Tensor, c: float) -> Tensor:
    return _node(a.data * c, (a,), lambda g: (g * c,))


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)
    return _node(y, (x,), lambda g: (g * (1.0 - y * y),))


def sigmoid(x: Tensor) -> Tensor:
    y = np.empty_like(x.data)
    pos = x.data >= 0
    y[pos] = 1.0 / (1.0 + np.exp(-x.data[pos]))
    ex = np.exp(x.data[~pos])
    y[~pos] = ex / (1.0 + ex)
    return _node(y, (x,), lambda g: (g * y * (1.0 - y),))


def log(x: Tensor, floor: float = 0.0) -> Tensor:
    """Natural log; inputs below `floor` are clamped and pass no gradient."""
    clamped = x.data < floor
    safe = np.where(clamped, floor, x.data)
    y = np.log(safe)
    return _node(y, (x,), lambda g: (np.where(clamped, 0.0, g / safe),))


def total(x: Tensor) -> Tensor:
    return _node(np.array(x.data.sum()), (x,), lambda g: (np.full_like(x.data, g),))


def mean(x: Tensor) -> Tensor:
    size = x.data.size
    return _node(np.array(x.data.mean()), (x,), lambda g: (np.full_like(x.data, g / size),))


def dropout(x: Tensor, rate: float, rng: np.random.Generator | None, train: bool) -> Tensor:
    """Inverted dropout; identity in eval mode or at rate 0."""
    if not train or rate <= 0.0:
        return x
    if rng is None:
        raise ValueError("dropout in train mode needs an explicit RNG")
    keep = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return _node(x.data * keep, (x,), lambda g: (g * keep,))


# ---------------------------------------------------------------- structural

def index(x: Tensor, key) -> Tensor:
    y = x.data[key]
    parts = key if isinstance(key, tuple) else (key,)
    basic = all(isinstance(k, (int, np.integer, slice)) for k in parts)

    def back(g):
        out = np.zeros_like(x.data)
        if basic:
            out[key] = g
        else:
            np.add.at(out, key, g)  # repeated indices must accumulate
        return (out,)

    return _node(np.array(y, copy=True), (x,), back)


def reshape(x: Tensor, shape) -> Tensor:
    return _node(x.data.reshape(shape), (x,), lambda g: (g.reshape(x.shape),))


def concat(xs, axis: int = -1) -> Tensor:
    xs = [_as_tensor(x) for x in xs]
    ax = axis % xs[0].ndim
    for x in xs[1:]:
        if x.ndim != xs[0].ndim or any(x.shape[k] != xs[0].shape[k] for k in range(x.ndim) if k != ax):
            raise ShapeError(f"concat: shapes {xs[0].shape} and {x.shape} disagree off axis {axis}")
    sizes = [x.shape[ax] for x in xs]
    bounds = np.cumsum([0] + sizes)

    def back(g):
        return tuple(np.take(g, np.arange(bounds[k], bounds[k + 1]), axis=ax) for k in range(len(xs)))

    return _node(np.concatenate([x.data for x in xs], axis=ax), xs, back)


def stack(xs, axis: int = 0) -> Tensor:
    xs = [_as_tensor(x) for x in xs]
    for x in xs[1:]:
        _same_shape(xs[0], x, "stack")

    def back(g):
        return tuple(np.take(g, k, axis=axis) for k in range(len(xs)))

    return _node(np.stack([x.data for x in xs], axis=axis), xs, back)


# ---------------------------------------------------------------- linear algebra

def _parse_einsum(spec: str):
    lhs, out = spec.replace(" ", "").split("->")
    return lhs.split(","), out


def einsum(spec: str, *operands) -> Tensor:
    """Differentiable einsum. Subscripts are single letters; no ellipsis or repeated letters per operand."""
    ops = [_as_tensor(o) for o in operands]
    ins, out = _parse_einsum(spec)
    if len(ins) != len(ops):
        raise ShapeError(f"einsum {spec!r}: expected {len(ins)} operands, got {len(ops)}")
    for sub, o in zip(ins, ops):
        if len(sub) != o.ndim or len(set(sub)) != len(sub):
            raise ShapeError(f"einsum {spec!r}: operand shape {o.shape} does not match {sub!r}")
    sizes = {}
    for sub, o in zip(ins, ops):
        for letter, dim in zip(sub, o.shape):
            if sizes.setdefault(letter, dim) != dim:
                raise ShapeError(f"einsum {spec!r}: index {letter} has sizes {sizes[letter]} and {dim}")
    y = np.einsum(spec, *[o.data for o in ops], optimize=len(ops) > 2)

    def back(g):
        grads = []
        for k, (sub, o) in enumerate(zip(ins, ops)):
            if not o.requires_grad:
                grads.append(None)
                continue
            others = [(s, p.data) for m, (s, p) in enumerate(zip(ins, ops)) if m != k]
            avail = set(out).union(*[set(s) for s, _ in others])
            kept = "".join(c for c in sub if c in avail)
            gk = np.einsum(
                ",".join([out] + [s for s, _ in others]) + "->" + kept,
                g,
                *[d for _, d in others],
                optimize=len(others) > 1,
            )
            if kept != sub:
                expand = tuple(slice(None) if c in kept else None for c in sub)
                gk = np.broadcast_to(gk[expand], o.shape).copy()
            grads.append(gk)
        return tuple(grads)

    return _node(y, ops, back)


def matmul(x: Tensor, W: Tensor) -> Tensor:
    """x[..., a] @ W[a, b] with leading dims of x treated as batch."""
    if W.ndim != 2 or x.shape[-1] != W.shape[0]:
        raise ShapeError(f"matmul: x {x.shape} and W {W.shape} inner dimensions disagree")
    def back(g):
        gx = g @ W.data.T if x.requires_grad else None
        gW = x.data.reshape(-1, W.shape[0]).T @ g.reshape(-1, W.shape[1]) if W.requires_grad else None
        return gx, gW

    return _node(x.data @ W.data, (x, W), back)


def add_bias(x: Tensor, b: Tensor) -> Tensor:
    if b.ndim != 1 or x.shape[-1] != b.shape[0]:
        raise ShapeError(f"add_bias: x {x.shape} and bias {b.shape} disagree")
    lead_axes = tuple(range(x.ndim - 1))
    return _node(x.data + b.data, (x, b), lambda g: (g, g.sum(axis=lead_axes)))


def affine(x: Tensor, W: Tensor, bias: Tensor | None = None) -> Tensor:
    """y = x W + bias, broadcast over the leading dimensions of x."""
    if W.ndim != 2 or x.shape[-1] != W.shape[0]:
        raise ShapeError(f"affine: x {x.shape} and W {W.shape} inner dimensions disagree")
    if bias is not None and (bias.ndim != 1 or bias.shape[0] != W.shape[1]):
        raise ShapeError(f"affine: W {W.shape} and bias {bias.shape} disagree")
    y = matmul(x, W)
    return y if bias is None else add_bias(y, bias)


def bilinear(u: Tensor, U1: Tensor, v: Tensor) -> Tensor:
    """out[..., k] = sum_{p,q} u[..., p] U1[p, k, q] v[..., q]."""
    if U1.ndim != 3 or u.shape[-1] != U1.shape[0] or v.shape[-1] != U1.shape[2] or u.shape[:-1] != v.shape[:-1]:
        raise ShapeError(f"bilinear: u {u.shape}, U1 {U1.shape}, v {v.shape} disagree")
    lead = "abcdefgh"[: u.ndim - 1]
    return einsum(f"{lead}p,pkq,{lead}q->{lead}k", u, U1, v)


def bilinear_grid(u: Tensor, U1: Tensor, v: Tensor) -> Tensor:
    """out[i, j, k] = bilinear(u[i], U1, v[j]) for every row pair, without materializing the pairs."""
    if U1.ndim != 3 or u.ndim != 2 or v.ndim != 2 or u.shape[1] != U1.shape[0] or v.shape[1] != U1.shape[2]:
        raise ShapeError(f"bilinear_grid: u {u.shape}, U1 {U1.shape}, v {v.shape} disagree")
    return einsum("ip,pkq,jq->ijk", u, U1, v)


# ---------------------------------------------------------------- normalization

def softmax(x: Tensor, axis: int = -1) -> Tensor:
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)

    def back(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return _node(y, (x,), back)


def masked_softmax(x: Tensor, mask: np.ndarray, axis: int = -1) -> Tensor:
    """Softmax over the entries where `mask` is true; masked entries are exactly 0.

    A slice with no allowed entry yields all zeros.
    """
    mask = np.broadcast_to(np.asarray(mask, dtype=bool), x.shape)
    z = np.where(mask, x.data, -np.inf)
    zmax = z.max(axis=axis, keepdims=True)
    zmax = np.where(np.isfinite(zmax), zmax, 0.0)
    e = np.where(mask, np.exp(z - zmax), 0.0)
    denom = e.sum(axis=axis, keepdims=True)
    y = e / np.where(denom > 0, denom, 1.0)

    def back(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return _node(y, (x,), back)


def weighted_sum(weights: Tensor, values: Tensor) -> Tensor:
    """out[..., d] = sum_k weights[..., k] * values[..., k, d]."""
    if values.ndim != weights.ndim + 1 or values.shape[:-1] != weights.shape:
        raise ShapeError(f"weighted_sum: weights {weights.shape} and values {values.shape} disagree")
    lead = "abcdefgh"[: weights.ndim - 1]
    return einsum(f"{lead}k,{lead}kd->{lead}d", weights, values)


# ---------------------------------------------------------------- checkpoints

MAGIC = b"GDNRCKPT"
FORMAT_VERSION = 1


def save_arrays(path, arrays: dict, meta: dict | None = None) -> None:
    """Write named float64 arrays with a JSON header; raw data is little-endian."""
    entries = []
    blobs = []
    for name, arr in arrays.items():
        a = np.asarray(arr.data if isinstance(arr, Tensor) else arr, dtype="<f8")
        entries.append({"name": name, "shape": list(a.shape)})
        blobs.append(a.tobytes(order="C"))
    header = json.dumps({"version": FORMAT_VERSION, "meta": meta or {}, "entries": entries}).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", FORMAT_VERSION, len(header)))
        fh.write(header)
        for blob in blobs:
            fh.write(blob)


def load_arrays(path):
    """Inverse of save_arrays; returns (meta, {name: ndarray})."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[: len(MAGIC)] != MAGIC:
        raise ValueError(f"{path}: not a checkpoint file")
    pos = len(MAGIC)
    version, hlen = struct.unpack_from("<II", raw, pos)
    if version != FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    pos += 8
    header = json.loads(raw[pos : pos + hlen].decode("utf-8"))
    pos += hlen
    arrays = {}
    for entry in header["entries"]:
        count = math.prod(entry["shape"])
        nbytes = 8 * count
        if pos + nbytes > len(raw):
            raise ValueError(f"{path}: truncated data for {entry['name']}")
        arrays[entry["name"]] = np.frombuffer(raw, dtype="<f8", count=count, offset=pos).astype(DTYPE).reshape(entry["shape"])
        pos += nbytes
    return header["meta"], arrays
