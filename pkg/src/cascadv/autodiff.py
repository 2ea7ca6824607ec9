"""Dense f64 tensors with a minimal reverse-mode tape, plus a pinned PRNG.

The op set is deliberately small: just enough to express patch-MLP encoders,
cosine similarities, row softmaxes and the weighted attack objective. No
general broadcasting, no GPU, no mixed precision. Everything is float64 so
gradients can be checked against central finite differences at tight
tolerances.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "Tensor", "Tape", "Rng", "ShapeMismatch", "DomainError",
    "matmul", "add", "mul", "div", "neg", "relu", "tanh",
    "sum", "mean", "l2_norm", "log", "softmax_rows", "clamp",
    "reshape", "gather_rows", "backward", "gaussian_init",
]


class ShapeMismatch(ValueError):
    """Raised when operand shapes are incompatible for an op."""

    def __init__(self, op: str, *shapes):
        super().__init__(f"{op}: incompatible shapes {' vs '.join(str(s) for s in shapes)}")
        self.op = op
        self.shapes = shapes


class DomainError(ValueError):
    """Raised when values fall outside an op's numeric domain."""


# ---------------------------------------------------------------------------
# tensors and the tape


class Tensor:
    """Dense float64 array, optionally attached to a tape node.

    Construction from external data rejects NaN/Inf; results produced by ops
    bypass that check (their inputs were already validated).
    """

    __slots__ = ("data", "tape", "node")

    def __init__(self, data, tape: "Tape | None" = None, node: int | None = None):
        arr = np.asarray(data, dtype=np.float64)
        if not np.all(np.isfinite(arr)):
            raise DomainError("Tensor: non-finite values in input data")
        self.data = arr
        self.tape = tape
        self.node = node

    @classmethod
    def _wrap(cls, arr: np.ndarray, tape: "Tape | None" = None, node: int | None = None) -> "Tensor":
        t = cls.__new__(cls)
        t.data = arr
        t.tape = tape
        t.node = node
        return t

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeMismatch("item", self.shape)
        return float(self.data.reshape(-1)[0])

    def __repr__(self):
        tracked = "" if self.node is None else f", node={self.node}"
        return f"Tensor(shape={self.shape}{tracked})"

    def __add__(self, other):
        return add(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return neg(self)

    def __sub__(self, other):
        return add(self, neg(other) if isinstance(other, Tensor) else -other)


class Tape:
    """Append-only record of primitive ops; inputs always precede outputs."""

    def __init__(self):
        self._parents: list[tuple[int, ...]] = []
        self._vjps: list = []
        self._shapes: list[tuple] = []
        self.leaves: list[int] = []

    def __len__(self) -> int:
        return len(self._parents)

    def leaf(self, tensor: Tensor) -> Tensor:
        """Register a tensor as a differentiable leaf on this tape."""
        if tensor.node is not None:
            raise ValueError("leaf: tensor already belongs to a tape")
        node = self._record(tensor.data.shape, (), None)
        out = Tensor._wrap(tensor.data, self, node)
        self.leaves.append(node)
        return out

    def _record(self, shape, parents: tuple[int, ...], vjp) -> int:
        self._parents.append(parents)
        self._vjps.append(vjp)
        self._shapes.append(shape)
        return len(self._parents) - 1


def _tape_of(op: str, *tensors: Tensor) -> Tape | None:
    tape = None
    for t in tensors:
        if t.tape is not None:
            if tape is not None and tape is not t.tape:
                raise ValueError(f"{op}: operands recorded on different tapes")
            tape = t.tape
    return tape


def _emit(op: str, out: np.ndarray, inputs: tuple[Tensor, ...], vjp) -> Tensor:
    """Record a node if any input is tracked, else return a plain tensor.

    ``vjp(grad_out) -> [(input_index, thunk), ...]`` supplies lazy gradient
    thunks; only those for tracked inputs are ever evaluated, so constants
    (e.g. frozen encoder weights) cost nothing on the reverse pass.
    """
    tape = _tape_of(op, *inputs)
    if tape is None:
        return Tensor._wrap(out)
    idx_to_node = {i: t.node for i, t in enumerate(inputs) if t.node is not None}

    def node_vjp(grad_out):
        return [(idx_to_node[i], f(grad_out)) for i, f in vjp() if i in idx_to_node]

    node = tape._record(out.shape, tuple(idx_to_node.values()), node_vjp)
    return Tensor._wrap(out, tape, node)


# ---------------------------------------------------------------------------
# primitives


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeMismatch("matmul", a.shape, b.shape)
    out = a.data @ b.data

    def vjp():
        return [(0, lambda g: g @ b.data.T), (1, lambda g: a.data.T @ g)]

    return _emit("matmul", out, (a, b), vjp)


def _binary_mode(op: str, a: Tensor, b: Tensor) -> str:
    """Classify the (a, b) shape pair: same | row (b is (1,k)) | scalar (b size 1)."""
    if a.shape == b.shape:
        return "same"
    if b.data.size == 1:
        return "scalar"
    if a.data.ndim == 2 and b.shape == (1, a.shape[1]):
        return "row"
    raise ShapeMismatch(op, a.shape, b.shape)


def _coerce(op: str, other) -> Tensor:
    if isinstance(other, Tensor):
        return other
    if isinstance(other, (int, float)):
        return Tensor(np.array([float(other)]))
    raise TypeError(f"{op}: expected Tensor or scalar, got {type(other).__name__}")


def _reduce_like(g: np.ndarray, mode: str, shape: tuple) -> np.ndarray:
    if mode == "same":
        return g
    if mode == "row":
        return g.sum(axis=0, keepdims=True)
    return np.array(g.sum()).reshape(shape)


def add(a: Tensor, b) -> Tensor:
    b = _coerce("add", b)
    mode = _binary_mode("add", a, b)
    bd = b.data if mode != "scalar" else b.data.reshape(())
    out = a.data + bd

    def vjp():
        return [(0, lambda g: g), (1, lambda g: _reduce_like(g, mode, b.shape))]

    return _emit("add", out, (a, b), vjp)


def mul(a: Tensor, b) -> Tensor:
    b = _coerce("mul", b)
    mode = _binary_mode("mul", a, b)
    bd = b.data if mode != "scalar" else b.data.reshape(())
    out = a.data * bd

    def vjp():
        return [
            (0, lambda g: g * bd),
            (1, lambda g: _reduce_like(g * a.data, mode, b.shape)),
        ]

    return _emit("mul", out, (a, b), vjp)


def div(a: Tensor, b) -> Tensor:
    b = _coerce("div", b)
    mode = _binary_mode("div", a, b)
    bd = b.data if mode != "scalar" else b.data.reshape(())
    if np.any(bd == 0.0):
        raise DomainError("div: division by zero")
    out = a.data / bd

    def vjp():
        return [
            (0, lambda g: g / bd),
            (1, lambda g: _reduce_like(-g * a.data / (bd * bd), mode, b.shape)),
        ]

    return _emit("div", out, (a, b), vjp)


def neg(a: Tensor) -> Tensor:
    return _emit("neg", -a.data, (a,), lambda: [(0, lambda g: -g)])


def relu(a: Tensor) -> Tensor:
    out = np.maximum(a.data, 0.0)
    mask = a.data > 0.0
    return _emit("relu", out, (a,), lambda: [(0, lambda g: g * mask)])


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)
    return _emit("tanh", out, (a,), lambda: [(0, lambda g: g * (1.0 - out * out))])


def sum(a: Tensor) -> Tensor:  # noqa: A001 - op name fixed by the API
    out = np.array([a.data.sum()])
    return _emit("sum", out, (a,),
                 lambda: [(0, lambda g: np.full(a.shape, g.reshape(-1)[0]))])


def mean(a: Tensor, axis: int | None = None) -> Tensor:
    if axis is None:
        out = np.array([a.data.mean()])
        n = a.data.size

        def vjp():
            return [(0, lambda g: np.full(a.shape, g.reshape(-1)[0] / n))]
    elif axis == 0 and a.data.ndim == 2:
        out = a.data.mean(axis=0, keepdims=True)
        n = a.shape[0]

        def vjp():
            return [(0, lambda g: np.broadcast_to(g / n, a.shape).copy())]
    else:
        raise ShapeMismatch("mean", a.shape, f"axis={axis}")
    return _emit("mean", out, (a,), vjp)


def l2_norm(a: Tensor) -> Tensor:
    out = np.array([np.sqrt((a.data * a.data).sum())])

    def grad(g):
        norm = out[0]
        if norm == 0.0:
            raise DomainError("l2_norm: gradient undefined at the zero vector")
        return g.reshape(-1)[0] * a.data / norm

    return _emit("l2_norm", out, (a,), lambda: [(0, grad)])


def log(a: Tensor) -> Tensor:
    if np.any(a.data <= 0.0):
        raise DomainError(f"log: requires strictly positive inputs, min={a.data.min()}")
    out = np.log(a.data)
    return _emit("log", out, (a,), lambda: [(0, lambda g: g / a.data)])


def softmax_rows(a: Tensor) -> Tensor:
    """Row-wise softmax with max-subtraction for stability."""
    if a.data.ndim != 2:
        raise ShapeMismatch("softmax_rows", a.shape)
    shifted = a.data - a.data.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=1, keepdims=True)

    def vjp():
        def grad(g):
            dot = (g * out).sum(axis=1, keepdims=True)
            return out * (g - dot)

        return [(0, grad)]

    return _emit("softmax_rows", out, (a,), vjp)


def clamp(a: Tensor, lo: float, hi: float) -> Tensor:
    if lo > hi:
        raise DomainError(f"clamp: lo={lo} > hi={hi}")
    out = np.clip(a.data, lo, hi)
    interior = (a.data > lo) & (a.data < hi)
    return _emit("clamp", out, (a,), lambda: [(0, lambda g: g * interior)])


def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(int(s) for s in shape)
    if int(np.prod(shape)) != a.data.size:
        raise ShapeMismatch("reshape", a.shape, shape)
    out = a.data.reshape(shape)
    return _emit("reshape", out, (a,), lambda: [(0, lambda g: g.reshape(a.shape))])


def gather_rows(a: Tensor, ids) -> Tensor:
    """Select rows of a 2-D tensor by index; duplicates allowed."""
    if a.data.ndim != 2:
        raise ShapeMismatch("gather_rows", a.shape)
    ids = np.asarray(ids, dtype=np.intp)
    if ids.ndim != 1 or ids.size == 0 or ids.min() < 0 or ids.max() >= a.shape[0]:
        raise ShapeMismatch("gather_rows", a.shape, f"ids[{ids.size}]")
    out = a.data[ids]

    def vjp():
        def grad(g):
            ga = np.zeros_like(a.data)
            np.add.at(ga, ids, g)
            return ga

        return [(0, grad)]

    return _emit("gather_rows", out, (a,), vjp)


# ---------------------------------------------------------------------------
# reverse pass


def backward(tape: Tape, root: Tensor) -> dict[int, Tensor]:
    """Accumulate gradients of a scalar root for every leaf on the tape.

    Returns a map from leaf node handle to its gradient tensor; leaves not
    reachable from the root get zeros. Deterministic: node order fixes the
    accumulation order, so repeated calls are bit-identical.
    """
    if root.tape is not tape or root.node is None:
        raise ValueError("backward: root was not recorded on this tape")
    if root.data.size != 1:
        raise ShapeMismatch("backward(root)", root.shape)

    grads: list[np.ndarray | None] = [None] * len(tape)
    grads[root.node] = np.ones_like(root.data)
    for node in range(root.node, -1, -1):
        g = grads[node]
        if g is None or tape._vjps[node] is None:
            continue
        for parent, contrib in tape._vjps[node](g):
            if grads[parent] is None:
                grads[parent] = np.zeros(tape._shapes[parent])
            grads[parent] += contrib

    out = {}
    for leaf in tape.leaves:
        g = grads[leaf]
        out[leaf] = Tensor._wrap(g if g is not None else np.zeros(tape._shapes[leaf]))
    return out


# ---------------------------------------------------------------------------
# pinned PRNG

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB


def _mix64_int(z: int) -> int:
    z &= _MASK64
    z = ((z ^ (z >> 30)) * _MIX1) & _MASK64
    z = ((z ^ (z >> 27)) * _MIX2) & _MASK64
    return z ^ (z >> 31)


class Rng:
    """Counter-based SplitMix64 stream; identical seed gives an identical
    stream on every platform. The algorithm tag is recorded in run manifests
    so outputs stay replayable.
    """

    ALGORITHM = "splitmix64"

    def __init__(self, seed: int):
        self._base = int(seed) & _MASK64
        self._count = 0

    @property
    def seed(self) -> int:
        return self._base

    def _raw(self, n: int) -> np.ndarray:
        idx = np.arange(self._count + 1, self._count + n + 1, dtype=np.uint64)
        self._count += n
        with np.errstate(over="ignore"):
            z = np.uint64(self._base) + idx * np.uint64(_GOLDEN)
            z = (z ^ (z >> np.uint64(30))) * np.uint64(_MIX1)
            z = (z ^ (z >> np.uint64(27))) * np.uint64(_MIX2)
            return z ^ (z >> np.uint64(31))

    def next_u64(self) -> int:
        return int(self._raw(1)[0])

    def uniform(self, shape=None, lo: float = 0.0, hi: float = 1.0) -> np.ndarray | float:
        n = 1 if shape is None else int(np.prod(shape))
        u = (self._raw(n) >> np.uint64(11)).astype(np.float64) * 2.0 ** -53
        u = lo + (hi - lo) * u
        return float(u[0]) if shape is None else u.reshape(shape)

    def randint(self, n: int) -> int:
        if n <= 0:
            raise DomainError(f"randint: n must be positive, got {n}")
        return min(int(self.uniform() * n), n - 1)

    def normal(self, shape, scale: float = 1.0) -> np.ndarray:
        """Box-Muller pairs from the uniform stream."""
        n = int(np.prod(shape))
        half = (n + 1) // 2
        u1 = (self._raw(half) >> np.uint64(11)).astype(np.float64)
        u2 = (self._raw(half) >> np.uint64(11)).astype(np.float64)
        u1 = (u1 + 1.0) * 2.0 ** -53  # (0, 1]: log stays finite
        u2 = u2 * 2.0 ** -53
        r = np.sqrt(-2.0 * np.log(u1))
        theta = 2.0 * np.pi * u2
        z = np.concatenate([r * np.cos(theta), r * np.sin(theta)])[:n]
        return (scale * z).reshape(shape)

    def split(self, key: int) -> "Rng":
        """Derive an independent, reproducible sub-stream for a given key."""
        return Rng(_mix64_int(self._base ^ ((int(key) + 1) * _GOLDEN & _MASK64)))


def gaussian_init(rng: Rng, shape, scale: float) -> Tensor:
    """Gaussian weight draw; callers use the 1/sqrt(fan_in) convention."""
    if scale <= 0:
        raise DomainError(f"gaussian_init: scale must be positive, got {scale}")
    return Tensor(rng.normal(shape, scale))
