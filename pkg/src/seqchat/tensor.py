"""Dense 2-D float matrices with a recorded-operation tape for reverse-mode gradients.

This is the sole numeric substrate of the model: every equation is expressed
through the primitives below. Each primitive computes its result with numpy
and, when a tape is active, records a closure that maps the output gradient
back onto the input gradients. Entries are appended in execution order, which
is a topological order of the computation graph, so one reverse sweep over the
tape visits every node exactly once.
"""

from __future__ import annotations

from typing import BinaryIO, Callable, Sequence

import numpy as np

from .errors import CorruptCheckpoint, IndexOutOfVocab, ShapeMismatch, TapeReplayError

Array = np.ndarray

DEFAULT_DTYPE = np.float32


class Tensor2:
    """A rows x cols matrix of float32 (default) or float64 values.

    Treat instances as immutable once returned from an operation. The training
    loop is the one owner allowed to mutate parameter tensors (in place, so
    object identity survives across steps).
    """

    __slots__ = ("data",)

    def __init__(self, data, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(DEFAULT_DTYPE)
        if arr.ndim != 2:
            raise ShapeMismatch(f"expected a 2-D array, got shape {arr.shape}")
        self.data = arr

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def cols(self) -> int:
        return self.data.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape  # type: ignore[return-value]

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        if self.shape != (1, 1):
            raise ShapeMismatch(f"item() needs a 1x1 tensor, got {self.shape}")
        return float(self.data[0, 0])

    def copy(self) -> "Tensor2":
        return Tensor2(self.data.copy())

    def __repr__(self) -> str:
        return f"Tensor2({self.rows}x{self.cols}, {self.data.dtype})"


def zeros(rows: int, cols: int, dtype=DEFAULT_DTYPE) -> Tensor2:
    return Tensor2(np.zeros((rows, cols), dtype=dtype))


# A backward fn maps the output gradient to one gradient (or None) per input.
BackwardFn = Callable[[Array], tuple[Array | None, ...]]

_active_tape: "Tape | None" = None


class Tape:
    """Ordered record of primitive ops from one traced forward pass.

    Single-owner: a tape must not be shared across concurrent executions.
    Use as a context manager; ops executed inside the block are recorded.
    """

    def __init__(self):
        self._entries: list[tuple[Tensor2, tuple[Tensor2, ...], BackwardFn]] = []
        self._outputs: set[int] = set()
        self._prev: Tape | None = None

    def __enter__(self) -> "Tape":
        global _active_tape
        self._prev = _active_tape
        _active_tape = self
        return self

    def __exit__(self, *exc) -> None:
        global _active_tape
        _active_tape = self._prev
        self._prev = None

    def __len__(self) -> int:
        return len(self._entries)

    def record(self, out: Tensor2, inputs: tuple[Tensor2, ...], backward_fn: BackwardFn) -> None:
        self._entries.append((out, inputs, backward_fn))
        self._outputs.add(id(out))

    def gradients(self, output: Tensor2) -> dict[int, Array]:
        """Gradients of `output` w.r.t. every tensor on the tape, keyed by id().

        `output` is seeded with ones (it is a 1x1 loss in practice). Tensors
        that do not influence the output are absent from the result.
        """
        if id(output) not in self._outputs:
            raise TapeReplayError("requested output was not produced on this tape")
        grads: dict[int, Array] = {id(output): np.ones_like(output.data)}
        for out, inputs, backward_fn in reversed(self._entries):
            g_out = grads.get(id(out))
            if g_out is None:
                continue
            for tensor, grad in zip(inputs, backward_fn(g_out)):
                if grad is None:
                    continue
                seen = grads.get(id(tensor))
                grads[id(tensor)] = grad if seen is None else seen + grad
        return grads


def _record(out: Tensor2, inputs: tuple[Tensor2, ...], backward_fn: BackwardFn) -> Tensor2:
    if _active_tape is not None:
        _active_tape.record(out, inputs, backward_fn)
    return out


def _require_same_shape(a: Tensor2, b: Tensor2, op: str) -> None:
    if a.shape != b.shape:
        raise ShapeMismatch(f"{op}: {a.shape} vs {b.shape}")


# ---------------------------------------------------------------------------
# Primitives
# ---------------------------------------------------------------------------

def matmul(a: Tensor2, b: Tensor2) -> Tensor2:
    if a.cols != b.rows:
        raise ShapeMismatch(f"matmul: {a.shape} @ {b.shape}")
    out = Tensor2(a.data @ b.data)
    a_data, b_data = a.data, b.data
    return _record(out, (a, b), lambda g: (g @ b_data.T, a_data.T @ g))


def add(a: Tensor2, b: Tensor2) -> Tensor2:
    _require_same_shape(a, b, "add")
    out = Tensor2(a.data + b.data)
    return _record(out, (a, b), lambda g: (g, g))


def sub(a: Tensor2, b: Tensor2) -> Tensor2:
    _require_same_shape(a, b, "sub")
    out = Tensor2(a.data - b.data)
    return _record(out, (a, b), lambda g: (g, -g))


def hadamard(a: Tensor2, b: Tensor2) -> Tensor2:
    _require_same_shape(a, b, "hadamard")
    out = Tensor2(a.data * b.data)
    a_data, b_data = a.data, b.data
    return _record(out, (a, b), lambda g: (g * b_data, g * a_data))


def add_bias(a: Tensor2, bias: Tensor2) -> Tensor2:
    """Broadcast a 1 x cols row vector over every row of `a`."""
    if bias.shape != (1, a.cols):
        raise ShapeMismatch(f"add_bias: {a.shape} + {bias.shape}")
    out = Tensor2(a.data + bias.data)
    return _record(out, (a, bias), lambda g: (g, g.sum(axis=0, keepdims=True)))


def tanh(a: Tensor2) -> Tensor2:
    y = np.tanh(a.data)
    out = Tensor2(y)
    return _record(out, (a,), lambda g: (g * (1.0 - y * y),))


def sigmoid(a: Tensor2) -> Tensor2:
    # exp on the negative branch only, so large |x| cannot overflow
    x = a.data
    y = np.empty_like(x)
    pos = x >= 0
    y[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    y[~pos] = ex / (1.0 + ex)
    out = Tensor2(y)
    return _record(out, (a,), lambda g: (g * y * (1.0 - y),))


def scale(a: Tensor2, k: float) -> Tensor2:
    out = Tensor2(a.data * k)
    return _record(out, (a,), lambda g: (g * k,))


def add_const(a: Tensor2, k: float) -> Tensor2:
    out = Tensor2(a.data + k)
    return _record(out, (a,), lambda g: (g,))


def softmax_rows(a: Tensor2) -> Tensor2:
    """Row-wise softmax with per-row max subtraction for stability."""
    shifted = a.data - a.data.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=1, keepdims=True)
    out = Tensor2(y)

    def backward(g: Array):
        dot = (g * y).sum(axis=1, keepdims=True)
        return (y * (g - dot),)

    return _record(out, (a,), backward)


def sum_all(a: Tensor2) -> Tensor2:
    out = Tensor2(np.array([[a.data.sum()]], dtype=a.dtype))
    rows, cols = a.shape
    return _record(out, (a,), lambda g: (np.full((rows, cols), g[0, 0], dtype=a.dtype),))


def concat_cols(parts: Sequence[Tensor2]) -> Tensor2:
    rows = parts[0].rows
    for p in parts:
        if p.rows != rows:
            raise ShapeMismatch("concat_cols: row counts differ")
    out = Tensor2(np.concatenate([p.data for p in parts], axis=1))
    splits = np.cumsum([p.cols for p in parts])[:-1]
    return _record(out, tuple(parts), lambda g: tuple(np.split(g, splits, axis=1)))


def concat_rows(parts: Sequence[Tensor2]) -> Tensor2:
    cols = parts[0].cols
    for p in parts:
        if p.cols != cols:
            raise ShapeMismatch("concat_rows: column counts differ")
    out = Tensor2(np.concatenate([p.data for p in parts], axis=0))
    splits = np.cumsum([p.rows for p in parts])[:-1]
    return _record(out, tuple(parts), lambda g: tuple(np.split(g, splits, axis=0)))


def slice_cols(a: Tensor2, start: int, stop: int) -> Tensor2:
    if not (0 <= start < stop <= a.cols):
        raise ShapeMismatch(f"slice_cols: [{start}:{stop}] of {a.shape}")
    out = Tensor2(a.data[:, start:stop].copy())

    def backward(g: Array):
        full = np.zeros_like(a.data)
        full[:, start:stop] = g
        return (full,)

    return _record(out, (a,), backward)


def scale_rows(a: Tensor2, col: Tensor2) -> Tensor2:
    """Multiply row i of `a` by col[i, 0] (column-vector broadcast)."""
    if col.shape != (a.rows, 1):
        raise ShapeMismatch(f"scale_rows: {a.shape} * {col.shape}")
    out = Tensor2(a.data * col.data)
    a_data, c_data = a.data, col.data
    return _record(out, (a, col), lambda g: (g * c_data, (g * a_data).sum(axis=1, keepdims=True)))


def gather_rows(table: Tensor2, ids) -> Tensor2:
    """Row lookup: out[i] = table[ids[i]]; gradients scatter-add into the table."""
    idx = np.asarray(ids, dtype=np.int64)
    if idx.ndim != 1:
        raise ShapeMismatch(f"gather_rows: ids must be 1-D, got shape {idx.shape}")
    if idx.size and (idx.min() < 0 or idx.max() >= table.rows):
        raise IndexOutOfVocab(f"id outside [0, {table.rows})")
    out = Tensor2(table.data[idx])

    def backward(g: Array):
        full = np.zeros_like(table.data)
        np.add.at(full, idx, g)
        return (full,)

    return _record(out, (table,), backward)


def dropout(a: Tensor2, keep_prob: float, rng: np.random.Generator) -> Tensor2:
    """Inverted dropout: surviving entries are scaled by 1/keep_prob at train
    time so inference needs no rescaling. keep_prob >= 1 is the identity."""
    if keep_prob >= 1.0:
        return a
    if not 0.0 < keep_prob < 1.0:
        raise ValueError(f"keep_prob must be in (0, 1], got {keep_prob}")
    mask = (rng.random(a.shape) < keep_prob).astype(a.dtype) / a.dtype.type(keep_prob)
    out = Tensor2(a.data * mask)
    return _record(out, (a,), lambda g: (g * mask,))


def cross_entropy(logits: Tensor2, target_ids, mask=None) -> Tensor2:
    """Mean of -log softmax(logits)[target] over unmasked rows, as a 1x1 tensor.

    `mask` marks the rows that count (True = keep); None keeps every row.
    All rows masked yields loss 0 with zero gradient, by convention.
    """
    ids = np.asarray(target_ids, dtype=np.int64)
    if ids.ndim != 1 or ids.shape[0] != logits.rows:
        raise ShapeMismatch(f"cross_entropy: {ids.shape} targets for {logits.rows} rows")
    if ids.size and (ids.min() < 0 or ids.max() >= logits.cols):
        raise IndexOutOfVocab(f"target id outside [0, {logits.cols})")
    keep = np.ones(logits.rows, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    if keep.shape != (logits.rows,):
        raise ShapeMismatch(f"cross_entropy: mask shape {keep.shape}")

    x = logits.data
    shifted = x - x.max(axis=1, keepdims=True)
    log_probs = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    n = int(keep.sum())
    if n == 0:
        value = np.zeros((1, 1), dtype=x.dtype)
    else:
        picked = log_probs[np.arange(logits.rows), ids]
        value = np.array([[-(picked * keep).sum() / n]], dtype=x.dtype)
    out = Tensor2(value)

    def backward(g: Array):
        if n == 0:
            return (np.zeros_like(x),)
        d = np.exp(log_probs)
        d[np.arange(logits.rows), ids] -= 1.0
        d[~keep] = 0.0
        return (d * (g[0, 0] / n),)

    return _record(out, (logits,), backward)


def xavier_init(rows: int, cols: int, rng_seed, dtype=DEFAULT_DTYPE) -> Tensor2:
    """Uniform in +-sqrt(6/(rows+cols)); deterministic per seed or Generator."""
    if rows < 1 or cols < 1:
        raise ShapeMismatch(f"xavier_init: {rows}x{cols}")
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else np.random.default_rng(rng_seed)
    bound = np.sqrt(6.0 / (rows + cols))
    return Tensor2(rng.uniform(-bound, bound, size=(rows, cols)).astype(dtype))


# ---------------------------------------------------------------------------
# Serialization: text header line, then raw little-endian float32, row-major
# ---------------------------------------------------------------------------

def write_tensor(fh: BinaryIO, name: str, t: Tensor2) -> None:
    if " " in name or "\n" in name:
        raise ValueError(f"tensor name must not contain spaces: {name!r}")
    fh.write(f"{name} {t.rows} {t.cols}\n".encode("ascii"))
    fh.write(np.ascontiguousarray(t.data, dtype="<f4").tobytes())


def read_tensor(fh: BinaryIO) -> tuple[str, Tensor2]:
    header = fh.readline()
    if not header.endswith(b"\n"):
        raise CorruptCheckpoint("truncated tensor header")
    try:
        name, rows_s, cols_s = header.decode("ascii").split()
        rows, cols = int(rows_s), int(cols_s)
    except ValueError as exc:
        raise CorruptCheckpoint(f"bad tensor header {header!r}") from exc
    n_bytes = rows * cols * 4
    raw = fh.read(n_bytes)
    if len(raw) != n_bytes:
        raise CorruptCheckpoint(f"truncated tensor data for {name}")
    data = np.frombuffer(raw, dtype="<f4").reshape(rows, cols).astype(np.float32)
    return name, Tensor2(data)
