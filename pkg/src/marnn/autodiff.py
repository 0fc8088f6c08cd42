"""Reverse-mode automatic differentiation over dense float64 tensors.

A `Tape` records every primitive executed while it is active; `backward`
replays the records in reverse to accumulate exact gradients. The primitive
set is the minimum needed to express small recurrent networks with external
differentiable memory: matrix products, elementwise arithmetic and
nonlinearities, softmax with temperature, Gumbel-softmax sampling,
concatenation/slicing, and whole-tensor reductions.

Everything is single-threaded by design: one tape, and the tensors on it,
belong to one worker for the duration of a forward/backward pass.
"""

from __future__ import annotations

import hashlib
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "Tape",
    "RngStream",
    "ShapeError",
    "primitive_forward",
    "backward",
    "grad_check",
    "matvec",
    "matmul",
    "add",
    "sub",
    "mul",
    "smul",
    "scale",
    "tanh",
    "sigmoid",
    "log",
    "clamp_min",
    "square",
    "vsum",
    "vmean",
    "softmax",
    "softmax_temp",
    "gumbel_softmax",
    "concat",
    "reshape",
    "index",
    "narrow",
]

GUMBEL_LOG_FLOOR = 1e-12


class ShapeError(ValueError):
    """Operand shapes do not conform to the requested primitive."""


class Tensor:
    """A dense float64 array plus an optional gradient buffer.

    `grad` is allocated (as zeros) exactly when `requires_grad` is true.
    Tensors produced by primitives while a tape is active require grad iff
    any operand does; with no active tape, outputs are detached constants.
    """

    __slots__ = ("data", "grad", "requires_grad")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad = np.zeros_like(self.data) if requires_grad else None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def values(self) -> np.ndarray:
        """Row-major flat view of the stored values."""
        return self.data.ravel()

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        if self.grad is not None:
            self.grad[...] = 0.0

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # Operator sugar used by the model step functions.
    def __add__(self, other: "Tensor") -> "Tensor":
        return add(self, other)

    def __sub__(self, other: "Tensor") -> "Tensor":
        return sub(self, other)

    def __mul__(self, other: "Tensor") -> "Tensor":
        return mul(self, other)

    def __matmul__(self, other: "Tensor") -> "Tensor":
        if other.data.ndim == 1:
            return matvec(self, other)
        return matmul(self, other)


_TAPE_STACK: list["Tape"] = []


class Tape:
    """Ordered record of executed primitives for one forward pass.

    Use as a context manager; primitives executed inside the block are
    recorded. Replaying the backward rules in reverse order (`backward`)
    accumulates gradients additively across every use of a tensor.
    """

    __slots__ = ("_nodes",)

    def __init__(self):
        # (backward_rule, tensors involved); tensors kept for grad zeroing
        self._nodes: list[tuple[Callable[[], None], tuple[Tensor, ...]]] = []

    def __enter__(self) -> "Tape":
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        popped = _TAPE_STACK.pop()
        assert popped is self, "tapes must be exited in LIFO order"

    def __len__(self) -> int:
        return len(self._nodes)


def _active_tape() -> Tape | None:
    return _TAPE_STACK[-1] if _TAPE_STACK else None


def _record(tape: Tape, out_data: np.ndarray, make_rule, *tracked: Tensor) -> Tensor:
    """Wrap `out_data` in a requires-grad Tensor and push its backward rule."""
    out = Tensor(out_data, requires_grad=True)
    tape._nodes.append((make_rule(out), (out,) + tracked))
    return out


def backward(loss: Tensor, tape: Tape) -> None:
    """Populate gradients of every requires-grad tensor reachable from `loss`.

    Gradients of all tensors on the tape are reset first, so repeated calls
    over the same tape produce identical results.
    """
    if loss.data.shape != () and loss.data.size != 1:
        raise ShapeError(f"loss must be scalar, got shape {loss.data.shape}")
    seen: set[int] = set()
    on_tape = False
    for _, tensors in tape._nodes:
        for t in tensors:
            if t is loss:
                on_tape = True
            if t.grad is not None and id(t) not in seen:
                seen.add(id(t))
                t.grad[...] = 0.0
    if not on_tape:
        raise ValueError("loss was not produced on this tape")
    loss.grad[...] = 1.0
    for rule, _ in reversed(tape._nodes):
        rule()


# ---------------------------------------------------------------------------
# Primitives. Each computes forward with numpy and, if a tape is active and
# any operand carries gradients, records a backward rule.
# ---------------------------------------------------------------------------


def matvec(w: Tensor, x: Tensor) -> Tensor:
    if w.data.ndim != 2 or x.data.ndim != 1 or w.data.shape[1] != x.data.shape[0]:
        raise ShapeError(f"matvec needs [m,n]x[n], got {w.shape} and {x.shape}")
    out_data = w.data @ x.data
    tape = _active_tape()
    if tape is None or not (w.requires_grad or x.requires_grad):
        return Tensor(out_data)

    def rule(out):
        def bw():
            g = out.grad
            if w.requires_grad:
                w.grad += np.outer(g, x.data)
            if x.requires_grad:
                x.grad += w.data.T @ g

        return bw

    return _record(tape, out_data, rule, w, x)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise ShapeError(f"matmul needs [m,k]x[k,n], got {a.shape} and {b.shape}")
    out_data = a.data @ b.data
    tape = _active_tape()
    if tape is None or not (a.requires_grad or b.requires_grad):
        return Tensor(out_data)

    def rule(out):
        def bw():
            g = out.grad
            if a.requires_grad:
                a.grad += g @ b.data.T
            if b.requires_grad:
                b.grad += a.data.T @ g

        return bw

    return _record(tape, out_data, rule, a, b)


def _same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.data.shape != b.data.shape:
        raise ShapeError(f"{op} needs equal shapes, got {a.shape} and {b.shape}")


def add(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "add")
    out_data = a.data + b.data
    tape = _active_tape()
    if tape is None or not (a.requires_grad or b.requires_grad):
        return Tensor(out_data)

    def rule(out):
        def bw():
            if a.requires_grad:
                a.grad += out.grad
            if b.requires_grad:
                b.grad += out.grad

        return bw

    return _record(tape, out_data, rule, a, b)


def sub(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "subtract")
    out_data = a.data - b.data
    tape = _active_tape()
    if tape is None or not (a.requires_grad or b.requires_grad):
        return Tensor(out_data)

    def rule(out):
        def bw():
            if a.requires_grad:
                a.grad += out.grad
            if b.requires_grad:
                b.grad -= out.grad

        return bw

    return _record(tape, out_data, rule, a, b)


def mul(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "elementwise-multiply")
    out_data = a.data * b.data
    tape = _active_tape()
    if tape is None or not (a.requires_grad or b.requires_grad):
        return Tensor(out_data)

    def rule(out):
        def bw():
            g = out.grad
            if a.requires_grad:
                a.grad += g * b.data
            if b.requires_grad:
                b.grad += g * a.data

        return bw

    return _record(tape, out_data, rule, a, b)


def smul(s: Tensor, x: Tensor) -> Tensor:
    """Product of a scalar tensor with an arbitrary tensor."""
    if s.data.shape != ():
        raise ShapeError(f"smul needs a scalar first operand, got shape {s.shape}")
    out_data = s.data * x.data
    tape = _active_tape()
    if tape is None or not (s.requires_grad or x.requires_grad):
        return Tensor(out_data)

    def rule(out):
        def bw():
            g = out.grad
            if s.requires_grad:
                s.grad += np.sum(g * x.data)
            if x.requires_grad:
                x.grad += s.data * g

        return bw

    return _record(tape, out_data, rule, s, x)


def scale(x: Tensor, c: float) -> Tensor:
    """Scale by a plain (non-differentiated) constant."""
    out_data = x.data * c
    tape = _active_tape()
    if tape is None or not x.requires_grad:
        return Tensor(out_data)

    def rule(out):
        def bw():
            x.grad += c * out.grad

        return bw

    return _record(tape, out_data, rule, x)


def tanh(x: Tensor) -> Tensor:
    out_data = np.tanh(x.data)
    tape = _active_tape()
    if tape is None or not x.requires_grad:
        return Tensor(out_data)

    def rule(out):
        def bw():
            x.grad += out.grad * (1.0 - out.data * out.data)

        return bw

    return _record(tape, out_data, rule, x)


def sigmoid(x: Tensor) -> Tensor:
    # Split by sign to avoid overflow in exp for large |x|.
    d = x.data
    out_data = np.where(d >= 0, 1.0 / (1.0 + np.exp(-np.abs(d))),
                        np.exp(-np.abs(d)) / (1.0 + np.exp(-np.abs(d))))
    tape = _active_tape()
    if tape is None or not x.requires_grad:
        return Tensor(out_data)

    def rule(out):
        def bw():
            y = out.data
            x.grad += out.grad * y * (1.0 - y)

        return bw

    return _record(tape, out_data, rule, x)


def log(x: Tensor) -> Tensor:
    out_data = np.log(x.data)
    tape = _active_tape()
    if tape is None or not x.requires_grad:
        return Tensor(out_data)

    def rule(out):
        def bw():
            x.grad += out.grad / x.data

        return bw

    return _record(tape, out_data, rule, x)


def clamp_min(x: Tensor, floor: float) -> Tensor:
    out_data = np.maximum(x.data, floor)
    tape = _active_tape()
    if tape is None or not x.requires_grad:
        return Tensor(out_data)

    def rule(out):
        def bw():
            x.grad += out.grad * (x.data >= floor)

        return bw

    return _record(tape, out_data, rule, x)


def square(x: Tensor) -> Tensor:
    out_data = x.data * x.data
    tape = _active_tape()
    if tape is None or not x.requires_grad:
        return Tensor(out_data)

    def rule(out):
        def bw():
            x.grad += out.grad * (2.0 * x.data)

        return bw

    return _record(tape, out_data, rule, x)


def vsum(x: Tensor) -> Tensor:
    out_data = np.sum(x.data)
    tape = _active_tape()
    if tape is None or not x.requires_grad:
        return Tensor(out_data)

    def rule(out):
        def bw():
            x.grad += out.grad

        return bw

    return _record(tape, out_data, rule, x)


def vmean(x: Tensor) -> Tensor:
    out_data = np.mean(x.data)
    tape = _active_tape()
    if tape is None or not x.requires_grad:
        return Tensor(out_data)

    inv_n = 1.0 / x.data.size

    def rule(out):
        def bw():
            x.grad += out.grad * inv_n

        return bw

    return _record(tape, out_data, rule, x)


def softmax_temp(x: Tensor, tau: float) -> Tensor:
    """exp(x_i/tau) / sum_j exp(x_j/tau), computed with max-subtraction."""
    if tau <= 0:
        raise ValueError(f"temperature must be positive, got {tau}")
    if x.data.ndim != 1:
        raise ShapeError(f"softmax_temp needs a vector, got shape {x.shape}")
    if not np.isfinite(x.data).all():
        raise ValueError("softmax_temp input must be finite")
    z = (x.data - x.data.max()) / tau
    e = np.exp(z)
    out_data = e / e.sum()
    tape = _active_tape()
    if tape is None or not x.requires_grad:
        return Tensor(out_data)

    def rule(out):
        def bw():
            g = out.grad
            y = out.data
            x.grad += y * (g - np.dot(g, y)) / tau

        return bw

    return _record(tape, out_data, rule, x)


def softmax(x: Tensor) -> Tensor:
    return softmax_temp(x, 1.0)


def gumbel_softmax(x: Tensor, tau: float, rng: "RngStream | None") -> Tensor:
    """Temperature softmax over (log x_i + g_i) with Gumbel(0,1) noise g.

    `x` holds nonnegative weights (typically softmax probabilities); entries
    are floored at 1e-12 before the log. Gradient flows through x only, never
    through the noise. With `rng` frozen (or None) the noise is zero, which
    makes the op deterministic for evaluation.
    """
    if tau <= 0:
        raise ValueError(f"temperature must be positive, got {tau}")
    if x.data.ndim != 1:
        raise ShapeError(f"gumbel_softmax needs a vector, got shape {x.shape}")
    n = x.data.shape[0]
    if rng is None or rng.frozen:
        noise = np.zeros(n)
    else:
        noise = rng.gumbel(n)
    floored = clamp_min(x, GUMBEL_LOG_FLOOR)
    shifted = add(log(floored), Tensor(noise))
    return softmax_temp(shifted, tau)


def concat(parts: Sequence[Tensor], axis: int = 0) -> Tensor:
    if not parts:
        raise ShapeError("concat needs at least one operand")
    out_data = np.concatenate([p.data for p in parts], axis=axis)
    tape = _active_tape()
    if tape is None or not any(p.requires_grad for p in parts):
        return Tensor(out_data)

    sizes = [p.data.shape[axis] for p in parts]

    def rule(out):
        def bw():
            offset = 0
            key = [slice(None)] * out.data.ndim
            for p, size in zip(parts, sizes):
                if p.requires_grad:
                    key[axis] = slice(offset, offset + size)
                    p.grad += out.grad[tuple(key)]
                offset += size

        return bw

    return _record(tape, out_data, rule, *parts)


def reshape(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    out_data = x.data.reshape(shape)
    tape = _active_tape()
    if tape is None or not x.requires_grad:
        return Tensor(out_data)

    def rule(out):
        def bw():
            x.grad += out.grad.reshape(x.data.shape)

        return bw

    return _record(tape, out_data, rule, x)


def index(x: Tensor, i: int) -> Tensor:
    """Pick one entry along axis 0, producing a scalar (1-D x) or row."""
    out_data = x.data[i]
    tape = _active_tape()
    if tape is None or not x.requires_grad:
        return Tensor(out_data)

    def rule(out):
        def bw():
            x.grad[i] += out.grad

        return bw

    return _record(tape, out_data, rule, x)


def narrow(x: Tensor, start: int, stop: int) -> Tensor:
    """Contiguous slice along axis 0 (vector entries or matrix rows)."""
    if not (0 <= start <= stop <= x.data.shape[0]):
        raise ShapeError(f"slice [{start}:{stop}] out of range for shape {x.shape}")
    out_data = x.data[start:stop]
    tape = _active_tape()
    if tape is None or not x.requires_grad:
        return Tensor(out_data)

    def rule(out):
        def bw():
            x.grad[start:stop] += out.grad

        return bw

    return _record(tape, out_data, rule, x)


_PRIMITIVES: dict[str, Callable] = {
    "matvec": matvec,
    "matmul": matmul,
    "add": add,
    "subtract": sub,
    "elementwise_multiply": mul,
    "scalar_mul": smul,
    "scalar_scale": scale,
    "tanh": tanh,
    "sigmoid": sigmoid,
    "log": log,
    "clamp_min": clamp_min,
    "square": square,
    "sum": vsum,
    "mean": vmean,
    "softmax": softmax,
    "softmax_temp": softmax_temp,
    "concatenate": concat,
    "reshape": reshape,
    "index": index,
    "slice": narrow,
}


def primitive_forward(op_kind: str, *operands, **kwargs) -> Tensor:
    """Execute a primitive by name, recording it on the active tape."""
    try:
        fn = _PRIMITIVES[op_kind]
    except KeyError:
        raise ValueError(f"unknown primitive kind {op_kind!r}") from None
    return fn(*operands, **kwargs)


# ---------------------------------------------------------------------------
# Seeded randomness
# ---------------------------------------------------------------------------


def _entropy(seed: int, key: tuple) -> int:
    digest = hashlib.sha256(repr((int(seed),) + key).encode("utf-8")).digest()
    return int.from_bytes(digest, "big")


class RngStream:
    """Deterministic random stream keyed by (seed, *labels).

    The same seed and draw order produce identical numbers on every platform
    (PCG64 under the hood). `frozen` switches Gumbel draws to exact zeros
    without consuming state; evaluation uses that to stay deterministic.
    """

    algorithm = "pcg64"

    def __init__(self, seed: int, *key):
        self.seed = int(seed)
        self.key = tuple(key)
        self.frozen = False
        self._gen = np.random.Generator(
            np.random.PCG64(np.random.SeedSequence(_entropy(seed, self.key)))
        )

    def derive(self, *key) -> "RngStream":
        return RngStream(self.seed, *(self.key + key))

    def random(self, size=None):
        return self._gen.random(size)

    def uniform(self, low: float, high: float, size=None):
        return self._gen.uniform(low, high, size)

    def integers(self, low: int, high: int) -> int:
        return int(self._gen.integers(low, high))

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def gumbel(self, n: int) -> np.ndarray:
        """n i.i.d. Gumbel(0,1) draws via -log(-log u); zeros when frozen."""
        if self.frozen:
            return np.zeros(n)
        u = self._gen.random(n)
        # keep u strictly inside (0,1) so both logs stay finite
        u = np.clip(u, 1e-300, 1.0 - 1e-16)
        return -np.log(-np.log(u))

    def __repr__(self) -> str:
        return f"RngStream(seed={self.seed}, key={self.key}, frozen={self.frozen})"


def grad_check(f: Callable[[], Tensor], params: Sequence[Tensor],
               eps: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients.

    `f` must be a deterministic zero-argument program returning a scalar
    tensor built from `params` (freeze any Gumbel stream first); it is rerun
    with perturbed parameter entries, so it has to rebuild its graph on every
    call. The error metric per component is
    |analytic - numeric| / max(1, |analytic|, |numeric|).
    """
    if not (1e-7 <= eps <= 1e-3):
        raise ValueError(f"eps must lie in [1e-7, 1e-3], got {eps}")

    probe_a = f().item()
    probe_b = f().item()
    if probe_a != probe_b:
        raise ValueError("f is not deterministic; freeze its noise sources first")

    for p in params:
        p.zero_grad()
    with Tape() as tape:
        loss = f()
    if loss.requires_grad:
        backward(loss, tape)
    analytic = [np.array(p.grad, copy=True) for p in params]

    worst = 0.0
    for p, ga in zip(params, analytic):
        flat = p.data.ravel()
        gflat = ga.ravel()
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            f_plus = f().item()
            flat[i] = orig - eps
            f_minus = f().item()
            flat[i] = orig
            numeric = (f_plus - f_minus) / (2.0 * eps)
            err = abs(gflat[i] - numeric) / max(1.0, abs(gflat[i]), abs(numeric))
            if err > worst:
                worst = err
    return worst
