"""Recurrent architectures with differentiable external memory.

Six single-layer models share one step-function interface: a plain RNN and
LSTM, an RNN/LSTM pair reading the top of a superposition stack, a
fixed-size-memory variant driven by five linear memory operations, and a
bias-free sigmoid RNN reading the top-k stack cells. Memory contents are
convex combinations of the discrete operation results, weighted by the
controller's action distribution, so everything stays differentiable
end to end.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, asdict
from typing import Callable

import numpy as np

from .autodiff import (
    RngStream,
    ShapeError,
    Tensor,
    add,
    concat,
    gumbel_softmax,
    index,
    matmul,
    matvec,
    mul,
    narrow,
    reshape,
    sigmoid,
    smul,
    softmax,
    softmax_temp,
    tanh,
)
from .common import config_fingerprint

__all__ = [
    "ACTION_KINDS",
    "ARCHITECTURES",
    "NTM_OP_NAMES",
    "STACK_OP_NAMES",
    "ModelConfig",
    "ModelParams",
    "StackState",
    "MemoryState",
    "StepTrace",
    "build_model",
    "op_matrices",
    "stack_update",
    "memory_update",
    "forced_actions",
    "run_sequence",
    "save_checkpoint",
    "load_checkpoint",
]

ACTION_KINDS = ("softmax", "softmax_temp", "gumbel_softmax")
STACK_OP_NAMES = ("PUSH", "POP")
NTM_OP_NAMES = ("ROTATE-RIGHT", "ROTATE-LEFT", "NO-OP", "POP-LEFT", "POP-RIGHT")

_ZEROS: dict[tuple[int, ...], Tensor] = {}


def _zeros(*shape: int) -> Tensor:
    """Shared all-zero constant; callers must never mutate it."""
    t = _ZEROS.get(shape)
    if t is None:
        t = Tensor(np.zeros(shape))
        _ZEROS[shape] = t
    return t


@dataclass(frozen=True)
class ModelConfig:
    architecture: str
    d_in: int
    d_out: int
    hidden: int = 8
    mem_dim: int = 1
    memory_slots: int = 104
    action: str = "softmax"
    tau: float | None = None
    joulin_k: int = 2

    def __post_init__(self):
        if self.architecture not in ARCHITECTURES:
            raise ValueError(f"unknown architecture {self.architecture!r}")
        if min(self.d_in, self.d_out, self.hidden, self.mem_dim) < 1:
            raise ValueError("dimensions must be positive")
        if self.action not in ACTION_KINDS:
            raise ValueError(f"action must be one of {ACTION_KINDS}")
        if self.action in ("softmax_temp", "gumbel_softmax"):
            if self.tau is None or self.tau <= 0:
                raise ValueError(f"action {self.action!r} needs a positive tau")
        if self.architecture == "baby_ntm" and self.memory_slots < 2:
            raise ValueError("baby_ntm needs at least two memory slots")
        if self.architecture == "joulin_stack_rnn" and self.joulin_k < 1:
            raise ValueError("joulin_k must be positive")


class ModelParams:
    """Named learnable tensors in a fixed order, all tracking gradients."""

    def __init__(self, tensors: dict[str, Tensor]):
        self._tensors = dict(tensors)

    def __getitem__(self, name: str) -> Tensor:
        return self._tensors[name]

    def __contains__(self, name: str) -> bool:
        return name in self._tensors

    def names(self) -> list[str]:
        return list(self._tensors)

    def items(self):
        return self._tensors.items()

    def tensors(self) -> list[Tensor]:
        return list(self._tensors.values())

    def zero_grad(self) -> None:
        for t in self._tensors.values():
            t.zero_grad()

    def n_parameters(self) -> int:
        return sum(t.data.size for t in self._tensors.values())

    def copy(self) -> "ModelParams":
        return ModelParams(
            {k: Tensor(v.data.copy(), requires_grad=True) for k, v in self.items()}
        )


@dataclass
class StepTrace:
    """Per-step memory-controller readout for analysis and export."""

    op_names: tuple[str, ...]
    action_weights: np.ndarray | None = None
    inserted: np.ndarray | None = None
    top: np.ndarray | None = None
    snapshot: np.ndarray | None = None


# ---------------------------------------------------------------------------
# External memory structures
# ---------------------------------------------------------------------------


class StackState:
    """Unbounded superposition stack: stored rows plus implicit zeros below.

    Row 0 is the top. Reading at or beyond the stored depth yields zeros, so
    an empty stack reads as all-zero everywhere.
    """

    __slots__ = ("mem_dim", "rows")

    def __init__(self, mem_dim: int, rows: Tensor | None = None):
        self.mem_dim = mem_dim
        self.rows = rows

    @property
    def depth(self) -> int:
        return 0 if self.rows is None else self.rows.data.shape[0]

    def read(self, i: int) -> Tensor:
        if self.rows is None or i >= self.depth:
            return _zeros(self.mem_dim)
        return index(self.rows, i)

    def top(self) -> Tensor:
        return self.read(0)

    def values(self) -> np.ndarray:
        if self.rows is None:
            return np.zeros((0, self.mem_dim))
        return self.rows.data


class MemoryState:
    """Fixed-slot memory; slot 0 is the read/write position."""

    __slots__ = ("slots",)

    def __init__(self, slots: Tensor):
        self.slots = slots

    @property
    def n_slots(self) -> int:
        return self.slots.data.shape[0]

    def read(self, i: int) -> Tensor:
        return index(self.slots, i)

    def values(self) -> np.ndarray:
        return self.slots.data


def stack_update(stack: StackState, actions: Tensor, push_value: Tensor) -> StackState:
    """Interpolate the push and pop results under the two action weights.

    Push branch prepends the candidate value; pop branch drops the top and
    lets zeros flow in from below. Depth grows by one per step.
    """
    if actions.data.shape != (2,):
        raise ShapeError(f"stack actions must have shape (2,), got {actions.shape}")
    mem_dim = stack.mem_dim
    a_push = index(actions, 0)
    a_pop = index(actions, 1)
    top_row = reshape(push_value, (1, mem_dim))
    if stack.rows is None:
        pushed = top_row
        popped = _zeros(1, mem_dim)
    else:
        depth = stack.depth
        pushed = concat([top_row, stack.rows])
        popped = concat([narrow(stack.rows, 1, depth), _zeros(2, mem_dim)])
    return StackState(mem_dim, add(smul(a_push, pushed), smul(a_pop, popped)))


def op_matrices(memory_slots: int) -> dict[str, np.ndarray]:
    """The five fixed linear maps acting on the memory-slot axis.

    On [a, b, c, d, e]: rotate-right gives [e, a, b, c, d], rotate-left
    [b, c, d, e, a], no-op the identity, pop-left [b, c, d, e, 0], and
    pop-right [0, a, b, c, d].
    """
    if memory_slots < 2:
        raise ValueError("memory needs at least two slots")
    n = memory_slots
    rot_right = np.zeros((n, n))
    rot_left = np.zeros((n, n))
    pop_left = np.zeros((n, n))
    pop_right = np.zeros((n, n))
    for i in range(n):
        rot_right[i, (i - 1) % n] = 1.0
        rot_left[i, (i + 1) % n] = 1.0
        if i + 1 < n:
            pop_left[i, i + 1] = 1.0
        if i - 1 >= 0:
            pop_right[i, i - 1] = 1.0
    return {
        "ROTATE-RIGHT": rot_right,
        "ROTATE-LEFT": rot_left,
        "NO-OP": np.eye(n),
        "POP-LEFT": pop_left,
        "POP-RIGHT": pop_right,
    }


def memory_update(memory: MemoryState, actions: Tensor, insert_value: Tensor,
                  ops: list[Tensor]) -> MemoryState:
    """Weighted sum of all operation results, then add the insert to slot 0."""
    if actions.data.shape != (len(ops),):
        raise ShapeError(
            f"memory actions must have shape ({len(ops)},), got {actions.shape}"
        )
    mixed = None
    for j, op in enumerate(ops):
        term = smul(index(actions, j), matmul(op, memory.slots))
        mixed = term if mixed is None else add(mixed, term)
    mem_dim = memory.slots.data.shape[1]
    insert = concat([reshape(insert_value, (1, mem_dim)),
                     _zeros(memory.n_slots - 1, mem_dim)])
    return MemoryState(add(mixed, insert))


# ---------------------------------------------------------------------------
# Action distributions
# ---------------------------------------------------------------------------


def _resolve_action(config: ModelConfig) -> Callable[[Tensor, RngStream | None], Tensor]:
    if config.action == "softmax":
        return lambda logits, rng: softmax(logits)
    if config.action == "softmax_temp":
        tau = config.tau
        return lambda logits, rng: softmax_temp(logits, tau)
    tau = config.tau
    return lambda logits, rng: gumbel_softmax(softmax(logits), tau, rng)


def forced_actions(weights) -> Callable[[Tensor, RngStream | None], Tensor]:
    """Test hook: an action function that ignores the controller entirely."""
    fixed = np.asarray(weights, dtype=np.float64)
    return lambda logits, rng: Tensor(fixed)


# ---------------------------------------------------------------------------
# Architectures
# ---------------------------------------------------------------------------


@dataclass
class RnnState:
    h: Tensor


@dataclass
class LstmState:
    h: Tensor
    c: Tensor


@dataclass
class StackRnnState:
    h: Tensor
    stack: StackState


@dataclass
class StackLstmState:
    h: Tensor
    c: Tensor
    stack: StackState


@dataclass
class NtmState:
    h: Tensor
    memory: MemoryState


def _uniform_weight(rng: RngStream, shape: tuple[int, ...], hidden: int) -> Tensor:
    bound = 1.0 / np.sqrt(hidden)
    return Tensor(rng.uniform(-bound, bound, shape), requires_grad=True)


def _gate_bias(hidden: int) -> Tensor:
    # forget-gate segment starts at 1.0; everything else at zero
    b = np.zeros(4 * hidden)
    b[hidden: 2 * hidden] = 1.0
    return Tensor(b, requires_grad=True)


class _Architecture:
    name = ""

    def __init__(self, config: ModelConfig):
        self.config = config
        self._action = _resolve_action(config)

    def param_shapes(self) -> dict[str, tuple[int, ...]]:
        raise NotImplementedError

    def init_params(self, rng: RngStream) -> ModelParams:
        cfg = self.config
        tensors: dict[str, Tensor] = {}
        for name, shape in self.param_shapes().items():
            if name.startswith("b_"):
                if name == "b_ih" and self.name.endswith("lstm"):
                    tensors[name] = _gate_bias(cfg.hidden)
                else:
                    tensors[name] = Tensor(np.zeros(shape), requires_grad=True)
            else:
                tensors[name] = _uniform_weight(rng, shape, cfg.hidden)
        return ModelParams(tensors)

    def initial_state(self):
        raise NotImplementedError

    def step(self, params: ModelParams, x: Tensor, state, rng: RngStream | None = None,
             action_fn=None):
        raise NotImplementedError

    # shared pieces -------------------------------------------------------

    def _controller_outputs(self, params, h, rng, action_fn):
        y = sigmoid(matvec(params["W_y"], h))
        action = action_fn or self._action
        a = action(matvec(params["W_a"], h), rng)
        n = sigmoid(matvec(params["W_n"], h))
        return y, a, n

    @staticmethod
    def _rnn_cell(params, x, h_recur):
        pre = add(add(matvec(params["W_ih"], x), params["b_ih"]),
                  add(matvec(params["W_hh"], h_recur), params["b_hh"]))
        return tanh(pre)

    @staticmethod
    def _lstm_cell(params, x, h_recur, c_prev, hidden):
        z = add(add(matvec(params["W_ih"], x), params["b_ih"]),
                add(matvec(params["W_hh"], h_recur), params["b_hh"]))
        i = sigmoid(narrow(z, 0, hidden))
        f = sigmoid(narrow(z, hidden, 2 * hidden))
        g = tanh(narrow(z, 2 * hidden, 3 * hidden))
        o = sigmoid(narrow(z, 3 * hidden, 4 * hidden))
        c = add(mul(f, c_prev), mul(i, g))
        h = mul(o, tanh(c))
        return h, c


class VanillaRnn(_Architecture):
    name = "vanilla_rnn"

    def param_shapes(self):
        cfg = self.config
        return {
            "W_ih": (cfg.hidden, cfg.d_in),
            "b_ih": (cfg.hidden,),
            "W_hh": (cfg.hidden, cfg.hidden),
            "b_hh": (cfg.hidden,),
            "W_y": (cfg.d_out, cfg.hidden),
        }

    def initial_state(self):
        return RnnState(_zeros(self.config.hidden))

    def step(self, params, x, state, rng=None, action_fn=None):
        h = self._rnn_cell(params, x, state.h)
        y = sigmoid(matvec(params["W_y"], h))
        return y, RnnState(h), StepTrace(op_names=())


class VanillaLstm(_Architecture):
    name = "vanilla_lstm"

    def param_shapes(self):
        cfg = self.config
        return {
            "W_ih": (4 * cfg.hidden, cfg.d_in),
            "b_ih": (4 * cfg.hidden,),
            "W_hh": (4 * cfg.hidden, cfg.hidden),
            "b_hh": (4 * cfg.hidden,),
            "W_y": (cfg.d_out, cfg.hidden),
        }

    def initial_state(self):
        h = _zeros(self.config.hidden)
        return LstmState(h, h)

    def step(self, params, x, state, rng=None, action_fn=None):
        h, c = self._lstm_cell(params, x, state.h, state.c, self.config.hidden)
        y = sigmoid(matvec(params["W_y"], h))
        return y, LstmState(h, c), StepTrace(op_names=())


class StackRnn(_Architecture):
    name = "stack_rnn"

    def param_shapes(self):
        cfg = self.config
        return {
            "W_ih": (cfg.hidden, cfg.d_in),
            "b_ih": (cfg.hidden,),
            "W_hh": (cfg.hidden, cfg.hidden),
            "b_hh": (cfg.hidden,),
            "W_sh": (cfg.hidden, cfg.mem_dim),
            "W_y": (cfg.d_out, cfg.hidden),
            "W_a": (2, cfg.hidden),
            "W_n": (cfg.mem_dim, cfg.hidden),
        }

    def initial_state(self):
        return StackRnnState(_zeros(self.config.hidden),
                             StackState(self.config.mem_dim))

    def step(self, params, x, state, rng=None, action_fn=None):
        h_recur = add(state.h, matvec(params["W_sh"], state.stack.top()))
        h = self._rnn_cell(params, x, h_recur)
        y, a, n = self._controller_outputs(params, h, rng, action_fn)
        stack = stack_update(state.stack, a, n)
        trace = StepTrace(STACK_OP_NAMES, a.data.copy(), n.data.copy(),
                          stack.rows.data[0].copy())
        return y, StackRnnState(h, stack), trace


class StackLstm(_Architecture):
    name = "stack_lstm"

    def param_shapes(self):
        cfg = self.config
        return {
            "W_ih": (4 * cfg.hidden, cfg.d_in),
            "b_ih": (4 * cfg.hidden,),
            "W_hh": (4 * cfg.hidden, cfg.hidden),
            "b_hh": (4 * cfg.hidden,),
            "W_sh": (cfg.hidden, cfg.mem_dim),
            "W_y": (cfg.d_out, cfg.hidden),
            "W_a": (2, cfg.hidden),
            "W_n": (cfg.mem_dim, cfg.hidden),
        }

    def initial_state(self):
        h = _zeros(self.config.hidden)
        return StackLstmState(h, h, StackState(self.config.mem_dim))

    def step(self, params, x, state, rng=None, action_fn=None):
        h_recur = add(state.h, matvec(params["W_sh"], state.stack.top()))
        h, c = self._lstm_cell(params, x, h_recur, state.c, self.config.hidden)
        y, a, n = self._controller_outputs(params, h, rng, action_fn)
        stack = stack_update(state.stack, a, n)
        trace = StepTrace(STACK_OP_NAMES, a.data.copy(), n.data.copy(),
                          stack.rows.data[0].copy())
        return y, StackLstmState(h, c, stack), trace


class JoulinStackRnn(_Architecture):
    """Comparison baseline: bias-free sigmoid cell reading the k top cells.

    The stack enters the hidden update as its own additive term, so the top
    cells reach h through W_sh alone rather than through W_hh * W_sh.
    """

    name = "joulin_stack_rnn"

    def param_shapes(self):
        cfg = self.config
        return {
            "W_ih": (cfg.hidden, cfg.d_in),
            "W_hh": (cfg.hidden, cfg.hidden),
            "W_sh": (cfg.hidden, cfg.joulin_k * cfg.mem_dim),
            "W_y": (cfg.d_out, cfg.hidden),
            "W_a": (2, cfg.hidden),
            "W_n": (cfg.mem_dim, cfg.hidden),
        }

    def initial_state(self):
        return StackRnnState(_zeros(self.config.hidden),
                             StackState(self.config.mem_dim))

    def _read_top_k(self, stack: StackState) -> Tensor:
        k, m = self.config.joulin_k, self.config.mem_dim
        if stack.rows is None:
            return _zeros(k * m)
        depth = stack.depth
        if depth >= k:
            return reshape(narrow(stack.rows, 0, k), (k * m,))
        return concat([reshape(stack.rows, (depth * m,)), _zeros((k - depth) * m)])

    def step(self, params, x, state, rng=None, action_fn=None):
        pre = add(add(matvec(params["W_ih"], x), matvec(params["W_hh"], state.h)),
                  matvec(params["W_sh"], self._read_top_k(state.stack)))
        h = sigmoid(pre)
        y = sigmoid(matvec(params["W_y"], h))
        action = action_fn or (lambda logits, _rng: softmax(logits))
        a = action(matvec(params["W_a"], h), rng)
        n = sigmoid(matvec(params["W_n"], h))
        stack = stack_update(state.stack, a, n)
        trace = StepTrace(STACK_OP_NAMES, a.data.copy(), n.data.copy(),
                          stack.rows.data[0].copy())
        return y, StackRnnState(h, stack), trace


class BabyNtm(_Architecture):
    name = "baby_ntm"

    def __init__(self, config: ModelConfig):
        super().__init__(config)
        self._ops = [Tensor(m) for m in op_matrices(config.memory_slots).values()]

    def param_shapes(self):
        cfg = self.config
        return {
            "W_ih": (cfg.hidden, cfg.d_in),
            "b_ih": (cfg.hidden,),
            "W_hh": (cfg.hidden, cfg.hidden),
            "b_hh": (cfg.hidden,),
            "W_m": (cfg.hidden, cfg.mem_dim),
            "W_y": (cfg.d_out, cfg.hidden),
            "W_a": (len(NTM_OP_NAMES), cfg.hidden),
            "W_n": (cfg.mem_dim, cfg.hidden),
        }

    def initial_state(self):
        cfg = self.config
        return NtmState(_zeros(cfg.hidden),
                        MemoryState(_zeros(cfg.memory_slots, cfg.mem_dim)))

    def step(self, params, x, state, rng=None, action_fn=None):
        h_recur = add(state.h, matvec(params["W_m"], state.memory.read(0)))
        h = self._rnn_cell(params, x, h_recur)
        y, a, n = self._controller_outputs(params, h, rng, action_fn)
        memory = memory_update(state.memory, a, n, self._ops)
        trace = StepTrace(NTM_OP_NAMES, a.data.copy(), n.data.copy(),
                          memory.slots.data[0].copy())
        return y, NtmState(h, memory), trace


ARCHITECTURES: dict[str, type] = {
    cls.name: cls
    for cls in (VanillaRnn, VanillaLstm, StackRnn, StackLstm, JoulinStackRnn, BabyNtm)
}


def build_model(config: ModelConfig) -> _Architecture:
    return ARCHITECTURES[config.architecture](config)


def _memory_snapshot(state, max_rows: int) -> np.ndarray | None:
    container = getattr(state, "stack", None) or getattr(state, "memory", None)
    if container is None:
        return None
    values = container.values()
    if max_rows >= 0:
        values = values[:max_rows]
    return values.copy()


def run_sequence(model: _Architecture, params: ModelParams, inputs: np.ndarray,
                 rng: RngStream | None = None, action_fn=None,
                 snapshot_rows: int | None = None):
    """Run the step function over a T x d_in one-hot matrix from zero state.

    Returns the per-step output tensors and step traces. `snapshot_rows`
    attaches a copy of the leading memory rows to each trace (negative for
    the full contents).
    """
    inputs = np.asarray(inputs, dtype=np.float64)
    if inputs.ndim != 2 or inputs.shape[0] < 1:
        raise ShapeError(f"inputs must be [T, d_in] with T >= 1, got {inputs.shape}")
    if inputs.shape[1] != model.config.d_in:
        raise ShapeError(
            f"input width {inputs.shape[1]} does not match d_in {model.config.d_in}"
        )
    state = model.initial_state()
    outputs: list[Tensor] = []
    traces: list[StepTrace] = []
    for t in range(inputs.shape[0]):
        y, state, trace = model.step(params, Tensor(inputs[t]), state,
                                     rng=rng, action_fn=action_fn)
        if snapshot_rows is not None:
            trace.snapshot = _memory_snapshot(state, snapshot_rows)
        outputs.append(y)
        traces.append(trace)
    return outputs, traces


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

_CHECKPOINT_FORMAT = "marnn-checkpoint"


def save_checkpoint(path, config: ModelConfig, params: ModelParams,
                    extra: dict | None = None) -> None:
    payload = {
        "format": _CHECKPOINT_FORMAT,
        "version": 1,
        "config": asdict(config),
        "fingerprint": config_fingerprint(asdict(config)),
        "params": {
            name: {"shape": list(t.data.shape), "values": t.data.ravel().tolist()}
            for name, t in params.items()
        },
        "extra": extra or {},
    }
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(payload, fh)
        fh.write("\n")


def load_checkpoint(path) -> tuple[ModelConfig, ModelParams, dict]:
    with open(path, encoding="utf-8") as fh:
        payload = json.load(fh)
    if payload.get("format") != _CHECKPOINT_FORMAT:
        raise ValueError(f"{path}: not a model checkpoint")
    config = ModelConfig(**payload["config"])
    expected = build_model(config).param_shapes()
    tensors: dict[str, Tensor] = {}
    for name, shape in expected.items():
        if name not in payload["params"]:
            raise ValueError(f"{path}: missing parameter {name!r}")
        entry = payload["params"][name]
        if tuple(entry["shape"]) != shape:
            raise ValueError(
                f"{path}: parameter {name!r} has shape {entry['shape']}, "
                f"expected {list(shape)}"
            )
        data = np.array(entry["values"], dtype=np.float64).reshape(shape)
        tensors[name] = Tensor(data, requires_grad=True)
    return config, ModelParams(tensors), payload.get("extra", {})
