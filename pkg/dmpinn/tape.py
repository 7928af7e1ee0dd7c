"""
DMPINN Tape Engine

Dense float64 tensor primitives recorded on an append-only tape so any
scalar built from them can be differentiated in reverse mode with
respect to any recorded input.

Core Technical Features:
- Immutable Tensor wrapper over read-only numpy arrays
- Fixed primitive set with one adjoint rule per op kind
- Strict left-to-right reductions for bitwise reproducibility
- Repeatable backward passes (the tape is never mutated by backward)
"""

import itertools
import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, Iterable, Iterator, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from .models import BackwardError, TapeError

logger = logging.getLogger(__name__)

ArrayLike = Union["Tensor", np.ndarray, Sequence[Any], float]

_tape_ids = itertools.count()


class Tensor:
    """Dense float64 array; immutable once created."""

    __slots__ = ("_array",)

    def __init__(self, values: ArrayLike) -> None:
        if isinstance(values, Tensor):
            array = values._array
        else:
            array = np.array(values, dtype=np.float64)
            array.setflags(write=False)
        self._array = array

    @property
    def shape(self) -> Tuple[int, ...]:
        return tuple(self._array.shape)

    @property
    def data(self) -> np.ndarray:
        """Flat row-major view of the values."""
        return self._array.reshape(-1)

    @property
    def array(self) -> np.ndarray:
        return self._array

    @property
    def size(self) -> int:
        return int(self._array.size)

    def item(self) -> float:
        return float(self._array.reshape(-1)[0])

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self._array)))

    def __array__(self, dtype: Any = None, copy: Any = None) -> np.ndarray:
        if dtype is None:
            return self._array
        return self._array.astype(dtype)

    def __len__(self) -> int:
        return self.shape[0] if self.shape else 1

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape})"


def as_array(values: ArrayLike) -> np.ndarray:
    """Float64 ndarray view of a Tensor or array-like."""
    if isinstance(values, Tensor):
        return values.array
    return np.asarray(values, dtype=np.float64)


def ordered_sum(values: np.ndarray) -> float:
    """Sum of the flat array accumulated strictly left to right."""
    flat = np.ascontiguousarray(values, dtype=np.float64).reshape(-1)
    if flat.size == 0:
        return 0.0
    return float(np.add.accumulate(flat)[-1])


def ordered_row_sum(values: np.ndarray) -> np.ndarray:
    """Column totals of a 2-D array, rows accumulated strictly top to bottom."""
    rows = np.asarray(values, dtype=np.float64)
    if rows.shape[0] == 0:
        return np.zeros(rows.shape[1:])
    return np.add.accumulate(rows, axis=0)[-1]


class OpKind(str, Enum):
    """Primitive operations the tape knows how to differentiate."""
    INPUT = "input"
    CONSTANT = "constant"
    MATMUL = "matmul"
    ADD = "add"
    SUB = "sub"
    MUL = "mul"
    SCALE = "scale"
    TANH = "tanh"
    SQUARE = "square"
    NEGATE = "negate"
    ADD_BIAS = "add_bias"
    SUM = "sum"
    MEAN = "mean"


@dataclass(frozen=True)
class TapeNode:
    """One recorded value. Inputs always point to earlier nodes."""
    tape_id: int
    index: int
    kind: OpKind
    inputs: Tuple[int, ...]
    primal: Tensor
    attrs: Mapping[str, Any] = field(default_factory=dict)
    name: Optional[str] = None

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.primal.shape

    @property
    def value(self) -> np.ndarray:
        return self.primal.array

    def item(self) -> float:
        return self.primal.item()


class GradMap(Mapping[str, np.ndarray]):
    """Gradients of one scalar keyed by recorded-input name."""

    def __init__(self, entries: Dict[str, np.ndarray]) -> None:
        self._entries = entries

    def __getitem__(self, key: str) -> np.ndarray:
        return self._entries[key]

    def __iter__(self) -> Iterator[str]:
        return iter(self._entries)

    def __len__(self) -> int:
        return len(self._entries)

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(g)) for g in self._entries.values())

    def __repr__(self) -> str:
        shapes = {k: tuple(v.shape) for k, v in self._entries.items()}
        return f"GradMap({shapes})"


class Tape:
    """
    Append-only record of primitive operations.

    Technical Implementation:
    - ``variable`` registers a named differentiable input
    - ``constant`` registers data that never receives a gradient
    - ``record`` (and the per-op helpers) append derived nodes
    - ``backward`` walks the tape in reverse from a scalar node
    """

    def __init__(self) -> None:
        self.tape_id = next(_tape_ids)
        self._nodes: List[TapeNode] = []
        self._names: Dict[str, int] = {}

    def __len__(self) -> int:
        return len(self._nodes)

    @property
    def nodes(self) -> Tuple[TapeNode, ...]:
        return tuple(self._nodes)

    # ------------------------------------------------------------------
    # Leaves
    # ------------------------------------------------------------------

    def variable(self, name: str, value: ArrayLike) -> TapeNode:
        if name in self._names:
            raise TapeError(OpKind.INPUT.value, [], f"input '{name}' already recorded")
        node = self._append(OpKind.INPUT, (), Tensor(value), {}, name)
        self._names[name] = node.index
        return node

    def constant(self, value: ArrayLike) -> TapeNode:
        return self._append(OpKind.CONSTANT, (), Tensor(value), {}, None)

    def input_node(self, name: str) -> TapeNode:
        try:
            return self._nodes[self._names[name]]
        except KeyError:
            raise BackwardError(f"input '{name}' is not recorded on this tape") from None

    # ------------------------------------------------------------------
    # Recording
    # ------------------------------------------------------------------

    def record(self, kind: OpKind, inputs: Sequence[TapeNode], **attrs: Any) -> TapeNode:
        """Append a derived node after validating operand shapes."""
        kind = OpKind(kind)
        if kind in (OpKind.INPUT, OpKind.CONSTANT):
            raise TapeError(kind.value, [], "leaves are created with variable()/constant()")
        for node in inputs:
            if node.tape_id != self.tape_id:
                raise TapeError(kind.value, [n.shape for n in inputs], "operand belongs to another tape")
        arrays = [node.value for node in inputs]
        value = _PRIMALS[kind](arrays, attrs)
        return self._append(kind, tuple(node.index for node in inputs), Tensor(value), attrs, None)

    def matmul(self, a: TapeNode, b: TapeNode, transpose_b: bool = False) -> TapeNode:
        return self.record(OpKind.MATMUL, (a, b), transpose_b=transpose_b)

    def add(self, a: TapeNode, b: TapeNode) -> TapeNode:
        return self.record(OpKind.ADD, (a, b))

    def sub(self, a: TapeNode, b: TapeNode) -> TapeNode:
        return self.record(OpKind.SUB, (a, b))

    def mul(self, a: TapeNode, b: TapeNode) -> TapeNode:
        return self.record(OpKind.MUL, (a, b))

    def scale(self, a: TapeNode, factor: float) -> TapeNode:
        return self.record(OpKind.SCALE, (a,), factor=float(factor))

    def tanh(self, a: TapeNode) -> TapeNode:
        return self.record(OpKind.TANH, (a,))

    def square(self, a: TapeNode) -> TapeNode:
        return self.record(OpKind.SQUARE, (a,))

    def negate(self, a: TapeNode) -> TapeNode:
        return self.record(OpKind.NEGATE, (a,))

    def add_bias(self, a: TapeNode, bias: TapeNode) -> TapeNode:
        return self.record(OpKind.ADD_BIAS, (a, bias))

    def sum(self, a: TapeNode) -> TapeNode:
        return self.record(OpKind.SUM, (a,))

    def mean(self, a: TapeNode) -> TapeNode:
        return self.record(OpKind.MEAN, (a,))

    def _append(
        self,
        kind: OpKind,
        inputs: Tuple[int, ...],
        primal: Tensor,
        attrs: Mapping[str, Any],
        name: Optional[str]
    ) -> TapeNode:
        node = TapeNode(
            tape_id=self.tape_id,
            index=len(self._nodes),
            kind=kind,
            inputs=inputs,
            primal=primal,
            attrs=dict(attrs),
            name=name
        )
        self._nodes.append(node)
        return node

    # ------------------------------------------------------------------
    # Reverse mode
    # ------------------------------------------------------------------

    def backward(self, scalar: TapeNode, wanted: Iterable[Union[str, TapeNode]]) -> GradMap:
        """
        Reverse-mode gradient of ``scalar`` with respect to recorded inputs.

        Args:
            scalar: node with shape () or (1,)
            wanted: input names (or the input nodes themselves)

        Returns:
            GradMap with one entry per wanted input, shaped like the input
        """
        if scalar.tape_id != self.tape_id:
            raise BackwardError("scalar node belongs to another tape")
        if scalar.primal.size != 1 or len(scalar.shape) > 1:
            raise BackwardError(f"backward needs a 0-d or 1-element scalar, got shape {scalar.shape}")

        targets: Dict[str, int] = {}
        for item in wanted:
            if isinstance(item, TapeNode):
                if item.tape_id != self.tape_id or item.kind is not OpKind.INPUT:
                    raise BackwardError(f"node {item.index} is not a recorded input of this tape")
                targets[item.name or str(item.index)] = item.index
            else:
                targets[item] = self.input_node(item).index

        logger.debug(f"backward over {scalar.index + 1} nodes for {len(targets)} inputs")
        adjoints: Dict[int, np.ndarray] = {scalar.index: np.ones(scalar.shape, dtype=np.float64)}
        for node in reversed(self._nodes[: scalar.index + 1]):
            if not node.inputs:
                continue
            # interior adjoints are dropped once propagated; leaf adjoints stay
            grad = adjoints.pop(node.index, None)
            if grad is None:
                continue
            operands = [self._nodes[i] for i in node.inputs]
            contributions = _ADJOINTS[node.kind](node, operands, grad)
            for operand, contribution in zip(operands, contributions):
                if contribution is None or operand.kind is OpKind.CONSTANT:
                    continue
                if operand.index in adjoints:
                    adjoints[operand.index] = adjoints[operand.index] + contribution
                else:
                    adjoints[operand.index] = contribution

        result: Dict[str, np.ndarray] = {}
        for name, index in targets.items():
            shape = self._nodes[index].shape
            grad = adjoints.get(index)
            result[name] = np.zeros(shape) if grad is None else np.array(grad, dtype=np.float64).reshape(shape)
        return GradMap(result)


# =============================================================================
# Primal rules
# =============================================================================

def _require_same(op: OpKind, a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise TapeError(op.value, [a.shape, b.shape])


def _primal_matmul(arrays: List[np.ndarray], attrs: Mapping[str, Any]) -> np.ndarray:
    a, b = arrays
    rhs = b.T if attrs.get("transpose_b") else b
    if a.ndim != 2 or rhs.ndim != 2 or a.shape[1] != rhs.shape[0]:
        raise TapeError(OpKind.MATMUL.value, [a.shape, b.shape])
    return a @ rhs


def _primal_binary(op: OpKind):
    def rule(arrays: List[np.ndarray], attrs: Mapping[str, Any]) -> np.ndarray:
        a, b = arrays
        _require_same(op, a, b)
        if op is OpKind.ADD:
            return a + b
        if op is OpKind.SUB:
            return a - b
        return a * b
    return rule


def _primal_add_bias(arrays: List[np.ndarray], attrs: Mapping[str, Any]) -> np.ndarray:
    a, bias = arrays
    if a.ndim != 2 or bias.ndim != 1 or a.shape[1] != bias.shape[0]:
        raise TapeError(OpKind.ADD_BIAS.value, [a.shape, bias.shape])
    return a + bias[np.newaxis, :]


def _primal_sum(arrays: List[np.ndarray], attrs: Mapping[str, Any]) -> np.ndarray:
    return np.array(ordered_sum(arrays[0]))


def _primal_mean(arrays: List[np.ndarray], attrs: Mapping[str, Any]) -> np.ndarray:
    (a,) = arrays
    if a.size == 0:
        raise TapeError(OpKind.MEAN.value, [a.shape], "mean of an empty tensor")
    return np.array(ordered_sum(a) / a.size)


_PRIMALS = {
    OpKind.MATMUL: _primal_matmul,
    OpKind.ADD: _primal_binary(OpKind.ADD),
    OpKind.SUB: _primal_binary(OpKind.SUB),
    OpKind.MUL: _primal_binary(OpKind.MUL),
    OpKind.SCALE: lambda arrays, attrs: arrays[0] * attrs["factor"],
    OpKind.TANH: lambda arrays, attrs: np.tanh(arrays[0]),
    OpKind.SQUARE: lambda arrays, attrs: arrays[0] * arrays[0],
    OpKind.NEGATE: lambda arrays, attrs: -arrays[0],
    OpKind.ADD_BIAS: _primal_add_bias,
    OpKind.SUM: _primal_sum,
    OpKind.MEAN: _primal_mean,
}


# =============================================================================
# Adjoint rules: (node, operand nodes, upstream grad) -> per-operand grads
# =============================================================================

def _adjoint_matmul(node: TapeNode, operands: List[TapeNode], grad: np.ndarray):
    a, b = operands[0].value, operands[1].value
    if node.attrs.get("transpose_b"):
        # C = A B^T
        return grad @ b, grad.T @ a
    return grad @ b.T, a.T @ grad


def _adjoint_mul(node: TapeNode, operands: List[TapeNode], grad: np.ndarray):
    a, b = operands[0].value, operands[1].value
    return grad * b, grad * a


def _adjoint_tanh(node: TapeNode, operands: List[TapeNode], grad: np.ndarray):
    y = node.value
    return (grad * (1.0 - y * y),)


def _adjoint_add_bias(node: TapeNode, operands: List[TapeNode], grad: np.ndarray):
    return grad, ordered_row_sum(grad)


def _adjoint_reduce(node: TapeNode, operands: List[TapeNode], grad: np.ndarray):
    shape = operands[0].shape
    seed = float(np.asarray(grad).reshape(-1)[0])
    if node.kind is OpKind.MEAN:
        seed = seed / operands[0].primal.size
    return (np.full(shape, seed),)


_ADJOINTS = {
    OpKind.MATMUL: _adjoint_matmul,
    OpKind.ADD: lambda node, ops, g: (g, g),
    OpKind.SUB: lambda node, ops, g: (g, -g),
    OpKind.MUL: _adjoint_mul,
    OpKind.SCALE: lambda node, ops, g: (g * node.attrs["factor"],),
    OpKind.TANH: _adjoint_tanh,
    OpKind.SQUARE: lambda node, ops, g: (2.0 * ops[0].value * g,),
    OpKind.NEGATE: lambda node, ops, g: (-g,),
    OpKind.ADD_BIAS: _adjoint_add_bias,
    OpKind.SUM: _adjoint_reduce,
    OpKind.MEAN: _adjoint_reduce,
}
