"""Minimal dense-tensor kernel with reverse-mode differentiation.

Operations execute eagerly on 64-bit numpy arrays. While a Tape is
active, every primitive whose output depends on a gradient-bearing
tensor appends a backward closure to the tape. backward() replays the
closures in reverse execution order, which is a valid reverse
topological order because records are appended as operations run.
Tapes are single use; build a fresh one per optimization step.

Broadcasting is deliberately restricted to elementwise same-shape
operands (plus scalar constants); sequence batching happens one
sample at a time in the model layer.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import ContractError, DegenerateInputError, ShapeError

__all__ = [
    "Tensor",
    "Tape",
    "backward",
    "constant",
    "pointwise",
    "reduce",
    "matmul",
    "add",
    "sub",
    "mul",
    "div",
    "sigmoid",
    "tanh",
    "relu_hinge",
    "square",
    "sqrt",
    "add_scalar",
    "mul_scalar",
    "stack",
    "transpose",
    "reshape",
    "reduce_sum",
    "reduce_mean",
    "reduce_max",
    "zero_grads",
    "finite_diff_check",
    "FiniteDiffReport",
]


class Tensor:
    """Dense float64 array with an optional gradient buffer."""

    __slots__ = ("values", "requires_grad", "grad", "tape")

    def __init__(self, values, requires_grad: bool = False):
        self.values = np.asarray(values, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.tape: Tape | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.values.shape

    def item(self) -> float:
        if self.values.size != 1:
            raise ShapeError(f"item() needs a single-element tensor, got shape {list(self.shape)}")
        return float(self.values.reshape(()))

    def detach(self) -> "Tensor":
        """Copy of the values as a fresh constant leaf (no gradient link)."""
        return Tensor(self.values.copy(), requires_grad=False)

    def __repr__(self) -> str:
        return f"Tensor(shape={list(self.shape)}, requires_grad={self.requires_grad})"


def constant(values) -> Tensor:
    return Tensor(values, requires_grad=False)


class Tape:
    """Ordered record of the primitives applied during one forward pass.

    Usable as a context manager; the innermost active tape receives the
    records. A tape may be replayed (via backward) at most once.
    """

    def __init__(self):
        self._records: list[tuple[Tensor, Callable[[np.ndarray], None]]] = []
        self._used = False

    def __len__(self) -> int:
        return len(self._records)

    def __enter__(self) -> "Tape":
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        popped = _TAPE_STACK.pop()
        if popped is not self:  # pragma: no cover - misuse guard
            raise ContractError("tape context exited out of order")
        return False


_TAPE_STACK: list[Tape] = []


def _active_tape() -> Tape | None:
    return _TAPE_STACK[-1] if _TAPE_STACK else None


def _record(out: Tensor, back: Callable[[np.ndarray], None]) -> None:
    tape = _active_tape()
    if tape is not None and out.requires_grad:
        out.tape = tape
        tape._records.append((out, back))


def _acc(t: Tensor, g) -> None:
    if t.requires_grad:
        if t.grad is None:
            # copy: g may be a broadcast view or caller-owned buffer
            t.grad = np.array(g, dtype=np.float64)
            if t.grad.shape != t.values.shape:
                t.grad = np.broadcast_to(t.grad, t.values.shape).copy()
        else:
            t.grad += g


def backward(loss: Tensor) -> None:
    """Populate dLoss/dLeaf on every gradient-bearing tensor in the graph.

    The loss must be a scalar produced while a tape was active, and that
    tape must not have been replayed before.
    """
    if loss.values.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {list(loss.shape)}")
    tape = loss.tape
    if tape is None:
        if not loss.requires_grad:
            raise ContractError("loss does not depend on any gradient-bearing tensor")
        raise ContractError("loss was not produced while a tape was active")
    if tape._used:
        raise ContractError("tape already replayed; tapes are single use")
    tape._used = True
    loss.grad = np.ones_like(loss.values)
    for out, back in reversed(tape._records):
        g = out.grad
        if g is None:
            continue
        back(g)


def zero_grads(tensors: Sequence[Tensor]) -> None:
    for t in tensors:
        t.grad = None


# ---------------------------------------------------------------------------
# primitives


def matmul(a: Tensor, b: Tensor) -> Tensor:
    av, bv = a.values, b.values
    if av.ndim == 2 and bv.ndim == 2:
        if av.shape[1] != bv.shape[0]:
            raise ShapeError(f"matmul dimension mismatch: {list(av.shape)} x {list(bv.shape)}")
    elif av.ndim == 2 and bv.ndim == 1:
        if av.shape[1] != bv.shape[0]:
            raise ShapeError(f"matmul dimension mismatch: {list(av.shape)} x {list(bv.shape)}")
    else:
        raise ShapeError(
            f"matmul supports 2-d x 2-d or 2-d x 1-d operands, got {av.ndim}-d x {bv.ndim}-d"
        )
    out = Tensor(av @ bv, requires_grad=a.requires_grad or b.requires_grad)

    def back(g):
        if bv.ndim == 1:
            _acc(a, np.outer(g, bv))
            _acc(b, av.T @ g)
        else:
            _acc(a, g @ bv.T)
            _acc(b, av.T @ g)

    _record(out, back)
    return out


def transpose(a: Tensor) -> Tensor:
    if a.values.ndim != 2:
        raise ShapeError(f"transpose expects a 2-d tensor, got shape {list(a.shape)}")
    out = Tensor(a.values.T.copy(), requires_grad=a.requires_grad)

    def back(g):
        _acc(a, g.T)

    _record(out, back)
    return out


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(int(s) for s in shape)
    if int(np.prod(shape, dtype=np.int64)) != a.values.size:
        raise ShapeError(f"cannot reshape {list(a.shape)} into {list(shape)}")
    out = Tensor(a.values.reshape(shape), requires_grad=a.requires_grad)
    old_shape = a.values.shape

    def back(g):
        _acc(a, g.reshape(old_shape))

    _record(out, back)
    return out


def stack(parts: Sequence[Tensor]) -> Tensor:
    """Stack same-shape tensors along a new leading axis."""
    if not parts:
        raise ContractError("stack needs at least one tensor")
    first = parts[0].values.shape
    for p in parts[1:]:
        if p.values.shape != first:
            raise ShapeError(f"stack shape mismatch: {list(first)} vs {list(p.values.shape)}")
    out = Tensor(
        np.stack([p.values for p in parts]),
        requires_grad=any(p.requires_grad for p in parts),
    )

    def back(g):
        for i, p in enumerate(parts):
            _acc(p, g[i])

    _record(out, back)
    return out


def _binary(a: Tensor, b: Tensor, op: str) -> tuple[np.ndarray, np.ndarray]:
    av, bv = a.values, b.values
    if av.shape != bv.shape:
        raise ShapeError(f"{op} shape mismatch: {list(av.shape)} vs {list(bv.shape)}")
    return av, bv


def add(a: Tensor, b: Tensor) -> Tensor:
    av, bv = _binary(a, b, "add")
    out = Tensor(av + bv, requires_grad=a.requires_grad or b.requires_grad)

    def back(g):
        _acc(a, g)
        _acc(b, g)

    _record(out, back)
    return out


def sub(a: Tensor, b: Tensor) -> Tensor:
    av, bv = _binary(a, b, "sub")
    out = Tensor(av - bv, requires_grad=a.requires_grad or b.requires_grad)

    def back(g):
        _acc(a, g)
        _acc(b, -g)

    _record(out, back)
    return out


def mul(a: Tensor, b: Tensor) -> Tensor:
    av, bv = _binary(a, b, "mul")
    out = Tensor(av * bv, requires_grad=a.requires_grad or b.requires_grad)

    def back(g):
        _acc(a, g * bv)
        _acc(b, g * av)

    _record(out, back)
    return out


def div(a: Tensor, b: Tensor) -> Tensor:
    av, bv = _binary(a, b, "div")
    out = Tensor(av / bv, requires_grad=a.requires_grad or b.requires_grad)

    def back(g):
        _acc(a, g / bv)
        _acc(b, -g * av / (bv * bv))

    _record(out, back)
    return out


def add_scalar(a: Tensor, c: float) -> Tensor:
    c = float(c)
    out = Tensor(a.values + c, requires_grad=a.requires_grad)

    def back(g):
        _acc(a, g)

    _record(out, back)
    return out


def mul_scalar(a: Tensor, c: float) -> Tensor:
    c = float(c)
    out = Tensor(a.values * c, requires_grad=a.requires_grad)

    def back(g):
        _acc(a, g * c)

    _record(out, back)
    return out


def sigmoid(a: Tensor) -> Tensor:
    ov = 1.0 / (1.0 + np.exp(-a.values))
    out = Tensor(ov, requires_grad=a.requires_grad)

    def back(g):
        _acc(a, g * ov * (1.0 - ov))

    _record(out, back)
    return out


def tanh(a: Tensor) -> Tensor:
    ov = np.tanh(a.values)
    out = Tensor(ov, requires_grad=a.requires_grad)

    def back(g):
        _acc(a, g * (1.0 - ov * ov))

    _record(out, back)
    return out


def relu_hinge(a: Tensor) -> Tensor:
    """Elementwise max(x, 0); gradient is 0 at the kink."""
    av = a.values
    out = Tensor(np.maximum(av, 0.0), requires_grad=a.requires_grad)

    def back(g):
        _acc(a, g * (av > 0.0))

    _record(out, back)
    return out


def square(a: Tensor) -> Tensor:
    av = a.values
    out = Tensor(av * av, requires_grad=a.requires_grad)

    def back(g):
        _acc(a, g * 2.0 * av)

    _record(out, back)
    return out


def sqrt(a: Tensor) -> Tensor:
    if np.any(a.values < 0.0):
        raise DegenerateInputError("sqrt of a negative value")
    ov = np.sqrt(a.values)
    out = Tensor(ov, requires_grad=a.requires_grad)

    def back(g):
        _acc(a, g * 0.5 / ov)

    _record(out, back)
    return out


def _check_axis(a: Tensor, axis: int, op: str) -> int:
    rank = a.values.ndim
    if not -rank <= axis < rank:
        raise ShapeError(f"{op} axis {axis} out of range for rank {rank}")
    return axis % rank if rank else 0


def reduce_sum(a: Tensor, axis: int | None = None) -> Tensor:
    if axis is None:
        out = Tensor(np.sum(a.values), requires_grad=a.requires_grad)

        def back(g):
            _acc(a, np.broadcast_to(g, a.values.shape))

    else:
        axis = _check_axis(a, axis, "sum")
        out = Tensor(np.sum(a.values, axis=axis), requires_grad=a.requires_grad)

        def back(g):
            _acc(a, np.broadcast_to(np.expand_dims(g, axis), a.values.shape))

    _record(out, back)
    return out


def reduce_mean(a: Tensor, axis: int | None = None) -> Tensor:
    if axis is None:
        n = a.values.size
        out = Tensor(np.mean(a.values), requires_grad=a.requires_grad)

        def back(g):
            _acc(a, np.broadcast_to(g / n, a.values.shape))

    else:
        axis = _check_axis(a, axis, "mean")
        n = a.values.shape[axis]
        out = Tensor(np.mean(a.values, axis=axis), requires_grad=a.requires_grad)

        def back(g):
            _acc(a, np.broadcast_to(np.expand_dims(g / n, axis), a.values.shape))

    _record(out, back)
    return out


def reduce_max(a: Tensor, axis: int) -> Tensor:
    """Max along one axis; gradient flows to the first attaining index."""
    if axis is None:
        raise ContractError("max_over_axis requires an explicit axis")
    axis = _check_axis(a, axis, "max_over_axis")
    av = a.values
    out = Tensor(np.max(av, axis=axis), requires_grad=a.requires_grad)
    idx = np.argmax(av, axis=axis)  # argmax returns the first maximal index

    def back(g):
        buf = np.zeros_like(av)
        np.put_along_axis(buf, np.expand_dims(idx, axis), np.expand_dims(g, axis), axis=axis)
        _acc(a, buf)

    _record(out, back)
    return out


# ---------------------------------------------------------------------------
# generic dispatchers, matching the documented operation names

_POINTWISE: dict[str, Callable[..., Tensor]] = {
    "add": add,
    "sub": sub,
    "mul": mul,
    "div": div,
    "sigmoid": sigmoid,
    "tanh": tanh,
    "relu_hinge": relu_hinge,
    "square": square,
    "sqrt": sqrt,
}

_REDUCE: dict[str, Callable[..., Tensor]] = {
    "sum": reduce_sum,
    "mean": reduce_mean,
    "max_over_axis": reduce_max,
}


def pointwise(op: str, *inputs: Tensor) -> Tensor:
    try:
        fn = _POINTWISE[op]
    except KeyError:
        raise ContractError(f"unknown pointwise op {op!r}") from None
    return fn(*inputs)


def reduce(op: str, t: Tensor, axis: int | None = None) -> Tensor:
    try:
        fn = _REDUCE[op]
    except KeyError:
        raise ContractError(f"unknown reduce op {op!r}") from None
    return fn(t, axis)


# ---------------------------------------------------------------------------
# finite-difference gradient verification


@dataclass
class FiniteDiffReport:
    """Result of comparing analytic gradients against central differences."""

    max_rel_err: float
    n_checked: int
    n_skipped_nondifferentiable: int
    tol: float
    per_param_max: list[float]

    @property
    def passed(self) -> bool:
        return self.max_rel_err < self.tol


def _rel_err(a: float, n: float, floor: float) -> float:
    return abs(a - n) / max(floor, abs(a) + abs(n))


def finite_diff_check(
    f: Callable[[Sequence[Tensor]], Tensor],
    params: Sequence[Tensor],
    step: float = 1e-5,
    tol: float = 1e-4,
    coords_per_param: int | None = None,
    rng: np.random.Generator | None = None,
) -> FiniteDiffReport:
    """Compare analytic gradients of scalar f(params) with central differences.

    Each checked coordinate is perturbed by +/-step; the central-difference
    quotient is compared with the tape gradient via a floored relative
    error. The denominator floor scales with |f| because the quotient's
    rounding noise does too; coordinates whose gradients sit below that
    noise are vacuously fine. Coordinates where the one-sided quotients
    disagree strongly lie on a hinge/max kink where the derivative is not
    defined; they are skipped and counted instead of reported as failures
    (a genuinely wrong gradient produces matching one-sided quotients and
    still fails).

    coords_per_param limits the check to a random subset per parameter,
    for use on expensive full-pipeline objectives.
    """
    if step <= 0.0:
        raise ContractError("finite_diff_check requires step > 0")
    params = list(params)
    for p in params:
        if not p.requires_grad:
            raise ContractError("all checked parameters must have requires_grad set")
    zero_grads(params)
    with Tape():
        loss = f(params)
        if loss.requires_grad:
            backward(loss)
        # a loss not touching any parameter has an all-zero gradient
    analytic = [p.grad.copy() if p.grad is not None else np.zeros_like(p.values) for p in params]
    zero_grads(params)

    def eval_f() -> float:
        out = f(params)
        return float(out.values.reshape(()))

    if rng is None:
        rng = np.random.default_rng(0)

    f_mid = eval_f()
    floor = 1e-6 * max(1.0, abs(f_mid))
    max_err = 0.0
    per_param = []
    n_checked = 0
    n_skipped = 0
    for p, a_grad in zip(params, analytic):
        flat = p.values.reshape(-1)
        a_flat = a_grad.reshape(-1)
        size = flat.size
        if coords_per_param is not None and coords_per_param < size:
            coords = np.sort(rng.choice(size, size=coords_per_param, replace=False))
        else:
            coords = range(size)
        p_max = 0.0
        for idx in coords:
            orig = flat[idx]
            flat[idx] = orig + step
            f_plus = eval_f()
            flat[idx] = orig - step
            f_minus = eval_f()
            flat[idx] = orig
            numeric = (f_plus - f_minus) / (2.0 * step)
            err = _rel_err(a_flat[idx], numeric, floor)
            if err >= tol:
                # split test: disagreeing one-sided quotients mean the
                # objective is locally nondifferentiable at this coordinate
                right = (f_plus - f_mid) / step
                left = (f_mid - f_minus) / step
                if abs(right - left) / max(1.0, abs(right), abs(left)) > 1e-3:
                    n_skipped += 1
                    continue
            n_checked += 1
            if err > p_max:
                p_max = err
        per_param.append(p_max)
        if p_max > max_err:
            max_err = p_max
    return FiniteDiffReport(
        max_rel_err=max_err,
        n_checked=n_checked,
        n_skipped_nondifferentiable=n_skipped,
        tol=tol,
        per_param_max=per_param,
    )
