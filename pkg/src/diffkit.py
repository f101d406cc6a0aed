"""
Diffkit
Dense float64 kernels with hand-written backward passes, a parameter tape and
a central-difference gradient checker.

Every forward kernel returns its output together with whatever the matching
``*_backward`` needs. The model wires these together into one fixed graph;
there is no general autodiff here.
"""

from typing import Callable, Dict, Iterable, Iterator, Optional, Tuple

import numpy as np
import structlog
from scipy.special import expit

from errors import ContractError, NumericError

logger = structlog.get_logger(__name__)

Matrix = np.ndarray
Grads = Dict[str, np.ndarray]


def matrix(data: Iterable[float], rows: int, cols: int) -> Matrix:
    """Build a row-major ``rows x cols`` float64 matrix from flat data"""
    flat = np.asarray(list(data), dtype=np.float64)
    if flat.size != rows * cols:
        raise ContractError(f"expected {rows * cols} values for {rows}x{cols}, got {flat.size}")
    return ensure_finite(flat.reshape(rows, cols), "matrix")


def ensure_finite(m: np.ndarray, op: str) -> np.ndarray:
    """Raise NumericError if ``m`` holds NaN or Inf, otherwise return it"""
    if not np.all(np.isfinite(m)):
        raise NumericError(f"{op}: non-finite values")
    return m


def logistic(x):
    """Elementwise sigmoid; saturates instead of overflowing"""
    return expit(x)


def softmax_rows(m: Matrix, mask: Optional[np.ndarray] = None) -> Matrix:
    """
    Row-wise softmax with per-row max subtraction

    Args:
        m: finite input matrix
        mask: optional boolean matrix, False marks entries that get weight 0.
            Every row needs at least one admissible entry.

    Returns:
        Matrix of the same shape whose rows are nonnegative and sum to 1
    """
    ensure_finite(m, "softmax_rows")
    if mask is not None:
        if not np.all(mask.any(axis=-1)):
            raise ContractError("softmax_rows: a row has no admissible entry")
        m = np.where(mask, m, -np.inf)
    shifted = m - m.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_rows_backward(dp: Matrix, p: Matrix) -> Matrix:
    """Vector-Jacobian product of softmax_rows given its output ``p``"""
    return p * (dp - (dp * p).sum(axis=-1, keepdims=True))


def layer_norm(m: Matrix, gain: np.ndarray, bias: np.ndarray, eps: float = 1e-8):
    """
    Per-row layer normalization with population variance

    Returns:
        (output, cache) where cache feeds layer_norm_backward
    """
    ensure_finite(m, "layer_norm")
    if m.shape[-1] < 2:
        raise ContractError("layer_norm needs at least 2 columns")
    mean = m.mean(axis=-1, keepdims=True)
    centered = m - mean
    var = (centered * centered).mean(axis=-1, keepdims=True)
    denom = var + eps
    if np.any(denom <= 0.0):
        raise NumericError("layer_norm: zero variance row with eps=0")
    inv_std = 1.0 / np.sqrt(denom)
    xhat = centered * inv_std
    return xhat * gain + bias, (xhat, inv_std, gain)


def layer_norm_backward(dout: Matrix, cache) -> Tuple[Matrix, np.ndarray, np.ndarray]:
    xhat, inv_std, gain = cache
    n = xhat.shape[-1]
    dxhat = dout * gain
    dm = (inv_std / n) * (
        n * dxhat
        - dxhat.sum(axis=-1, keepdims=True)
        - xhat * (dxhat * xhat).sum(axis=-1, keepdims=True)
    )
    return dm, (dout * xhat).sum(axis=0), dout.sum(axis=0)


def linear(x: Matrix, w: Matrix, b: Optional[np.ndarray] = None):
    """Affine map ``x @ w + b``"""
    y = x @ w
    if b is not None:
        y = y + b
    return y, (x, w)


def linear_backward(dy: Matrix, cache) -> Tuple[Matrix, Matrix, np.ndarray]:
    x, w = cache
    return dy @ w.T, x.T @ dy, dy.sum(axis=0)


def relu(x: Matrix):
    return np.maximum(x, 0.0), x


def relu_backward(dy: Matrix, cache) -> Matrix:
    return dy * (cache > 0.0)


def reduce_sum(m: Matrix) -> float:
    return float(np.sum(m))


def reduce_sum_backward(dout: float, shape) -> Matrix:
    return np.full(shape, dout, dtype=np.float64)


class ParamTape:
    """
    Named parameter tensors with matching gradient accumulators

    Gradients may only be accumulated into names that were registered;
    anything else is a wiring bug and raises ContractError.
    """

    def __init__(self, params: Optional[Dict[str, np.ndarray]] = None):
        self.params: Dict[str, np.ndarray] = {}
        self.grads: Grads = {}
        for name, value in (params or {}).items():
            self.register(name, value)

    def register(self, name: str, value: np.ndarray):
        value = np.array(value, dtype=np.float64)
        ensure_finite(value, f"register {name}")
        self.params[name] = value
        self.grads[name] = np.zeros_like(value)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.params[name]

    def __contains__(self, name: str) -> bool:
        return name in self.params

    def __iter__(self) -> Iterator[str]:
        return iter(self.params)

    def zero_grad(self):
        for grad in self.grads.values():
            grad.fill(0.0)

    def _check(self, name: str, shape) -> np.ndarray:
        if name not in self.grads:
            raise ContractError(f"gradient for unrecorded parameter '{name}'")
        grad = self.grads[name]
        if tuple(shape) != grad.shape:
            raise ContractError(f"gradient shape {tuple(shape)} does not match '{name}' {grad.shape}")
        return grad

    def accumulate(self, name: str, grad: np.ndarray):
        self._check(name, np.shape(grad))
        self.grads[name] += grad

    def scatter_add(self, name: str, indices: np.ndarray, rows: np.ndarray):
        """Add ``rows[i]`` into row ``indices[i]`` of the gradient (lookup backward)"""
        if name not in self.grads:
            raise ContractError(f"gradient for unrecorded parameter '{name}'")
        np.add.at(self.grads[name], np.asarray(indices, dtype=np.int64), rows)

    def copy(self) -> "ParamTape":
        tape = type(self).__new__(type(self))
        tape.params = {k: v.copy() for k, v in self.params.items()}
        tape.grads = {k: np.zeros_like(v) for k, v in self.params.items()}
        return tape


def numeric_gradient(
    loss_fn: Callable[[Dict[str, np.ndarray]], float],
    params: Dict[str, np.ndarray],
    h: float = 1e-4,
) -> Grads:
    """
    Central-difference gradient of ``loss_fn`` w.r.t. every coordinate of ``params``

    ``params`` is perturbed in place and restored coordinate by coordinate.
    """
    grads: Grads = {}
    for name, value in params.items():
        grad = np.zeros_like(value)
        flat = value.reshape(-1)
        for j in range(flat.size):
            original = flat[j]
            flat[j] = original + h
            plus = loss_fn(params)
            flat[j] = original - h
            minus = loss_fn(params)
            flat[j] = original
            grad.reshape(-1)[j] = (plus - minus) / (2.0 * h)
        grads[name] = grad
    return grads


def grad_check(
    loss_and_grad: Callable[[Dict[str, np.ndarray]], Tuple[float, Grads]],
    params: Dict[str, np.ndarray],
    h: float = 1e-4,
    floor: float = 1e-8,
) -> float:
    """
    Compare analytic gradients against central differences

    The loss must be smooth around ``params``: kinks such as |x| at 0, ReLU at
    0 or an argmax switching within ``h`` make the comparison meaningless.

    Args:
        loss_and_grad: returns (loss, analytic gradients) for a parameter dict
        params: parameters to perturb (modified in place, then restored)
        h: finite-difference step
        floor: lower bound of the relative-error denominator

    Returns:
        max over coordinates of |a - n| / max(|a|, |n|, floor)
    """
    base, analytic = loss_and_grad(params)
    again, _ = loss_and_grad(params)
    if base != again:
        raise NumericError("grad_check: loss function is not deterministic")

    numeric = numeric_gradient(lambda p: loss_and_grad(p)[0], params, h)
    worst = 0.0
    for name in params:
        a = analytic.get(name, np.zeros_like(params[name]))
        n = numeric[name]
        denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
        err = float(np.max(np.abs(a - n) / denom)) if a.size else 0.0
        if err > worst:
            worst = err
        logger.debug("grad_check", param=name, max_relative_error=err)
    return worst
