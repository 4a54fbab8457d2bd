"""Dense numeric kernel: the four differentiable primitives and an optimizer.

Vectors are 1-D and matrices 2-D row-major numpy arrays. Datasets and
checkpoints store float32; every dot product accumulates in float64 so that
float32 storage still yields checkable gradients. Elementwise ops keep the
dtype of their inputs. All functions are pure except `optimizer_step`, which
updates parameters and its own state in place.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ParameterError, ShapeError, TrainingError

DTYPE = np.float32


def _result_dtype(*arrays) -> np.dtype:
    return np.result_type(*(a.dtype for a in arrays))


def _f64(a: np.ndarray) -> np.ndarray:
    return a.astype(np.float64, copy=False)


def linear_forward(w: np.ndarray, b: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Affine map w @ x + b.

    `x` may be a single vector of length w.shape[1] or a batch of such
    vectors as rows; the map is applied row-wise in the batched case.
    """
    if w.ndim != 2:
        raise ShapeError(f"weight must be 2-D, got shape {w.shape}")
    if x.ndim not in (1, 2) or x.shape[-1] != w.shape[1]:
        raise ShapeError(f"weight shape {w.shape} does not accept input shape {x.shape}")
    if b.shape != (w.shape[0],):
        raise ShapeError(f"bias shape {b.shape} does not match weight shape {w.shape}")
    y = _f64(x) @ _f64(w).T + _f64(b)
    return y.astype(_result_dtype(w, b, x), copy=False)


def linear_backward(w, x, grad_out):
    """Gradients of linear_forward: returns (dw, db, dx) for upstream grad_out."""
    if x.shape[-1] != w.shape[1] or grad_out.shape[-1] != w.shape[0]:
        raise ShapeError(
            f"backward shapes disagree: w={w.shape}, x={x.shape}, grad={grad_out.shape}"
        )
    g64, x64, w64 = _f64(grad_out), _f64(x), _f64(w)
    if x.ndim == 1:
        dw = np.outer(g64, x64)
        db = g64.copy()
    else:
        dw = g64.T @ x64
        db = g64.sum(axis=0)
    dx = g64 @ w64
    out = _result_dtype(w, x, grad_out)
    return dw.astype(out, copy=False), db.astype(out, copy=False), dx.astype(out, copy=False)


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, np.asarray(0, dtype=x.dtype))


def relu_backward(x_pre: np.ndarray, grad_out: np.ndarray) -> np.ndarray:
    """Upstream grad masked by the pre-activation sign; derivative at 0 is 0."""
    return np.where(x_pre > 0, grad_out, np.asarray(0, dtype=grad_out.dtype))


def sigmoid(x: np.ndarray) -> np.ndarray:
    """Numerically stable logistic function, output strictly inside (0, 1).

    Branches on the sign of x so exp never overflows, then clamps into the
    open interval of the output dtype: saturated values round to the nearest
    representable number below 1 (or above 0) instead of hitting the ends.
    """
    x64 = _f64(x)
    out = np.empty_like(x64)
    pos = x64 >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x64[pos]))
    ex = np.exp(x64[~pos])
    out[~pos] = ex / (1.0 + ex)
    out = out.astype(x.dtype, copy=False)
    one = np.asarray(1, dtype=x.dtype)
    zero = np.asarray(0, dtype=x.dtype)
    return np.clip(out, np.nextafter(zero, one), np.nextafter(one, zero))


def sigmoid_backward(sig: np.ndarray, grad_out: np.ndarray) -> np.ndarray:
    """Chain rule through sigmoid given its output `sig`."""
    return grad_out * sig * (np.asarray(1, dtype=sig.dtype) - sig)


def hadamard(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Elementwise product; shapes must match exactly."""
    if a.shape != b.shape:
        raise ShapeError(f"elementwise product shapes differ: {a.shape} vs {b.shape}")
    return a * b


def glorot_uniform(rng: np.random.Generator, rows: int, cols: int, dtype=DTYPE) -> np.ndarray:
    """Uniform init in +-sqrt(6 / (fan_in + fan_out))."""
    limit = np.sqrt(6.0 / (rows + cols))
    return rng.uniform(-limit, limit, size=(rows, cols)).astype(dtype)


@dataclass
class OptimizerState:
    """SGD or Adam state over a named set of parameter tensors.

    Adam moments are kept in float64 keyed by parameter name and created
    lazily on the first step. The step counter increases by one per call.
    """

    algorithm: str = "adam"
    learning_rate: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.algorithm not in ("sgd", "adam"):
            raise ParameterError(f"unknown optimizer {self.algorithm!r}")
        if self.learning_rate <= 0:
            raise ParameterError(f"learning rate must be > 0, got {self.learning_rate}")


def optimizer_step(params: dict, grads: dict, state: OptimizerState) -> None:
    """Apply one update in place: p -= lr*g (SGD) or bias-corrected Adam.

    `params` and `grads` are name -> ndarray with matching shapes. Gradient
    buffers are never reused across steps, so no zeroing is required here.
    """
    state.step += 1
    t = state.step
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ShapeError(f"gradient shape {g.shape} != parameter {name} shape {p.shape}")
        if not np.isfinite(g).all():
            raise TrainingError(f"non-finite gradient for parameter {name!r}")
        g64 = _f64(g)
        if state.algorithm == "sgd":
            upd = state.learning_rate * g64
        else:
            m = state.m.setdefault(name, np.zeros(p.shape, dtype=np.float64))
            v = state.v.setdefault(name, np.zeros(p.shape, dtype=np.float64))
            m *= state.beta1
            m += (1.0 - state.beta1) * g64
            v *= state.beta2
            v += (1.0 - state.beta2) * g64 * g64
            m_hat = m / (1.0 - state.beta1**t)
            v_hat = v / (1.0 - state.beta2**t)
            upd = state.learning_rate * m_hat / (np.sqrt(v_hat) + state.eps)
        p -= upd.astype(p.dtype, copy=False)
