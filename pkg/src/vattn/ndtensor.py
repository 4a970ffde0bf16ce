"""Dense float64 array substrate: seeded RNG, differentiable primitives, gradient checker.

Tensors are plain ``numpy.ndarray`` values of dtype float64. The functions here
validate shapes and raise :class:`InvalidArgumentError` rather than relying on
numpy broadcasting, which the rest of the package never uses implicitly.

Random draws come from a single :class:`Rng` per run. Within one training step
the draw order is fixed: batch sampling, then reparameterization noise, then
dropout masks.
"""

import math

import numpy as np
from scipy.special import expit

from vattn.errors import InvalidArgumentError, NumericalDomainError

DTYPE = np.float64


def as_tensor(x):
    arr = np.asarray(x, dtype=DTYPE)
    if arr.size == 0:
        raise InvalidArgumentError("tensor must have at least one element")
    return arr


def _check_shape(shape):
    shape = (shape,) if isinstance(shape, (int, np.integer)) else tuple(shape)
    if len(shape) == 0 or any(int(s) < 1 for s in shape):
        raise InvalidArgumentError(f"shape must be non-empty with all dims >= 1, got {shape}")
    return tuple(int(s) for s in shape)


class Rng:
    """Seeded generator backed by the Philox4x64 counter-based bit generator.

    Philox output depends only on (key, counter), so a seed reproduces the same
    stream on every platform numpy supports.
    """

    def __init__(self, seed=0):
        self.seed = int(seed)
        self._gen = np.random.Generator(np.random.Philox(self.seed))

    @classmethod
    def derived(cls, seed, *stream):
        """Independent stream keyed by ``(seed, *stream)`` (parameter init, per-sample data)."""
        rng = cls(seed)
        ss = np.random.SeedSequence([int(seed)] + [int(v) for v in stream])
        rng._gen = np.random.Generator(np.random.Philox(ss))
        return rng

    def normal(self, shape):
        return self._gen.standard_normal(_check_shape(shape))

    def uniform(self, shape):
        return self._gen.random(_check_shape(shape))

    def integers(self, high, size):
        return self._gen.integers(0, high, size=size)

    def get_state(self):
        st = self._gen.bit_generator.state
        inner = st["state"]
        return {
            "bit_generator": st["bit_generator"],
            "counter": [int(v) for v in inner["counter"]],
            "key": [int(v) for v in inner["key"]],
            "buffer": [int(v) for v in st["buffer"]],
            "buffer_pos": int(st["buffer_pos"]),
            "has_uint32": int(st["has_uint32"]),
            "uinteger": int(st["uinteger"]),
            "seed": self.seed,
        }

    def set_state(self, state):
        self.seed = int(state.get("seed", self.seed))
        self._gen.bit_generator.state = {
            "bit_generator": state["bit_generator"],
            "state": {
                "counter": np.array(state["counter"], dtype=np.uint64),
                "key": np.array(state["key"], dtype=np.uint64),
            },
            "buffer": np.array(state["buffer"], dtype=np.uint64),
            "buffer_pos": state["buffer_pos"],
            "has_uint32": state["has_uint32"],
            "uinteger": state["uinteger"],
        }


def gaussian_sample(rng, shape):
    """I.i.d. standard-normal tensor of ``shape``; advances ``rng``."""
    return rng.normal(shape)


# --- primitives -------------------------------------------------------------


def _same_shape(a, b, op):
    if a.shape != b.shape:
        raise InvalidArgumentError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _same_shape(a, b, "add")
    return a + b


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _same_shape(a, b, "sub")
    return a - b


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _same_shape(a, b, "mul")
    return a * b


def matvec(m, v):
    m, v = as_tensor(m), as_tensor(v)
    if m.ndim != 2 or v.ndim != 1 or m.shape[1] != v.shape[0]:
        raise InvalidArgumentError(f"matvec: incompatible shapes {m.shape} and {v.shape}")
    return m @ v


def tsum(x):
    return float(np.sum(as_tensor(x)))


def tmean(x):
    return float(np.mean(as_tensor(x)))


def texp(x):
    return np.exp(as_tensor(x))


def tlog(x):
    x = as_tensor(x)
    if np.any(x <= 0):
        raise InvalidArgumentError("log of non-positive value")
    return np.log(x)


def sigmoid(x):
    return expit(np.asarray(x, dtype=DTYPE))


def softplus(x):
    return np.logaddexp(0.0, x)


def global_avg_pool(x):
    """Mean over the trailing two (spatial) axes of a ``[C, H, W]`` tensor."""
    x = as_tensor(x)
    if x.ndim != 3:
        raise InvalidArgumentError(f"global_avg_pool expects [C,H,W], got {x.shape}")
    return x.mean(axis=(1, 2))


def channelwise_product(x, y):
    """``out[c, h, w] = x[c, h, w] * y[c]``."""
    x, y = as_tensor(x), as_tensor(y)
    if x.ndim != 3 or y.ndim != 1 or x.shape[0] != y.shape[0]:
        raise InvalidArgumentError(
            f"channelwise_product: x must be [C,H,W] and y [C], got {x.shape}, {y.shape}"
        )
    return x * y[:, None, None]


# --- 3x3 "same" convolution on NHWC batches ----------------------------------
# weights are stored as (9 * C_in, C_out) with row index c * 9 + i * 3 + j


def _im2col(x):
    """``[N, H, W, C]`` -> ``[N*H*W, 9*C]`` with column index ``(i*3 + j) * C + c``."""
    n, h, wd, c = x.shape
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)))
    cols = np.empty((n, h, wd, 9, c))
    for i in range(3):
        for j in range(3):
            cols[:, :, :, i * 3 + j, :] = xp[:, i : i + h, j : j + wd, :]
    return cols.reshape(n * h * wd, 9 * c)


def _tap_major(w, c):
    # rows c*9 + t  ->  rows t*C + c, matching _im2col's column order
    return w.reshape(c, 9, -1).transpose(1, 0, 2).reshape(9 * c, -1)


def conv3x3_forward(x, w, b):
    """Returns (out, cols); ``cols`` is cached for the backward pass."""
    n, h, wd, c = x.shape
    cols = _im2col(x)
    out = cols @ _tap_major(w, c) + b
    return out.reshape(n, h, wd, -1), cols


def conv3x3_backward(dout, cols, w, x_shape, need_dx=True):
    n, h, wd, c = x_shape
    g = dout.reshape(n * h * wd, -1)
    c_out = g.shape[1]
    dw = (cols.T @ g).reshape(9, c, c_out).transpose(1, 0, 2).reshape(9 * c, c_out)
    db = g.sum(axis=0)
    if not need_dx:
        return None, dw, db
    # dx is a "same" correlation of dout with the spatially flipped kernel
    w_flip = w.reshape(c, 3, 3, c_out)[:, ::-1, ::-1, :].transpose(3, 1, 2, 0)
    dx, _ = conv3x3_forward(dout, w_flip.reshape(c_out * 9, c), 0.0)
    return dx, dw, db


# --- gradient checking ------------------------------------------------------


def grad_errors(f, params, eps=1e-5):
    """Per-parameter relative error between analytic and central-difference gradients.

    ``f(params)`` must return ``(value, grads)`` where ``grads`` maps each name in
    ``params`` to an array of the parameter's shape. Parameters are perturbed in
    place and restored. The error for one parameter tensor is
    ``||analytic - numeric|| / max(1e-8, ||numeric||)``.
    """
    value, grads = f(params)
    if not np.isfinite(value):
        raise NumericalDomainError("function is non-finite at the base point")
    errors = {}
    for name, p in params.items():
        analytic = np.asarray(grads[name], dtype=DTYPE)
        if analytic.shape != p.shape:
            raise InvalidArgumentError(
                f"gradient for {name!r} has shape {analytic.shape}, parameter {p.shape}"
            )
        numeric = np.zeros_like(p)
        flat = p.reshape(-1)
        nflat = numeric.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            fp = f(params)[0]
            flat[i] = orig - eps
            fm = f(params)[0]
            flat[i] = orig
            if not (math.isfinite(fp) and math.isfinite(fm)):
                raise NumericalDomainError(f"non-finite value perturbing {name}[{i}]")
            nflat[i] = (fp - fm) / (2.0 * eps)
        errors[name] = float(
            np.linalg.norm(analytic - numeric) / max(1e-8, np.linalg.norm(numeric))
        )
    return errors


def grad_check(f, params, eps=1e-5):
    """Max relative gradient error over all parameters (see :func:`grad_errors`)."""
    return max(grad_errors(f, params, eps).values())
