"""Shared numeric utilities: activations, initializers, Adam, gradient oracle.

Everything here is deterministic: random draws always go through a seeded
:class:`numpy.random.Generator`, and named substreams derived from one master
seed keep independent consumers (weight init, batch shuffling, dropout, data
synthesis) reproducible regardless of call order.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "leaky_relu",
    "softmax",
    "eta_normalize",
    "make_rng",
    "derive_rng",
    "init",
    "AdamState",
    "adam_step",
    "Adam",
    "finite_diff_grad",
]


def leaky_relu(x, slope: float = 0.01):
    """LeakyReLU: ``x`` when nonnegative, ``slope * x`` otherwise."""
    if not 0.0 < slope < 1.0:
        raise ValueError(f"slope must be in (0, 1), got {slope}")
    x = np.asarray(x, dtype=np.float64)
    out = np.where(x >= 0.0, x, slope * x)
    return float(out) if out.ndim == 0 else out


def softmax(v) -> np.ndarray:
    """Stable softmax of a 1-D vector (max subtraction before exp)."""
    v = np.asarray(v, dtype=np.float64)
    if v.size == 0:
        raise ValueError("empty distribution")
    e = np.exp(v - np.max(v))
    return e / np.sum(e)


def eta_normalize(series) -> np.ndarray:
    """Center and scale a series to zero mean and unit population std.

    Degenerate series (population std below 1e-12, including singletons and
    constants) map to all zeros so downstream features stay bounded.
    """
    y = np.asarray(series, dtype=np.float64)
    mean = np.mean(y)
    std = np.std(y)  # population std
    if std < 1e-12:
        return np.zeros_like(y)
    return (y - mean) / std


# ---------------------------------------------------------------------------
# Random streams.
# ---------------------------------------------------------------------------


def make_rng(seed: int) -> np.random.Generator:
    """PCG64 generator; identical seed gives a bit-identical draw sequence."""
    return np.random.Generator(np.random.PCG64(seed))


def derive_rng(seed: int, key: str) -> np.random.Generator:
    """A named substream of the master seed (stable across runs and order)."""
    return np.random.Generator(np.random.PCG64(
        np.random.SeedSequence([seed & 0xFFFFFFFFFFFFFFFF, zlib.crc32(key.encode("utf-8"))])))


# ---------------------------------------------------------------------------
# Initializers.
# ---------------------------------------------------------------------------


def _fans(shape) -> tuple[int, int]:
    # 2-D weights map n_in (columns) to n_out (rows); vectors count as both.
    if len(shape) >= 2:
        return shape[-1], shape[-2]
    return shape[0], shape[0]


def init(mode: str, shape, rng: np.random.Generator | None = None,
         sigma: float = 0.01) -> np.ndarray:
    """Draw a weight array.

    Modes: ``xavier_uniform`` U(+-sqrt(6/(n_in+n_out))), ``he_normal``
    N(0, 2/n_in), ``gaussian`` N(0, sigma^2), ``zeros``.
    """
    shape = tuple(int(s) for s in shape)
    if not shape or any(s <= 0 for s in shape):
        raise ValueError(f"shape must be non-empty and positive, got {shape}")
    if mode == "zeros":
        return np.zeros(shape, dtype=np.float64)
    if rng is None:
        raise ValueError(f"mode {mode!r} needs an rng")
    if mode == "xavier_uniform":
        n_in, n_out = _fans(shape)
        bound = np.sqrt(6.0 / (n_in + n_out))
        return rng.uniform(-bound, bound, size=shape)
    if mode == "he_normal":
        n_in, _ = _fans(shape)
        return rng.normal(0.0, np.sqrt(2.0 / n_in), size=shape)
    if mode == "gaussian":
        return rng.normal(0.0, sigma, size=shape)
    raise ValueError(f"unknown init mode {mode!r}")


# ---------------------------------------------------------------------------
# Adam with optional L2 weight decay folded into the gradient.
# ---------------------------------------------------------------------------


@dataclass
class AdamState:
    """First/second moment accumulators plus the shared step counter."""

    m: dict[int, np.ndarray] = field(default_factory=dict)
    v: dict[int, np.ndarray] = field(default_factory=dict)
    step: int = 0


def adam_step(params: list[np.ndarray], grads: list[np.ndarray], state: AdamState,
              lr: float, beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8, l2: float = 0.0) -> list[np.ndarray]:
    """One bias-corrected Adam update; returns the new parameter arrays.

    The L2 coefficient is added to the raw gradient before the moment
    updates.  ``state`` is mutated in place (single writer).
    """
    if len(params) != len(grads):
        raise ValueError("params and grads differ in length")
    state.step += 1
    t = state.step
    out = []
    for i, (p, g) in enumerate(zip(params, grads)):
        if p.shape != g.shape:
            raise ValueError(f"shape mismatch at parameter {i}: {p.shape} vs {g.shape}")
        if l2:
            g = g + l2 * p
        m = state.m.get(i)
        v = state.v.get(i)
        if m is None:
            m = np.zeros_like(p)
            v = np.zeros_like(p)
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * (g * g)
        state.m[i] = m
        state.v[i] = v
        m_hat = m / (1.0 - beta1 ** t)
        v_hat = v / (1.0 - beta2 ** t)
        out.append(p - lr * m_hat / (np.sqrt(v_hat) + eps))
    return out


class Adam:
    """Adam bound to a fixed, ordered set of parameter tensors.

    L2 decay is skipped for parameter names matching ``l2_skip`` (biases).
    """

    def __init__(self, params: dict, lr: float = 0.001, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8, l2: float = 0.0,
                 l2_skip=lambda name: name.endswith((".b", ".bias"))):
        self.params = params  # name -> autodiff.Tensor
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.l2 = l2
        self.l2_skip = l2_skip
        self.state = AdamState()
        self._order = list(params.keys())

    def step(self) -> None:
        arrays = [self.params[n].data for n in self._order]
        grads = []
        for name in self._order:
            tensor = self.params[name]
            g = tensor.grad if tensor.grad is not None else np.zeros_like(tensor.data)
            if self.l2 and not self.l2_skip(name):
                g = g + self.l2 * tensor.data
            grads.append(g)
        updated = adam_step(arrays, grads, self.state, self.lr,
                            self.beta1, self.beta2, self.eps, l2=0.0)
        for name, new in zip(self._order, updated):
            self.params[name].data = new

    def zero_grad(self) -> None:
        for name in self._order:
            self.params[name].grad = None


def finite_diff_grad(f, x: np.ndarray, eps: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of scalar ``f`` at ``x``, per coordinate.

    This is the independent oracle used to validate every analytic gradient
    in the package; it never calls into the autodiff engine.
    """
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = grad.ravel()
    xf = x.ravel()
    for i in range(x.size):
        old = xf[i]
        xf[i] = old + eps
        hi = f(x)
        xf[i] = old - eps
        lo = f(x)
        xf[i] = old
        flat[i] = (hi - lo) / (2.0 * eps)
    return grad
