"""Dense numeric kernels used by every other module.

Everything runs in 64-bit floats: the gradient checks in the test suite
compare analytic gradients against central finite differences at 1e-4
relative tolerance, which 32-bit arithmetic cannot support reliably.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

EPS = 1e-12

Activation = str
_ACTIVATIONS = ("identity", "relu", "sigmoid")


def _as_finite_array(x, name: str) -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    if arr.size and not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")
    return arr


def softmax(logits) -> np.ndarray:
    """Row-wise stabilized softmax. Accepts a vector or a batch matrix."""
    z = _as_finite_array(logits, "logits")
    if z.size == 0:
        raise ValueError("softmax of an empty vector")
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(logits) -> np.ndarray:
    z = _as_finite_array(logits, "logits")
    if z.size == 0:
        raise ValueError("log_softmax of an empty vector")
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def cross_entropy(target_index: int, logits) -> float:
    """Negative log-probability of ``target_index`` under softmax(logits)."""
    z = _as_finite_array(logits, "logits")
    if z.ndim != 1:
        raise ValueError("cross_entropy expects a single logit row")
    if not 0 <= int(target_index) < z.shape[0]:
        raise IndexError(f"target index {target_index} out of range for {z.shape[0]} classes")
    return float(-log_softmax(z)[int(target_index)])


def cross_entropy_mean(targets, logits) -> float:
    """Mean cross-entropy of integer ``targets`` against logit rows."""
    z = _as_finite_array(logits, "logits")
    t = np.asarray(targets, dtype=np.int64)
    if z.ndim != 2 or t.shape != (z.shape[0],):
        raise ValueError("logits must be (n, k) with one target per row")
    if t.size and (t.min() < 0 or t.max() >= z.shape[1]):
        raise IndexError("target index out of range")
    ls = log_softmax(z)
    return float(-ls[np.arange(t.shape[0]), t].mean())


def _check_divergence_pair(p, q) -> tuple[np.ndarray, np.ndarray]:
    pa = _as_finite_array(p, "p")
    qa = _as_finite_array(q, "q")
    if pa.ndim != 1 or qa.ndim != 1:
        raise ValueError("divergences expect probability vectors")
    if pa.shape != qa.shape:
        raise ValueError(f"length mismatch: {pa.shape[0]} vs {qa.shape[0]}")
    for name, v in (("p", pa), ("q", qa)):
        if np.any(v < 0):
            raise ValueError(f"{name} has negative entries")
        if abs(v.sum() - 1.0) > 1e-9:
            raise ValueError(f"{name} does not sum to 1 (got {v.sum()!r})")
    return pa, qa


def kl_divergence(p, q) -> float:
    """KL(p || q) with the divisor smoothed by EPS; clipped at exactly 0."""
    pa, qa = _check_divergence_pair(p, q)
    terms = np.where(pa > 0, pa * (np.log(np.maximum(pa, EPS)) - np.log(qa + EPS)), 0.0)
    return max(0.0, float(terms.sum()))


def js_divergence(p, q) -> float:
    """Jensen-Shannon divergence; symmetric and bounded by ln 2."""
    pa, qa = _check_divergence_pair(p, q)
    m = 0.5 * (pa + qa)
    return 0.5 * kl_divergence(pa, m) + 0.5 * kl_divergence(qa, m)


def softmax_vjp(probs: np.ndarray, upstream: np.ndarray) -> np.ndarray:
    """Backprop ``upstream`` (gradient w.r.t. softmax output) to the logits."""
    inner = (upstream * probs).sum(axis=-1, keepdims=True)
    return probs * (upstream - inner)


# --- differentiable affine stacks -----------------------------------------


def _act_forward(tag: Activation, pre: np.ndarray) -> np.ndarray:
    if tag == "identity":
        return pre
    if tag == "relu":
        return np.maximum(pre, 0.0)
    if tag == "sigmoid":
        return 1.0 / (1.0 + np.exp(-pre))
    raise ValueError(f"unknown activation {tag!r}")


def _act_grad(tag: Activation, pre: np.ndarray, out: np.ndarray) -> np.ndarray:
    if tag == "identity":
        return np.ones_like(pre)
    if tag == "relu":
        return (pre > 0).astype(np.float64)
    if tag == "sigmoid":
        return out * (1.0 - out)
    raise ValueError(f"unknown activation {tag!r}")


class AffineLayer:
    """One affine map plus an elementwise nonlinearity tag."""

    def __init__(self, weight: np.ndarray, bias: np.ndarray, activation: Activation = "identity"):
        weight = _as_finite_array(weight, "weight")
        bias = _as_finite_array(bias, "bias")
        if weight.ndim != 2 or bias.ndim != 1 or bias.shape[0] != weight.shape[1]:
            raise ValueError("weight must be (fan_in, fan_out) and bias (fan_out,)")
        if activation not in _ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}")
        self.weight = np.ascontiguousarray(weight)
        self.bias = np.ascontiguousarray(bias)
        self.activation = activation
        self.grad_weight: np.ndarray | None = None
        self.grad_bias: np.ndarray | None = None
        self._cached_input: np.ndarray | None = None
        self._cached_pre: np.ndarray | None = None
        self._cached_out: np.ndarray | None = None

    @property
    def fan_in(self) -> int:
        return self.weight.shape[0]

    @property
    def fan_out(self) -> int:
        return self.weight.shape[1]


class DifferentiableStack:
    """An ordered chain of affine layers with reverse-mode gradients.

    ``forward(x, remember=True)`` caches activations for a later
    ``backward``; the plain call path is pure and safe to share across
    threads once the stack is frozen.
    """

    def __init__(self, layers: Sequence[AffineLayer]):
        layers = list(layers)
        if not layers:
            raise ValueError("a stack needs at least one layer")
        for a, b in zip(layers, layers[1:]):
            if a.fan_out != b.fan_in:
                raise ValueError(f"layer fan-out {a.fan_out} != next fan-in {b.fan_in}")
        self.layers = layers
        self.frozen = False

    @property
    def input_dim(self) -> int:
        return self.layers[0].fan_in

    @property
    def output_dim(self) -> int:
        return self.layers[-1].fan_out

    def forward(self, x, remember: bool = False) -> np.ndarray:
        h = _as_finite_array(x, "input")
        if h.ndim != 2:
            raise ValueError("stack input must be a (batch, features) matrix")
        if h.shape[1] != self.input_dim:
            raise ValueError(f"input has {h.shape[1]} columns, stack expects {self.input_dim}")
        for layer in self.layers:
            pre = h @ layer.weight + layer.bias
            out = _act_forward(layer.activation, pre)
            if remember:
                layer._cached_input, layer._cached_pre, layer._cached_out = h, pre, out
            h = out
        return h

    def __call__(self, x) -> np.ndarray:
        return self.forward(x, remember=False)

    def backward(self, upstream) -> np.ndarray:
        """Accumulate parameter gradients; returns the input gradient."""
        g = np.asarray(upstream, dtype=np.float64)
        last = self.layers[-1]
        if last._cached_out is None:
            raise RuntimeError("backward called without a remembered forward pass")
        if g.shape != last._cached_out.shape:
            raise ValueError(f"upstream gradient shape {g.shape} != output shape {last._cached_out.shape}")
        for layer in reversed(self.layers):
            if layer._cached_input is None:
                raise RuntimeError("backward called without a remembered forward pass")
            dpre = g * _act_grad(layer.activation, layer._cached_pre, layer._cached_out)
            gw = layer._cached_input.T @ dpre
            gb = dpre.sum(axis=0)
            layer.grad_weight = gw if layer.grad_weight is None else layer.grad_weight + gw
            layer.grad_bias = gb if layer.grad_bias is None else layer.grad_bias + gb
            g = dpre @ layer.weight.T
        return g

    def zero_gradients(self) -> None:
        for layer in self.layers:
            layer.grad_weight = np.zeros_like(layer.weight)
            layer.grad_bias = np.zeros_like(layer.bias)

    def clear_cache(self) -> None:
        for layer in self.layers:
            layer._cached_input = layer._cached_pre = layer._cached_out = None

    def parameters(self) -> list[np.ndarray]:
        out: list[np.ndarray] = []
        for layer in self.layers:
            out.extend((layer.weight, layer.bias))
        return out

    def gradients(self) -> list[np.ndarray | None]:
        out: list[np.ndarray | None] = []
        for layer in self.layers:
            out.extend((layer.grad_weight, layer.grad_bias))
        return out

    def set_parameters(self, values: Sequence[np.ndarray]) -> None:
        params = self.parameters()
        if len(values) != len(params):
            raise ValueError("parameter count mismatch")
        for dst, src in zip(params, values):
            src = _as_finite_array(src, "parameter")
            if src.shape != dst.shape:
                raise ValueError(f"parameter shape {src.shape} != {dst.shape}")
            dst[...] = src

    def copy(self) -> "DifferentiableStack":
        dup = DifferentiableStack(
            [AffineLayer(l.weight.copy(), l.bias.copy(), l.activation) for l in self.layers]
        )
        dup.frozen = self.frozen
        return dup


def glorot_stack(sizes: Sequence[int], activations: Sequence[Activation], rng: np.random.Generator) -> DifferentiableStack:
    """Uniform [-a, a] init with a = sqrt(6 / (fan_in + fan_out)), seeded."""
    if len(sizes) < 2 or len(activations) != len(sizes) - 1:
        raise ValueError("need n+1 sizes for n layers")
    layers = []
    for fan_in, fan_out, act in zip(sizes, sizes[1:], activations):
        a = np.sqrt(6.0 / (fan_in + fan_out))
        w = rng.uniform(-a, a, size=(fan_in, fan_out))
        layers.append(AffineLayer(w, np.zeros(fan_out), act))
    return DifferentiableStack(layers)


class SgdOptimizer:
    """Plain SGD with optional momentum over one or more stacks."""

    def __init__(self, stacks: Sequence[DifferentiableStack], learning_rate: float, momentum: float = 0.0):
        if learning_rate < 0:
            raise ValueError("learning rate must be non-negative")
        if not 0.0 <= momentum < 1.0:
            raise ValueError("momentum must lie in [0, 1)")
        self.stacks = list(stacks)
        self.learning_rate = float(learning_rate)
        self.momentum = float(momentum)
        self.velocities = [np.zeros_like(p) for s in self.stacks for p in s.parameters()]
        self.step_count = 0

    def step(self) -> None:
        params: list[np.ndarray] = []
        grads: list[np.ndarray] = []
        for stack in self.stacks:
            if stack.frozen:
                raise RuntimeError("optimizer step on a frozen stack")
            for p, g in zip(stack.parameters(), stack.gradients()):
                if g is None:
                    raise RuntimeError("optimizer step with missing gradients")
                params.append(p)
                grads.append(g)
        for p, g, v in zip(params, grads, self.velocities):
            if self.momentum:
                v *= self.momentum
                v += g
                p -= self.learning_rate * v
            else:
                p -= self.learning_rate * g
        self.step_count += 1


# --- finite-difference oracle ----------------------------------------------


def finite_difference_gradients(
    loss_fn: Callable[[], float], arrays: Sequence[np.ndarray], h: float = 1e-5
) -> list[np.ndarray]:
    """Central-difference gradient of ``loss_fn`` w.r.t. each array entry.

    Arrays are perturbed in place and restored; ``loss_fn`` must recompute
    the loss from their current values.
    """
    grads = []
    for arr in arrays:
        g = np.zeros_like(arr)
        flat = arr.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.shape[0]):
            orig = flat[i]
            flat[i] = orig + h
            f_plus = loss_fn()
            flat[i] = orig - h
            f_minus = loss_fn()
            flat[i] = orig
            gflat[i] = (f_plus - f_minus) / (2.0 * h)
        grads.append(g)
    return grads


def max_relative_error(analytic: Sequence[np.ndarray], numeric: Sequence[np.ndarray]) -> float:
    """Max |a - n| / max(1, |a|, |n|) over all gradient entries.

    The scale floor at 1 keeps finite-difference roundoff noise from
    dominating entries whose true gradient is near zero.
    """
    worst = 0.0
    for a, n in zip(analytic, numeric):
        denom = np.maximum(1.0, np.maximum(np.abs(a), np.abs(n)))
        worst = max(worst, float((np.abs(a - n) / denom).max()))
    return worst
