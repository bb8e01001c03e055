"""Minimal reverse-mode automatic differentiation for the neural solver.

A tape of `Tensor` nodes built by the op functions below, with exactly the
primitives the solver pipeline needs: dense layers, ELU, a frozen affine
map (the fitted surrogate), the elementwise Fermi-Dirac closure, log10,
scale/shift, gather, and mean-square reductions.  Ops accept plain numpy
arrays too, in which case they just compute values - the loss functions
can therefore be evaluated outside any tape.

Also hosts the generator network (scalar gate voltage in, density profile
out), the Adam optimizer and the reduce-on-plateau learning-rate schedule.
"""

from __future__ import annotations

import math

import numpy as np

from . import fermi

__all__ = [
    "AdamState",
    "GeneratorNet",
    "PlateauScheduler",
    "Tensor",
    "adam_step",
    "add_weighted",
    "backward",
    "conv2d_same",
    "dense",
    "elu",
    "fermi_density",
    "fixed_affine",
    "gather",
    "log10",
    "mse",
    "scale_shift",
    "scheduler_step",
    "shift_divide",
]

_LN10 = math.log(10.0)


class Tensor:
    """Value node on the tape; ``grad`` is filled by ``backward``."""

    __slots__ = ("value", "grad", "_parents", "_vjp")

    def __init__(self, value, parents=(), vjp=None):
        self.value = np.asarray(value, dtype=float)
        self.grad = None
        self._parents = parents
        self._vjp = vjp

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):  # pragma: no cover - debugging aid
        return f"Tensor(shape={self.value.shape}, leaf={self._vjp is None})"


def _value(x):
    return x.value if isinstance(x, Tensor) else np.asarray(x, dtype=float)


def backward(loss: Tensor) -> None:
    """Reverse traversal from a scalar loss, accumulating ``grad``.

    Raises ValueError if the root is not scalar (the contract of every
    training objective here).
    """
    if loss.value.ndim != 0:
        raise ValueError(f"backward requires a scalar loss, got shape {loss.value.shape}")
    order = []
    seen = set()
    stack = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            stack.append((parent, False))

    loss.grad = np.asarray(1.0)
    for node in reversed(order):
        if node._vjp is None or node.grad is None:
            continue
        for parent, g in zip(node._parents, node._vjp(node.grad)):
            parent.grad = g if parent.grad is None else parent.grad + g


# ---------------------------------------------------------------------------
# primitives

def dense(x, w: Tensor, b: Tensor):
    """y = W @ x + b with parameter tensors W (out, in) and b (out,)."""
    xv = _value(x)
    out = w.value @ xv + b.value
    if not isinstance(x, Tensor):
        x_const = xv

        def vjp_const(g):
            return np.outer(g, x_const), g

        return Tensor(out, (w, b), vjp_const)

    def vjp(g):
        return w.value.T @ g, np.outer(g, x.value), g

    return Tensor(out, (x, w, b), vjp)


def elu(x):
    """Exponential linear unit, alpha = 1; output is bounded below by -1."""
    xv = _value(x)
    pos = xv > 0.0
    out = np.where(pos, xv, np.expm1(np.minimum(xv, 0.0)))
    if not isinstance(x, Tensor):
        return out
    deriv = np.where(pos, 1.0, out + 1.0)
    return Tensor(out, (x,), lambda g: (g * deriv,))


def fixed_affine(x, a_matrix: np.ndarray, c: np.ndarray, a_transpose: np.ndarray | None = None):
    """y = A @ x + c with a frozen matrix; the backward rule is A^T @ g.

    ``a_transpose`` may supply a contiguous copy of A^T to speed up the
    backward matvec; it must equal A.T.
    """
    xv = _value(x)
    out = a_matrix @ xv + c
    if not isinstance(x, Tensor):
        return out
    at = a_transpose if a_transpose is not None else a_matrix.T
    return Tensor(out, (x,), lambda g: (at @ g,))


def scale_shift(x, scale: float, shift: float):
    """y = scale * x + shift (elementwise, scalar constants)."""
    out = _value(x) * scale + shift
    if not isinstance(x, Tensor):
        return out
    return Tensor(out, (x,), lambda g: (g * scale,))


def shift_divide(x, offset: float, denom: float):
    """y = (x + offset) / denom, rounding exactly like the eager form.

    Kept distinct from ``scale_shift`` so the density-consistency loss is
    bitwise zero when both sides come from the shared closure.
    """
    out = (_value(x) + offset) / denom
    if not isinstance(x, Tensor):
        return out
    inv = 1.0 / denom
    return Tensor(out, (x,), lambda g: (g * inv,))


def log10(x):
    xv = _value(x)
    out = np.log10(xv)
    if not isinstance(x, Tensor):
        return out
    inv = 1.0 / (xv * _LN10)
    return Tensor(out, (x,), lambda g: (g * inv,))


def gather(x, indices: np.ndarray):
    """y = x[indices]."""
    xv = _value(x)
    out = xv[indices]
    if not isinstance(x, Tensor):
        return out

    def vjp(g):
        gx = np.zeros_like(xv)
        np.add.at(gx, indices, g)
        return (gx,)

    return Tensor(out, (x,), vjp)


def fermi_density(phi, params: fermi.SemiconductorParams, silicon_mask: np.ndarray):
    """Elementwise electron-density closure n(phi), differentiable.

    Uses the module-level `fermi.electron_density` / `_deriv` pair so the
    backward rule always matches the closure in use.
    """
    phiv = _value(phi)
    out = fermi.electron_density(phiv, params, silicon_mask)
    if not isinstance(phi, Tensor):
        return out

    def vjp(g):
        return (g * fermi.electron_density_deriv(phiv, params, silicon_mask),)

    return Tensor(out, (phi,), vjp)


def mse(a, b):
    """Mean of (a - b)^2; ``b`` may be a tensor, an array, or a scalar."""
    av = _value(a)
    bv = _value(b)
    diff = av - bv
    out = np.mean(diff * diff)
    a_t = isinstance(a, Tensor)
    b_t = isinstance(b, Tensor)
    if not (a_t or b_t):
        return float(out)
    scale = 2.0 / diff.size

    def vjp(g):
        gd = (g * scale) * diff
        if a_t and b_t:
            return gd, -gd
        return (gd,) if a_t else (-gd,)

    parents = tuple(t for t, flag in ((a, a_t), (b, b_t)) if flag)
    return Tensor(out, parents, vjp)


def add_weighted(a, wa: float, b, wb: float):
    """wa * a + wb * b for scalar loss terms."""
    out = _value(a) * wa + _value(b) * wb
    a_t = isinstance(a, Tensor)
    b_t = isinstance(b, Tensor)
    if not (a_t or b_t):
        return float(out)

    def vjp(g):
        gs = []
        if a_t:
            gs.append(g * wa)
        if b_t:
            gs.append(g * wb)
        return tuple(gs)

    parents = tuple(t for t, flag in ((a, a_t), (b, b_t)) if flag)
    return Tensor(out, parents, vjp)


def conv2d_same(x, w: Tensor, b: Tensor, kernel: int = 3):
    """Same-size 2D convolution refinement: x (cin, H, W) -> (cout, H, W).

    Zero padding, stride 1.  Implemented by unfolding the padded input
    into columns, so forward and backward are single matmuls.
    """
    xv = _value(x)
    cin, h, wdt = xv.shape
    cout = w.value.shape[0]
    k = kernel
    pad = k // 2
    xp = np.zeros((cin, h + 2 * pad, wdt + 2 * pad))
    xp[:, pad:-pad, pad:-pad] = xv
    cols = np.empty((h * wdt, cin * k * k))
    idx = 0
    for c in range(cin):
        for di in range(k):
            for dj in range(k):
                cols[:, idx] = xp[c, di:di + h, dj:dj + wdt].reshape(-1)
                idx += 1
    w_mat = w.value.reshape(cout, cin * k * k)
    out = (cols @ w_mat.T + b.value).T.reshape(cout, h, wdt)

    if not isinstance(x, Tensor):
        x = None

    def vjp(g):
        g2 = g.reshape(cout, h * wdt).T               # (H*W, cout)
        gw = (g2.T @ cols).reshape(w.value.shape)
        gb = g2.sum(axis=0)
        grads = []
        if x is not None:
            gcols = g2 @ w_mat                        # (H*W, cin*k*k)
            gxp = np.zeros_like(xp)
            idx2 = 0
            for c in range(cin):
                for di in range(k):
                    for dj in range(k):
                        gxp[c, di:di + h, dj:dj + wdt] += gcols[:, idx2].reshape(h, wdt)
                        idx2 += 1
            grads.append(gxp[:, pad:-pad, pad:-pad])
        grads.extend([gw, gb])
        return tuple(grads)

    parents = (w, b) if x is None else (x, w, b)
    return Tensor(out, parents, vjp)


def reshape(x, shape):
    xv = _value(x)
    out = xv.reshape(shape)
    if not isinstance(x, Tensor):
        return out
    return Tensor(out, (x,), lambda g: (g.reshape(xv.shape),))


# ---------------------------------------------------------------------------
# generator network

class GeneratorNet:
    """Maps a scaled gate voltage to a raw (post-ELU) density profile.

    arch "dense": dense 1->64 ELU, 64->256 ELU, 256->n_out ELU.
    arch "conv": dense 1->(c1*H*W) ELU, reshape, two same-size 3x3
        convolution refinements (c1->c2 ELU, c2->1 ELU), flatten.
    Weights are uniform in +-1/sqrt(fan_in), biases zero, fully determined
    by the seed (default 42).
    """

    def __init__(self, arch: str = "dense", n_out: int = 2193, hidden=(64, 256),
                 grid_shape=(129, 17), channels=(4, 8), seed: int = 42):
        if arch not in ("dense", "conv"):
            raise ValueError(f"unknown generator architecture {arch!r}")
        if arch == "conv" and grid_shape[0] * grid_shape[1] != n_out:
            raise ValueError("conv generator needs grid_shape consistent with n_out")
        self.arch = arch
        self.n_out = n_out
        self.hidden = tuple(hidden)
        self.grid_shape = tuple(grid_shape)
        self.channels = tuple(channels)
        self.seed = seed
        self.params: list[Tensor] = []
        self.reinit(seed)

    def _shapes(self):
        if self.arch == "dense":
            sizes = (1, *self.hidden, self.n_out)
            return [((o, i), (o,)) for i, o in zip(sizes[:-1], sizes[1:])]
        c1, c2 = self.channels
        h, w = self.grid_shape
        return [
            ((c1 * h * w, 1), (c1 * h * w,)),
            ((c2, c1, 3, 3), (c2,)),
            ((1, c2, 3, 3), (1,)),
        ]

    def reinit(self, seed: int) -> list[Tensor]:
        rng = np.random.default_rng(seed)
        self.seed = seed
        self.params = []
        for w_shape, b_shape in self._shapes():
            fan_in = int(np.prod(w_shape[1:]))
            bound = 1.0 / math.sqrt(fan_in)
            self.params.append(Tensor(rng.uniform(-bound, bound, size=w_shape)))
            self.params.append(Tensor(np.zeros(b_shape)))
        return self.params

    def forward(self, v_scaled: float) -> Tensor:
        """Deterministic forward pass; output length n_out, post-ELU."""
        x = np.array([float(v_scaled)])
        if self.arch == "dense":
            t = x
            for i in range(0, len(self.params), 2):
                t = elu(dense(t, self.params[i], self.params[i + 1]))
            return t
        w0, b0, w1, b1, w2, b2 = self.params
        c1, _ = self.channels
        h, w = self.grid_shape
        t = elu(dense(x, w0, b0))
        t = reshape(t, (c1, h, w))
        t = elu(conv2d_same(t, w1, b1))
        t = elu(conv2d_same(t, w2, b2))
        return reshape(t, (self.n_out,))

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def arch_string(self) -> str:
        if self.arch == "dense":
            return "dense:" + "-".join(map(str, (1, *self.hidden, self.n_out)))
        return f"conv:{self.channels[0]}x{self.grid_shape[0]}x{self.grid_shape[1]}-{self.channels[1]}"


def forward(net: GeneratorNet, v_scaled: float) -> Tensor:
    """Module-level alias of ``GeneratorNet.forward``."""
    return net.forward(v_scaled)


# ---------------------------------------------------------------------------
# optimizer and schedule

class AdamState:
    """Adam moments plus the current learning rate."""

    def __init__(self, params, lr: float = 1e-3, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.step_count = 0
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = [np.zeros_like(p.value) for p in params]
        self.v = [np.zeros_like(p.value) for p in params]


try:  # single fused pass; the update is the training loop's main memory cost
    from numba import njit

    @njit(cache=True)
    def _adam_kernel(p, g, m, v, b1, b2, eps, step_scale, inv_c2):
        for i in range(p.size):
            gi = g[i]
            mi = b1 * m[i] + (1.0 - b1) * gi
            vi = b2 * v[i] + (1.0 - b2) * gi * gi
            m[i] = mi
            v[i] = vi
            p[i] -= step_scale * mi / (np.sqrt(vi * inv_c2) + eps)

except ImportError:  # pragma: no cover - numba is an optional accelerator
    def _adam_kernel(p, g, m, v, b1, b2, eps, step_scale, inv_c2):
        np.multiply(m, b1, out=m)
        m += (1.0 - b1) * g
        np.multiply(v, b2, out=v)
        v += (1.0 - b2) * g * g
        p -= step_scale * m / (np.sqrt(v * inv_c2) + eps)


def adam_step(state: AdamState, params, grads) -> None:
    """One Adam update with bias correction, in place on ``params``."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ValueError("params/grads/state length mismatch")
    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    step_scale = state.lr / (1.0 - b1**t)
    inv_c2 = 1.0 / (1.0 - b2**t)
    for p, g, m, v in zip(params, grads, state.m, state.v):
        gv = _value(g)
        if gv.shape != p.value.shape:
            raise ValueError(f"gradient shape {gv.shape} does not match parameter {p.value.shape}")
        _adam_kernel(p.value.reshape(-1), np.ascontiguousarray(gv).reshape(-1),
                     m.reshape(-1), v.reshape(-1), b1, b2, state.eps, step_scale, inv_c2)


class PlateauScheduler:
    """Halve the learning rate when the loss stops improving.

    No improvement better than ``threshold`` (relative) for ``patience``
    consecutive steps triggers a decay by ``factor``, clamped at
    ``min_lr``; the rate never increases.
    """

    def __init__(self, lr: float = 1e-3, factor: float = 0.5, patience: int = 2000,
                 threshold: float = 1e-3, min_lr: float = 1e-5):
        self.lr = lr
        self.factor = factor
        self.patience = patience
        self.threshold = threshold
        self.min_lr = min_lr
        self.best = math.inf
        self.wait = 0


def scheduler_step(sched: PlateauScheduler, loss: float) -> float:
    """Observe one loss value; returns the learning rate to use."""
    if loss < sched.best * (1.0 - sched.threshold):
        sched.best = loss
        sched.wait = 0
    else:
        sched.wait += 1
        if sched.wait >= sched.patience:
            sched.lr = max(sched.lr * sched.factor, sched.min_lr)
            sched.wait = 0
    return sched.lr
