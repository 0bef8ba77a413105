"""A small tape-based reverse-mode autodiff engine over numpy arrays.

Values are evaluated eagerly; each non-leaf remembers its parents and a
closure mapping the upstream gradient to per-parent gradients. ``backward``
walks the graph once in reverse topological order and then releases it.
Everything is float64.
"""

import math
import threading
from contextlib import contextmanager

import numpy as np

from . import _kernels

__all__ = [
    "Value",
    "GraphError",
    "ShapeError",
    "GradCheckError",
    "no_grad",
    "grad_enabled",
    "evaluate",
    "backward",
    "grad_check",
    "grad_check_params",
    "branch_pattern",
    "const",
    "add",
    "sub",
    "mul",
    "div",
    "neg",
    "square",
    "exp",
    "log",
    "softplus",
    "softplus_inverse",
    "sigmoid",
    "leaky_relu",
    "clamp_min",
    "linear",
    "conv1d",
    "depthwise_conv1d",
    "separable_conv1d",
    "rbf_setconv",
    "sum",
    "mean",
    "logsumexp",
    "gaussian_logpdf",
    "reparam_sample",
    "concat",
    "reshape",
]

LOG_2PI = math.log(2.0 * math.pi)


class GraphError(RuntimeError):
    """Misuse of the graph: non-scalar root, reused graph, no trainable leaves."""


class ShapeError(ValueError):
    def __init__(self, op, *shapes, detail=""):
        shown = ", ".join(str(tuple(s)) for s in shapes)
        msg = f"{op}: incompatible shapes {shown}"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)
        self.op = op
        self.shapes = shapes


class GradCheckError(ArithmeticError):
    pass


_state = threading.local()


def grad_enabled():
    return getattr(_state, "enabled", True)


@contextmanager
def no_grad():
    prev = grad_enabled()
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = prev


class _Pattern:
    def __init__(self):
        self.masks = []
        self.pos = None  # None while recording, else the replay cursor


@contextmanager
def branch_pattern(pattern=None):
    """Record, or replay, the branch every piecewise-linear op takes.

    Called with no argument it records and yields a fresh pattern; passing
    that pattern back replays it, so each kinked op keeps the side it was on
    when recorded. Finite differences taken under replay see the smooth piece
    that contains the recording point, which is what backward() differentiates.
    """
    if pattern is None:
        pattern = _Pattern()
    else:
        pattern.pos = 0
    prev = getattr(_state, "pattern", None)
    _state.pattern = pattern
    try:
        yield pattern
    finally:
        _state.pattern = prev


def _branch(mask):
    pat = getattr(_state, "pattern", None)
    if pat is None:
        return None
    if pat.pos is None:
        pat.masks.append(mask)
        return mask
    if pat.pos >= len(pat.masks) or pat.masks[pat.pos].shape != mask.shape:
        raise GraphError("replayed graph differs from the recorded one")
    pat.pos += 1
    return pat.masks[pat.pos - 1]


class Value:
    __slots__ = ("data", "grad", "requires_grad", "name", "op", "_parents", "_backward", "_consumed")

    def __init__(self, data, requires_grad=False, name=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self.name = name
        self.op = "leaf"
        self._parents = ()
        self._backward = None
        self._consumed = False

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def is_leaf(self):
        return self.op == "leaf"

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        tag = f" {self.name!r}" if self.name else ""
        return f"Value{tag}(op={self.op}, shape={self.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None, keepdims=False):
        return sum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def const(x):
    return x if isinstance(x, Value) else Value(x)


def _make(data, parents, backward_fn, op):
    out = Value(data)
    out.op = op
    if grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


def _unbroadcast(g, shape):
    if g.shape == tuple(shape):
        return g
    ndim_extra = g.ndim - len(shape)
    if ndim_extra > 0:
        g = g.sum(axis=tuple(range(ndim_extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _broadcast_shape(op, a, b):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(op, a.shape, b.shape) from None


# ---------------------------------------------------------------------------
# evaluation / backward
# ---------------------------------------------------------------------------


def evaluate(root):
    """Forward values of ``root``. Graphs are built eagerly, so this only validates."""
    if not isinstance(root, Value):
        raise TypeError("evaluate expects a Value")
    if root._consumed:
        raise GraphError("graph already consumed by backward; rebuild it to evaluate again")
    return root.data


def _toposort(root):
    order = []
    seen = set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        if node._consumed:
            raise GraphError(f"node from op {node.op!r} already took part in a backward pass")
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(root):
    """Accumulate d(root)/d(leaf) into ``leaf.grad`` for every trainable leaf.

    The graph (all non-leaf nodes) is released afterwards; a second call on
    the same graph raises :class:`GraphError`.
    """
    if not isinstance(root, Value):
        raise TypeError("backward expects a Value")
    if root._consumed:
        raise GraphError("backward called twice on the same graph")
    if root.data.size != 1:
        raise GraphError(f"backward needs a scalar root, got shape {root.shape}")
    if not root.requires_grad:
        raise GraphError("root does not depend on any trainable leaf")
    order = _toposort(root)
    grads = {id(root): np.ones_like(root.data)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if node.is_leaf:
            if g is not None:
                node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        if g is not None:
            pgrads = node._backward(g)
            for p, pg in zip(node._parents, pgrads):
                if pg is None or not p.requires_grad:
                    continue
                key = id(p)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg
        node._backward = None
        node._parents = ()
        node._consumed = True
    root._consumed = True


# ---------------------------------------------------------------------------
# elementwise primitives
# ---------------------------------------------------------------------------


def add(a, b):
    a, b = const(a), const(b)
    _broadcast_shape("add", a, b)
    sa, sb = a.shape, b.shape

    def bw(g):
        return _unbroadcast(g, sa), _unbroadcast(g, sb)

    return _make(a.data + b.data, (a, b), bw, "add")


def sub(a, b):
    a, b = const(a), const(b)
    _broadcast_shape("sub", a, b)
    sa, sb = a.shape, b.shape

    def bw(g):
        return _unbroadcast(g, sa), _unbroadcast(-g, sb)

    return _make(a.data - b.data, (a, b), bw, "sub")


def mul(a, b):
    a, b = const(a), const(b)
    _broadcast_shape("mul", a, b)
    ad, bd = a.data, b.data

    def bw(g):
        ga = _unbroadcast(g * bd, ad.shape) if a.requires_grad else None
        gb = _unbroadcast(g * ad, bd.shape) if b.requires_grad else None
        return ga, gb

    return _make(ad * bd, (a, b), bw, "mul")


def div(a, b):
    a, b = const(a), const(b)
    _broadcast_shape("div", a, b)
    ad, bd = a.data, b.data
    out = ad / bd

    def bw(g):
        ga = _unbroadcast(g / bd, ad.shape) if a.requires_grad else None
        gb = _unbroadcast(-g * out / bd, bd.shape) if b.requires_grad else None
        return ga, gb

    return _make(out, (a, b), bw, "div")


def neg(a):
    a = const(a)
    return _make(-a.data, (a,), lambda g: (-g,), "neg")


def square(a):
    a = const(a)
    ad = a.data
    return _make(ad * ad, (a,), lambda g: (2.0 * g * ad,), "square")


def exp(a):
    a = const(a)
    out = np.exp(a.data)
    return _make(out, (a,), lambda g: (g * out,), "exp")


def log(a):
    a = const(a)
    ad = a.data
    return _make(np.log(ad), (a,), lambda g: (g / ad,), "log")


def _sigmoid(x):
    return np.exp(-np.logaddexp(0.0, -x))


def softplus(a):
    a = const(a)
    ad = a.data
    return _make(np.logaddexp(0.0, ad), (a,), lambda g: (g * _sigmoid(ad),), "softplus")


def softplus_inverse(y):
    """Unconstrained value whose softplus is ``y`` (numpy, not differentiable)."""
    y = np.asarray(y, dtype=np.float64)
    return y + np.log(-np.expm1(-y))


def sigmoid(a):
    a = const(a)
    out = _sigmoid(a.data)
    return _make(out, (a,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def leaky_relu(a, slope=0.1):
    a = const(a)
    xd = a.data
    pos = _branch(xd > 0)
    if pos is not None:
        return _make(np.where(pos, xd, slope * xd), (a,), lambda g: (np.where(pos, g, slope * g),), "leaky_relu")
    out = _kernels.leaky_relu_forward(xd, slope)
    return _make(out, (a,), lambda g: (_kernels.leaky_relu_backward(xd, g, slope),), "leaky_relu")


def clamp_min(a, lo):
    a = const(a)
    keep = a.data > lo
    keep = _branch(keep) if getattr(_state, "pattern", None) is not None else keep
    out = np.where(keep, a.data, lo)
    return _make(out, (a,), lambda g: (np.where(keep, g, 0.0),), "clamp_min")


# ---------------------------------------------------------------------------
# linear maps and convolutions (channels-last)
# ---------------------------------------------------------------------------


def linear(x, w, b=None):
    """x (..., Cin) @ w (Cin, Cout) + b (Cout,)."""
    x, w = const(x), const(w)
    if w.ndim != 2 or x.shape[-1] != w.shape[0]:
        raise ShapeError("linear", x.shape, w.shape)
    if b is not None:
        b = const(b)
        if b.shape != (w.shape[1],):
            raise ShapeError("linear", w.shape, b.shape, detail="bias must match output width")
    xd, wd = x.data, w.data
    lead = xd.shape[:-1]
    x2 = xd.reshape(-1, wd.shape[0])
    out = x2 @ wd
    if b is not None:
        out += b.data
    out = out.reshape(lead + (wd.shape[1],))

    def bw(g):
        g2 = g.reshape(-1, wd.shape[1])
        gx = (g2 @ wd.T).reshape(xd.shape) if x.requires_grad else None
        gw = x2.T @ g2 if w.requires_grad else None
        if b is None:
            return gx, gw
        gb = g2.sum(axis=0) if b.requires_grad else None
        return gx, gw, gb

    parents = (x, w) if b is None else (x, w, b)
    return _make(out, parents, bw, "linear")


def conv1d(x, w, b=None):
    """Full 1D convolution, stride 1, zero "same" padding.

    x is (B, K, Cin), w is (W, Cin, Cout) with W odd.
    """
    x, w = const(x), const(w)
    if x.ndim != 3 or w.ndim != 3 or x.shape[2] != w.shape[1] or w.shape[0] % 2 == 0:
        raise ShapeError("conv1d", x.shape, w.shape)
    if b is not None:
        b = const(b)
        if b.shape != (w.shape[2],):
            raise ShapeError("conv1d", w.shape, b.shape, detail="bias must match output width")
    xd, wd = x.data, w.data
    B, K, _ = xd.shape
    W, Cin, Cout = wd.shape
    p = W // 2
    xp = np.zeros((B, K + 2 * p, Cin))
    xp[:, p:p + K] = xd
    out = np.zeros((B, K, Cout))
    for j in range(W):
        out += xp[:, j:j + K] @ wd[j]
    if b is not None:
        out += b.data

    def bw(g):
        gx = gw = gb = None
        if x.requires_grad:
            gp = np.zeros_like(xp)
            for j in range(W):
                gp[:, j:j + K] += g @ wd[j].T
            gx = gp[:, p:p + K].copy()
        if w.requires_grad:
            g2 = g.reshape(-1, Cout)
            gw = np.stack([xp[:, j:j + K].reshape(-1, Cin).T @ g2 for j in range(W)])
        if b is None:
            return gx, gw
        if b.requires_grad:
            gb = g.sum(axis=(0, 1))
        return gx, gw, gb

    parents = (x, w) if b is None else (x, w, b)
    return _make(out, parents, bw, "conv1d")


def depthwise_conv1d(x, w):
    """Per-channel 1D convolution; x (B, K, C), w (W, C), W odd, zero padding."""
    x, w = const(x), const(w)
    if x.ndim != 3 or w.ndim != 2 or x.shape[2] != w.shape[1] or w.shape[0] % 2 == 0:
        raise ShapeError("depthwise_conv1d", x.shape, w.shape)
    xd, wd = x.data, w.data

    def bw(g):
        gx, gw = _kernels.depthwise_conv1d_backward(xd, wd, g)
        return (gx if x.requires_grad else None), (gw if w.requires_grad else None)

    return _make(_kernels.depthwise_conv1d_forward(xd, wd), (x, w), bw, "depthwise_conv1d")


def separable_conv1d(x, w_depth, w_point, b=None):
    """Depthwise convolution followed by a pointwise (1x1) linear map."""
    return linear(depthwise_conv1d(x, w_depth), w_point, b)


def rbf_setconv(x_in, values, x_out, lengthscale):
    """Gaussian-RBF weighted sums from input locations to output locations.

    ``x_in`` (P, N) and ``x_out`` (P, M) are plain arrays; ``values`` is
    (P*G, N, C) and ``lengthscale`` (C,). Returns (P*G, M, C) with
    ``out[k, m, c] = sum_n values[k, n, c] * exp(-(x_out - x_in)**2 / (2 ls_c**2))``
    where the locations are those of row k // G.
    """
    values, lengthscale = const(values), const(lengthscale)
    x_in = np.asarray(x_in, dtype=np.float64)
    x_out = np.asarray(x_out, dtype=np.float64)
    if (
        values.ndim != 3
        or x_in.ndim != 2
        or x_in.shape[1] != values.shape[1]
        or values.shape[0] % max(x_in.shape[0], 1) != 0
        or x_out.ndim != 2
        or x_out.shape[0] != x_in.shape[0]
        or lengthscale.shape != (values.shape[2],)
    ):
        raise ShapeError("rbf_setconv", x_in.shape, values.shape, x_out.shape, lengthscale.shape)
    vd, ld = values.data, lengthscale.data

    def bw(g):
        gv, gls = _kernels.rbf_setconv_backward(x_in, vd, x_out, ld, g)
        return (gv if values.requires_grad else None), (gls if lengthscale.requires_grad else None)

    out = _kernels.rbf_setconv_forward(x_in, vd, x_out, ld)
    return _make(out, (values, lengthscale), bw, "rbf_setconv")


# ---------------------------------------------------------------------------
# reductions and shape plumbing
# ---------------------------------------------------------------------------


def _norm_axis(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def sum(a, axis=None, keepdims=False):  # noqa: A001 - mirrors numpy
    a = const(a)
    shape = a.shape
    axes = _norm_axis(axis, a.ndim)

    def bw(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, shape),)

    return _make(a.data.sum(axis=axes, keepdims=keepdims), (a,), bw, "sum")


def mean(a, axis=None, keepdims=False):
    a = const(a)
    axes = _norm_axis(axis, a.ndim)
    n = 1
    for ax in axes:
        n *= a.shape[ax]
    return sum(a, axes, keepdims) * (1.0 / n)


def logsumexp(a, axis=-1):
    """Stable log(sum(exp(a))) along one axis (axis removed)."""
    a = const(a)
    ax = axis % a.ndim
    m = np.max(a.data, axis=ax, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    e = np.exp(a.data - m)
    s = e.sum(axis=ax, keepdims=True)
    out = np.squeeze(np.log(s) + m, axis=ax)
    soft = e / s

    def bw(g):
        return (np.expand_dims(g, ax) * soft,)

    return _make(out, (a,), bw, "logsumexp")


def gaussian_logpdf(y, mu, sigma):
    """Elementwise log N(y; mu, sigma^2), broadcasting over all three arguments."""
    y, mu, sigma = const(y), const(mu), const(sigma)
    try:
        np.broadcast_shapes(y.shape, mu.shape, sigma.shape)
    except ValueError:
        raise ShapeError("gaussian_logpdf", y.shape, mu.shape, sigma.shape) from None
    yd, md, sd = y.data, mu.data, sigma.data
    z = (yd - md) / sd
    out = -0.5 * LOG_2PI - np.log(sd) - 0.5 * z * z

    def bw(g):
        gz = g * z / sd
        gy = _unbroadcast(-gz, yd.shape) if y.requires_grad else None
        gm = _unbroadcast(gz, md.shape) if mu.requires_grad else None
        gs = _unbroadcast(g * (z * z - 1.0) / sd, sd.shape) if sigma.requires_grad else None
        return gy, gm, gs

    return _make(out, (y, mu, sigma), bw, "gaussian_logpdf")


def reparam_sample(mu, sigma, eps):
    """mu + sigma * eps with ``eps`` a fixed array (pathwise gradient)."""
    mu, sigma = const(mu), const(sigma)
    eps = np.asarray(eps, dtype=np.float64)
    try:
        shape = np.broadcast_shapes(mu.shape, sigma.shape, eps.shape)
    except ValueError:
        raise ShapeError("reparam_sample", mu.shape, sigma.shape, eps.shape) from None
    md, sd = mu.data, sigma.data
    out = np.broadcast_to(md + sd * eps, shape).copy()

    def bw(g):
        gm = _unbroadcast(g, md.shape) if mu.requires_grad else None
        gs = _unbroadcast(g * eps, sd.shape) if sigma.requires_grad else None
        return gm, gs

    return _make(out, (mu, sigma), bw, "reparam_sample")


def concat(values, axis=-1):
    values = [const(v) for v in values]
    ax = axis % values[0].ndim
    ref = values[0].shape
    for v in values[1:]:
        if v.ndim != len(ref) or any(v.shape[i] != ref[i] for i in range(len(ref)) if i != ax):
            raise ShapeError("concat", *(u.shape for u in values))
    sizes = [v.shape[ax] for v in values]
    cuts = np.cumsum(sizes)[:-1]

    def bw(g):
        return tuple(np.split(g, cuts, axis=ax))

    return _make(np.concatenate([v.data for v in values], axis=ax), tuple(values), bw, "concat")


def reshape(a, shape):
    a = const(a)
    old = a.shape
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeError("reshape", old, shape) from None
    return _make(out, (a,), lambda g: (g.reshape(old),), "reshape")


def getitem(a, idx):
    """Basic (slice/int) indexing only."""
    a = const(a)
    shape = a.shape

    def bw(g):
        out = np.zeros(shape)
        out[idx] = g
        return (out,)

    return _make(a.data[idx], (a,), bw, "getitem")


# ---------------------------------------------------------------------------
# finite-difference verification
# ---------------------------------------------------------------------------


def _rel_err(analytic, numeric, floor=1e-8):
    return np.abs(analytic - numeric) / (np.abs(numeric) + floor)


def _richardson(f, step):
    """Central difference at ``step`` and ``step / 2``, combined to cancel the h^2 term."""
    coarse = (f(step) - f(-step)) / (2.0 * step)
    fine = (f(0.5 * step) - f(-0.5 * step)) / step
    return (4.0 * fine - coarse) / 3.0


def grad_check(build, point, step=1e-3, coords=None, floor_rel=1e-6):
    """Max relative error between backward() and extrapolated central differences.

    ``build`` maps a leaf Value (initialised at ``point``) to a scalar Value.
    ``coords`` optionally restricts the check to a list of flat indices.
    Piecewise-linear ops are replayed on the branch taken at ``point``, and
    the error's denominator is floored at ``floor_rel * max(1, |f(point)|)``.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    point = np.array(point, dtype=np.float64)
    leaf = Value(point.copy(), requires_grad=True)
    with branch_pattern() as pattern:
        root = build(leaf)
    if root.data.size != 1:
        raise GraphError("grad_check needs a scalar-valued builder")
    if not np.isfinite(root.data).all():
        raise GradCheckError("non-finite value at the base point")
    backward(root)
    floor = floor_rel * max(1.0, abs(float(root.data)))
    analytic = np.zeros_like(point) if leaf.grad is None else leaf.grad
    flat = point.reshape(-1)
    idxs = range(flat.size) if coords is None else coords
    worst = 0.0
    for i in idxs:
        where = np.unravel_index(i, point.shape)

        def f(h):
            x = flat.copy()
            x[i] += h
            with no_grad(), branch_pattern(pattern):
                v = float(build(Value(x.reshape(point.shape))).data)
            if not math.isfinite(v):
                raise GradCheckError(f"non-finite value at coordinate {where}")
            return v

        numeric = _richardson(f, step)
        a = analytic.reshape(-1)[i]
        if not math.isfinite(a):
            raise GradCheckError(f"non-finite gradient at coordinate {where}")
        worst = max(worst, float(_rel_err(a, numeric, floor)))
    return worst


def grad_check_params(params, loss_fn, step=1e-3, per_param=2, rng=None, floor_rel=1e-6, n_coords=None):
    """Finite-difference check of ``loss_fn()`` against backward over model parameters.

    ``params`` is a name -> Value mapping. ``per_param`` coordinates are drawn
    from each tensor (all of them if the tensor is smaller); with ``n_coords``
    set, that many (tensor, coordinate) pairs are drawn instead, tensors
    uniformly and coordinates uniformly within each. The relative
    error's denominator is floored at ``floor_rel * max(1, |loss|)``: below
    that, a difference quotient of the loss is mostly rounding noise. Returns
    ``(max_rel_err, worst_name)``.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    for p in params.values():
        p.zero_grad()
    with branch_pattern() as pattern:
        root = loss_fn()
    backward(root)
    floor = floor_rel * max(1.0, abs(float(root.data)))
    worst, worst_name = 0.0, None
    names = [k for k, p in params.items() if p.requires_grad]
    if n_coords is None:
        plan = []
        for name in names:
            n = params[name].data.size
            plan += [(name, int(i)) for i in (range(n) if n <= per_param else rng.choice(n, size=per_param, replace=False))]
    else:
        plan = [(names[j], int(rng.integers(params[names[j]].data.size))) for j in rng.integers(len(names), size=n_coords)]
    for name, i in plan:
        p = params[name]
        flat = p.data.reshape(-1)
        if not np.shares_memory(flat, p.data):
            raise GraphError(f"parameter {name} is not contiguous")
        analytic = np.zeros(flat.size) if p.grad is None else p.grad.reshape(-1)
        orig = flat[i]

        def f(h):
            flat[i] = orig + h
            try:
                with no_grad(), branch_pattern(pattern):
                    v = float(loss_fn().data)
            finally:
                flat[i] = orig
            if not math.isfinite(v):
                raise GradCheckError(f"non-finite loss perturbing {name}[{i}]")
            return v

        err = float(_rel_err(analytic[i], _richardson(f, step), floor))
        if err > worst:
            worst, worst_name = err, f"{name}[{i}]"
    for p in params.values():
        p.zero_grad()
    return worst, worst_name
