"""Randomized central-difference checks for every differentiable primitive (64-bit)."""
import zlib

import numpy as np
import pytest

import qrvos.tensor as qt
from qrvos.tensor import Tensor

N_SHAPES = 20
EPS = 1e-3
TOL = 1e-4


def rand_shape(rng, ndim_range=(1, 3), ext=(1, 4)):
    return tuple(int(s) for s in rng.integers(ext[0], ext[1] + 1, size=rng.integers(*ndim_range, endpoint=True)))


def leaf(arr):
    return Tensor(np.asarray(arr, dtype=np.float64), requires_grad=True)


def away_from_zero(rng, shape, margin=0.05):
    x = rng.normal(size=shape)
    return np.where(np.abs(x) < margin, np.sign(x + 1e-12) * margin + x, x)


def distinct_pair(rng, shape):
    a = rng.normal(size=shape)
    b = a + np.where(rng.random(shape) < 0.5, -1, 1) * rng.uniform(0.05, 1.0, size=shape)
    return a, b


def weights_like(rng, out):
    return Tensor(rng.normal(size=out.shape))


def build(op, rng):
    """Return (fn, inputs) for one random instance of ``op``."""
    if op in ("add", "sub", "mul", "div"):
        shape = rand_shape(rng)
        a = leaf(rng.normal(size=shape))
        bdat = rng.normal(size=shape)
        if op == "div":
            bdat = np.sign(bdat) * (np.abs(bdat) + 0.5)
        b = leaf(bdat)
        f = {"add": qt.add, "sub": qt.sub, "mul": qt.mul, "div": qt.div}[op]
        w = Tensor(rng.normal(size=shape))
        return (lambda: (f(a, b) * w).sum()), [a, b]
    if op == "scalar_ops":
        shape = rand_shape(rng)
        a = leaf(rng.uniform(0.5, 2.0, size=shape))
        c = float(rng.uniform(-2, 2))
        w = Tensor(rng.normal(size=shape))
        return (lambda: (((a + c) * 2.0 - c + c / a) * w).sum()), [a]
    if op in ("power", "exp", "log", "sigmoid", "tanh", "softplus", "log_sigmoid"):
        shape = rand_shape(rng)
        x = leaf(rng.uniform(0.3, 2.0, size=shape) if op in ("power", "log") else rng.normal(size=shape) * 2)
        f = {
            "power": lambda t: qt.power(t, 2.5),
            "exp": qt.exp, "log": qt.log, "sigmoid": qt.sigmoid,
            "tanh": qt.tanh, "softplus": qt.softplus, "log_sigmoid": qt.log_sigmoid,
        }[op]
        w = Tensor(rng.normal(size=shape))
        return (lambda: (f(x) * w).sum()), [x]
    if op in ("relu", "abs"):
        shape = rand_shape(rng)
        x = leaf(away_from_zero(rng, shape))
        f = qt.relu if op == "relu" else qt.abs_
        w = Tensor(rng.normal(size=shape))
        return (lambda: (f(x) * w).sum()), [x]
    if op in ("maximum", "minimum"):
        shape = rand_shape(rng)
        ad, bd = distinct_pair(rng, shape)
        a, b = leaf(ad), leaf(bd)
        f = qt.maximum if op == "maximum" else qt.minimum
        w = Tensor(rng.normal(size=shape))
        return (lambda: (f(a, b) * w).sum()), [a, b]
    if op in ("sum", "mean", "max"):
        shape = rand_shape(rng, (2, 3))
        x = leaf(rng.permutation(np.arange(int(np.prod(shape)))).reshape(shape) * 0.1 + rng.normal(size=shape) * 0.01)
        axis = int(rng.integers(0, len(shape)))
        keep = bool(rng.integers(0, 2))
        f = {"sum": qt.sum_, "mean": qt.mean, "max": qt.max_}[op]
        probe = f(Tensor(x.data), axis, keep)
        w = weights_like(rng, probe)
        return (lambda: (f(x, axis, keep) * w).sum()), [x]
    if op == "reshape_transpose":
        shape = rand_shape(rng, (2, 3))
        x = leaf(rng.normal(size=shape))
        perm = tuple(rng.permutation(len(shape)))
        probe = qt.transpose(Tensor(x.data), perm).reshape(-1)
        w = weights_like(rng, probe)
        return (lambda: (qt.transpose(x, perm).reshape(-1) * w).sum()), [x]
    if op == "expand":
        shape = rand_shape(rng, (2, 3))
        small = tuple(s if rng.random() < 0.5 else 1 for s in shape)
        x = leaf(rng.normal(size=small))
        target = (int(rng.integers(1, 3)),) + shape
        w = Tensor(rng.normal(size=target))
        return (lambda: (qt.expand(x, target) * w).sum()), [x]
    if op == "getitem":
        shape = rand_shape(rng, (2, 3), (2, 5))
        x = leaf(rng.normal(size=shape))
        if rng.random() < 0.5:
            idx = (slice(0, max(1, shape[0] - 1)), slice(None, None, 2 if shape[1] > 2 else 1))
        else:
            idx = rng.integers(0, shape[0], size=4)  # fancy with repeats
        probe = Tensor(x.data)[idx]
        w = weights_like(rng, probe)
        return (lambda: (x[idx] * w).sum()), [x]
    if op in ("concat", "stack"):
        shape = rand_shape(rng, (2, 3))
        axis = int(rng.integers(0, len(shape)))
        parts = []
        for _ in range(int(rng.integers(2, 4))):
            s = list(shape)
            if op == "concat":
                s[axis] = int(rng.integers(1, 4))
            parts.append(leaf(rng.normal(size=s)))
        f = qt.concat if op == "concat" else qt.stack
        probe = f([Tensor(p.data) for p in parts], axis)
        w = weights_like(rng, probe)
        return (lambda: (f(parts, axis) * w).sum()), parts
    if op == "matmul":
        m, k, p = (int(v) for v in rng.integers(1, 5, size=3))
        batch = tuple(int(v) for v in rng.integers(1, 3, size=rng.integers(0, 2)))
        a = leaf(rng.normal(size=batch + (m, k)))
        b = leaf(rng.normal(size=(k, p)) if rng.random() < 0.5 else rng.normal(size=batch + (k, p)))
        probe = Tensor(a.data) @ Tensor(b.data)
        w = weights_like(rng, probe)
        return (lambda: ((a @ b) * w).sum()), [a, b]
    if op == "softmax":
        shape = rand_shape(rng, (1, 3), (2, 5))
        axis = int(rng.integers(0, len(shape)))
        x = leaf(rng.normal(size=shape) * 2)
        w = Tensor(rng.normal(size=shape))
        return (lambda: (qt.softmax(x, axis) * w).sum()), [x]
    if op == "layer_norm":
        shape = list(rand_shape(rng, (2, 3), (2, 5)))
        axis = int(rng.integers(0, len(shape)))
        # over 1 or 2 elements the normalized output is (nearly) constant in x
        shape[axis] = max(shape[axis], 3)
        shape = tuple(shape)
        x = leaf(rng.normal(size=shape))
        g = leaf(1 + 0.3 * rng.normal(size=shape[axis]))
        b = leaf(0.3 * rng.normal(size=shape[axis]))
        w = Tensor(rng.normal(size=shape))
        return (lambda: (qt.layer_norm(x, g, b, axis=axis) * w).sum()), [x, g, b]
    if op == "group_norm":
        groups = int(rng.choice([1, 2]))
        C = groups * int(rng.integers(1, 3))
        x = leaf(rng.normal(size=(int(rng.integers(1, 3)), C, int(rng.integers(2, 4)), int(rng.integers(2, 4)))))
        gn = qt.GroupNorm(groups, C, dtype=np.float64)
        gn.weight.data[:] = 1 + 0.3 * rng.normal(size=C)
        gn.bias.data[:] = 0.3 * rng.normal(size=C)
        w = Tensor(rng.normal(size=x.shape))
        return (lambda: (gn(x) * w).sum()), [x, gn.weight, gn.bias]
    if op == "embedding":
        vocab, dim = int(rng.integers(2, 7)), int(rng.integers(1, 5))
        table = leaf(rng.normal(size=(vocab, dim)))
        idx = rng.integers(0, vocab, size=int(rng.integers(1, 8)))
        w = Tensor(rng.normal(size=(len(idx), dim)))
        return (lambda: (qt.embedding(table, idx) * w).sum()), [table]
    if op == "conv2d":
        groups = int(rng.choice([1, 2, 3]))
        cin = groups * int(rng.integers(1, 3))
        cout = groups * int(rng.integers(1, 3))
        k = int(rng.choice([1, 2, 3]))
        stride, pad = int(rng.choice([1, 2])), int(rng.choice([0, 1]))
        H, W = int(rng.integers(k, 7)), int(rng.integers(k, 7))
        x = leaf(rng.normal(size=(int(rng.integers(1, 3)), cin, H, W)))
        wt = leaf(rng.normal(size=(cout, cin // groups, k, k)))
        b = leaf(rng.normal(size=cout))
        probe = qt.conv2d(Tensor(x.data), Tensor(wt.data), None, stride, pad, groups)
        w = weights_like(rng, probe)
        return (lambda: (qt.conv2d(x, wt, b, stride, pad, groups) * w).sum()), [x, wt, b]
    if op == "bilinear_resize":
        H, W = (int(v) for v in rng.integers(1, 7, size=2))
        oh, ow = (int(v) for v in rng.integers(1, 9, size=2))
        x = leaf(rng.normal(size=(1, 2, H, W)))
        w = Tensor(rng.normal(size=(1, 2, oh, ow)))
        return (lambda: (qt.bilinear_resize(x, oh, ow) * w).sum()), [x]
    raise KeyError(op)


OPS = [
    "add", "sub", "mul", "div", "scalar_ops", "power", "exp", "log", "sigmoid", "tanh",
    "softplus", "log_sigmoid", "relu", "abs", "maximum", "minimum", "sum", "mean", "max",
    "reshape_transpose", "expand", "getitem", "concat", "stack", "matmul", "softmax",
    "layer_norm", "group_norm", "embedding", "conv2d", "bilinear_resize",
]


@pytest.mark.parametrize("op", OPS)
def test_gradient_matches_central_differences(op):
    rng = np.random.default_rng(zlib.crc32(op.encode()))
    worst = 0.0
    for _ in range(N_SHAPES):
        fn, inputs = build(op, rng)
        errs = qt.check_gradients(fn, inputs, eps=EPS)
        worst = max(worst, *errs)
    assert worst < TOL, f"{op}: worst relative error {worst:.2e}"
