"""Layer primitives on top of the autodiff engine.

Convolutions run through im2col/col2im; the transposed convolution is the
exact adjoint of ``conv2d`` with the same kernel layout (O, C, k, k), so
<conv(x), y> == <x, conv_transpose(y)> holds to rounding error.  The LSTM
cell is a single fused graph node with an analytic backward.
"""

from __future__ import annotations

import numpy as np

from .autodiff import (
    ShapeError, Tensor, as_tensor, add, concat, matmul, record, reshape, split,
    _check_finite, _needs_grad, _sigmoid,
)

__all__ = [
    "conv2d", "conv2d_transpose", "instance_norm", "channel_bias",
    "lstm_cell", "bilstm", "dense",
    "conv_output_size", "conv_transpose_output_size",
    "orthogonal_init", "fan_in_uniform", "lstm_init",
]


def conv_output_size(size: int, kernel: int, stride: int, pad: int) -> int:
    return (size + 2 * pad - kernel) // stride + 1


def conv_transpose_output_size(size: int, kernel: int, stride: int, pad: int) -> int:
    return (size - 1) * stride - 2 * pad + kernel


def _im2col(x: np.ndarray, k: int, s: int, p: int) -> tuple[np.ndarray, int, int]:
    n, c, h, w = x.shape
    oh = conv_output_size(h, k, s, p)
    ow = conv_output_size(w, k, s, p)
    xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p))) if p else x
    cols = np.empty((n, c, k, k, oh, ow))
    for i in range(k):
        for j in range(k):
            cols[:, :, i, j] = xp[:, :, i:i + s * oh:s, j:j + s * ow:s]
    return cols.reshape(n, c * k * k, oh * ow), oh, ow


def _col2im(cols: np.ndarray, x_shape: tuple, k: int, s: int, p: int) -> np.ndarray:
    n, c, h, w = x_shape
    oh = conv_output_size(h, k, s, p)
    ow = conv_output_size(w, k, s, p)
    cols6 = cols.reshape(n, c, k, k, oh, ow)
    xp = np.zeros((n, c, h + 2 * p, w + 2 * p))
    for i in range(k):
        for j in range(k):
            xp[:, :, i:i + s * oh:s, j:j + s * ow:s] += cols6[:, :, i, j]
    return xp[:, :, p:p + h, p:p + w] if p else xp


def _check_conv_geometry(op, h, w, k, s, p):
    if s < 1 or p < 0 or k < 1:
        raise ShapeError(f"{op}: invalid stride/pad/kernel ({s}, {p}, {k})")
    if h + 2 * p < k or w + 2 * p < k:
        raise ShapeError(f"{op}: kernel {k} exceeds padded input {h + 2 * p}x{w + 2 * p}")


def conv2d(x, kernel, stride: int = 1, pad: int = 0) -> Tensor:
    """NCHW convolution with kernel (O, C, k, k)."""
    x, kernel = as_tensor(x), as_tensor(kernel)
    if x.ndim != 4 or kernel.ndim != 4 or kernel.shape[2] != kernel.shape[3]:
        raise ShapeError(f"conv2d: expected NCHW input and (O,C,k,k) kernel, "
                         f"got {x.shape} and {kernel.shape}")
    n, c, h, w = x.shape
    o, ck, k, _ = kernel.shape
    if ck != c:
        raise ShapeError(f"conv2d: input channels {c} != kernel channels {ck}")
    _check_conv_geometry("conv2d", h, w, k, stride, pad)

    cols, oh, ow = _im2col(x.data, k, stride, pad)
    w_mat = kernel.data.reshape(o, c * k * k)
    out_data = np.matmul(w_mat, cols).reshape(n, o, oh, ow)
    _check_finite(out_data, "conv2d")
    out = Tensor._wrap(np.ascontiguousarray(out_data))

    need_x, need_k = _needs_grad(x), _needs_grad(kernel)

    def grad_fn(gs):
        (g,) = gs
        g_mat = g.reshape(n, o, oh * ow)
        gx = gk = None
        if need_k:
            gk = np.matmul(g_mat, cols.transpose(0, 2, 1)).sum(axis=0) \
                .reshape(kernel.shape)
        if need_x:
            g_cols = np.matmul(w_mat.T, g_mat)
            gx = _col2im(g_cols, x.shape, k, stride, pad)
        return gx, gk

    record("conv2d", (x, kernel), (out,), grad_fn)
    return out


def conv2d_transpose(y, kernel, stride: int = 1, pad: int = 0) -> Tensor:
    """Adjoint of conv2d: maps (N, O, h, w) back to (N, C, H, W).

    Kernel layout matches conv2d, (O, C, k, k); output spatial size is
    (h - 1) * stride - 2 * pad + k.
    """
    y, kernel = as_tensor(y), as_tensor(kernel)
    if y.ndim != 4 or kernel.ndim != 4 or kernel.shape[2] != kernel.shape[3]:
        raise ShapeError(f"conv2d_transpose: expected NCHW input and (O,C,k,k) kernel, "
                         f"got {y.shape} and {kernel.shape}")
    n, o, h, w = y.shape
    ko, c, k, _ = kernel.shape
    if ko != o:
        raise ShapeError(f"conv2d_transpose: input channels {o} != kernel channels {ko}")
    out_h = conv_transpose_output_size(h, k, stride, pad)
    out_w = conv_transpose_output_size(w, k, stride, pad)
    if out_h < 1 or out_w < 1:
        raise ShapeError(f"conv2d_transpose: degenerate output {out_h}x{out_w}")
    _check_conv_geometry("conv2d_transpose", out_h, out_w, k, stride, pad)

    w_mat = kernel.data.reshape(o, c * k * k)
    y_mat = y.data.reshape(n, o, h * w)
    cols = np.matmul(w_mat.T, y_mat)
    out_data = _col2im(cols, (n, c, out_h, out_w), k, stride, pad)
    _check_finite(out_data, "conv2d_transpose")
    out = Tensor._wrap(np.ascontiguousarray(out_data))

    need_y, need_k = _needs_grad(y), _needs_grad(kernel)

    def grad_fn(gs):
        (g,) = gs
        g_cols, _, _ = _im2col(g, k, stride, pad)
        gy = gk = None
        if need_y:
            gy = np.matmul(w_mat, g_cols).reshape(y.shape)
        if need_k:
            gk = np.matmul(y_mat, g_cols.transpose(0, 2, 1)).sum(axis=0) \
                .reshape(kernel.shape)
        return gy, gk

    record("conv2d_transpose", (y, kernel), (out,), grad_fn)
    return out


def channel_bias(x, b) -> Tensor:
    """Add a per-channel bias (C,) to an NCHW tensor."""
    x, b = as_tensor(x), as_tensor(b)
    if x.ndim != 4 or b.shape != (x.shape[1],):
        raise ShapeError(f"channel_bias: shapes {x.shape} and {b.shape}")
    out_data = x.data + b.data[None, :, None, None]
    _check_finite(out_data, "channel_bias")
    out = Tensor._wrap(out_data)
    record("channel_bias", (x, b), (out,),
           lambda gs: (gs[0], gs[0].sum(axis=(0, 2, 3))))
    return out


def instance_norm(x, gamma, beta, eps: float = 1e-5) -> Tensor:
    """Normalize each (sample, channel) plane to zero mean / unit variance,
    then apply the per-channel affine transform gamma * y + beta."""
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    if x.ndim != 4:
        raise ShapeError(f"instance_norm: expected NCHW input, got {x.shape}")
    c = x.shape[1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError(f"instance_norm: affine shapes {gamma.shape}/{beta.shape} "
                         f"do not match {c} channels")
    mu = x.data.mean(axis=(2, 3), keepdims=True)
    var = x.data.var(axis=(2, 3), keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    y = (x.data - mu) * inv
    out_data = gamma.data[None, :, None, None] * y + beta.data[None, :, None, None]
    _check_finite(out_data, "instance_norm")
    out = Tensor._wrap(out_data)

    m = x.shape[2] * x.shape[3]

    def grad_fn(gs):
        (g,) = gs
        g_gamma = (g * y).sum(axis=(0, 2, 3))
        g_beta = g.sum(axis=(0, 2, 3))
        gy = g * gamma.data[None, :, None, None]
        gy_mean = gy.mean(axis=(2, 3), keepdims=True)
        gyy_mean = (gy * y).mean(axis=(2, 3), keepdims=True)
        gx = inv * (gy - gy_mean - y * gyy_mean) if m > 1 else np.zeros_like(g)
        return gx, g_gamma, g_beta

    record("instance_norm", (x, gamma, beta), (out,), grad_fn)
    return out


def lstm_cell(x, h, c, w, b) -> tuple[Tensor, Tensor]:
    """One LSTM step as a fused node.

    Gate layout along the 4H axis is [input, forget, output, candidate]:
    i, f, o = sigmoid, g = tanh; c' = f*c + i*g; h' = o*tanh(c').
    """
    x, h, c, w, b = (as_tensor(t) for t in (x, h, c, w, b))
    if x.ndim != 2 or h.ndim != 2 or c.ndim != 2:
        raise ShapeError(f"lstm_cell: expected 2-D x/h/c, got {x.shape}/{h.shape}/{c.shape}")
    bsz, d = x.shape
    hid = h.shape[1]
    if h.shape != (bsz, hid) or c.shape != (bsz, hid):
        raise ShapeError(f"lstm_cell: state shapes {h.shape}/{c.shape} do not match batch {bsz}")
    if w.shape != (d + hid, 4 * hid) or b.shape != (4 * hid,):
        raise ShapeError(f"lstm_cell: weight shapes {w.shape}/{b.shape} do not match "
                         f"input {d} + hidden {hid}")

    xh = np.concatenate([x.data, h.data], axis=1)
    gates = xh @ w.data + b.data
    sig = _sigmoid(gates[:, :3 * hid])
    gi = sig[:, :hid]
    gf = sig[:, hid:2 * hid]
    go = sig[:, 2 * hid:]
    gg = np.tanh(gates[:, 3 * hid:])
    c_new = gf * c.data + gi * gg
    tanh_c = np.tanh(c_new)
    h_new = go * tanh_c
    _check_finite(c_new, "lstm_cell")
    h_out = Tensor._wrap(np.ascontiguousarray(h_new))
    c_out = Tensor._wrap(np.ascontiguousarray(c_new))

    def grad_fn(gs):
        gh, gc = gs
        gc_total = gc.copy() if gc is not None else np.zeros_like(c_new)
        d_gates = np.empty_like(gates)
        if gh is not None:
            gc_total += gh * go * (1.0 - tanh_c * tanh_c)
            d_gates[:, 2 * hid:3 * hid] = gh * tanh_c
        else:
            d_gates[:, 2 * hid:3 * hid] = 0.0
        d_gates[:, :hid] = gc_total * gg
        d_gates[:, hid:2 * hid] = gc_total * c.data
        d_gates[:, :3 * hid] *= sig * (1.0 - sig)
        d_gates[:, 3 * hid:] = gc_total * gi * (1.0 - gg * gg)
        g_w = xh.T @ d_gates
        g_b = d_gates.sum(axis=0)
        g_xh = d_gates @ w.data.T
        g_x = np.ascontiguousarray(g_xh[:, :d])
        g_h = np.ascontiguousarray(g_xh[:, d:])
        g_c = gc_total * gf
        return g_x, g_h, g_c, g_w, g_b

    record("lstm_cell", (x, h, c, w, b), (h_out, c_out), grad_fn)
    return h_out, c_out


def bilstm(seq, w_fwd, b_fwd, w_bwd, b_bwd) -> Tensor:
    """Run a forward and a backward LSTM over a (T, B, D) sequence and
    return the concatenation of both final hidden states, shape (B, 2H)."""
    seq = as_tensor(seq)
    if seq.ndim != 3:
        raise ShapeError(f"bilstm: expected (T, B, D) input, got {seq.shape}")
    t_len, bsz, _ = seq.shape
    if t_len < 1:
        raise ShapeError("bilstm: empty sequence")
    w_fwd = as_tensor(w_fwd)
    hid = w_fwd.shape[1] // 4

    steps = split(seq, [1] * t_len, axis=0)
    steps = [reshape(s, (bsz, seq.shape[2])) for s in steps]

    zeros = Tensor(np.zeros((bsz, hid)))
    h, c = zeros, zeros
    for x_t in steps:
        h, c = lstm_cell(x_t, h, c, w_fwd, b_fwd)
    h_fwd = h

    h, c = zeros, zeros
    for x_t in reversed(steps):
        h, c = lstm_cell(x_t, h, c, w_bwd, b_bwd)
    h_bwd = h

    return concat([h_fwd, h_bwd], axis=1)


def dense(x, w, b) -> Tensor:
    """x @ w + b with b broadcast over the batch."""
    return add(matmul(x, w), b)


# ---------------------------------------------------------------------------
# initialization
# ---------------------------------------------------------------------------

def orthogonal_init(shape: tuple[int, int], rng: np.random.Generator) -> np.ndarray:
    a = rng.standard_normal(shape)
    q, r = np.linalg.qr(a if shape[0] >= shape[1] else a.T)
    q = q * np.sign(np.diag(r))
    return q if shape[0] >= shape[1] else q.T


def fan_in_uniform(shape: tuple, rng: np.random.Generator,
                   fan_in: int | None = None) -> np.ndarray:
    if fan_in is None:
        fan_in = int(np.prod(shape[1:])) if len(shape) > 1 else shape[0]
    bound = 1.0 / np.sqrt(max(fan_in, 1))
    return rng.uniform(-bound, bound, size=shape)


def lstm_init(input_size: int, hidden: int, rng: np.random.Generator,
              forget_bias: float = 1.0) -> tuple[np.ndarray, np.ndarray]:
    """Packed (D+H, 4H) weights: fan-in uniform input block, per-gate
    orthogonal recurrent block; zero biases except forget gate."""
    w = np.empty((input_size + hidden, 4 * hidden))
    w[:input_size] = fan_in_uniform((input_size, 4 * hidden), rng, fan_in=input_size + hidden)
    for g in range(4):
        w[input_size:, g * hidden:(g + 1) * hidden] = orthogonal_init((hidden, hidden), rng)
    b = np.zeros(4 * hidden)
    b[hidden:2 * hidden] = forget_bias
    return w, b
