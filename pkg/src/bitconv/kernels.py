"""Convolution kernels.

Two families share one geometry descriptor (ConvSpec):

* float reference kernels -- direct cross-correlation with zero padding,
  accumulated tap by tap (no FFT/Winograd, no im2col-GEMM restructuring).
  These double as the correctness oracle for the binary kernels and as the
  full-precision layers of built networks.

* bit-packed binary kernels -- the multiply-accumulate work runs as
  XNOR + popcount on packed words, with an integer accumulator that is
  scaled by the per-output-channel magnitude only at the very end, so the
  result matches the float kernel on decoded +/-1 operands bit for bit.

Padding semantics: pads are zeros, i.e. padded positions contribute 0 to
the accumulator (not -1). The binary kernels realize this by masking pad
positions out of the popcount and counting only live elements per window.

Depth-wise kernels pack each window's k*k bits into one word per output
position (the reduction never leaves the channel, so the whole channel row
stays cache-resident); regular kernels repack the channel axis into words
because their reduction runs across channels.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import BitTensor, as_nchw, pack, payload_mask, unpack_bits


@dataclass(frozen=True)
class ConvSpec:
    """Geometry of a convolution layer."""

    in_channels: int
    out_channels: int
    kernel: tuple[int, int] = (3, 3)
    stride: int = 1
    padding: int = 0
    groups: int = 1

    def __post_init__(self):
        kh, kw = self.kernel
        if min(self.in_channels, self.out_channels, kh, kw, self.stride, self.groups) < 1:
            raise ValueError(f"invalid conv spec {self}")
        if self.padding < 0:
            raise ValueError("padding must be >= 0")
        if self.in_channels % self.groups or self.out_channels % self.groups:
            raise ValueError(f"groups={self.groups} must divide both channel counts")

    @property
    def is_depthwise(self) -> bool:
        return self.groups == self.in_channels == self.out_channels

    @property
    def group_in(self) -> int:
        return self.in_channels // self.groups

    @property
    def group_out(self) -> int:
        return self.out_channels // self.groups

    def out_hw(self, h: int, w: int) -> tuple[int, int]:
        kh, kw = self.kernel
        ho = (h + 2 * self.padding - kh) // self.stride + 1
        wo = (w + 2 * self.padding - kw) // self.stride + 1
        if ho < 1 or wo < 1:
            raise ValueError(f"kernel {self.kernel} does not fit input {h}x{w} with pad {self.padding}")
        return ho, wo

    def weight_shape(self) -> tuple[int, int, int, int]:
        return (self.out_channels, self.group_in, *self.kernel)

    def macs(self, h: int, w: int) -> int:
        """Multiply-accumulate count for one sample at input resolution h x w."""
        ho, wo = self.out_hw(h, w)
        return ho * wo * self.out_channels * self.group_in * self.kernel[0] * self.kernel[1]


@dataclass
class BinaryConvWeights:
    """Sign-packed filters plus the per-output-channel magnitude."""

    packed: BitTensor
    magnitude: np.ndarray = field(default=None)

    def __post_init__(self):
        o = self.packed.shape[0]
        if self.magnitude is None:
            self.magnitude = np.ones(o, dtype=np.float64)
        self.magnitude = np.broadcast_to(
            np.asarray(self.magnitude, dtype=np.float64), (o,)
        ).copy()
        if np.any(self.magnitude < 0):
            raise ValueError("magnitude must be >= 0")


def binarize_weights(w, magnitude=None) -> BinaryConvWeights:
    """Pack the sign pattern of a real filter bank (threshold 0)."""
    return BinaryConvWeights(pack(as_nchw(w), 0.0), magnitude)


def _check_weight_shape(w: np.ndarray, spec: ConvSpec) -> None:
    if tuple(w.shape) != spec.weight_shape():
        raise ValueError(f"weights {w.shape} do not match spec {spec.weight_shape()}")


def _pad_input(x: np.ndarray, padding: int, value=0):
    if padding == 0:
        return x
    n, c, h, w = x.shape
    xp = np.full((n, c, h + 2 * padding, w + 2 * padding), value, dtype=x.dtype)
    xp[:, :, padding : padding + h, padding : padding + w] = x
    return xp


# ---------------------------------------------------------------------------
# Float reference kernels
# ---------------------------------------------------------------------------


def conv_float(x, w, spec: ConvSpec) -> np.ndarray:
    """Direct cross-correlation with zero padding.

    Output spatial dims are floor((H + 2p - kh)/s) + 1. The channel
    contraction runs per tap (einsum without BLAS dispatch), keeping the
    whole kernel a plain direct convolution.
    """
    x = as_nchw(x)
    w = np.asarray(w)
    _check_weight_shape(w, spec)
    if x.shape[1] != spec.in_channels:
        raise ValueError(f"input has {x.shape[1]} channels, spec wants {spec.in_channels}")
    n, _, h, win = x.shape
    kh, kw = spec.kernel
    s = spec.stride
    ho, wo = spec.out_hw(h, win)
    xp = _pad_input(x, spec.padding)
    dtype = np.result_type(x.dtype, w.dtype)
    out = np.zeros((n, spec.out_channels, ho, wo), dtype=dtype)
    if spec.is_depthwise:
        wd = w[:, 0, :, :]
        for di in range(kh):
            for dj in range(kw):
                xs = xp[:, :, di : di + (ho - 1) * s + 1 : s, dj : dj + (wo - 1) * s + 1 : s]
                out += xs * wd[None, :, di, dj, None, None]
        return out
    for g in range(spec.groups):
        ci = slice(g * spec.group_in, (g + 1) * spec.group_in)
        co = slice(g * spec.group_out, (g + 1) * spec.group_out)
        wg = w[co]
        for di in range(kh):
            for dj in range(kw):
                xs = xp[:, ci, di : di + (ho - 1) * s + 1 : s, dj : dj + (wo - 1) * s + 1 : s]
                out[:, co] += np.einsum("nchw,oc->nohw", xs, wg[:, :, di, dj])
    return out


def conv_float_grad_input(gy, w, spec: ConvSpec, in_hw: tuple[int, int]) -> np.ndarray:
    """Gradient of conv_float w.r.t. its input (scatter of gy through w)."""
    gy = as_nchw(gy)
    w = np.asarray(w)
    _check_weight_shape(w, spec)
    n = gy.shape[0]
    h, win = in_hw
    kh, kw = spec.kernel
    s = spec.stride
    ho, wo = spec.out_hw(h, win)
    gxp = np.zeros((n, spec.in_channels, h + 2 * spec.padding, win + 2 * spec.padding), dtype=gy.dtype)
    for g in range(spec.groups):
        ci = slice(g * spec.group_in, (g + 1) * spec.group_in)
        co = slice(g * spec.group_out, (g + 1) * spec.group_out)
        wg = w[co]
        gyg = gy[:, co]
        for di in range(kh):
            for dj in range(kw):
                if spec.is_depthwise:
                    contrib = gyg * wg[None, :, 0, di, dj, None, None]
                else:
                    contrib = np.einsum("nohw,oc->nchw", gyg, wg[:, :, di, dj])
                gxp[:, ci, di : di + (ho - 1) * s + 1 : s, dj : dj + (wo - 1) * s + 1 : s] += contrib
    p = spec.padding
    return gxp[:, :, p : p + h, p : p + win]


def conv_float_grad_weight(x, gy, spec: ConvSpec) -> np.ndarray:
    """Gradient of conv_float w.r.t. its weights."""
    x = as_nchw(x)
    gy = as_nchw(gy)
    n, _, h, win = x.shape
    kh, kw = spec.kernel
    s = spec.stride
    ho, wo = spec.out_hw(h, win)
    xp = _pad_input(x, spec.padding)
    gw = np.zeros(spec.weight_shape(), dtype=np.result_type(x.dtype, gy.dtype))
    for g in range(spec.groups):
        ci = slice(g * spec.group_in, (g + 1) * spec.group_in)
        co = slice(g * spec.group_out, (g + 1) * spec.group_out)
        gyg = gy[:, co]
        for di in range(kh):
            for dj in range(kw):
                xs = xp[:, ci, di : di + (ho - 1) * s + 1 : s, dj : dj + (wo - 1) * s + 1 : s]
                if spec.is_depthwise:
                    gw[co, 0, di, dj] = np.einsum("nchw,nchw->c", xs, gyg)
                else:
                    gw[co, :, di, dj] = np.einsum("nchw,nohw->oc", xs, gyg)
    return gw


# ---------------------------------------------------------------------------
# Bit-packed binary kernels
# ---------------------------------------------------------------------------


def _tap_validity(h: int, w: int, spec: ConvSpec) -> np.ndarray:
    """Bool (kh, kw, Ho, Wo): whether tap (di,dj) lands in-bounds at each output."""
    kh, kw = spec.kernel
    s, p = spec.stride, spec.padding
    ho, wo = spec.out_hw(h, w)
    oy = np.arange(ho) * s - p
    ox = np.arange(wo) * s - p
    di = np.arange(kh)
    dj = np.arange(kw)
    iy = oy[None, :] + di[:, None]  # (kh, Ho)
    ix = ox[None, :] + dj[:, None]  # (kw, Wo)
    vy = (iy >= 0) & (iy < h)
    vx = (ix >= 0) & (ix < w)
    return vy[:, None, :, None] & vx[None, :, None, :]


def _dw_conv_int(xbits: np.ndarray, wbits: np.ndarray, spec: ConvSpec) -> np.ndarray:
    """Integer depth-wise conv of +/-1 operands given as 0/1 bit arrays.

    Packs each window's taps into a single word per output position and
    reduces it with one XNOR + popcount -- the whole window dot is a pair
    of word ops. Requires kh*kw <= 64.
    """
    n, c, h, w = xbits.shape
    kh, kw = spec.kernel
    if kh * kw > 64:
        raise ValueError("window does not fit a 64-bit word")
    s = spec.stride
    ho, wo = spec.out_hw(h, w)
    xbp = _pad_input(xbits.astype(np.uint64), spec.padding)
    valid = _tap_validity(h, w, spec)
    win = np.zeros((n, c, ho, wo), dtype=np.uint64)
    live = np.zeros((ho, wo), dtype=np.uint64)
    t = 0
    for di in range(kh):
        for dj in range(kw):
            plane = xbp[:, :, di : di + (ho - 1) * s + 1 : s, dj : dj + (wo - 1) * s + 1 : s]
            win |= plane << np.uint64(t)
            live |= valid[di, dj].astype(np.uint64) << np.uint64(t)
            t += 1
    wwin = np.zeros(c, dtype=np.uint64)
    t = 0
    for di in range(kh):
        for dj in range(kw):
            wwin |= wbits[:, 0, di, dj].astype(np.uint64) << np.uint64(t)
            t += 1
    agree = ~(win ^ wwin[None, :, None, None]) & live[None, None, :, :]
    n_live = np.bitwise_count(live).astype(np.int32)
    return 2 * np.bitwise_count(agree).astype(np.int32) - n_live[None, None, :, :]


def _regular_conv_int(xbits: np.ndarray, wbits: np.ndarray, spec: ConvSpec) -> np.ndarray:
    """Integer regular conv of +/-1 operands via channel-packed XNOR-popcount.

    The channel axis is repacked into 64-bit words; each tap then reduces
    all input channels of an output position with a handful of word ops.
    Padding is spatial, so a tap is live for all channels at once and dead
    taps are masked out wholesale.
    """
    n, c, h, w = xbits.shape
    kh, kw = spec.kernel
    s = spec.stride
    ho, wo = spec.out_hw(h, w)
    o = spec.out_channels

    # (N, Hp, Wp, C) bits -> channel-packed words (N, Hp, Wp, Wc)
    nchan_words = (c + 63) // 64
    xt = np.moveaxis(xbits, 1, -1)  # (N, H, W, C)
    xtp = np.zeros((n, h + 2 * spec.padding, w + 2 * spec.padding, c), dtype=np.uint8)
    p = spec.padding
    xtp[:, p : p + h, p : p + w, :] = xt
    xw = np.packbits(xtp.astype(bool), axis=-1, bitorder="little")
    full_bytes = nchan_words * 8
    if xw.shape[-1] < full_bytes:
        padb = np.zeros(xw.shape[:-1] + (full_bytes - xw.shape[-1],), dtype=np.uint8)
        xw = np.concatenate([xw, padb], axis=-1)
    xw = np.ascontiguousarray(xw).view(np.uint64)

    wt = np.moveaxis(wbits, 1, -1)  # (O, kh, kw, C)
    ww = np.packbits(wt.astype(bool), axis=-1, bitorder="little")
    if ww.shape[-1] < full_bytes:
        padb = np.zeros(ww.shape[:-1] + (full_bytes - ww.shape[-1],), dtype=np.uint8)
        ww = np.concatenate([ww, padb], axis=-1)
    ww = np.ascontiguousarray(ww).view(np.uint64)

    cmask = payload_mask(nchan_words, c)
    valid = _tap_validity(h, w, spec)
    out = np.zeros((n, o, ho, wo), dtype=np.int32)
    for di in range(kh):
        for dj in range(kw):
            xs = xw[:, di : di + (ho - 1) * s + 1 : s, dj : dj + (wo - 1) * s + 1 : s, :]
            # (N, 1, Ho, Wo, Wc) xnor (1, O, 1, 1, Wc)
            agree_words = ~(xs[:, None] ^ ww[None, :, di, dj, None, None, :]) & cmask
            agree = np.bitwise_count(agree_words).sum(axis=-1, dtype=np.int32)
            out += (2 * agree - c) * valid[di, dj].astype(np.int32)[None, None, :, :]
    return out


def conv_binary(xb: BitTensor, w: BinaryConvWeights, spec: ConvSpec) -> np.ndarray:
    """Binary convolution on packed operands.

    Accumulates in 32-bit integers via XNOR-popcount and applies the
    per-output-channel magnitude once at the end, so the result equals the
    float kernel on decoded operands exactly. Supports groups in
    {1, in_channels}.
    """
    if spec.groups != 1 and not spec.is_depthwise:
        raise ValueError(f"unsupported groups {spec.groups} (use 1 or depth-wise)")
    if xb.shape[1] != spec.in_channels:
        raise ValueError(f"input has {xb.shape[1]} channels, spec wants {spec.in_channels}")
    if w.packed.shape != spec.weight_shape():
        raise ValueError(f"weights {w.packed.shape} do not match spec {spec.weight_shape()}")
    xbits = unpack_bits(xb)
    wbits = unpack_bits(w.packed)
    if spec.is_depthwise:
        acc = _dw_conv_int(xbits, wbits, spec)
    else:
        acc = _regular_conv_int(xbits, wbits, spec)
    beta = w.magnitude
    return acc.astype(beta.dtype) * beta[None, :, None, None]


def conv_dual_dw(x, w1: BinaryConvWeights, w2: BinaryConvWeights, q, spec: ConvSpec) -> np.ndarray:
    """Dual binary depth-wise conv: two parallel sign-quantized branches.

    Each branch packs the shared input with its own rounding boundary
    (q.alpha1 / q.alpha2) and runs its own binary conv; the outputs sum.
    """
    if not spec.is_depthwise:
        raise ValueError("dual conv is defined for depth-wise specs")
    if w1.packed.shape != w2.packed.shape:
        raise ValueError(f"branch geometry differs: {w1.packed.shape} vs {w2.packed.shape}")
    y1 = conv_binary(pack(x, q.alpha1), w1, spec)
    y2 = conv_binary(pack(x, q.alpha2), w2, spec)
    return y1 + y2


def conv_multi_dw(x, branches, spec: ConvSpec) -> np.ndarray:
    """Sum of N parallel binary depth-wise convs, 1 <= N <= 4.

    branches is a list of (BinaryConvWeights, threshold, magnitude)
    triples; each branch packs the shared input at its own threshold and
    scales its integer output by its own magnitude. N=2 reproduces
    conv_dual_dw bit for bit.
    """
    if not spec.is_depthwise:
        raise ValueError("multi conv is defined for depth-wise specs")
    if not 1 <= len(branches) <= 4:
        raise ValueError(f"branch count must be in [1, 4], got {len(branches)}")
    out = None
    for weights, threshold, magnitude in branches:
        w = BinaryConvWeights(weights.packed, magnitude)
        y = conv_binary(pack(x, threshold), w, spec)
        out = y if out is None else out + y
    return out
