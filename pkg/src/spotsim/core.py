"""Layer description and the dense software oracles.

Everything the simulated accelerator produces is checked against the
functions in this module. They are written independently of the
hardware model: convolution is a direct sliding-window sum, not an
Im2Col product, so the two paths cross-check each other.

Tensors are plain numpy arrays:

* feature map   ``(C, H, W)`` int16
* filter set    ``(F, C, R, S)`` int16
* weight matrix ``(F, R*S*C)`` int16, column ``c*R*S + r*S + s``
* im2col matrix ``(R*S*C, outH*outW)`` int16, same row order
* output matrix ``(F, outH*outW)`` int64 (exact accumulators)
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, replace

import numpy as np

INT16_MIN = -(1 << 15)
INT16_MAX = (1 << 15) - 1
ACC_DTYPE = np.int64


class LayerKind(str, enum.Enum):
    CONV = "conv"
    FC = "fc"
    MAXPOOL = "maxpool"
    AVGPOOL = "avgpool"

    @property
    def is_pool(self) -> bool:
        return self in (LayerKind.MAXPOOL, LayerKind.AVGPOOL)


@dataclass(frozen=True)
class LayerSpec:
    """Geometry and post-processing of one layer.

    ``kernel_h``/``kernel_w`` are R and S, ``stride`` is T and ``padding``
    is the zero border added on every side. For FC layers the input is
    the flattened ``channels*in_h*in_w`` vector and the kernel fields are
    ignored. ``shift`` is the arithmetic right shift applied before
    saturating accumulators back to int16.
    """

    kind: LayerKind
    in_w: int
    in_h: int
    channels: int
    kernel_h: int = 1
    kernel_w: int = 1
    filters: int = 1
    stride: int = 1
    padding: int = 0
    batch: int = 1
    bias: tuple[int, ...] | None = None
    relu: bool = False
    shift: int = 0
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "kind", LayerKind(self.kind))
        if self.bias is not None:
            object.__setattr__(self, "bias", tuple(int(b) for b in self.bias))
        self.validate()

    def validate(self) -> None:
        for attr in ("in_w", "in_h", "channels", "kernel_h", "kernel_w", "stride", "batch"):
            if getattr(self, attr) < 1:
                raise ValueError(f"{attr} must be >= 1, got {getattr(self, attr)}")
        if self.padding < 0 or self.shift < 0:
            raise ValueError("padding and shift must be >= 0")
        if self.kind in (LayerKind.CONV, LayerKind.FC) and self.filters < 1:
            raise ValueError("filters must be >= 1")
        if self.kind is LayerKind.FC:
            return
        for extent, k, label in ((self.in_h, self.kernel_h, "height"), (self.in_w, self.kernel_w, "width")):
            span = extent + 2 * self.padding - k
            if span < 0 or span % self.stride:
                raise ValueError(
                    f"{label}: ({extent} + 2*{self.padding} - {k}) is not a non-negative "
                    f"multiple of stride {self.stride}"
                )
        if self.bias is not None and len(self.bias) != self.out_channels:
            raise ValueError("bias length must equal the filter count")

    @property
    def out_h(self) -> int:
        if self.kind is LayerKind.FC:
            return 1
        return (self.in_h + 2 * self.padding - self.kernel_h) // self.stride + 1

    @property
    def out_w(self) -> int:
        if self.kind is LayerKind.FC:
            return 1
        return (self.in_w + 2 * self.padding - self.kernel_w) // self.stride + 1

    @property
    def out_channels(self) -> int:
        return self.channels if self.kind.is_pool else self.filters

    @property
    def in_shape(self) -> tuple[int, int, int]:
        return (self.channels, self.in_h, self.in_w)

    @property
    def out_shape(self) -> tuple[int, int, int]:
        return (self.out_channels, self.out_h, self.out_w)

    @property
    def patch_len(self) -> int:
        """Length of the shared dimension (R*S*C, or the FC input length)."""
        if self.kind is LayerKind.FC:
            return self.channels * self.in_h * self.in_w
        return self.kernel_h * self.kernel_w * self.channels

    @property
    def n_patches(self) -> int:
        return self.out_h * self.out_w

    @property
    def weight_shape(self) -> tuple[int, int]:
        return (self.filters, self.patch_len)

    def with_(self, **changes) -> "LayerSpec":
        return replace(self, **changes)


def as_int16(a) -> np.ndarray:
    a = np.asarray(a)
    if a.dtype != np.int16:
        if a.size and (a.min() < INT16_MIN or a.max() > INT16_MAX):
            raise ValueError("values do not fit in int16")
        a = a.astype(np.int16)
    return a


def _check_map(x: np.ndarray, layer: LayerSpec) -> np.ndarray:
    x = as_int16(x)
    if x.shape != layer.in_shape:
        raise ValueError(f"feature map shape {x.shape} != layer input {layer.in_shape}")
    return x


def flatten_filters(f) -> np.ndarray:
    """(F, C, R, S) filters -> (F, C*R*S) weight matrix in canonical column order."""
    f = as_int16(f)
    if f.ndim != 4:
        raise ValueError("filter set must be 4-D (F, C, R, S)")
    return f.reshape(f.shape[0], -1).copy()


def unflatten_filters(w: np.ndarray, layer: LayerSpec) -> np.ndarray:
    return np.asarray(w).reshape(layer.filters, layer.channels, layer.kernel_h, layer.kernel_w)


def im2col_reference(x, layer: LayerSpec) -> np.ndarray:
    if layer.kind is LayerKind.FC:
        raise ValueError("im2col is defined for windowed layers only")
    x = _check_map(x, layer)
    C, R, S, T, P = layer.channels, layer.kernel_h, layer.kernel_w, layer.stride, layer.padding
    oh, ow = layer.out_h, layer.out_w
    xp = np.pad(x, ((0, 0), (P, P), (P, P)))
    out = np.empty((C, R, S, oh, ow), dtype=np.int16)
    for r in range(R):
        for s in range(S):
            out[:, r, s] = xp[:, r : r + T * (oh - 1) + 1 : T, s : s + T * (ow - 1) + 1 : T]
    return out.reshape(C * R * S, oh * ow)


def gemm_reference(w, m) -> np.ndarray:
    """Exact integer product of a weight matrix and an im2col/batch matrix."""
    w = as_int16(w)
    m = as_int16(m)
    if w.ndim != 2 or m.ndim != 2 or w.shape[1] != m.shape[0]:
        raise ValueError(f"cannot multiply {w.shape} by {m.shape}")
    return w.astype(ACC_DTYPE) @ m.astype(ACC_DTYPE)


def accumulator_overflows(w, m, bits: int = 24) -> int:
    """Number of outputs whose running partial sum (ascending shared index)
    leaves the signed ``bits`` range at least once."""
    w = as_int16(w).astype(ACC_DTYPE)
    m = as_int16(m).astype(ACC_DTYPE)
    lo, hi = -(1 << (bits - 1)), (1 << (bits - 1)) - 1
    flagged = np.zeros((w.shape[0], m.shape[1]), dtype=bool)
    acc = np.zeros_like(flagged, dtype=ACC_DTYPE)
    for j in range(w.shape[1]):
        acc += np.outer(w[:, j], m[j])
        flagged |= (acc < lo) | (acc > hi)
    return int(flagged.sum())


def requantize(acc: np.ndarray, layer: LayerSpec, bias_axis: int = 0) -> np.ndarray:
    """Bias, optional ReLU, arithmetic right shift, saturate to int16."""
    acc = np.asarray(acc, dtype=ACC_DTYPE)
    if layer.bias is not None:
        shape = [1] * acc.ndim
        shape[bias_axis] = -1
        acc = acc + np.asarray(layer.bias, dtype=ACC_DTYPE).reshape(shape)
    if layer.relu:
        acc = np.maximum(acc, 0)
    if layer.shift:
        acc = acc >> layer.shift
    return np.clip(acc, INT16_MIN, INT16_MAX).astype(np.int16)


def reshape_output(o, layer: LayerSpec) -> np.ndarray:
    """(F, outH*outW) accumulators -> (F, outH, outW) int16 feature map."""
    o = np.asarray(o)
    if o.shape != (layer.out_channels, layer.n_patches):
        raise ValueError(f"output matrix {o.shape} does not match layer {layer.out_channels}x{layer.n_patches}")
    return requantize(o, layer).reshape(layer.out_shape)


def conv_accumulate(x, f, layer: LayerSpec) -> np.ndarray:
    """Direct sliding-window convolution; exact accumulators (F, outH, outW)."""
    if layer.kind is not LayerKind.CONV:
        raise ValueError("conv_accumulate needs a conv layer")
    x = _check_map(x, layer).astype(ACC_DTYPE)
    f = as_int16(f).astype(ACC_DTYPE)
    expect = (layer.filters, layer.channels, layer.kernel_h, layer.kernel_w)
    if f.shape != expect:
        raise ValueError(f"filter shape {f.shape} != {expect}")
    T, P = layer.stride, layer.padding
    oh, ow = layer.out_h, layer.out_w
    xp = np.pad(x, ((0, 0), (P, P), (P, P)))
    out = np.zeros((layer.filters, oh, ow), dtype=ACC_DTYPE)
    for py in range(oh):
        for px in range(ow):
            window = xp[:, py * T : py * T + layer.kernel_h, px * T : px * T + layer.kernel_w]
            out[:, py, px] = np.tensordot(f, window, axes=3)
    return out


def conv_reference(x, f, layer: LayerSpec) -> np.ndarray:
    return requantize(conv_accumulate(x, f, layer), layer)


def pool_reference(x, layer: LayerSpec) -> np.ndarray:
    """Max or truncating-average pooling. Padding contributes zeros."""
    if not layer.kind.is_pool:
        raise ValueError("pool_reference needs a pooling layer")
    x = _check_map(x, layer).astype(ACC_DTYPE)
    R, S, T, P = layer.kernel_h, layer.kernel_w, layer.stride, layer.padding
    xp = np.pad(x, ((0, 0), (P, P), (P, P)))
    out = np.empty(layer.out_shape, dtype=ACC_DTYPE)
    for py in range(layer.out_h):
        for px in range(layer.out_w):
            win = xp[:, py * T : py * T + R, px * T : px * T + S].reshape(layer.channels, -1)
            if layer.kind is LayerKind.MAXPOOL:
                out[:, py, px] = win.max(axis=1)
            else:
                out[:, py, px] = trunc_div(win.sum(axis=1), R * S)
    return out.astype(np.int16)


def trunc_div(a, n: int) -> np.ndarray:
    """Integer division rounding toward zero."""
    a = np.asarray(a, dtype=ACC_DTYPE)
    return np.sign(a) * (np.abs(a) // n)


def fc_accumulate(w, x) -> np.ndarray:
    w = as_int16(w)
    x = as_int16(x)
    if x.ndim == 1:
        x = x[:, None]
    return gemm_reference(w, x)


def fc_reference(w, x, layer: LayerSpec | None = None) -> np.ndarray:
    """FC layer on a batch matrix ``x`` of shape (inputs, B).

    Without a layer this is the raw accumulator product; with one, bias,
    ReLU and requantization are applied and an int16 (F, B) matrix returned.
    """
    acc = fc_accumulate(w, x)
    if layer is None:
        return acc
    return requantize(acc, layer)


def random_feature_map(rng: np.random.Generator, shape, lo=-8, hi=8, zero_frac=0.0) -> np.ndarray:
    x = rng.integers(lo, hi + 1, size=shape, dtype=np.int16)
    if zero_frac > 0:
        x[rng.random(shape) < zero_frac] = 0
    return x
