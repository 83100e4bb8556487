"""Ready-made network configs.

``alexnet`` is the full-size conv/pool trunk. ``vgg16``, ``resnet`` and
``googlenet`` keep the real channel counts and kernel shapes but run on
small inputs so they finish on a desktop. Inception branches are laid
out as one sequential chain of their layer shapes.
"""
from __future__ import annotations

import math

from .core import LayerKind, LayerSpec

# (name, kind, filters, kernel, stride, padding)
_conv = lambda n, f, k, s=1, p=0: (n, "conv", f, k, s, p)  # noqa: E731
_max = lambda n, k, s: (n, "maxpool", 0, k, s, 0)  # noqa: E731
_avg = lambda n, k, s: (n, "avgpool", 0, k, s, 0)  # noqa: E731
_fc = lambda n, f: (n, "fc", f, 1, 1, 0)  # noqa: E731

NETWORKS = {
    "toy": ((3, 16, 16), [
        _conv("conv1", 8, 3, 1, 1), _max("pool1", 2, 2),
        _conv("conv2", 16, 3), _fc("fc1", 10),
    ]),
    "alexnet": ((3, 227, 227), [
        _conv("conv1", 96, 11, 4), _max("pool1", 3, 2),
        _conv("conv2", 256, 5, 1, 2), _max("pool2", 3, 2),
        _conv("conv3", 384, 3, 1, 1), _conv("conv4", 384, 3, 1, 1),
        _conv("conv5", 256, 3, 1, 1), _max("pool5", 3, 2),
    ]),
    "vgg16": ((3, 32, 32), [
        _conv("conv1_1", 64, 3, 1, 1), _conv("conv1_2", 64, 3, 1, 1), _max("pool1", 2, 2),
        _conv("conv2_1", 128, 3, 1, 1), _conv("conv2_2", 128, 3, 1, 1), _max("pool2", 2, 2),
        _conv("conv3_1", 256, 3, 1, 1), _conv("conv3_2", 256, 3, 1, 1), _conv("conv3_3", 256, 3, 1, 1),
        _max("pool3", 2, 2),
        _conv("conv4_1", 512, 3, 1, 1), _conv("conv4_2", 512, 3, 1, 1), _conv("conv4_3", 512, 3, 1, 1),
        _max("pool4", 2, 2),
        _conv("conv5_1", 512, 3, 1, 1), _conv("conv5_2", 512, 3, 1, 1), _conv("conv5_3", 512, 3, 1, 1),
        _max("pool5", 2, 2), _fc("fc6", 256), _fc("fc7", 256), _fc("fc8", 100),
    ]),
    "resnet": ((3, 55, 55), [
        _conv("conv1", 64, 7, 2, 3), _max("pool1", 2, 2),
        _conv("res2a_1", 64, 1), _conv("res2a_2", 64, 3, 1, 1), _conv("res2a_3", 256, 1),
        _conv("res2b_1", 64, 1), _conv("res2b_2", 64, 3, 1, 1), _conv("res2b_3", 256, 1),
        _max("pool2", 2, 2),
        _conv("res3a_1", 128, 1), _conv("res3a_2", 128, 3, 1, 1), _conv("res3a_3", 512, 1),
        _conv("res3b_1", 128, 1), _conv("res3b_2", 128, 3, 1, 1), _conv("res3b_3", 512, 1),
        _avg("pool3", 7, 7), _fc("fc", 100),
    ]),
    "googlenet": ((3, 55, 55), [
        _conv("conv1", 64, 7, 2, 3), _max("pool1", 2, 2),
        _conv("conv2_reduce", 64, 1), _conv("conv2", 192, 3, 1, 1), _max("pool2", 2, 2),
        _conv("inc3a_1x1", 64, 1), _conv("inc3a_3x3_reduce", 96, 1), _conv("inc3a_3x3", 128, 3, 1, 1),
        _conv("inc3a_5x5_reduce", 16, 1), _conv("inc3a_5x5", 32, 5, 1, 2), _conv("inc3a_proj", 32, 1),
        _avg("pool3", 7, 7), _fc("fc", 100),
    ]),
}


def build_layers(name: str) -> tuple[tuple[int, int, int], list[LayerSpec]]:
    """Input shape and chained layer specs of zoo network ``name``."""
    try:
        shape, rows = NETWORKS[name]
    except KeyError:
        raise KeyError(f"unknown network {name!r}; choose from {', '.join(NETWORKS)}") from None
    layers = []
    c, h, w = shape
    for lname, kind, f, k, s, p in rows:
        kind = LayerKind(kind)
        if kind is LayerKind.FC:
            spec = LayerSpec(kind, w, h, c, filters=f, name=lname)
        else:
            spec = LayerSpec(kind, w, h, c, k, k, f if kind is LayerKind.CONV else 1, s, p,
                             relu=kind is LayerKind.CONV, name=lname)
        spec.validate()
        layers.append(spec)
        c, h, w = spec.out_shape
    return shape, layers


def gen_net(name: str, seed: int = 0, weight_sparsity: float = 0.5, weight_scale: int = 4,
            shift: int | None = None, verify: bool = True) -> str:
    """INI text for zoo network ``name`` with synthetic block-sparse weights.

    With ``shift=None`` each layer's shift is picked from its fan-in so
    activations keep roughly the same spread from layer to layer.
    """
    shape, layers = build_layers(name)
    out = [
        "[network]",
        f"name = {name}",
        f"input = {','.join(map(str, shape))}",
        f"seed = {seed}",
        "input_scale = 16",
        f"verify = {'true' if verify else 'false'}",
        "",
        "[hardware]",
        "array_rows = 128",
        "array_cols = 4",
        "regs_per_pe = 4",
        "split = auto",
        "pu_count = 4",
        "reserved_buf_cap = none",
        "sram_bandwidth = 4",
        "block_size = 8",
        "bank_count = 4",
        "group_size = 4",
        "prune_threshold = 0",
        "",
    ]
    for spec in layers:
        out.append(f"[layer {spec.name}]")
        out.append(f"kind = {spec.kind.value}")
        out.append(f"input = {spec.channels},{spec.in_h},{spec.in_w}")
        if spec.kind is not LayerKind.FC:
            out.append(f"kernel = {spec.kernel_h}")
            out.append(f"stride = {spec.stride}")
        if spec.kind is LayerKind.CONV:
            out.append(f"padding = {spec.padding}")
        if spec.kind in (LayerKind.CONV, LayerKind.FC):
            out.append(f"filters = {spec.filters}")
            out.append(f"relu = {'true' if spec.kind is LayerKind.CONV else 'false'}")
            out.append(f"shift = {_auto_shift(spec, weight_sparsity, weight_scale) if shift is None else shift}")
            out.append("weights = random")
            out.append(f"weight_sparsity = {weight_sparsity}")
            out.append(f"weight_scale = {weight_scale}")
        out.append("")
    return "\n".join(out)


def _auto_shift(spec: LayerSpec, sparsity: float, scale: int) -> int:
    live = spec.patch_len * max(1.0 - sparsity, 1e-3)
    w_std = math.sqrt(scale * (scale + 1) / 3)
    # ReLU inputs carry about half the energy of a symmetric signal
    return max(0, round(math.log2(math.sqrt(live / 2) * w_std)))
