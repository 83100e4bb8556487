"""Network configs, end-to-end runs with oracle verification, and sweeps.

Config files are INI-style (``configparser``). See ``docs/config.md`` for
the schema; ``gen_net`` emits ready-made examples.
"""
from __future__ import annotations

import configparser
import itertools
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import tensorbin
from .accelerator import HardwareConfig, LayerResult, simulate_conv_layer, simulate_fc_layer, simulate_pool_layer
from .core import LayerKind, LayerSpec, conv_reference, fc_reference, flatten_filters, pool_reference, unflatten_filters
from .gemm import ArrayConfig
from .im2col import Im2ColConfig
from .metrics import EnergyCostTable, SimReport
from .sparse import (BlockSparseWeights, Norm, PruneConfig, decode_blocksparse, encode_blocksparse,
                     prune_groupwise, read_sbsw)

log = logging.getLogger(__name__)

SWEEP_KEYS = ("split", "reserved_buf_cap", "block_size", "group_size", "sram_bandwidth")


class ConfigError(ValueError):
    pass


class VerificationError(RuntimeError):
    def __init__(self, layer_id: int, name: str, index: tuple, expected: int, got: int, sample: int = 0):
        self.layer_id = layer_id
        self.name = name
        self.index = index
        self.expected = expected
        self.got = got
        self.sample = sample
        super().__init__(
            f"layer {layer_id} ({name}), sample {sample}: first mismatch at index {index}: "
            f"expected {expected}, got {got}"
        )


@dataclass
class LayerEntry:
    spec: LayerSpec
    weights: str = "random"
    weight_sparsity: float = 0.0
    weight_scale: int = 8


@dataclass
class NetworkConfig:
    name: str
    input_shape: tuple[int, int, int]
    layers: list[LayerEntry]
    hw: HardwareConfig = field(default_factory=HardwareConfig)
    verify: bool = True
    seed: int = 0
    input_scale: int = 16
    base_dir: Path = field(default_factory=Path)

    def validate(self) -> None:
        shape = tuple(self.input_shape)
        for i, entry in enumerate(self.layers):
            spec = entry.spec
            if spec.in_shape != shape:
                raise ConfigError(
                    f"layer {i} ({spec.name}) expects input {spec.in_shape} but receives {shape}"
                )
            shape = spec.out_shape


# ---------------------------------------------------------------- parsing

def _opt_int(v: str) -> int | None:
    v = v.strip().lower()
    return None if v in ("none", "inf", "unbounded", "") else int(v)


def _num(v: str):
    f = float(v)
    return int(f) if f.is_integer() else f


def _shape(v: str) -> tuple[int, ...]:
    return tuple(int(t) for t in v.replace("x", ",").split(",") if t.strip())


def _hardware(cp: configparser.ConfigParser) -> HardwareConfig:
    h = cp["hardware"] if cp.has_section("hardware") else {}
    get = lambda k, d: h.get(k, d) if h else d  # noqa: E731
    split = str(get("split", "1")).strip().lower()
    array = ArrayConfig(
        rows=int(get("array_rows", 128)),
        cols=int(get("array_cols", 4)),
        regs_per_pe=int(get("regs_per_pe", 4)),
        split=1 if split == "auto" else int(split),
        acc_bits=_opt_int(str(get("acc_bits", "none"))),
    )
    reuse = str(get("reuse", "true")).lower() in ("1", "true", "yes", "on")
    im2col = Im2ColConfig(
        pu_count=int(get("pu_count", 4)),
        reserved_buf_cap=_opt_int(str(get("reserved_buf_cap", "none"))),
        neighbor_buf_cap=_opt_int(str(get("neighbor_buf_cap", "none"))),
        sram_bandwidth=int(get("sram_bandwidth", 4)),
        reuse=reuse,
    )
    secondary = Im2ColConfig(
        pu_count=int(get("secondary_pu_count", 2)),
        reserved_buf_cap=_opt_int(str(get("secondary_reserved_buf_cap", "none"))),
        neighbor_buf_cap=im2col.neighbor_buf_cap,
        sram_bandwidth=int(get("secondary_sram_bandwidth", im2col.sram_bandwidth)),
        reuse=reuse,
    )
    prune = PruneConfig(
        group_size=int(get("group_size", 4)),
        threshold=int(get("prune_threshold", 0)),
        norm=Norm(str(get("prune_norm", "maxabs")).lower()),
    )
    energy = EnergyCostTable()
    if cp.has_section("energy"):
        energy = EnergyCostTable(**{k: _num(v) for k, v in cp["energy"].items()})
    return HardwareConfig(
        array=array, im2col=im2col, secondary_im2col=secondary,
        block_size=int(get("block_size", 8)), bank_count=int(get("bank_count", 4)),
        prune=prune, energy=energy, auto_split=(split == "auto"),
    )


def _layer(name: str, sec) -> LayerEntry:
    kind = LayerKind(sec.get("kind", "conv").strip().lower())
    c, h, w = _shape(sec["input"])
    kernel = _shape(sec.get("kernel", "1"))
    kh, kw = (kernel[0], kernel[0]) if len(kernel) == 1 else kernel[:2]
    bias = sec.get("bias", "none").strip().lower()
    spec = LayerSpec(
        kind=kind, in_w=w, in_h=h, channels=c, kernel_h=kh, kernel_w=kw,
        filters=int(sec.get("filters", 1)), stride=int(sec.get("stride", 1)),
        padding=int(sec.get("padding", 0)), batch=int(sec.get("batch", 1)),
        bias=None if bias == "none" else _shape(bias),
        relu=sec.get("relu", "false").lower() in ("1", "true", "yes", "on"),
        shift=int(sec.get("shift", 0)), name=name,
    )
    return LayerEntry(spec, sec.get("weights", "random").strip(),
                      float(sec.get("weight_sparsity", 0.0)), int(sec.get("weight_scale", 8)))


def parse_config(text: str, base_dir=".") -> NetworkConfig:
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        cp.read_string(text)
    except configparser.Error as e:
        raise ConfigError(str(e)) from e
    if not cp.has_section("network"):
        raise ConfigError("missing [network] section")
    net = cp["network"]
    layers = [_layer(s.split(None, 1)[1], cp[s]) for s in cp.sections() if s.startswith("layer ")]
    if not layers:
        raise ConfigError("no [layer ...] sections")
    try:
        cfg = NetworkConfig(
            name=net.get("name", "net"),
            input_shape=_shape(net.get("input", ",".join(map(str, layers[0].spec.in_shape)))),
            layers=layers,
            hw=_hardware(cp),
            verify=net.get("verify", "true").lower() in ("1", "true", "yes", "on"),
            seed=int(net.get("seed", 0)),
            input_scale=int(net.get("input_scale", 16)),
            base_dir=Path(base_dir),
        )
    except (KeyError, ValueError) as e:
        raise ConfigError(str(e)) from e
    cfg.validate()
    return cfg


def load_config(path) -> NetworkConfig:
    path = Path(path)
    return parse_config(path.read_text(), base_dir=path.parent)


def parse_grid(text: str) -> dict:
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    cp.read_string(text)
    if not cp.has_section("grid"):
        raise ConfigError("grid file needs a [grid] section")
    grid = {}
    for k, v in cp["grid"].items():
        if k not in SWEEP_KEYS:
            raise ConfigError(f"cannot sweep {k!r}; allowed: {', '.join(SWEEP_KEYS)}")
        grid[k] = [_opt_int(t) for t in v.split(",")]
    return grid


# ---------------------------------------------------------------- weights and inputs

def synthetic_weights(entry: LayerEntry, seed: int, index: int, group_size: int) -> np.ndarray:
    """Deterministic random weight matrix with a fraction of zeroed G x 1 blocks."""
    rng = np.random.default_rng([seed, index])
    f, cols = entry.spec.weight_shape
    s = entry.weight_scale
    w = rng.integers(-s, s + 1, size=(f, cols), dtype=np.int16)
    if entry.weight_sparsity > 0:
        nb = -(-f // group_size)
        dead = rng.random((nb, cols)) < entry.weight_sparsity
        w[np.repeat(dead, group_size, axis=0)[:f]] = 0
    return w


def resolve_weights(cfg: NetworkConfig, index: int) -> tuple[BlockSparseWeights, np.ndarray]:
    """Encoded weights for layer ``index`` and their dense (pruned) matrix."""
    entry = cfg.layers[index]
    hw = cfg.hw
    ref = entry.weights
    if ref == "random":
        dense = synthetic_weights(entry, cfg.seed, index, hw.prune.group_size)
    else:
        path = cfg.base_dir / ref
        if path.suffix.lower() == ".sbsw":
            enc = read_sbsw(path)
            if enc.shape != entry.spec.weight_shape:
                raise ConfigError(f"{ref}: shape {enc.shape} != {entry.spec.weight_shape}")
            return enc, decode_blocksparse(enc)
        dense = tensorbin.load(path)
        dense = flatten_filters(dense) if dense.ndim == 4 else dense
        if dense.shape != entry.spec.weight_shape:
            raise ConfigError(f"{ref}: shape {dense.shape} != {entry.spec.weight_shape}")
    dense = prune_groupwise(dense, hw.prune)
    return encode_blocksparse(dense, hw.prune.group_size, hw.bank_count), dense


def synthetic_input(cfg: NetworkConfig, batch: int | None = None) -> np.ndarray:
    rng = np.random.default_rng([cfg.seed, 1 << 20])
    shape = tuple(cfg.input_shape) if batch is None else (batch, *cfg.input_shape)
    return rng.integers(0, cfg.input_scale, size=shape, dtype=np.int16)


# ---------------------------------------------------------------- running

def _first_mismatch(expected: np.ndarray, got: np.ndarray):
    if expected.shape != got.shape:
        return (), -1, -1
    diff = np.argwhere(expected != got)
    if not len(diff):
        return None
    idx = tuple(int(i) for i in diff[0])
    return idx, int(expected[idx]), int(got[idx])


def _check(layer_id, spec, expected, got, sample):
    bad = _first_mismatch(expected, got)
    if bad is not None:
        raise VerificationError(layer_id, spec.name, *bad, sample=sample)


def merge_reports(parts: list[SimReport]) -> SimReport:
    """Sequential repeats of one layer (batch > 1 on conv/pool): counts add."""
    if len(parts) == 1:
        return parts[0]
    first = parts[0]

    def add(dicts):
        out = {}
        for k in dicts[0]:
            vals = [d[k] for d in dicts]
            out[k] = vals[0] if k.endswith(("occupancy", "fraction")) else sum(vals)
        if "mac_active_fraction" in out:
            out["mac_active_fraction"] = out["mac_ops"] / out["pe_cycles"] if out["pe_cycles"] else 0.0
        return out

    return replace(
        first,
        cycles=sum(p.cycles for p in parts),
        im2col_cycles=sum(p.im2col_cycles for p in parts),
        gemm_cycles=sum(p.gemm_cycles for p in parts),
        im2col=add([p.im2col for p in parts]) if first.im2col else {},
        gemm=add([p.gemm for p in parts]) if first.gemm else {},
        events=add([p.events for p in parts]),
        energy=add([p.energy for p in parts]),
    )


def simulate_layer(cfg: NetworkConfig, index: int, xs: np.ndarray, weights=None) -> tuple[np.ndarray, SimReport, list]:
    """Run one layer on a batch ``xs`` (B, C, H, W). Returns outputs, the
    merged report, and per-sample results for verification."""
    entry = cfg.layers[index]
    spec = entry.spec
    hw = cfg.hw
    if spec.kind is LayerKind.FC:
        enc, _ = weights
        batch = xs.reshape(xs.shape[0], -1).T
        res = simulate_fc_layer(batch, enc, spec, hw, index)
        return res.output.T.reshape(xs.shape[0], *spec.out_shape), res.report, [res]
    results: list[LayerResult] = []
    for b in range(xs.shape[0]):
        if spec.kind is LayerKind.CONV:
            results.append(simulate_conv_layer(xs[b], weights[0], spec, hw, index))
        else:
            results.append(simulate_pool_layer(xs[b], spec, hw, index))
    out = np.stack([r.output for r in results])
    return out, merge_reports([r.report for r in results]), results


def reference_layer(cfg: NetworkConfig, index: int, xs: np.ndarray, dense) -> np.ndarray:
    spec = cfg.layers[index].spec
    if spec.kind is LayerKind.FC:
        return fc_reference(dense, xs.reshape(xs.shape[0], -1).T, spec).T.reshape(xs.shape[0], *spec.out_shape)
    if spec.kind is LayerKind.CONV:
        f = unflatten_filters(dense, spec)
        return np.stack([conv_reference(x, f, spec) for x in xs])
    return np.stack([pool_reference(x, spec) for x in xs])


def run_network(cfg: NetworkConfig, x=None, verify: bool | None = None):
    """Run every layer in order. ``x`` is (C, H, W) or (B, C, H, W); a
    synthetic input is generated when omitted. Returns (output, reports)."""
    cfg.validate()
    verify = cfg.verify if verify is None else verify
    x = synthetic_input(cfg) if x is None else np.asarray(x, dtype=np.int16)
    single = x.ndim == 3
    xs = x[None] if single else x
    if xs.shape[1:] != tuple(cfg.input_shape):
        raise ConfigError(f"input shape {xs.shape[1:]} != network input {tuple(cfg.input_shape)}")
    reports = []
    for i, entry in enumerate(cfg.layers):
        weights = resolve_weights(cfg, i) if entry.spec.kind in (LayerKind.CONV, LayerKind.FC) else None
        out, rep, _ = simulate_layer(cfg, i, xs, weights)
        if verify:
            expected = reference_layer(cfg, i, xs, weights[1] if weights else None)
            for b in range(xs.shape[0]):
                _check(i, entry.spec, expected[b], out[b], b)
        log.info("layer %d %s: %d cycles, energy %s", i, entry.spec.name, rep.cycles, rep.total_energy)
        reports.append(rep)
        xs = out
    return (xs[0] if single else xs), reports


def apply_point(cfg: NetworkConfig, point: dict) -> NetworkConfig:
    hw = cfg.hw
    arr, i2c, prune = hw.array, hw.im2col, hw.prune
    auto = hw.auto_split
    for k, v in point.items():
        if k == "split":
            arr, auto = replace(arr, split=v), False
        elif k == "reserved_buf_cap":
            i2c = replace(i2c, reserved_buf_cap=v)
        elif k == "sram_bandwidth":
            i2c = replace(i2c, sram_bandwidth=v)
        elif k == "group_size":
            prune = replace(prune, group_size=v)
        elif k == "block_size":
            hw = replace(hw, block_size=v)
        else:
            raise ConfigError(f"cannot sweep {k!r}")
    return replace(cfg, hw=replace(hw, array=arr, im2col=i2c, prune=prune, auto_split=auto))


def grid_points(grid: dict) -> list[dict]:
    keys = [k for k in SWEEP_KEYS if k in grid]
    return [dict(zip(keys, vals)) for vals in itertools.product(*(grid[k] for k in keys))]


def _run_point(args):
    cfg, point, x = args
    _, reports = run_network(apply_point(cfg, point), x)
    return reports


def sweep(cfg: NetworkConfig, grid: dict, x=None, jobs: int = 1) -> list[tuple[dict, list[SimReport]]]:
    """One report set per grid point, in grid order."""
    points = grid_points(grid)
    x = synthetic_input(cfg) if x is None else x
    args = [(cfg, p, x) for p in points]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_point, args))
    else:
        results = [_run_point(a) for a in args]
    return list(zip(points, results))


def sweep_rows(results) -> list[dict]:
    rows = []
    for point, reports in results:
        for rep in reports:
            row = {f"param_{k}": ("none" if v is None else v) for k, v in point.items()}
            row.update(rep.to_row())
            rows.append(row)
    return rows
