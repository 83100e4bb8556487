"""Event accounting and the abstract energy model.

Energies are in abstract units: ``count * cost`` summed over event
classes. Only ratios between configurations are meaningful.
"""
from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .core import LayerKind, LayerSpec
from .im2col import Im2ColConfig, Im2ColStats, simulate_im2col

EVENTS = ("dram_reads", "sram_reads", "sram_writes", "buffer_accesses", "mac_ops", "gated_macs", "metadata_ops")


@dataclass(frozen=True)
class EnergyCostTable:
    dram_read: float = 200
    sram_read: float = 6
    sram_write: float = 6
    buffer_access: float = 1
    mac_op: float = 1
    metadata_op: float = 1

    def __post_init__(self):
        for f in fields(self):
            if getattr(self, f.name) < 0:
                raise ValueError(f"{f.name} cost must be >= 0")

    def scaled(self, k: float) -> "EnergyCostTable":
        return EnergyCostTable(**{f.name: getattr(self, f.name) * k for f in fields(self)})


def tally(counters: dict, table: EnergyCostTable = EnergyCostTable()) -> dict:
    """Energy per event class plus ``total``.

    A gated MAC costs no MAC energy, only the metadata check that gated it.
    """
    unknown = set(counters) - set(EVENTS)
    if unknown:
        raise KeyError(f"unknown event counters: {sorted(unknown)}")
    c = {k: counters.get(k, 0) for k in EVENTS}
    out = {
        "dram": c["dram_reads"] * table.dram_read,
        "sram_read": c["sram_reads"] * table.sram_read,
        "sram_write": c["sram_writes"] * table.sram_write,
        "buffer": c["buffer_accesses"] * table.buffer_access,
        "mac": c["mac_ops"] * table.mac_op,
        "metadata": (c["metadata_ops"] + c["gated_macs"]) * table.metadata_op,
    }
    out["total"] = sum(out.values())
    return out


def im2col_events(st: Im2ColStats) -> dict:
    return {
        "sram_reads": st.sram_reads,
        "buffer_accesses": st.buffer_accesses,
        "metadata_ops": st.metadata_ops,
    }


def compare_reuse_energy(layer: LayerSpec, cfg: Im2ColConfig = Im2ColConfig(),
                         table: EnergyCostTable = EnergyCostTable(), x=None) -> float:
    """Fractional Im2Col-unit energy saved by neighbor/reserve reuse.

    Returns ``1 - E_reuse / E_naive``. Event counts do not depend on the
    feature values, so ``x`` defaults to zeros.
    """
    if layer.kind is not LayerKind.CONV:
        raise ValueError("reuse comparison needs a conv layer")
    if x is None:
        x = np.zeros(layer.in_shape, dtype=np.int16)
    on = simulate_im2col(x, layer, Im2ColConfig(**{**asdict(cfg), "reuse": True}))[1]
    off = simulate_im2col(x, layer, Im2ColConfig(**{**asdict(cfg), "reuse": False}))[1]
    e_on = tally(im2col_events(on), table)["total"]
    e_off = tally(im2col_events(off), table)["total"]
    return 1.0 - e_on / e_off if e_off else 0.0


@dataclass
class SimReport:
    layer_id: int
    name: str
    kind: str
    mode: str
    cycles: int = 0
    im2col_cycles: int = 0
    gemm_cycles: int = 0
    im2col: dict = field(default_factory=dict)
    gemm: dict = field(default_factory=dict)
    events: dict = field(default_factory=dict)
    energy: dict = field(default_factory=dict)

    @property
    def total_energy(self):
        return self.energy.get("total", 0)

    def to_row(self) -> dict:
        row = {
            "layer_id": self.layer_id,
            "name": self.name,
            "kind": self.kind,
            "mode": self.mode,
            "cycles": self.cycles,
            "im2col_cycles": self.im2col_cycles,
            "gemm_cycles": self.gemm_cycles,
        }
        for k in IM2COL_COLUMNS:
            row[f"im2col_{k}"] = self.im2col.get(k, 0)
        for k in GEMM_COLUMNS:
            row[f"gemm_{k}"] = self.gemm.get(k, 0)
        for k in EVENTS:
            row[f"events_{k}"] = self.events.get(k, 0)
        for k in ENERGY_COLUMNS:
            row[f"energy_{k}"] = self.energy.get(k, 0)
        return row


# unit "cycles" counters are reported once, as im2col_cycles / gemm_cycles
IM2COL_COLUMNS = tuple(k for k in Im2ColStats.COUNTERS if k != "cycles")
GEMM_COLUMNS = (
    "streamed_positions", "skipped_by_m1", "skipped_by_feature_bitmap",
    "mac_ops", "gated_macs", "weight_reads", "feature_reads", "metadata_ops",
    "overflow_events", "tiles", "passes", "pe_cycles",
    "row_occupancy", "col_occupancy", "mac_active_fraction",
)
ENERGY_COLUMNS = ("dram", "sram_read", "sram_write", "buffer", "mac", "metadata", "total")
REPORT_COLUMNS = (
    ("layer_id", "name", "kind", "mode", "cycles", "im2col_cycles", "gemm_cycles")
    + tuple(f"im2col_{k}" for k in IM2COL_COLUMNS)
    + tuple(f"gemm_{k}" for k in GEMM_COLUMNS)
    + tuple(f"events_{k}" for k in EVENTS)
    + tuple(f"energy_{k}" for k in ENERGY_COLUMNS)
)


def _fmt(v):
    if isinstance(v, float):
        return f"{v:.6f}"
    return v


def reports_to_csv(rows: list[dict], columns=None) -> str:
    """``rows`` are ``SimReport.to_row()`` dicts, optionally with extra
    leading keys (sweep parameters)."""
    if columns is None:
        extra = [k for k in (rows[0] if rows else {}) if k not in REPORT_COLUMNS]
        columns = tuple(extra) + REPORT_COLUMNS
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_fmt(r.get(c, "")) for c in columns])
    return buf.getvalue()


def reports_to_json(rows: list[dict]) -> str:
    return json.dumps([{k: _fmt(v) if isinstance(v, float) else v for k, v in r.items()} for r in rows],
                      indent=2) + "\n"
