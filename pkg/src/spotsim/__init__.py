"""Cycle-level simulator of a sparse CNN accelerator with a reuse-aware
Im2Col unit and a zero-skipping systolic GEMM array."""
from .accelerator import HardwareConfig, LayerResult, simulate_conv_layer, simulate_fc_layer, simulate_pool_layer
from .compressor import compress_tile
from .core import LayerKind, LayerSpec, conv_reference, fc_reference, gemm_reference, im2col_reference, pool_reference
from .gemm import ArrayConfig, GemmStats, configure, simulate_gemm
from .im2col import Im2ColConfig, Im2ColStats, generate_patches, simulate_im2col
from .metrics import EnergyCostTable, SimReport, compare_reuse_energy, tally
from .runner import NetworkConfig, VerificationError, load_config, parse_config, run_network, sweep
from .sparse import BlockSparseWeights, PruneConfig, decode_blocksparse, encode_blocksparse, prune_groupwise

__version__ = "0.1.0"

__all__ = [
    "ArrayConfig", "BlockSparseWeights", "EnergyCostTable", "GemmStats", "HardwareConfig", "Im2ColConfig",
    "Im2ColStats", "LayerKind", "LayerResult", "LayerSpec", "NetworkConfig", "PruneConfig", "SimReport",
    "VerificationError", "compare_reuse_energy", "compress_tile", "configure", "conv_reference",
    "decode_blocksparse", "encode_blocksparse", "fc_reference", "gemm_reference", "generate_patches",
    "im2col_reference", "load_config", "parse_config", "pool_reference", "prune_groupwise", "run_network",
    "simulate_conv_layer", "simulate_fc_layer", "simulate_gemm", "simulate_im2col", "simulate_pool_layer",
    "sweep", "tally",
]
