"""Command line entry point: ``spotsim run|sweep|encode-weights|gen-net``.

Exit codes: 0 success, 1 usage/config/I-O error, 2 verification failure.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import tensorbin
from .metrics import reports_to_csv, reports_to_json
from .runner import (ConfigError, VerificationError, load_config, parse_grid, run_network, sweep,
                     sweep_rows, synthetic_input)
from .sparse import (Norm, PruneConfig, encode_blocksparse, footprint_blocksparse, footprint_csr,
                     prune_groupwise, write_sbsw)
from .zoo import NETWORKS, gen_net

EXIT_OK, EXIT_ERROR, EXIT_VERIFY = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_ERROR, f"{self.prog}: error: {message}\n")


def _emit(text: str, dest: str | None) -> None:
    if dest:
        Path(dest).write_text(text)
    else:
        sys.stdout.write(text)


def _format(rows, fmt):
    return reports_to_json(rows) if fmt == "json" else reports_to_csv(rows)


def _load_input(cfg, path, batch):
    if path:
        return tensorbin.load(path)
    return synthetic_input(cfg, batch if batch > 1 else None)


def cmd_run(a) -> int:
    cfg = load_config(a.config)
    verify = cfg.verify if a.verify is None else a.verify
    x = _load_input(cfg, a.input, a.batch)
    out, reports = run_network(cfg, x, verify=verify)
    if a.output:
        tensorbin.save(a.output, out)
    _emit(_format([r.to_row() for r in reports], a.format), a.report)
    if verify:
        logging.getLogger("spotsim").info("all %d layers match the reference", len(reports))
    return EXIT_OK


def cmd_sweep(a) -> int:
    cfg = load_config(a.config)
    if a.verify is not None:
        cfg.verify = a.verify
    grid = parse_grid(Path(a.grid).read_text())
    x = _load_input(cfg, a.input, a.batch)
    rows = sweep_rows(sweep(cfg, grid, x, jobs=a.jobs))
    _emit(_format(rows, a.format), a.report)
    return EXIT_OK


def cmd_encode(a) -> int:
    w = tensorbin.load(a.input)
    if w.ndim == 4:
        w = w.reshape(w.shape[0], -1)
    if w.ndim != 2:
        raise ConfigError(f"expected a 2-D or 4-D weight tensor, got rank {w.ndim}")
    cfg = PruneConfig(a.group_size, a.threshold, Norm(a.norm))
    pruned = prune_groupwise(w, cfg)
    enc = encode_blocksparse(pruned, a.group_size, a.bank_count)
    write_sbsw(a.output, enc)
    print(f"{a.output}: {enc.filters}x{enc.cols}, {enc.stored_values} stored values, "
          f"{enc.nnz_cols}/{enc.cols} non-empty columns, "
          f"footprint {footprint_blocksparse(enc)} B (CSR {footprint_csr(pruned)} B)")
    return EXIT_OK


def cmd_gen_net(a) -> int:
    text = gen_net(a.name, seed=a.seed, weight_sparsity=a.weight_sparsity,
                   weight_scale=a.weight_scale, shift=a.shift, verify=not a.no_verify)
    _emit(text, a.output)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="spotsim", description="Cycle-level sparse CNN accelerator simulator")
    p.add_argument("--log-level", default="WARNING", help="logging level (default WARNING)")
    sub = p.add_subparsers(dest="cmd", required=True, parser_class=_Parser)

    def common(sp):
        sp.add_argument("config", help="network config (INI)")
        sp.add_argument("-i", "--input", help="input TensorBin (C,H,W) or (B,C,H,W); synthetic if omitted")
        sp.add_argument("--batch", type=int, default=1, help="batch size of the synthetic input")
        v = sp.add_mutually_exclusive_group()
        v.add_argument("--verify", dest="verify", action="store_true", default=None,
                       help="check every layer against the reference model")
        v.add_argument("--no-verify", dest="verify", action="store_false")
        sp.add_argument("--report", help="write the report here instead of stdout")
        sp.add_argument("--format", choices=("csv", "json"), default="csv")

    r = sub.add_parser("run", help="simulate a network")
    common(r)
    r.add_argument("-o", "--output", help="write the final activations as TensorBin")
    r.set_defaults(func=cmd_run)

    s = sub.add_parser("sweep", help="simulate a network over a parameter grid")
    common(s)
    s.add_argument("grid", help="grid file with a [grid] section")
    s.add_argument("-j", "--jobs", type=int, default=1, help="worker processes")
    s.set_defaults(func=cmd_sweep)

    e = sub.add_parser("encode-weights", help="prune and encode a TensorBin weight tensor as SBSW")
    e.add_argument("input")
    e.add_argument("output")
    e.add_argument("--group-size", type=int, default=4)
    e.add_argument("--bank-count", type=int, default=4)
    e.add_argument("--threshold", type=int, default=0)
    e.add_argument("--norm", choices=[n.value for n in Norm], default="maxabs")
    e.set_defaults(func=cmd_encode)

    g = sub.add_parser("gen-net", help="emit a zoo network config")
    g.add_argument("name", choices=sorted(NETWORKS))
    g.add_argument("-o", "--output")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--weight-sparsity", type=float, default=0.5)
    g.add_argument("--weight-scale", type=int, default=4)
    g.add_argument("--shift", type=int, default=None, help="fixed requantization shift (default: per-layer)")
    g.add_argument("--no-verify", action="store_true", help="emit verify = false")
    g.set_defaults(func=cmd_gen_net)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    a = parser.parse_args(argv)
    logging.basicConfig(level=a.log_level.upper(), format="%(levelname)s %(name)s: %(message)s")
    try:
        return a.func(a)
    except VerificationError as e:
        print(f"verification failed: {e}", file=sys.stderr)
        return EXIT_VERIFY
    except (ConfigError, OSError, ValueError, KeyError, TypeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
