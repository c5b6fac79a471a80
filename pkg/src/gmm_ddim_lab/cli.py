"""Command line entry point: ``sample``, ``sweep``, ``verify`` and ``ablate``.

Exit status is 0 when every requested cell and check succeeds, 1 when any
cell or check fails, and 2 for usage, config or I/O errors.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

import numpy as np

from .checks import ORACLES, run_checks
from .errors import ParameterError
from .experiment import (
    CSV_HEADER,
    best_s_rows,
    emit_summary,
    expand_cells,
    load_config,
    run_cell,
    run_sweep,
    write_csv,
)

log = logging.getLogger("gmm_ddim_lab")

ABLATE_COMPONENTS = [2, 4, 8]
ABLATE_SCALES = [0.01, 0.1, 1.0, 10.0]


def _common(p):
    p.add_argument("--config", type=Path, help="YAML config with dotted keys")
    p.add_argument("--out", type=Path, help="output CSV path")
    p.add_argument("--seed", type=int, help="master seed (overrides sampler.seed)")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE", help="override a config key")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gmm-ddim-lab", description="Gaussian-mixture DDIM sampling experiments")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("sample", help="run a single cell")
    _common(p)
    p.add_argument("--samples", type=Path, help="also save the final samples as .npy")

    for name, text in (("sweep", "run the cross product of sweep lists"), ("ablate", "sweep K and s for the mixture kernel")):
        p = sub.add_parser(name, help=text)
        _common(p)
        p.add_argument("--workers", type=int, help="concurrent cells")
        p.add_argument("--quiet", action="store_true", help="skip the summary table")

    p = sub.add_parser("verify", help="run oracle suites")
    _common(p)
    p.add_argument("--oracle", default="all", choices=["all", *ORACLES])
    p.add_argument("--K", type=int, default=2)
    p.add_argument("--S", type=int, default=3)
    p.add_argument("--D", type=int, default=4)
    p.add_argument("--scheme", default="ortho", choices=["rand", "ortho", "ortho_vub"])
    p.add_argument("--scale", type=float, default=0.01)
    p.add_argument("--eta", type=float, default=1.0)
    p.add_argument("--chains", type=int, default=20_000)
    return parser


def _best_path(out: Path) -> Path:
    return out.with_name(out.stem + ".best_s" + out.suffix)


def _cmd_sweep(args, ablate=False) -> int:
    overrides = list(args.overrides)
    if ablate:
        # ablation defaults apply only where the user gave nothing
        given = {o.split("=", 1)[0].strip() for o in overrides}
        preset = {"sampler.kind": "ddim_gmm", "kernel.scheme": "gmm_ortho_vub",
                  "kernel.components": ABLATE_COMPONENTS, "kernel.scale": ABLATE_SCALES}
        overrides = [(k, v) for k, v in preset.items() if k not in given] + overrides
    config = load_config(args.config, overrides, args.seed)
    cells, dropped = expand_cells(config)
    log.info("%d cells (%d degenerate duplicates dropped)", len(cells), dropped)
    rows = run_sweep(config, cells, workers=args.workers)
    out = args.out or Path("results.csv")
    write_csv(rows, out)
    write_csv(best_s_rows(rows), _best_path(out))
    if not args.quiet:
        print(emit_summary(rows))
    return 0 if all(r["status"] == "ok" for r in rows) else 1


def _cmd_sample(args) -> int:
    config = load_config(args.config, args.overrides, args.seed)
    cells, _ = expand_cells(config)
    if len(cells) != 1:
        raise ParameterError(f"sample runs one cell but the config expands to {len(cells)}; use sweep")
    row, finals = run_cell(config, cells[0], 0)
    write_csv([row], args.out or Path("sample.csv"))
    if args.samples is not None and finals is not None:
        np.save(args.samples, finals)
    print(emit_summary([row]))
    return 0 if row["status"] == "ok" else 1


def _cmd_verify(args) -> int:
    seed = 0 if args.seed is None else args.seed
    rows = run_checks(args.oracle, K=args.K, S=args.S, D=args.D, scheme=args.scheme, seed=seed,
                      scale=args.scale, eta=args.eta, chains=args.chains)
    fh = open(args.out, "w", newline="") if args.out else sys.stdout
    try:
        fh.write(CSV_HEADER + "\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", "quantity", "value", "tolerance", "pass"])
        for r in rows:
            w.writerow(["" if r.step is None else r.step, r.quantity, repr(r.value), repr(r.tolerance), "pass" if r.passed else "fail"])
    finally:
        if fh is not sys.stdout:
            fh.close()
    return 0 if all(r.passed for r in rows) else 1


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(message)s", stream=sys.stderr)
    args = build_parser().parse_args(argv)
    try:
        if args.command == "sample":
            return _cmd_sample(args)
        if args.command == "verify":
            return _cmd_verify(args)
        return _cmd_sweep(args, ablate=args.command == "ablate")
    except (OSError, ParameterError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
