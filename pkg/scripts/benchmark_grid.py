#!/usr/bin/env python3
"""Full-scale synthetic benchmark grid (long-running, opt-in).

Writes one bench config per (blocksize, SNR) cell and runs it through the
same machinery as `fibercpd bench`, producing per-solver trace CSVs plus an
averaged CSV per cell.  The default grid (200^3, rank 100, B in {100, 500},
SNR in {10, 30} dB, 10 trials) takes hours; pass --small for a desk-scale
sanity pass first.
"""

import argparse
import json
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from fibercpd.cli import cli_main


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out-dir", default="bench_results")
    parser.add_argument("--small", action="store_true",
                        help="60^3, rank 20 desk-scale grid instead of the full one")
    parser.add_argument("--trials", type=int, default=10)
    parser.add_argument("--full-iters", type=int, default=100)
    parser.add_argument("--seed", type=int, default=1)
    args = parser.parse_args()

    if args.small:
        dims, rank, blocks = [60, 60, 60], 20, [100, 200]
    else:
        dims, rank, blocks = [200, 200, 200], 100, [100, 500]
    out_root = Path(args.out_dir)
    out_root.mkdir(parents=True, exist_ok=True)

    for block in blocks:
        for snr in (10.0, 30.0):
            # low SNR favours a tighter condition cap, high SNR a looser one
            cond = 10.0 if snr <= 10.0 else 100.0
            cell = out_root / f"B{block}_snr{int(snr)}"
            config = {
                "solvers": ["ascpd", "spg", "adacpd", "als"],
                "dims": dims,
                "rank": rank,
                "constraint": "nonneg",
                "block": block,
                "cond": cond,
                "eta": 1.0,
                "snr_db": snr,
                "seed": args.seed,
                "trials": args.trials,
                "max_full_iters": args.full_iters,
                "out_dir": str(cell),
            }
            cfg_path = out_root / f"B{block}_snr{int(snr)}.json"
            cfg_path.write_text(json.dumps(config, indent=2) + "\n")
            print(f"--- running {cfg_path}")
            code = cli_main(["bench", "--config", str(cfg_path)])
            if code != 0:
                sys.exit(code)


if __name__ == "__main__":
    main()
