"""Residual indicator versus number of DEIM vectors for all three sweeps.

    python3 scripts/run_figures.py --config scripts/fig16.cfg --out runs/fig16
"""
import argparse
import logging
from pathlib import Path

from nsrom import bench


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", type=Path, default=Path(__file__).with_name("fig16.cfg"))
    ap.add_argument("--out", type=Path, default=Path("runs/fig16"))
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(name)s: %(message)s")

    config = bench.load_config(args.config)
    bundle = args.out / "bundle"
    if not (bundle / "manifest.json").exists():
        bench.run_offline(config, bundle)
    for sweep in bench.SWEEPS:
        rows = bench.figure_data(config, bundle, sweep)
        bench.write_csv(rows, args.out / f"{sweep}.csv")
        print(f"\n{sweep} (reduced-model baseline {rows[0]['reduced_eta']:.2e})")
        for r in rows:
            print(f"  {r['strategy']:<12}{r['method']:<7}n_deim={r['n_deim']:<5}eta={r['mean_eta']:.2e}")


if __name__ == "__main__":
    main()
