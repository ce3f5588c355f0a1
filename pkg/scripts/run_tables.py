"""Offline build plus online sweep: accuracy and iteration-count tables.

    python3 scripts/run_tables.py --config scripts/desk32.cfg --out runs/desk32
"""
import argparse
import logging
from pathlib import Path

from nsrom import bench


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", type=Path, default=Path(__file__).with_name("desk32.cfg"))
    ap.add_argument("--out", type=Path, default=Path("runs/desk32"))
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(name)s: %(message)s")

    config = bench.load_config(args.config)
    bundle = args.out / "bundle"
    if not (bundle / "manifest.json").exists():
        bench.run_offline(config, bundle)
    rows = bench.run_online(config, bundle)
    bench.write_csv(rows, args.out / "online.csv")
    print(f"{'model':<11}{'solver':<10}{'precond':<16}{'eta':>10}{'picard':>8}{'krylov':>8}{'visits':>8}")
    for r in rows:
        if r["xi_id"] != "mean":
            continue
        lin = r["mean_linear_iters"]
        print(f"{r['model']:<11}{r['solver']:<10}{r['preconditioner']:<16}{r['eta']:>10.2e}"
              f"{r['nonlinear_iters']:>8.1f}{lin if lin == '' else f'{lin:.2f}':>8}{r['element_visits']:>8.0f}")


if __name__ == "__main__":
    main()
