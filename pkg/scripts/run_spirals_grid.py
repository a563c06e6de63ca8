"""Ablation grid on the spirals experiment: median light/booster test error per mode.

    python3 scripts/run_spirals_grid.py --seeds 5 --out results/grid.csv
"""

import argparse
import logging
from pathlib import Path

from rocket.config import apply_overrides, load_config
from rocket.harness import run_ablation_grid

ROOT = Path(__file__).resolve().parents[1]
MODES = "base,rocket,rocket_no_joint,rocket_no_sharing,rocket_no_gb,rocket_plus_kd,booster_only"


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--config", default=str(ROOT / "configs" / "spirals.ini"))
    p.add_argument("--modes", default=MODES)
    p.add_argument("--seeds", type=int, default=5)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", default=None)
    p.add_argument("--set", action="append", default=[])
    args = p.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

    cfg = apply_overrides(load_config(args.config), args.set).validate()
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    grid = run_ablation_grid(cfg, args.modes.split(","), k=args.seeds, workers=args.workers, csv_path=args.out)
    print(grid.to_csv(), end="")
    for row in grid.rows:
        errs = ", ".join("-" if e is None else f"{100 * e:.2f}" for e in row.errs_light)
        print(f"# {row.mode:<18} light err per seed (%): {errs}")


if __name__ == "__main__":
    main()
