"""Sweep hint-loss kind and lambda for the rocket mode on spirals.

Prints one line per (kind, lambda) with the median light test error over seeds.
"""

import argparse
from pathlib import Path

from rocket.config import apply_overrides, load_config
from rocket.harness import run_ablation_grid
from rocket.objective import HintLossSpec

ROOT = Path(__file__).resolve().parents[1]


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--config", default=str(ROOT / "configs" / "spirals.ini"))
    p.add_argument("--kinds", default="logit_mimic,softmax_mse,distill")
    p.add_argument("--lambdas", default="0.1,1,10")
    p.add_argument("--seeds", type=int, default=3)
    p.add_argument("--set", action="append", default=[])
    args = p.parse_args()

    cfg = apply_overrides(load_config(args.config), args.set).validate()
    print("kind,lambda,median_err_light,median_err_booster")
    for kind in args.kinds.split(","):
        for lam in (float(v) for v in args.lambdas.split(",")):
            hint = HintLossSpec(kind=kind, lam=lam, temperature=cfg.hint.temperature)
            row = run_ablation_grid(cfg.replace(hint=hint), ["rocket"], k=args.seeds).rows[0]
            print(f"{kind},{lam},{row.median_err_light:.4f},{row.median_err_booster:.4f}", flush=True)


if __name__ == "__main__":
    main()
