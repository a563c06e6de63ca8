"""Show where the softmax-MSE hint gradient dies while the logit gap is large."""

import argparse

import numpy as np

from rocket.objective import grad_vanishing_probe


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--light", default="-30,2,0.5", help="comma-separated light logits")
    p.add_argument("--booster", default="4,0,0", help="comma-separated booster logits")
    args = p.parse_args()
    l = np.array([[float(v) for v in args.light.split(",")]])
    z = np.array([[float(v) for v in args.booster.split(",")]])
    print(grad_vanishing_probe(l, z))


if __name__ == "__main__":
    main()
