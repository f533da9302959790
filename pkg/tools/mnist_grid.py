"""Hyperparameter grid for the desk-scale MNIST runs.

Selection uses a validation split carved from the training files (the last
1000 training digits), never the test split.  Two alpha families are scanned:

* shared: one alpha for all layers with ``alpha * 2**(q-1)`` in {2^-6, ..., 2^-3}
* per-layer: the initialization rule scaled by ``alpha_scale``

Writes one CSV row per (family, alpha, eta) with the validation accuracy.

    python tools/mnist_grid.py --q 4 --out configs/grid_q4.csv
"""

from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path

from smgd.data import load_mnist
from smgd.qnn import QuantizedMlp, TrainConfig, accuracy, train_smgd

N_VAL = 1000


def main(argv=None) -> None:
    ap = argparse.ArgumentParser(description="MNIST alpha/eta grid")
    ap.add_argument("--q", type=int, required=True)
    ap.add_argument("--midrise", action="store_true")
    ap.add_argument("--data", default="data/mnist")
    ap.add_argument("--seed", type=int, default=1000)
    ap.add_argument("--etas", default="0.1,0.3,1.0")
    ap.add_argument("--scale-etas", default="0.01,0.03,0.1,0.3,1.0,3.0")
    ap.add_argument("--scales", default="0.5,1,2")
    ap.add_argument("--out", type=Path)
    args = ap.parse_args(argv)

    train, _ = load_mnist(args.data)
    n = len(train)
    fit, val = train.subset(slice(0, n - N_VAL)), train.subset(slice(n - N_VAL, n))
    cells = [("shared", 2.0**-j / 2 ** (args.q - 1), eta)
             for j in (6, 5, 4, 3) for eta in map(float, args.etas.split(","))]
    cells += [("per_layer", float(s), eta)
              for s in args.scales.split(",") for eta in map(float, args.scale_etas.split(","))]

    out = open(args.out, "w", newline="") if args.out else sys.stdout
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(["q_bits", "midrise", "family", "alpha_or_scale", "eta", "val_acc"])
    for family, a, eta in cells:
        kw = {"alpha": a} if family == "shared" else {"alpha_scale": a}
        net = QuantizedMlp.initialize([784, 256, 10], args.q, args.seed, midrise=args.midrise, **kw)
        trained, _ = train_smgd(net, fit, TrainConfig(epochs=5, batch_size=32, eta=eta, seed=args.seed))
        writer.writerow([args.q, int(args.midrise), family, repr(a), repr(eta), repr(accuracy(trained, val))])
        out.flush()


if __name__ == "__main__":
    main()
