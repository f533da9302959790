"""Render figures from the CSV outputs of ``smgd train`` and ``smgd minibatch-study``.

    python tools/plot_figures.py accuracy runs/q4/curve.csv runs/q1/curve.csv -o accuracy.png
    python tools/plot_figures.py batch runs/blobs/trace.csv -o batch.png

``accuracy`` plots test accuracy against epoch, one line per input file
(averaged over seeds).  ``batch`` plots the median training loss against
step, one line per batch size.  Requires matplotlib.
"""

import argparse
import csv
from collections import defaultdict
from pathlib import Path

import numpy as np


def read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def accuracy_figure(ax, paths):
    for path in paths:
        by_step = defaultdict(list)
        epoch_of = {}
        for r in read_rows(path):
            if r["test_acc"]:
                by_step[int(r["step"])].append(float(r["test_acc"]))
                epoch_of[int(r["step"])] = int(r["epoch"])
        steps = sorted(by_step)
        ax.plot([epoch_of[s] for s in steps], [np.mean(by_step[s]) for s in steps], marker="o",
                label=Path(path).parent.name or str(path))
    ax.set_xlabel("epoch")
    ax.set_ylabel("test accuracy")
    ax.legend()


def batch_figure(ax, path):
    series = defaultdict(lambda: defaultdict(list))
    for r in read_rows(path):
        series[r["run_id"]][int(r["step"])].append(float(r["f"]))
    for run_id in sorted(series, key=lambda k: int(k.split("=")[1])):
        steps = sorted(series[run_id])
        ax.plot(steps, [np.median(series[run_id][s]) for s in steps], label=run_id)
    ax.set_xlabel("step")
    ax.set_ylabel("median training loss")
    ax.set_yscale("log")
    ax.legend()


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("kind", choices=["accuracy", "batch"])
    ap.add_argument("csv", nargs="+")
    ap.add_argument("-o", "--output", required=True)
    args = ap.parse_args(argv)

    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(6, 4))
    if args.kind == "accuracy":
        accuracy_figure(ax, args.csv)
    else:
        if len(args.csv) != 1:
            ap.error("batch takes one trace.csv")
        batch_figure(ax, args.csv[0])
    fig.tight_layout()
    fig.savefig(args.output, dpi=120)


if __name__ == "__main__":
    main()
