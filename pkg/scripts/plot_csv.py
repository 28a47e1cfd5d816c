#!/usr/bin/env python3
"""Plot the CSV outputs of `poumor train` and `poumor rollout`.

Recognizes metrics.csv, spectrum*.csv and rms*.csv by their headers and
writes a PNG next to each input.
"""
import csv
import os
import sys

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt


def read_rows(path):
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        return reader.fieldnames or [], list(reader)

def plot_metrics(rows, out):
    steps = [int(r["step"]) for r in rows]
    fig, (ax_loss, ax_fit) = plt.subplots(1, 2, figsize=(12, 5))
    ax_loss.plot(steps, [float(r["loss"]) for r in rows], marker='o', label="loss")
    kl = [(s, float(r["kl"])) for s, r in zip(steps, rows) if r["kl"]]
    if kl:
        ax_loss.plot(*zip(*kl), marker='s', label="kl")
    ax_loss.set_xlabel("Step")
    ax_loss.set_yscale('symlog')
    ax_loss.legend()
    ax_fit.plot(steps, [float(r["r2"]) for r in rows], marker='o', label="r2")
    ax_fit.plot(steps, [float(r["wmape"]) for r in rows], marker='o', label="wmape")
    ax_fit.set_xlabel("Step")
    ax_fit.legend()
    for ax in (ax_loss, ax_fit):
        ax.grid(True, ls="-", alpha=0.5)
    fig.savefig(out)
    plt.close(fig)

def plot_spectrum(rows, out):
    # shell 0 is the mean; it does not fit on a log axis
    rows = [r for r in rows if int(r["shell"]) > 0 and float(r["energy"]) > 0]
    plt.figure(figsize=(8, 6))
    plt.plot([int(r["shell"]) for r in rows], [float(r["energy"]) for r in rows], marker='.')
    plt.xscale('log')
    plt.yscale('log')
    plt.xlabel("Shell |k|")
    plt.ylabel("Energy")
    plt.grid(True, which="both", ls="-", alpha=0.5)
    plt.savefig(out)
    plt.close()

def plot_rms(rows, out):
    plt.figure(figsize=(8, 6))
    for c in sorted({int(r["channel"]) for r in rows}):
        sel = [r for r in rows if int(r["channel"]) == c]
        plt.plot([int(r["bin"]) for r in sel], [float(r["rms"]) for r in sel], label=f"channel {c}")
    plt.xlabel("Bin")
    plt.ylabel("RMS fluctuation")
    plt.grid(True, ls="-", alpha=0.5)
    plt.legend()
    plt.savefig(out)
    plt.close()

PLOTTERS = {
    "step": plot_metrics,
    "shell": plot_spectrum,
    "bin": plot_rms,
}

def main():
    if len(sys.argv) < 2:
        print(f"Usage: {sys.argv[0]} FILE.csv [FILE.csv ...]")
        sys.exit(1)
    for path in sys.argv[1:]:
        if not os.path.exists(path):
            print(f"Error: {path} not found")
            sys.exit(1)
        header, rows = read_rows(path)
        plotter = PLOTTERS.get(header[0] if header else None)
        if plotter is None:
            print(f"Skipping {path}: unrecognized header {header}")
            continue
        out = os.path.splitext(path)[0] + ".png"
        plotter(rows, out)
        print(f"Wrote {out}")

if __name__ == "__main__":
    main()
