"""Contours of the adiabatic surfaces in ``surfaces.tsv`` (one panel per level).

usage: python plot_surfaces.py surfaces.tsv [out.png]
"""

import sys

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np


def main(path, out="surfaces.png"):
    with open(path) as fh:
        header = fh.readline().lstrip("#").split()
    data = np.loadtxt(path, comments="#", ndmin=2)
    levels = [i for i, h in enumerate(header) if h.startswith("E_")]
    coords = [i for i in range(len(header)) if i not in levels]
    fig, axes = plt.subplots(1, len(levels), figsize=(3.2 * len(levels), 3), squeeze=False)
    for ax, col in zip(axes[0], levels):
        if len(coords) == 1:
            ax.plot(data[:, coords[0]], data[:, col])
            ax.set_xlabel(header[coords[0]])
        else:
            x, y = data[:, coords[0]], data[:, coords[1]]
            ax.tricontourf(x, y, data[:, col], levels=30)
            ax.set_xlabel(header[coords[0]])
            ax.set_ylabel(header[coords[1]])
        ax.set_title(header[col])
    fig.tight_layout()
    fig.savefig(out, dpi=150)


if __name__ == "__main__":
    main(*sys.argv[1:])
