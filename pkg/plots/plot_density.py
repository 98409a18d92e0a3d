"""Reduced probability density from a ``density_<i>_<axes>.tsv`` file.

usage: python plot_density.py density_0_Q-T.tsv [out.png]
"""

import sys

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np


def main(path, out="density.png"):
    with open(path) as fh:
        header = fh.readline().lstrip("#").split()
    data = np.loadtxt(path, comments="#", ndmin=2)
    fig, ax = plt.subplots(figsize=(4, 3))
    if data.shape[1] == 2:
        ax.plot(data[:, 0], data[:, 1])
        ax.set_xlabel(header[0])
        ax.set_ylabel("rho")
    else:
        cs = ax.tricontourf(data[:, 0], data[:, 1], data[:, -1], levels=30)
        fig.colorbar(cs, ax=ax, label="rho")
        ax.set_xlabel(header[0])
        ax.set_ylabel(header[1])
    fig.tight_layout()
    fig.savefig(out, dpi=150)


if __name__ == "__main__":
    main(*sys.argv[1:])
