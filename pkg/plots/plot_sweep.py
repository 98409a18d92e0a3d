"""Tunnel splitting versus light-particle mass from ``sweep.tsv``.

usage: python plot_sweep.py sweep.tsv [out.png]
"""

import sys

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np


def main(path, out="sweep.png"):
    m, J = np.loadtxt(path, comments="#", unpack=True, ndmin=2)
    fig, ax = plt.subplots(figsize=(4, 3))
    ax.semilogy(m, J, "o-")
    ax.set_xlabel("mass (amu)")
    ax.set_ylabel("J (meV)")
    fig.tight_layout()
    fig.savefig(out, dpi=150)


if __name__ == "__main__":
    main(*sys.argv[1:])
