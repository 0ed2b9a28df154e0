#!/usr/bin/env python3
"""Plot magnitude and phase from the CSVs written by `qdob bode`.

usage: plot_bode.py OUT_DIR [LABEL ...]   (default labels: s t)
"""
import csv
import sys
from pathlib import Path

import matplotlib.pyplot as plt


def load(path):
    with open(path, newline="") as f:
        rows = list(csv.DictReader(f))
    return [[float(r[k]) for r in rows] for k in ("omega", "mag_db", "phase_deg")]


def main():
    out = Path(sys.argv[1])
    labels = sys.argv[2:] or ["s", "t"]
    fig, (mag, phase) = plt.subplots(2, 1, sharex=True)
    for label in labels:
        w, db, deg = load(out / f"bode_{label}.csv")
        mag.semilogx(w, db, label=label)
        phase.semilogx(w, deg, label=label)
    mag.set_ylabel("magnitude [dB]")
    phase.set_ylabel("phase [deg]")
    phase.set_xlabel("omega [rad/s]")
    mag.legend()
    fig.savefig(out / "bode.png", dpi=150)


if __name__ == "__main__":
    main()
