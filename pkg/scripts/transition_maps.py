"""One-step transition maps on the 12x5 lattice for a grid of parameters.

Starts from mass concentrated on one interior node and writes the state after
a single step for each direction and a range of rho and delta/nu settings,
plus the centroid displacement of each map.

    python scripts/transition_maps.py --out results/transition_maps
"""
from __future__ import annotations

import argparse
import csv
from pathlib import Path

import numpy as np

from circuithmm.graph import lattice, lattice_id, lattice_terminals
from circuithmm.transition import DIRECTIONS, TransitionKernel, TransitionParams

RHOS = (0.5, 1.0, 2.0, 4.0, 8.0)
SELF_SHARES = (0.2, 0.5, 0.8)


def maps(rows: int = 12, cols: int = 5, source: tuple[int, int] = (6, 2)):
    g = lattice(rows, cols)
    kernel = TransitionKernel.from_graph(g, *lattice_terminals(rows, cols))
    z = np.zeros(g.n)
    z[g.index[lattice_id(*source)]] = 1.0
    for q in DIRECTIONS:
        for rho in RHOS:
            for share in SELF_SHARES:
                M = kernel.matrix(TransitionParams(q, rho, 1.0 - share, share))
                yield q, rho, share, g, z, M @ z


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--out", default=str(Path(__file__).resolve().parents[1] / "results" / "transition_maps"))
    args = p.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "maps.csv", "w", newline="") as fh, open(out / "displacement.csv", "w", newline="") as fd:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["q", "rho", "self_share", "node_id", "x", "y", "z_after"])
        wd = csv.writer(fd, lineterminator="\n")
        wd.writerow(["q", "rho", "self_share", "dx", "dy", "distance"])
        for q, rho, share, g, z, after in maps():
            for k, (x, y), val in zip(g.node_ids, g.centroids, after):
                w.writerow([q, rho, share, k, x, y, val])
            shift = after @ g.centroids / after.sum() - z @ g.centroids / z.sum()
            wd.writerow([q, rho, share, shift[0], shift[1], float(np.hypot(*shift))])
            print(f"q={q:+d} rho={rho:<4} self={share}: centroid shift ({shift[0]:+.3f}, {shift[1]:+.3f})")


if __name__ == "__main__":
    main()
