"""Synthetic migration season on an irregular county-like graph, run through the full pipeline.

Builds a Delaunay graph over random lon/lat centroids, simulates a northward
movement of latent abundance, emits raw checklists, aggregates them to weekly
counts and then calls the ``fit`` and ``summarize`` subcommands.

    python scripts/synthetic_year.py --out results/synthetic_year --iterations 3000
"""
from __future__ import annotations

import argparse
import csv
import datetime as dt
import json
from dataclasses import asdict
from pathlib import Path

import numpy as np
from scipy.spatial import Delaunay

from circuithmm import ingest
from circuithmm.cli import main as cli
from circuithmm.hmm import ModelParams, simulate_path
from circuithmm.sampler import PriorSpec
from circuithmm.transition import TransitionParams

EPOCH = dt.date(2017, 2, 20)
SPECIES = "oriole"


def make_graph(n_nodes: int, rng: np.random.Generator, n_terminals: int = 5) -> dict:
    lon = rng.uniform(-95.0, -75.0, n_nodes)
    lat = rng.uniform(25.0, 45.0, n_nodes)
    tri = Delaunay(np.column_stack([lon, lat]))
    edges = set()
    for simplex in tri.simplices:
        for a in range(3):
            for b in range(a + 1, 3):
                j, k = sorted((int(simplex[a]), int(simplex[b])))
                edges.add((j, k))
    ids = [f"county{j:03d}" for j in range(n_nodes)]
    order = np.argsort(lat)
    return {
        "nodes": [{"id": ids[j], "lon": float(lon[j]), "lat": float(lat[j])} for j in range(n_nodes)],
        "edges": [{"a": ids[j], "b": ids[k]} for j, k in sorted(edges)],
        "battery": [ids[j] for j in order[-n_terminals:]],
        "ground": [ids[j] for j in order[:n_terminals]],
    }


def season_params(n_weeks: int) -> ModelParams:
    """Quiet start, sustained northward movement, then settling."""
    thetas = []
    for i in range(n_weeks):
        frac = i / max(n_weeks - 1, 1)
        if frac < 0.2:
            thetas.append(TransitionParams(0, 1.5, 0.1, 0.9))
        elif frac < 0.7:
            thetas.append(TransitionParams(-1, 4.0, 0.25, 0.8))
        else:
            thetas.append(TransitionParams(0, 2.0, 0.1, 0.9))
    return ModelParams(tuple(thetas), 4.0)


def write_checklists(path, z: np.ndarray, node_ids, rng: np.random.Generator, per_cell: float = 2.0):
    """One row per checklist; some cells end up with no checklists at all."""
    n_weeks, n = z.shape
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["node_id", "date", "species", "count", "effort_hours"])
        for i in range(n_weeks):
            for j in range(n):
                for _ in range(rng.poisson(per_cell)):
                    effort = round(float(rng.exponential(1.5)) + 0.05, 3)
                    day = EPOCH + dt.timedelta(days=7 * i + int(rng.integers(7)))
                    w.writerow([node_ids[j], day.isoformat(), SPECIES, int(rng.poisson(z[i, j] * effort)), effort])


def build_year(out_dir, n_nodes: int = 50, n_weeks: int = 20, seed: int = 0) -> dict:
    """Write graph.json, truth.csv, checklists.csv and counts.csv under ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    graph = make_graph(n_nodes, rng)
    (out / "graph.json").write_text(json.dumps(graph, indent=1))
    spec = ingest.graph_from_json(graph)
    kernel = spec.kernel()
    ids = list(spec.graph.node_ids)

    # abundance starts in the south
    lat = spec.node_latitudes()
    z0 = 0.2 + 3.0 * np.exp(-((lat - lat.min()) / 4.0) ** 2)
    path, _ = simulate_path(kernel, season_params(n_weeks), np.zeros((n_weeks, n_nodes)), rng, z0=z0)
    ingest.save_truth(path.z, ids, out / "truth.csv")
    write_checklists(out / "checklists.csv", path.z, ids, rng)

    obs, skipped = ingest.aggregate_checklists(ingest.read_checklists(out / "checklists.csv"), SPECIES,
                                               EPOCH, n_weeks, ids)
    ingest.save_counts(obs, out / "counts.csv", ids)
    return {"graph": out / "graph.json", "counts": out / "counts.csv", "truth": out / "truth.csv",
            "skipped": skipped}


def run_pipeline(out_dir, iterations: int, seed: int = 0, **kwargs) -> int:
    out = Path(out_dir)
    files = build_year(out / "data", seed=seed, **kwargs)
    config = out / "fit_config.json"
    config.write_text(json.dumps({"priors": asdict(PriorSpec.county())}))
    code = cli(["fit", "--graph", str(files["graph"]), "--counts", str(files["counts"]), "--config", str(config),
                "--iterations", str(iterations), "--seed", str(seed), "--out", str(out / "draws")])
    if code:
        return code
    return cli(["summarize", "--draws", str(out / "draws"), "--counts", str(files["counts"]),
                "--out", str(out / "summary")])


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--out", default=str(Path(__file__).resolve().parents[1] / "results" / "synthetic_year"))
    p.add_argument("--nodes", type=int, default=50)
    p.add_argument("--weeks", type=int, default=20)
    p.add_argument("--iterations", type=int, default=3000)
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args()
    code = run_pipeline(args.out, args.iterations, args.seed, n_nodes=args.nodes, n_weeks=args.weeks)
    if code == 0:
        with open(Path(args.out) / "summary" / "flow.csv") as fh:
            for row in csv.DictReader(fh):
                print(row)
    raise SystemExit(code)


if __name__ == "__main__":
    main()
