"""Command-line entry point.

Exit codes: 0 success, 2 usage error, 3 data error, 4 numerical failure.
Errors are reported on stderr as a single JSON object.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import re
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import ingest
from .circuit import node_throughput, solve_circuit, split_directions
from .errors import DataError, InvalidConfig, NumericalError
from .graph import augment, build_graph, lattice, lattice_id, lattice_terminals
from .hmm import apply_censoring, censor, censor_mask, simulate_efforts, simulate_path
from .sampler import PriorSpec, Sampler, SamplerConfig
from .summary import StudySpec, average_latitude, classify_flow, credible_interval, effective_sample_size, \
    replicate_study
from .transition import TransitionParams

logger = logging.getLogger("circuithmm")

EXIT_USAGE, EXIT_DATA, EXIT_NUMERICAL = 2, 3, 4
DEFAULT_BLOCKED = "7-9:0-7;15-17:4-11"


class UsageError(Exception):
    pass


# ---------------------------------------------------------------- helpers

def _out_dir(path) -> Path:
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    return p


def _read_json(path) -> dict:
    if path is None:
        return {}
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise ingest.ParseError(f"{path}: invalid JSON ({exc.msg})", line=exc.lineno) from exc


def _write_json(path, data):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(data, fh, indent=1, sort_keys=True)
        fh.write("\n")


def _write_rows(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([repr(v) if isinstance(v, float) else v for v in r])


def _fit_configs(config: dict, args) -> tuple[PriorSpec, SamplerConfig]:
    try:
        priors = PriorSpec(**config.get("priors", {}))
        sampler = dict(config.get("sampler", {}))
    except TypeError as exc:
        raise InvalidConfig(str(exc)) from exc
    if getattr(args, "seed", None) is not None:
        sampler["seed"] = args.seed
    if getattr(args, "iterations", None) is not None:
        sampler["n_iterations"] = args.iterations
        if sampler.get("burn_in", SamplerConfig.burn_in) >= args.iterations:
            sampler["burn_in"] = args.iterations // 3
    if getattr(args, "burn_in", None) is not None:
        sampler["burn_in"] = args.burn_in
    try:
        return priors, SamplerConfig(**sampler)
    except TypeError as exc:
        raise InvalidConfig(str(exc)) from exc


# ---------------------------------------------------------------- resistance demo

def parse_blocked(spec: str, rows: int, cols: int) -> set[tuple[int, int]]:
    """``"r0-r1:c0-c1;r:c"`` (inclusive ranges) to a set of (row, col) cells."""
    cells = set()
    if not spec:
        return cells
    part_re = re.compile(r"^(\d+)(?:-(\d+))?:(\d+)(?:-(\d+))?$")
    for part in spec.split(";"):
        m = part_re.match(part.strip())
        if not m:
            raise DataError(f"invalid blocked-cell spec {part!r}")
        r0, r1, c0, c1 = m.groups()
        r0, c0 = int(r0), int(c0)
        r1 = int(r1) if r1 is not None else r0
        c1 = int(c1) if c1 is not None else c0
        if not (0 <= r0 <= r1 < rows and 0 <= c0 <= c1 < cols):
            raise DataError(f"blocked cells {part!r} fall outside a {rows}x{cols} lattice")
        cells.update((r, c) for r in range(r0, r1 + 1) for c in range(c0, c1 + 1))
    return cells


def demo_resistance(rows: int = 24, cols: int = 12, blocked: set | str = DEFAULT_BLOCKED,
                    factor: float = 0.01) -> list[dict]:
    """Current map of a lattice whose blocked cells have low-conductance incident edges.

    The battery is attached to the top row and the ground to the bottom row.
    Each record gives the node voltage, the effective current from the
    battery to that node and the total current passing through it.
    """
    if isinstance(blocked, str):
        blocked = parse_blocked(blocked, rows, cols)
    if not factor > 0:
        raise DataError("conductance factor must be positive")
    base = lattice(rows, cols)
    ids = {lattice_id(r, c): (r, c) for r in range(rows) for c in range(cols)}
    edges = [(a, b, factor if (ids[a] in blocked or ids[b] in blocked) else c) for a, b, c in base.edges]
    g = build_graph([(k, x, y) for k, (x, y) in zip(base.node_ids, base.centroids)], edges)
    ag = augment(g, *lattice_terminals(rows, cols))
    sol = solve_circuit(ag, 1.0)
    b = ag.battery_index
    eff = (sol.v[b] - sol.v[: g.n]) / sol.Omega[: g.n, b]
    through = node_throughput(ag, sol.v)
    return [dict(node_id=k, row=ids[k][0], col=ids[k][1], blocked=int(ids[k] in blocked),
                 voltage=float(sol.v[j]), effective_current=float(eff[j]), throughput=float(through[j]))
            for j, k in enumerate(g.node_ids)]


# ---------------------------------------------------------------- subcommands

def cmd_currents(args):
    spec = ingest.load_graph(args.graph)
    ag = augment(spec.graph, spec.battery, spec.ground, spec.battery_conductance, spec.ground_conductance)
    sol = solve_circuit(ag, args.v_battery)
    dc = split_directions(sol.C)
    out = _out_dir(args.out)
    ids = list(spec.graph.node_ids)
    aug_ids = ids + ["battery", "ground"]
    ingest.write_matrix_csv(out / "C.csv", sol.C, ids)
    ingest.write_matrix_csv(out / "C_pos.csv", dc.C_pos, ids)
    ingest.write_matrix_csv(out / "C_neg.csv", dc.C_neg, ids)
    ingest.write_matrix_csv(out / "Omega.csv", sol.Omega, aug_ids)
    _write_rows(out / "v.csv", ["node_id", "voltage", "net_current"],
                [(k, float(v), float(i)) for k, v, i in zip(aug_ids, sol.v, sol.i_net)])


def _read_state_vector(path, node_ids) -> np.ndarray:
    index = {k: j for j, k in enumerate(node_ids)}
    z = np.zeros(len(node_ids))
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if not reader.fieldnames or "node_id" not in reader.fieldnames or "z" not in reader.fieldnames:
            raise ingest.ParseError(f"{path}: expected columns node_id,z", line=1)
        for row in reader:
            if row["node_id"] not in index:
                raise ingest.UnknownNode(f"{path}: unknown node {row['node_id']!r}")
            z[index[row["node_id"]]] = float(row["z"])
    if np.any(z < 0):
        raise DataError("state vector must be nonnegative")
    return z


def cmd_transition(args):
    spec = ingest.load_graph(args.graph)
    kernel = spec.kernel()
    p = TransitionParams(args.q, args.rho, args.nu, args.delta)
    M = kernel.matrix(p)
    ids = list(spec.graph.node_ids)
    z = _read_state_vector(args.z, ids) if args.z else np.ones(len(ids))
    out = _out_dir(args.out)
    ingest.write_matrix_csv(out / "M.csv", M, ids)
    xy = spec.graph.centroids
    _write_rows(out / "states.csv", ["node_id", "x", "y", "z_before", "z_after", "change"],
                [(k, float(xy[j, 0]), float(xy[j, 1]), float(z[j]), float((M @ z)[j]), float((M @ z - z)[j]))
                 for j, k in enumerate(ids)])


def cmd_simulate(args):
    spec = ingest.load_graph(args.graph)
    kernel = spec.kernel()
    config = _read_json(args.config)
    priors = PriorSpec(**config.get("priors", {}))
    rng = np.random.default_rng(args.seed)
    params = priors.sample_params(args.steps, rng)
    t = simulate_efforts(args.steps, kernel.n, rng, args.effort_rate)
    path, obs = simulate_path(kernel, params, t, rng)
    mask = censor_mask(obs.shape, args.censor, rng)
    obs = apply_censoring(obs, mask)
    out = _out_dir(args.out)
    ids = list(spec.graph.node_ids)
    ingest.save_counts(obs, out / "counts.csv", ids)
    ingest.save_truth(path.z, ids, out / "truth.csv")
    ingest.save_graph(spec, out / "graph.json")
    _write_json(out / "params.json", {
        "seed": args.seed,
        "alpha": params.alpha,
        "thetas": [asdict(th) for th in params.thetas],
        "z0": path.z0.tolist(),
        "censor_fraction": args.censor,
        "censored_cells": [[int(i), ids[j]] for i, j in np.argwhere(mask)],
        "priors": asdict(priors),
    })


def cmd_censor(args):
    obs = ingest.load_counts(args.counts)
    ingest.save_counts(censor(obs, args.fraction, args.seed), args.out)


def cmd_fit(args):
    spec = ingest.load_graph(args.graph)
    priors, config = _fit_configs(_read_json(args.config), args)
    obs = ingest.load_counts(args.counts)
    if set(obs.node_ids) != set(spec.graph.node_ids):
        raise ingest.DimensionMismatch(
            f"counts cover {len(obs.node_ids)} nodes but the graph has {spec.graph.n}")
    obs = ingest.load_counts(args.counts, node_ids=spec.graph.node_ids)
    out = _out_dir(args.out)
    ckpt = out / "chain.pkl"
    if args.resume and ckpt.exists():
        sampler = Sampler.load(ckpt)
        logger.info("resuming at iteration %d", sampler.iteration)
    else:
        sampler = Sampler(obs, spec.kernel(), priors, config)
    samples = sampler.run(checkpoint=ckpt, checkpoint_every=args.checkpoint_every)
    ingest.save_samples(samples, out)
    ingest.save_graph(spec, out / "graph.json")
    ckpt.unlink(missing_ok=True)


def cmd_study(args):
    data = _read_json(args.config)
    try:
        spec = StudySpec.from_dict(data)
    except TypeError as exc:
        raise InvalidConfig(str(exc)) from exc
    if args.seed is not None:
        spec.seed = args.seed
    if args.replicates is not None:
        spec.n_replicates = args.replicates
    if args.iterations is not None:
        burn = spec.sampler.burn_in if spec.sampler.burn_in < args.iterations else args.iterations // 3
        spec.sampler = SamplerConfig(**{**asdict(spec.sampler), "n_iterations": args.iterations, "burn_in": burn})
    out = _out_dir(args.out)
    _write_json(out / "study_spec.json", spec.to_dict())
    table, _ = replicate_study(spec, out, workers=args.workers)
    for rec in table.to_records():
        logger.info("%s", rec)


def cmd_summarize(args):
    samples = ingest.load_samples(args.draws)
    graph_src = args.graph or str(Path(args.draws) / "graph.json")
    spec = ingest.load_graph(graph_src)
    if list(spec.graph.node_ids) != list(samples.meta["node_ids"]):
        raise ingest.DimensionMismatch("graph node order does not match the draws")
    out = _out_dir(args.out)
    lat = spec.node_latitudes()

    z_mean = samples.z_draws.mean(axis=0)
    series = average_latitude(z_mean, lat)
    per_draw = np.stack([average_latitude(zd, lat) for zd in samples.z_draws])
    rows = []
    emp = None
    if args.counts:
        obs = ingest.load_counts(args.counts, node_ids=spec.graph.node_ids)
        with np.errstate(invalid="ignore", divide="ignore"):
            emp = average_latitude(np.where(obs.t > 0, obs.y / np.where(obs.t > 0, obs.t, 1), 0), lat)
    enough = samples.n_draws >= 100
    lo, hi = credible_interval(per_draw, 0.9) if enough else (np.full_like(series, np.nan),) * 2
    for i in range(len(series)):
        rows.append((i, float(series[i]), float(lo[i]), float(hi[i]),
                     float(emp[i]) if emp is not None else ""))
    _write_rows(out / "average_latitude.csv",
                ["time_index", "posterior_mean", "lower_90", "upper_90", "empirical"], rows)

    flow = classify_flow(samples, args.p_min, args.rho_min, args.ratio_min)
    recs = flow.to_records()
    _write_rows(out / "flow.csv", list(recs[0].keys()), [tuple(r.values()) for r in recs])

    ess_rows = []
    if enough:
        for name in ("rho", "nu", "delta"):
            d = getattr(samples, f"{name}_draws")
            ess_rows += [(name, i, effective_sample_size(d[:, i])) for i in range(d.shape[1])]
        z_ess = np.array([[effective_sample_size(samples.z_draws[:, i, j]) for j in range(samples.z_draws.shape[2])]
                          for i in range(samples.z_draws.shape[1])])
        ess_rows += [("z_mean_over_nodes", i, float(z_ess[i].mean())) for i in range(z_ess.shape[0])]
        ess_rows += [("z_min_over_nodes", i, float(z_ess[i].min())) for i in range(z_ess.shape[0])]
        ess_rows.append(("alpha", "", effective_sample_size(samples.alpha_draws)))
    _write_rows(out / "ess.csv", ["parameter", "time_index", "ess"], ess_rows)


def cmd_demo_resistance(args):
    recs = demo_resistance(args.rows, args.cols, args.blocked, args.factor)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    _write_rows(out, list(recs[0].keys()), [tuple(r.values()) for r in recs])


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="circuithmm", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log progress at INFO level")
    sub = p.add_subparsers(dest="command", required=True, metavar="COMMAND")

    def graph_arg(sp):
        sp.add_argument("--graph", required=True, help="graph JSON file or lattice:RxC")

    sp = sub.add_parser("currents", help="voltages, resistance distances and currents matrices as CSV")
    graph_arg(sp)
    sp.add_argument("--v-battery", type=float, default=1.0, help="battery voltage (default 1)")
    sp.add_argument("--out", required=True, help="output directory")
    sp.set_defaults(func=cmd_currents)

    sp = sub.add_parser("transition", help="transition matrix and before/after state for given parameters")
    graph_arg(sp)
    sp.add_argument("--q", type=int, choices=(-1, 0, 1), required=True, help="direction flag")
    sp.add_argument("--rho", type=float, required=True, help="distance-decay exponent")
    sp.add_argument("--nu", type=float, required=True, help="flow weight")
    sp.add_argument("--delta", type=float, required=True, help="self-transition weight")
    sp.add_argument("--z", help="CSV with columns node_id,z (default: all ones)")
    sp.add_argument("--out", required=True, help="output directory")
    sp.set_defaults(func=cmd_transition)

    sp = sub.add_parser("simulate", help="simulate efforts, latent rates and counts")
    graph_arg(sp)
    sp.add_argument("--steps", type=int, default=10, help="number of time steps (default 10)")
    sp.add_argument("--seed", type=int, default=0, help="random seed")
    sp.add_argument("--config", help="JSON with a 'priors' object for the generative draws")
    sp.add_argument("--censor", type=float, default=0.0, help="fraction of cells to censor (default 0)")
    sp.add_argument("--effort-rate", type=float, default=0.1, help="exponential effort rate (default 0.1)")
    sp.add_argument("--out", required=True, help="output directory")
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("censor", help="zero counts and efforts on a random fraction of cells")
    sp.add_argument("--counts", required=True, help="input counts CSV")
    sp.add_argument("--fraction", type=float, required=True, help="fraction of cells to censor")
    sp.add_argument("--seed", type=int, default=0, help="random seed")
    sp.add_argument("--out", required=True, help="output counts CSV")
    sp.set_defaults(func=cmd_censor)

    sp = sub.add_parser("fit", help="run the MCMC sampler on a counts file")
    graph_arg(sp)
    sp.add_argument("--counts", required=True, help="counts CSV")
    sp.add_argument("--config", help="JSON with 'priors' and 'sampler' objects")
    sp.add_argument("--seed", type=int, help="overrides sampler.seed")
    sp.add_argument("--iterations", type=int, help="overrides sampler.n_iterations")
    sp.add_argument("--burn-in", type=int, help="overrides sampler.burn_in")
    sp.add_argument("--resume", action="store_true", help="continue from OUT/chain.pkl if present")
    sp.add_argument("--checkpoint-every", type=int, default=1000, help="iterations between checkpoints")
    sp.add_argument("--out", required=True, help="output directory for draws and manifest")
    sp.set_defaults(func=cmd_fit)

    sp = sub.add_parser("study", help="replicate simulation study with coverage table")
    sp.add_argument("--config", help="study spec JSON (defaults reproduce the 12x5 lattice protocol)")
    sp.add_argument("--seed", type=int, help="study seed")
    sp.add_argument("--replicates", type=int, help="number of replicates")
    sp.add_argument("--iterations", type=int, help="MCMC iterations per replicate")
    sp.add_argument("--workers", type=int, default=1, help="parallel worker processes")
    sp.add_argument("--out", required=True, help="output directory (resumable)")
    sp.set_defaults(func=cmd_study)

    sp = sub.add_parser("summarize", help="average latitude, flow labels and ESS from a draws directory")
    sp.add_argument("--draws", required=True, help="directory written by fit")
    sp.add_argument("--graph", help="graph file (default: DRAWS/graph.json)")
    sp.add_argument("--counts", help="counts CSV for the empirical average-latitude column")
    sp.add_argument("--p-min", type=float, default=0.9, help="direction probability threshold")
    sp.add_argument("--rho-min", type=float, default=3.0, help="posterior mean rho threshold")
    sp.add_argument("--ratio-min", type=float, default=0.7, help="posterior mean delta/(nu+delta) threshold")
    sp.add_argument("--out", required=True, help="output directory")
    sp.set_defaults(func=cmd_summarize)

    sp = sub.add_parser("demo-resistance", help="current map of a lattice with high-resistance cells")
    sp.add_argument("--rows", type=int, default=24, help="lattice rows (default 24)")
    sp.add_argument("--cols", type=int, default=12, help="lattice columns (default 12)")
    sp.add_argument("--blocked", default=DEFAULT_BLOCKED,
                    help=f"blocked cells 'r0-r1:c0-c1;...' (default {DEFAULT_BLOCKED!r})")
    sp.add_argument("--factor", type=float, default=0.01, help="conductance multiplier for blocked cells")
    sp.add_argument("--out", required=True, help="output CSV")
    sp.set_defaults(func=cmd_demo_resistance)
    return p


def _fail(code: int, exc: BaseException) -> int:
    print(json.dumps({"error": type(exc).__name__, "message": str(exc), "exit_code": code}), file=sys.stderr)
    return code


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    try:
        args.func(args)
    except (InvalidConfig, UsageError) as exc:
        return _fail(EXIT_USAGE, exc)
    except (DataError, FileNotFoundError, IsADirectoryError) as exc:
        return _fail(EXIT_DATA, exc)
    except NumericalError as exc:
        return _fail(EXIT_NUMERICAL, exc)
    return 0


def main_exit():
    sys.exit(main())


if __name__ == "__main__":
    main_exit()
