"""Checklist aggregation and every on-disk format the package reads or writes.

File formats (UTF-8, comma separated, header row required):

* checklists: ``node_id,date,species,count,effort_hours`` (date is YYYY-MM-DD)
* counts:     ``time_index,node_id,count,effort_hours``
* truth:      ``time_index,node_id,z_true``
* graph:      JSON ``{"nodes": [{"id", "x", "y"}], "edges": [{"a", "b", "conductance"?}],
  "battery": [id], "ground": [id]}``; optional ``battery_conductance`` and
  ``ground_conductance`` (default 1).  Nodes may give ``lon``/``lat`` instead
  of ``x``/``y``; they are then projected to kilometres.
* draws:      one gzipped CSV per parameter block plus ``manifest.json``
"""
from __future__ import annotations

import csv
import datetime as dt
import gzip
import hashlib
import io
import json
import logging
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

from .errors import DimensionMismatch, InvalidInput, InvariantViolation, ParseError, UnknownNode
from .graph import SpatialGraph, build_graph, lattice, lattice_terminals
from .hmm import ObservationSet
from .sampler import PosteriorSamples
from .transition import TransitionKernel

logger = logging.getLogger(__name__)

EARTH_RADIUS_KM = 6371.0088
COUNTS_HEADER = ["time_index", "node_id", "count", "effort_hours"]
CHECKLIST_HEADER = ["node_id", "date", "species", "count", "effort_hours"]
TRUTH_HEADER = ["time_index", "node_id", "z_true"]


# ---------------------------------------------------------------- checklists

@dataclass(frozen=True)
class ChecklistRecord:
    node_id: str
    date: dt.date
    species: str
    count: int
    effort_hours: float

    def __post_init__(self):
        if self.count < 0:
            raise InvalidInput("checklist count must be nonnegative")
        if not self.effort_hours > 0:
            raise InvalidInput("checklist effort must be positive")


def _reader(fh, header: Sequence[str], path) -> Iterator[tuple[int, dict]]:
    reader = csv.DictReader(fh)
    missing = [h for h in header if h not in (reader.fieldnames or [])]
    if missing:
        raise ParseError(f"{path}: missing column(s) {', '.join(missing)}", line=1)
    for row in reader:
        yield reader.line_num, row


def read_checklists(path) -> Iterator[ChecklistRecord]:
    with open(path, newline="", encoding="utf-8") as fh:
        for line, row in _reader(fh, CHECKLIST_HEADER, path):
            try:
                yield ChecklistRecord(row["node_id"], dt.date.fromisoformat(row["date"]), row["species"],
                                      int(row["count"]), float(row["effort_hours"]))
            except (TypeError, ValueError) as exc:
                raise ParseError(f"{path}: {exc}", line=line) from exc


def aggregate_checklists(records: Iterable[ChecklistRecord], species: str, epoch: dt.date, n_weeks: int,
                         node_ids: Sequence[str]) -> tuple[ObservationSet, int]:
    """Sum target-species counts and all-checklist effort into week x node cells.

    Weeks are consecutive 7-day blocks starting at ``epoch``.  Records dated
    outside the window are skipped; their number is returned alongside the
    observations.
    """
    index = {k: j for j, k in enumerate(node_ids)}
    y = np.zeros((n_weeks, len(node_ids)), dtype=np.int64)
    t = np.zeros((n_weeks, len(node_ids)))
    skipped = 0
    for rec in records:
        j = index.get(rec.node_id)
        if j is None:
            raise UnknownNode(f"checklist references unknown node {rec.node_id!r}")
        week = (rec.date - epoch).days // 7
        if not 0 <= week < n_weeks:
            skipped += 1
            continue
        t[week, j] += rec.effort_hours
        if rec.species == species:
            y[week, j] += rec.count
    if skipped:
        logger.warning("skipped %d checklists outside the %d-week window", skipped, n_weeks)
    return ObservationSet(y, t, tuple(node_ids)), skipped


# ---------------------------------------------------------------- counts / truth

def save_counts(obs: ObservationSet, path, node_ids: Sequence[str] | None = None):
    ids = node_ids or obs.node_ids or [str(j) for j in range(obs.shape[1])]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(COUNTS_HEADER)
        for i in range(obs.shape[0]):
            for j, k in enumerate(ids):
                w.writerow([i, k, int(obs.y[i, j]), repr(float(obs.t[i, j]))])


def _long_matrix(path, header, value_cols, node_ids=None, n_time=None):
    """Read a long-format CSV into ``n_time x n_node`` arrays, one per value column."""
    cells = {}
    order: dict[str, None] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        for line, row in _reader(fh, header, path):
            try:
                i = int(row["time_index"])
                k = row["node_id"]
                vals = [conv(row[c]) for c, conv in value_cols]
            except (TypeError, ValueError) as exc:
                raise ParseError(f"{path}: {exc}", line=line) from exc
            if k is None or i < 0:
                raise ParseError(f"{path}: malformed row", line=line)
            if (i, k) in cells:
                raise ParseError(f"{path}: duplicate cell ({i}, {k})", line=line)
            order.setdefault(k)
            cells[(i, k)] = (line, vals)
    ids = list(node_ids) if node_ids is not None else list(order)
    index = {k: j for j, k in enumerate(ids)}
    unknown = [k for k in order if k not in index]
    if unknown:
        raise UnknownNode(f"{path}: unknown node id(s) {unknown[:5]}")
    T = (max((i for i, _ in cells), default=-1) + 1) if n_time is None else n_time
    out = [np.zeros((T, len(ids))) for _ in value_cols]
    for (i, k), (line, vals) in cells.items():
        if i >= T:
            raise ParseError(f"{path}: time_index {i} beyond {T} steps", line=line)
        for arr, v in zip(out, vals):
            arr[i, index[k]] = v
    return out, tuple(ids), cells


def load_counts(path, node_ids: Sequence[str] | None = None, n_time: int | None = None) -> ObservationSet:
    """Read a counts file; absent cells are treated as unobserved (zero effort)."""
    (y, t), ids, cells = _long_matrix(path, COUNTS_HEADER, [("count", int), ("effort_hours", float)],
                                      node_ids, n_time)
    for (i, k), (line, (count, effort)) in cells.items():
        if count < 0 or effort < 0:
            raise ParseError(f"{path}: negative count or effort", line=line)
        if effort == 0 and count > 0:
            raise InvariantViolation(f"{path}: line {line}: positive count with zero effort")
    return ObservationSet(y.astype(np.int64), t, ids)


def save_truth(z: np.ndarray, node_ids: Sequence[str], path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRUTH_HEADER)
        for i in range(z.shape[0]):
            for j, k in enumerate(node_ids):
                w.writerow([i, k, repr(float(z[i, j]))])


def load_truth(path, node_ids: Sequence[str] | None = None) -> tuple[np.ndarray, tuple[str, ...]]:
    (z,), ids, _ = _long_matrix(path, TRUTH_HEADER, [("z_true", float)], node_ids)
    return z, ids


# ---------------------------------------------------------------- graph files

@dataclass(frozen=True, eq=False)
class GraphSpec:
    graph: SpatialGraph
    battery: tuple[str, ...]
    ground: tuple[str, ...]
    battery_conductance: float = 1.0
    ground_conductance: float = 1.0
    latitudes: np.ndarray | None = field(default=None, repr=False)

    def kernel(self):
        return TransitionKernel.from_graph(self.graph, self.battery, self.ground,
                                           self.battery_conductance, self.ground_conductance)

    def node_latitudes(self) -> np.ndarray:
        return self.latitudes if self.latitudes is not None else self.graph.centroids[:, 1]

    def to_json(self) -> dict:
        g = self.graph
        nodes = [{"id": k, "x": float(x), "y": float(y)} for k, (x, y) in zip(g.node_ids, g.centroids)]
        if self.latitudes is not None:
            for nd, lat in zip(nodes, self.latitudes):
                nd["lat"] = float(lat)
        return {
            "nodes": nodes,
            "edges": [{"a": a, "b": b, "conductance": c} for a, b, c in g.edges],
            "battery": list(self.battery),
            "ground": list(self.ground),
            "battery_conductance": self.battery_conductance,
            "ground_conductance": self.ground_conductance,
        }


def project_equirectangular(lon, lat, lat0: float | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Longitude/latitude in degrees to planar kilometres about the mean latitude."""
    lon = np.radians(np.asarray(lon, dtype=float))
    lat = np.radians(np.asarray(lat, dtype=float))
    phi0 = np.mean(lat) if lat0 is None else np.radians(lat0)
    return EARTH_RADIUS_KM * lon * np.cos(phi0), EARTH_RADIUS_KM * lat


def graph_from_json(data: dict) -> GraphSpec:
    try:
        raw_nodes = data["nodes"]
        raw_edges = data["edges"]
        battery, ground = data["battery"], data["ground"]
    except KeyError as exc:
        raise ParseError(f"graph file lacks field {exc}") from exc
    has_xy = all("x" in nd and "y" in nd for nd in raw_nodes)
    has_ll = all("lon" in nd and "lat" in nd for nd in raw_nodes)
    if has_xy:
        xs = [nd["x"] for nd in raw_nodes]
        ys = [nd["y"] for nd in raw_nodes]
    elif has_ll:
        xs, ys = project_equirectangular([nd["lon"] for nd in raw_nodes], [nd["lat"] for nd in raw_nodes])
    else:
        raise ParseError("every node needs either x/y or lon/lat")
    lat = np.array([nd["lat"] for nd in raw_nodes], dtype=float) if all("lat" in nd for nd in raw_nodes) else None
    nodes = [(nd["id"], x, y) for nd, x, y in zip(raw_nodes, xs, ys)]
    edges = [(e["a"], e["b"], e.get("conductance", 1.0)) for e in raw_edges]
    return GraphSpec(build_graph(nodes, edges), tuple(map(str, battery)), tuple(map(str, ground)),
                     float(data.get("battery_conductance", 1.0)), float(data.get("ground_conductance", 1.0)), lat)


LATTICE_RE = re.compile(r"^lattice:(\d+)x(\d+)$")


def load_graph(source: str) -> GraphSpec:
    """Read a graph file, or build ``lattice:RxC`` (battery on top row, ground on bottom)."""
    m = LATTICE_RE.match(str(source))
    if m:
        rows, cols = int(m.group(1)), int(m.group(2))
        battery, ground = lattice_terminals(rows, cols)
        return GraphSpec(lattice(rows, cols), tuple(battery), tuple(ground))
    try:
        with open(source, encoding="utf-8") as fh:
            data = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{source}: invalid JSON ({exc.msg})", line=exc.lineno) from exc
    return graph_from_json(data)


def save_graph(spec: GraphSpec, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(spec.to_json(), fh, indent=1)
        fh.write("\n")


# ---------------------------------------------------------------- matrices and draws

def write_matrix_csv(path, M: np.ndarray, row_ids: Sequence[str], col_ids: Sequence[str] | None = None):
    col_ids = row_ids if col_ids is None else col_ids
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["node_id", *col_ids])
        for k, row in zip(row_ids, np.atleast_2d(M)):
            w.writerow([k, *(repr(float(v)) for v in row)])


def read_matrix_csv(path) -> tuple[np.ndarray, list[str], list[str]]:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    cols = rows[0][1:]
    ids = [r[0] for r in rows[1:]]
    return np.array([[float(v) for v in r[1:]] for r in rows[1:]]), ids, cols


def _write_gz_csv(path, header: Sequence[str], data: np.ndarray, fmt: str):
    buf = io.BytesIO()
    np.savetxt(buf, data, fmt=fmt, delimiter=",", header=",".join(header), comments="")
    # mtime=0 keeps repeated runs byte-identical
    with open(path, "wb") as raw, gzip.GzipFile(fileobj=raw, mode="wb", mtime=0, filename="") as gz:
        gz.write(buf.getvalue())


def _read_gz_csv(path) -> tuple[list[str], np.ndarray]:
    with gzip.open(path, "rt", encoding="utf-8") as fh:
        header = fh.readline().strip().split(",")
        data = np.loadtxt(fh, delimiter=",", ndmin=2)
    return header, data


def save_samples(samples: PosteriorSamples, out_dir, extra_manifest: dict | None = None):
    """Write draws as ``<block>.csv.gz`` files and a JSON run manifest."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    n_draws, n_time, n = samples.z_draws.shape
    node_ids = samples.meta.get("node_ids") or [str(j) for j in range(n)]
    _write_gz_csv(out / "z.csv.gz", [f"z[{i};{k}]" for i in range(n_time) for k in node_ids],
                  samples.z_draws.reshape(n_draws, -1), "%.17g")
    _write_gz_csv(out / "q.csv.gz", [f"q[{i}]" for i in range(n_time)], samples.q_draws, "%d")
    for name in ("rho", "nu", "delta"):
        _write_gz_csv(out / f"{name}.csv.gz", [f"{name}[{i}]" for i in range(n_time)],
                      getattr(samples, f"{name}_draws"), "%.17g")
    _write_gz_csv(out / "alpha.csv.gz", ["alpha"], samples.alpha_draws[:, None], "%.17g")
    config = samples.meta.get("config", {})
    manifest = {
        "seed": samples.meta.get("seed"),
        "config_hash": hashlib.sha256(json.dumps(config, sort_keys=True).encode()).hexdigest()[:16],
        "n_draws": n_draws,
        "n_time": n_time,
        "node_ids": list(node_ids),
        "acceptance": samples.acceptance,
        "adaptation": samples.adaptation,
        "config": config,
        "priors": samples.meta.get("priors"),
        "iterations_completed": samples.meta.get("iterations_completed"),
    }
    manifest.update(extra_manifest or {})
    with open(out / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
        fh.write("\n")


def load_samples(draws_dir) -> PosteriorSamples:
    d = Path(draws_dir)
    try:
        with open(d / "manifest.json", encoding="utf-8") as fh:
            manifest = json.load(fh)
    except FileNotFoundError as exc:
        raise ParseError(f"{d}: no manifest.json") from exc
    n_time, node_ids = manifest["n_time"], manifest["node_ids"]
    _, z = _read_gz_csv(d / "z.csv.gz")
    if z.shape[1] != n_time * len(node_ids):
        raise DimensionMismatch("z draws do not match the manifest shape")
    blocks = {name: _read_gz_csv(d / f"{name}.csv.gz")[1] for name in ("q", "rho", "nu", "delta", "alpha")}
    meta = {k: manifest.get(k) for k in ("seed", "config", "priors", "node_ids", "iterations_completed")}
    return PosteriorSamples(z.reshape(-1, n_time, len(node_ids)), blocks["q"].astype(np.int8), blocks["rho"],
                            blocks["nu"], blocks["delta"], blocks["alpha"][:, 0], manifest.get("acceptance", {}),
                            manifest.get("adaptation", {}), meta)
