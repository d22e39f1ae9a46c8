"""Posterior summaries, coverage tables, flow labels, ESS and the replicate study."""
from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import DimensionMismatch, InsufficientDraws, InvalidInput
from .graph import lattice, lattice_terminals
from .hmm import apply_censoring, censor_mask, simulate_efforts, simulate_path
from .sampler import PosteriorSamples, PriorSpec, SamplerConfig, run_chain
from .transition import TransitionKernel

logger = logging.getLogger(__name__)

MIN_DRAWS = 100
QUANTILE_METHOD = "hazen"


def credible_interval(draws, level: float = 0.9, axis: int = 0):
    """Equal-tailed interval from Hazen quantiles (plotting position ``(k - 0.5) / n``).

    For draws ``1..100`` at level 0.9 this gives ``(5.5, 95.5)``.
    """
    draws = np.asarray(draws, dtype=float)
    if not 0.0 < level < 1.0:
        raise InvalidInput(f"level must lie in (0, 1), got {level}")
    if draws.shape[axis] < MIN_DRAWS:
        raise InsufficientDraws(f"need at least {MIN_DRAWS} draws, got {draws.shape[axis]}")
    tail = 0.5 * (1.0 - level)
    lo, hi = np.quantile(draws, [tail, 1.0 - tail], axis=axis, method=QUANTILE_METHOD)
    if lo.ndim == 0:
        return float(lo), float(hi)
    return lo, hi


# ---------------------------------------------------------------- coverage

@dataclass
class CoverageAccumulator:
    """Running sums for one parameter block; merges across replicates."""

    n: int = 0
    covered: int = 0
    width: float = 0.0
    err: float = 0.0
    sq_err: float = 0.0

    def add(self, draws: np.ndarray, truth: np.ndarray, level: float, mask: np.ndarray | None = None):
        truth = np.asarray(truth, dtype=float)
        if draws.shape[1:] != truth.shape:
            raise DimensionMismatch(f"draws {draws.shape[1:]} vs truth {truth.shape}")
        lo, hi = credible_interval(draws, level)
        lo, hi = np.atleast_1d(lo), np.atleast_1d(hi)
        mean = np.atleast_1d(draws.mean(axis=0))
        truth = np.atleast_1d(truth)
        sel = np.ones(truth.shape, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
        inside = (lo <= truth) & (truth <= hi)
        e = (mean - truth)[sel]
        self.n += int(sel.sum())
        self.covered += int(inside[sel].sum())
        self.width += float((hi - lo)[sel].sum())
        self.err += float(e.sum())
        self.sq_err += float((e ** 2).sum())
        return self

    def merge(self, other: "CoverageAccumulator") -> "CoverageAccumulator":
        return CoverageAccumulator(self.n + other.n, self.covered + other.covered, self.width + other.width,
                                   self.err + other.err, self.sq_err + other.sq_err)

    def row(self) -> dict:
        if self.n == 0:
            return dict(n=0, coverage=math.nan, width=math.nan, bias=math.nan, rmse=math.nan)
        return dict(n=self.n, coverage=self.covered / self.n, width=self.width / self.n,
                    bias=self.err / self.n, rmse=math.sqrt(self.sq_err / self.n))


@dataclass
class CoverageTable:
    """Per-block coverage rate, mean interval width, bias and RMSE.

    Latent rates are split into ``z_observed`` and ``z_censored`` rows.
    """

    rows: dict[str, CoverageAccumulator] = field(default_factory=dict)

    BLOCKS = ("z_observed", "z_censored", "q", "rho", "nu", "delta", "alpha")

    def __getitem__(self, key) -> dict:
        return self.rows[key].row()

    def merge(self, other: "CoverageTable") -> "CoverageTable":
        keys = list(dict.fromkeys([*self.rows, *other.rows]))
        return CoverageTable({k: self.rows.get(k, CoverageAccumulator()).merge(
            other.rows.get(k, CoverageAccumulator())) for k in keys})

    def to_records(self) -> list[dict]:
        return [dict(block=k, **self.rows[k].row()) for k in self.rows]

    def to_json(self) -> dict:
        return {k: asdict(v) for k, v in self.rows.items()}

    @classmethod
    def from_json(cls, data: dict) -> "CoverageTable":
        return cls({k: CoverageAccumulator(**v) for k, v in data.items()})

    def write_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.DictWriter(fh, fieldnames=["block", "n", "coverage", "width", "bias", "rmse"])
            w.writeheader()
            for rec in self.to_records():
                w.writerow(rec)


@dataclass
class SimulationTruth:
    z: np.ndarray
    q: np.ndarray
    rho: np.ndarray
    nu: np.ndarray
    delta: np.ndarray
    alpha: float
    censored: np.ndarray

    @classmethod
    def from_params(cls, z, params, censored) -> "SimulationTruth":
        th = params.thetas
        return cls(np.asarray(z), np.array([p.q for p in th]), np.array([p.rho for p in th]),
                   np.array([p.nu for p in th]), np.array([p.delta for p in th]), params.alpha,
                   np.asarray(censored, dtype=bool))


def coverage_stats(samples: PosteriorSamples, truth: SimulationTruth, level: float = 0.9,
                   include_alpha: bool = True) -> CoverageTable:
    if samples.z_draws.shape[1:] != truth.z.shape:
        raise DimensionMismatch(f"z draws {samples.z_draws.shape[1:]} vs truth {truth.z.shape}")
    rows = {
        "z_observed": CoverageAccumulator().add(samples.z_draws, truth.z, level, ~truth.censored),
        "z_censored": CoverageAccumulator().add(samples.z_draws, truth.z, level, truth.censored),
        "q": CoverageAccumulator().add(samples.q_draws.astype(float), truth.q, level),
        "rho": CoverageAccumulator().add(samples.rho_draws, truth.rho, level),
        "nu": CoverageAccumulator().add(samples.nu_draws, truth.nu, level),
        "delta": CoverageAccumulator().add(samples.delta_draws, truth.delta, level),
    }
    if include_alpha:
        rows["alpha"] = CoverageAccumulator().add(samples.alpha_draws[:, None], np.array([truth.alpha]), level)
    return CoverageTable(rows)


# ---------------------------------------------------------------- migration summaries

def average_latitude(rates, latitudes) -> np.ndarray:
    """Rate-weighted mean latitude per time step; NaN where every weight is zero."""
    rates = np.atleast_2d(np.asarray(rates, dtype=float))
    lat = np.asarray(latitudes, dtype=float)
    if rates.shape[1] != lat.shape[0]:
        raise DimensionMismatch("rates and latitudes disagree on the node count")
    if np.any(rates < 0):
        raise InvalidInput("weights must be nonnegative")
    total = rates.sum(axis=1)
    out = np.full(rates.shape[0], np.nan)
    ok = total > 0
    out[ok] = (rates[ok] @ lat) / total[ok]
    return out


@dataclass
class FlowClassification:
    labels: list[str]
    p_north: np.ndarray
    p_south: np.ndarray
    rho_mean: np.ndarray
    ratio_mean: np.ndarray
    thresholds: dict

    def to_records(self) -> list[dict]:
        return [dict(time_index=i, label=lab, p_north=float(self.p_north[i]), p_south=float(self.p_south[i]),
                     rho_mean=float(self.rho_mean[i]), self_ratio_mean=float(self.ratio_mean[i]))
                for i, lab in enumerate(self.labels)]


def classify_flow(samples: PosteriorSamples, p_min: float = 0.9, rho_min: float = 3.0,
                  ratio_min: float = 0.7) -> FlowClassification:
    """Label each time step ``north``, ``south`` or ``none``.

    Northward flow is ``q = -1`` (current toward the battery).  A label is
    given when the posterior probability of that direction is at least
    ``p_min``, the posterior mean of rho exceeds ``rho_min`` and the posterior
    mean of ``delta / (nu + delta)`` exceeds ``ratio_min``.
    """
    q = samples.q_draws
    p_north = (q == -1).mean(axis=0)
    p_south = (q == 1).mean(axis=0)
    rho_mean = samples.rho_draws.mean(axis=0)
    ratio_mean = (samples.delta_draws / (samples.nu_draws + samples.delta_draws)).mean(axis=0)
    gate = (rho_mean > rho_min) & (ratio_mean > ratio_min)
    labels = []
    for i in range(q.shape[1]):
        if gate[i] and p_north[i] >= p_min:
            labels.append("north")
        elif gate[i] and p_south[i] >= p_min:
            labels.append("south")
        else:
            labels.append("none")
    return FlowClassification(labels, p_north, p_south, rho_mean, ratio_mean,
                              dict(p_min=p_min, rho_min=rho_min, ratio_min=ratio_min))


def autocorrelation(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float) - np.mean(x)
    n = len(x)
    size = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(x, size)
    acov = np.fft.irfft(f * np.conj(f), size)[:n] / n
    return acov / acov[0]


def effective_sample_size(draws) -> float:
    """ESS from Geyer's initial positive sequence of paired autocorrelations.

    A constant sequence returns ``n`` by convention; the result is capped at ``n``.
    """
    x = np.asarray(draws, dtype=float).ravel()
    n = len(x)
    if n < MIN_DRAWS:
        raise InsufficientDraws(f"need at least {MIN_DRAWS} draws, got {n}")
    if np.ptp(x) == 0:
        return float(n)
    rho = autocorrelation(x)
    tau = -1.0
    for m in range(n // 2):
        pair = rho[2 * m] + rho[2 * m + 1]
        if pair <= 0:
            break
        tau += 2.0 * pair
    return float(min(n, n / tau))


# ---------------------------------------------------------------- replicate study

@dataclass
class StudySpec:
    """Lattice simulation-study protocol.  Defaults reproduce the published setup."""

    rows: int = 12
    cols: int = 5
    n_steps: int = 10
    n_replicates: int = 20
    censor_fraction: float = 0.3
    effort_rate: float = 0.1
    level: float = 0.9
    seed: int = 20240601
    priors: PriorSpec = field(default_factory=PriorSpec)
    sampler: SamplerConfig = field(default_factory=SamplerConfig)

    @classmethod
    def from_dict(cls, data: dict) -> "StudySpec":
        data = dict(data)
        priors = PriorSpec(**data.pop("priors", {}))
        sampler = SamplerConfig(**data.pop("sampler", {}))
        return cls(priors=priors, sampler=sampler, **data)

    def to_dict(self) -> dict:
        return asdict(self)

    def fingerprint(self) -> str:
        """Hash of everything that determines a replicate's result (not the count)."""
        d = self.to_dict()
        d.pop("n_replicates")
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:16]


def run_replicate(spec: StudySpec, index: int) -> dict:
    """Simulate, censor, fit and score one replicate; returns a JSON-able record."""

    graph = lattice(spec.rows, spec.cols)
    kernel = TransitionKernel.from_graph(graph, *lattice_terminals(spec.rows, spec.cols))
    sim_seq, chain_seq = np.random.SeedSequence(spec.seed).spawn(spec.n_replicates)[index].spawn(2)
    rng = np.random.default_rng(sim_seq)

    params = spec.priors.sample_params(spec.n_steps, rng)
    t = simulate_efforts(spec.n_steps, graph.n, rng, spec.effort_rate)
    path, obs = simulate_path(kernel, params, t, rng)
    mask = censor_mask(obs.shape, spec.censor_fraction, rng)
    obs = apply_censoring(obs, mask)

    chain_seed = int(chain_seq.generate_state(1)[0])
    config = SamplerConfig(**{**asdict(spec.sampler), "seed": chain_seed})
    samples = run_chain(obs, kernel, spec.priors, config)
    truth = SimulationTruth.from_params(path.z, params, mask)
    table = coverage_stats(samples, truth, spec.level, include_alpha=spec.priors.alpha_fixed is None)
    rho_ess = [effective_sample_size(samples.rho_draws[:, i]) for i in range(spec.n_steps)]
    return dict(
        replicate=index,
        fingerprint=spec.fingerprint(),
        chain_seed=chain_seed,
        truth=dict(q=truth.q.tolist(), rho=truth.rho.tolist(), nu=truth.nu.tolist(),
                   delta=truth.delta.tolist(), alpha=truth.alpha),
        posterior_mean=dict(rho=samples.rho_draws.mean(0).tolist(), nu=samples.nu_draws.mean(0).tolist(),
                            delta=samples.delta_draws.mean(0).tolist(), alpha=float(samples.alpha_draws.mean()),
                            q_mode=[int(np.bincount(c + 1, minlength=3).argmax()) - 1 for c in samples.q_draws.T]),
        acceptance=samples.acceptance["sampling"],
        ess_rho=rho_ess,
        ess_alpha=effective_sample_size(samples.alpha_draws) if spec.priors.alpha_fixed is None else None,
        stats=table.to_json(),
    )


def _run_replicate_args(args):
    return run_replicate(*args)


def load_records(path, fingerprint: str | None = None) -> list[dict]:
    records = []
    if path is None or not os.path.exists(path):
        return records
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            if fingerprint is None or rec.get("fingerprint") == fingerprint:
                records.append(rec)
    return records


def aggregate(records: list[dict]) -> CoverageTable:
    table = CoverageTable()
    for rec in sorted(records, key=lambda r: r["replicate"]):
        table = table.merge(CoverageTable.from_json(rec["stats"]))
    return table


def replicate_study(spec: StudySpec, out_dir=None, workers: int = 1) -> tuple[CoverageTable, list[dict]]:
    """Run every replicate (reusing finished ones found in ``out_dir``) and aggregate.

    Records are appended to ``out_dir/replicates.jsonl`` as each replicate
    completes, so an interrupted study resumes where it stopped.
    """
    records_path = None
    done = {}
    if out_dir is not None:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
        records_path = Path(out_dir) / "replicates.jsonl"
        done = {r["replicate"]: r for r in load_records(records_path, spec.fingerprint())
                if r["replicate"] < spec.n_replicates}
    todo = [i for i in range(spec.n_replicates) if i not in done]
    if done:
        logger.info("reusing %d finished replicates", len(done))

    def _store(rec):
        done[rec["replicate"]] = rec
        logger.info("replicate %d finished", rec["replicate"])
        if records_path is not None:
            with open(records_path, "a", encoding="utf-8") as fh:
                fh.write(json.dumps(rec) + "\n")

    if workers > 1 and len(todo) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for rec in pool.map(_run_replicate_args, [(spec, i) for i in todo]):
                _store(rec)
    else:
        for i in todo:
            _store(run_replicate(spec, i))

    records = [done[i] for i in range(spec.n_replicates)]
    table = aggregate(records)
    if out_dir is not None:
        table.write_csv(Path(out_dir) / "coverage.csv")
    return table, records
