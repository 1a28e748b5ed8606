"""
Config-driven experiment runners.

Two experiments are supported:

``convert-bench``
    Median wall-clock of :func:`~ttkalman.krp.krp_to_tt` against the dense
    TT-SVD baseline for a seeded random ``rows x cols`` factor and a range of
    Kronecker powers.

``volterra-ident``
    Recursive identification of a synthetic Volterra system with the
    tensor-train Kalman filter, for several output block sizes ``m`` and
    seeds, logging the relative coefficient error per iteration.

Configs are flat JSON objects.  Every key has a default; unknown keys and
out-of-range values are rejected with a message naming the key.  All CSV
files print floats with 17 significant digits; their columns are listed in
``csv_schema.json`` next to this module.
"""

from __future__ import annotations

import csv
import json
import os
import statistics
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .kalman import NoiseSpec, Observation, RoundingSpec, initial_state, step
from .krp import RankPolicy, krp_to_tt, rowwise_kron_power, tt_svd_matrix
from .tt import contract_full, identity, tt_norm, tt_sub
from .volterra import InputStream, VolterraModel, build_Ut, generate_outputs

EXPERIMENTS = ("convert-bench", "volterra-ident")
NA = "NA"


def fmt(x) -> str:
    """CSV text for one value; floats get 17 significant digits."""
    if x is None:
        return NA
    if isinstance(x, (float, np.floating)):
        return f"{float(x):.17g}"
    if isinstance(x, (list, tuple)):
        return "-".join(str(int(v)) for v in x)
    return str(x)


class ConfigError(ValueError):
    """Invalid experiment configuration; the message names the key."""


@dataclass
class ExperimentConfig:
    experiment: str = "volterra-ident"
    output_dir: str = "results"
    seeds: list = field(default_factory=lambda: [0, 1, 2, 3, 4])
    rank_policy: str = "eps"
    # volterra-ident
    p: int = 1
    l: int = 1
    M: int = 5
    d: int = 4
    meas_var: float = 1e-8
    m_values: list = field(default_factory=lambda: [1, 2, 3, 4, 5])
    iterations: int = 100
    tolerance: float = 1e-10
    max_rank: int = 0
    prior_cov: float = 1.0
    stride: int = 0  # 0 means "advance by m" (disjoint output blocks)
    threshold: float = 1e-4
    consecutive: int = 5
    divergence: float = 1e3
    early_stop: bool = False
    # convert-bench
    rows: int = 100
    cols: int = 10
    d_values: list = field(default_factory=lambda: [2, 3, 4, 5, 6])
    trials: int = 20
    baseline_budget: int = 200_000_000
    residual_budget: int = 20_000_000

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.experiment not in EXPERIMENTS:
            raise ConfigError(f"experiment: must be one of {EXPERIMENTS}, got {self.experiment!r}")
        for name in ("p", "l", "M", "d", "iterations", "rows", "cols", "trials", "consecutive"):
            _check_int(name, getattr(self, name), 1)
        for name in ("max_rank", "stride", "baseline_budget", "residual_budget"):
            _check_int(name, getattr(self, name), 0)
        for name in ("meas_var", "tolerance", "prior_cov"):
            _check_float(name, getattr(self, name), 0.0)
        for name in ("threshold", "divergence"):
            _check_float(name, getattr(self, name), 0.0, strict=True)
        for name in ("seeds", "m_values", "d_values"):
            values = getattr(self, name)
            if not isinstance(values, list) or not values:
                raise ConfigError(f"{name}: must be a non-empty list")
            lo = 0 if name == "seeds" else 1
            for k, v in enumerate(values):
                _check_int(f"{name}[{k}]", v, lo)
        if not isinstance(self.early_stop, bool):
            raise ConfigError(f"early_stop: must be true or false, got {self.early_stop!r}")
        if not isinstance(self.output_dir, str):
            raise ConfigError("output_dir: must be a string")
        try:
            RankPolicy.parse(self.rank_policy)
        except (ValueError, AttributeError) as e:
            raise ConfigError(f"rank_policy: {e}") from None

    @property
    def n(self) -> int:
        return self.p * self.M + 1

    def policy(self) -> RankPolicy:
        return RankPolicy.parse(self.rank_policy)


def _check_int(name, v, lo):
    if isinstance(v, bool) or not isinstance(v, int):
        raise ConfigError(f"{name}: expected an integer, got {v!r}")
    if v < lo:
        raise ConfigError(f"{name}: must be >= {lo}, got {v}")


def _check_float(name, v, lo, strict=False):
    if isinstance(v, bool) or not isinstance(v, (int, float)) or not np.isfinite(v):
        raise ConfigError(f"{name}: expected a finite number, got {v!r}")
    if v < lo or (strict and v == lo):
        raise ConfigError(f"{name}: must be {'>' if strict else '>='} {lo}, got {v}")


_FIELDS = {f.name: f for f in fields(ExperimentConfig)}


def config_from_dict(data: dict) -> ExperimentConfig:
    if not isinstance(data, dict):
        raise ConfigError("config: top level must be an object")
    for key in data:
        if key not in _FIELDS:
            raise ConfigError(f"{key}: unknown key")
    values = dict(data)
    for key, v in values.items():
        # integral floats such as 1e8 are accepted for integer keys
        if _FIELDS[key].type == "int" and isinstance(v, float) and v.is_integer():
            values[key] = int(v)
        if _FIELDS[key].type == "float" and isinstance(v, str):
            try:
                values[key] = float(v)
            except ValueError:
                raise ConfigError(f"{key}: expected a finite number, got {v!r}") from None
    return ExperimentConfig(**values)


def load_config(path: str | os.PathLike) -> ExperimentConfig:
    with open(path) as f:
        try:
            data = json.load(f)
        except json.JSONDecodeError as e:
            raise ConfigError(f"{path}: not valid JSON ({e})") from None
    return config_from_dict(data)


def dump_config(cfg: ExperimentConfig, path: str | os.PathLike) -> None:
    with open(path, "w") as f:
        json.dump(asdict(cfg), f, indent=2)
        f.write("\n")


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])


# -- conversion benchmark ----------------------------------------------------

BENCH_HEADER = ["algorithm", "d", "rows", "cols", "trials", "median_seconds", "residual", "ranks", "status"]


def _median_time(fn, trials):
    times = []
    out = None
    for _ in range(trials):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return statistics.median(times), out


def _residual(net, U, d, budget):
    if U.shape[0] * U.shape[1] ** d > budget:
        return None
    dense = rowwise_kron_power([U] * d)
    return float(np.linalg.norm(contract_full(net, budget)[0] - dense) / np.linalg.norm(dense))


def convert_bench_rows(cfg: ExperimentConfig, seed: int, log=None):
    """One row per (algorithm, d): median seconds over ``cfg.trials``.

    Only the conversion itself is timed; the dense matrix handed to the
    baseline is built once beforehand.  The baseline is skipped (status
    ``skipped``) when that matrix would exceed ``cfg.baseline_budget``
    elements; residuals are ``NA`` above ``cfg.residual_budget``.
    """
    U = np.random.default_rng(seed).standard_normal((cfg.rows, cfg.cols))
    policy = cfg.policy()
    rows = []
    for d in cfg.d_values:
        t, net = _median_time(lambda: krp_to_tt(U, d, policy), cfg.trials)
        rows.append(["krp", d, cfg.rows, cfg.cols, cfg.trials, t,
                     _residual(net, U, d, cfg.residual_budget), net.ranks, "ok"])
        if log:
            log(f"krp     d={d} median {t:.4g} s")
        size = cfg.rows * cfg.cols ** d
        if size > cfg.baseline_budget:
            rows.append(["ttsvd", d, cfg.rows, cfg.cols, 0, None, None, None, "skipped"])
            if log:
                log(f"tt-svd  d={d} skipped ({size} elements over budget)")
            continue
        C = rowwise_kron_power([U] * d)
        t, net = _median_time(lambda: tt_svd_matrix(C, cfg.cols, d, policy, cfg.baseline_budget), cfg.trials)
        rows.append(["ttsvd", d, cfg.rows, cfg.cols, cfg.trials, t,
                     _residual(net, U, d, cfg.residual_budget), net.ranks, "ok"])
        if log:
            log(f"tt-svd  d={d} median {t:.4g} s")
    return rows


def run_convert_bench(cfg: ExperimentConfig, out_dir=None, log=None) -> Path:
    """Write ``bench.csv`` into the output directory and return its path."""
    if cfg.experiment != "convert-bench":
        raise ConfigError(f"experiment: expected 'convert-bench', got {cfg.experiment!r}")
    out = Path(out_dir or cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = convert_bench_rows(cfg, cfg.seeds[0], log)
    path = out / "bench.csv"
    _write_csv(path, BENCH_HEADER, rows)
    return path


# -- Volterra identification -------------------------------------------------


@dataclass
class RunRecord:
    """Per-iteration log of one filter run."""

    seed: int
    m: int
    errors: list = field(default_factory=list)
    step_seconds: list = field(default_factory=list)
    round_seconds: list = field(default_factory=list)
    mean_ranks: list = field(default_factory=list)
    cov_ranks: list = field(default_factory=list)
    status: str = "ok"

    def append(self, err, seconds, rounding, mean_ranks, cov_ranks):
        if not err >= 0:
            raise ValueError("relative error must be nonnegative")
        self.errors.append(err)
        self.step_seconds.append(seconds)
        self.round_seconds.append(rounding)
        self.mean_ranks.append(list(mean_ranks))
        self.cov_ranks.append(list(cov_ranks))


def iterations_to_threshold(errors, threshold: float, consecutive: int = 5):
    """First (1-based) iteration from which the error stays ``<= threshold``
    for ``consecutive`` iterations; None if that never happens."""
    run = 0
    for k, e in enumerate(errors):
        run = run + 1 if e <= threshold else 0
        if run == consecutive:
            return k - consecutive + 2
    return None


def run_seeds(seed: int):
    """Independent streams for the kernels, the input and the measurement noise."""
    return np.random.SeedSequence(seed).spawn(3)


def identify_one(cfg: ExperimentConfig, seed: int, m: int) -> RunRecord:
    """One filter run of ``cfg.iterations`` steps on blocks of ``m`` outputs.

    For a fixed seed the kernels and the input signal do not depend on
    ``m``, so runs with different block sizes see the same system.
    """
    kseed, useed, nseed = run_seeds(seed)
    model = VolterraModel.random(cfg.p, cfg.l, cfg.M, cfg.d, cfg.meas_var, kseed)
    stride = cfg.stride or m
    stream = InputStream.gaussian((cfg.iterations - 1) * stride + m, cfg.p, useed)
    noise_rng = np.random.default_rng(nseed)
    policy = cfg.policy()

    n, d, l = cfg.n, cfg.d, cfg.l
    state = initial_state(n, d, l, cfg.prior_cov, RoundingSpec(cfg.tolerance, cfg.max_rank))
    A = identity(n, d)
    noise = NoiseSpec.diagonal(n, d, l, m, cfg.meas_var)
    ref = float(np.sqrt(np.sum(tt_norm(model.kernels) ** 2)))

    rec = RunRecord(seed, m)
    held = 0
    for it in range(cfg.iterations):
        t = 1 + it * stride
        C = krp_to_tt(build_Ut(stream, t, m, cfg.p, cfg.M), d, policy)
        Y = generate_outputs(model, stream, t, m, noise_rng, C_train=C)
        timings = {}
        t0 = time.perf_counter()
        try:
            state = step(state, A, noise, Observation(C, Y), timings)
        except np.linalg.LinAlgError:
            rec.status = "singular"
            break
        dt = time.perf_counter() - t0
        err = float(np.sqrt(np.sum(tt_norm(tt_sub(model.kernels, state.mean)) ** 2))) / ref
        if not np.isfinite(err) or err > cfg.divergence:
            rec.status = "diverged"
            rec.append(err if np.isfinite(err) else float("inf"), dt, timings.get("round", 0.0),
                       state.mean.ranks, state.cov.ranks)
            break
        rec.append(err, dt, timings.get("round", 0.0), state.mean.ranks, state.cov.ranks)
        held = held + 1 if err <= cfg.threshold else 0
        if cfg.early_stop and held >= cfg.consecutive:
            rec.status = "stopped"
            break
    return rec


def _identify_task(args):
    cfg, seed, m = args
    return identify_one(cfg, seed, m)


def run_identification(cfg: ExperimentConfig, threads: int = 1, log=None) -> list[RunRecord]:
    """All (m, seed) runs, in config order.

    With ``threads > 1`` runs execute in separate processes; each run is
    itself single-threaded, so the records do not depend on ``threads``.
    """
    tasks = [(cfg, seed, m) for m in cfg.m_values for seed in cfg.seeds]
    if threads <= 1:
        records = []
        for task in tasks:
            records.append(_identify_task(task))
            if log:
                r = records[-1]
                log(f"m={r.m} seed={r.seed}: {len(r.errors)} iterations, final error "
                    f"{r.errors[-1] if r.errors else float('nan'):.3e} ({r.status})")
        return records
    with ProcessPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(_identify_task, tasks))


ITER_HEADER = ["m", "seed", "iteration", "relative_error", "mean_ranks", "cov_ranks"]
TIMING_HEADER = ["m", "seed", "iteration", "step_seconds", "round_seconds"]
RUNS_HEADER = ["m", "seed", "iterations_run", "iterations_to_threshold", "final_error", "status"]
SUMMARY_HEADER = ["m", "runs", "median_iterations_to_threshold", "median_step_seconds",
                  "round_share", "median_seconds_to_threshold"]
CONVERGENCE_HEADER = ["iteration", "m", "relative_error"]


def median_iterations(values):
    """Median where a run that never reached the threshold counts as infinitely slow."""
    med = statistics.median([np.inf if v is None else v for v in values])
    return None if not np.isfinite(med) else med


def summarize(cfg: ExperimentConfig, records: list[RunRecord]):
    """Per-m rows of :data:`SUMMARY_HEADER`."""
    rows = []
    for m in cfg.m_values:
        recs = [r for r in records if r.m == m]
        hits = [iterations_to_threshold(r.errors, cfg.threshold, cfg.consecutive) for r in recs]
        steps = [s for r in recs for s in r.step_seconds]
        rounding = sum(s for r in recs for s in r.round_seconds)
        to_thr = [sum(r.step_seconds[:h]) if h is not None else None for r, h in zip(recs, hits)]
        rows.append([
            m, len(recs), median_iterations(hits),
            statistics.median(steps) if steps else None,
            rounding / sum(steps) if steps else None,
            median_iterations(to_thr),
        ])
    return rows


def convergence_rows(cfg: ExperimentConfig, records: list[RunRecord]):
    """Median relative error over seeds per (iteration, m), as long as every seed ran."""
    rows = []
    for m in cfg.m_values:
        recs = [r for r in records if r.m == m]
        length = min(len(r.errors) for r in recs)
        for k in range(length):
            rows.append([k + 1, m, float(np.median([r.errors[k] for r in recs]))])
    return rows


def write_identification(cfg: ExperimentConfig, records: list[RunRecord], out_dir) -> dict:
    """Write the identification CSV files; returns ``{name: path}``.

    ``iterations.csv``, ``runs.csv`` and ``convergence.csv`` depend only on the
    config and are reproducible bit for bit; wall-clock data goes to
    ``timings.csv`` and ``summary.csv``.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {name: out / f"{name}.csv" for name in ("iterations", "runs", "convergence", "timings", "summary")}
    _write_csv(paths["iterations"], ITER_HEADER, (
        [r.m, r.seed, k + 1, e, r.mean_ranks[k], r.cov_ranks[k]]
        for r in records for k, e in enumerate(r.errors)))
    _write_csv(paths["runs"], RUNS_HEADER, (
        [r.m, r.seed, len(r.errors), iterations_to_threshold(r.errors, cfg.threshold, cfg.consecutive),
         r.errors[-1] if r.errors else None, r.status]
        for r in records))
    _write_csv(paths["convergence"], CONVERGENCE_HEADER, convergence_rows(cfg, records))
    _write_csv(paths["timings"], TIMING_HEADER, (
        [r.m, r.seed, k + 1, s, q]
        for r in records for k, (s, q) in enumerate(zip(r.step_seconds, r.round_seconds))))
    _write_csv(paths["summary"], SUMMARY_HEADER, summarize(cfg, records))
    return paths


def run_volterra_ident(cfg: ExperimentConfig, out_dir=None, threads: int = 1, log=None):
    """Run every (m, seed) pair and write the CSV files; returns ``(records, paths)``."""
    if cfg.experiment != "volterra-ident":
        raise ConfigError(f"experiment: expected 'volterra-ident', got {cfg.experiment!r}")
    records = run_identification(cfg, threads, log)
    return records, write_identification(cfg, records, out_dir or cfg.output_dir)
