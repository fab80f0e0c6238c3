"""Configuration-driven experiment harness with deterministic CSV output.

Runs bias sweeps over a step-size grid, multi-algorithm comparisons at
matched work budgets, variance-reduction ratio tables, and the closed-form
step-size/algorithm selection heuristic.  Every run is reproducible from
(config, seed): replicas draw from streams keyed by replica index, worker
threads only change scheduling, and rows are assembled in a fixed order.

CSV schema (version 1), one record per row:

    schema_version  integer schema tag
    model           model id (e.g. bench1d, bench10d-fs:100)
    algorithm       algorithm id (full | sg[:sigma] | minibatch:p |
                    svrg:p | saga[:p])
    n_components    N of the finite sum (1 for analytic targets)
    batch_size      p (1 when not applicable)
    h               step size
    total_time      T = steps * h
    steps           trajectory length K
    replicas        replica count entering the statistic
    seed            global seed
    statistic       bias | error | ratio | slope | coefficient | predicted_bias
    value           the statistic
    stderr          Monte Carlo standard error (empty when not applicable)
    reference       reference mean (scalar) or its norm (vector)
    reference_error reference error bound
    work_units      gradient-component evaluations per replica
    wall_time       seconds spent producing the row's data
    unreliable      1 when the reference error exceeds 20% of the value
    diverged        number of replicas excluded for divergence

Floats are written with repr (shortest round-trip), so identical values
produce identical bytes on any platform.
"""

from __future__ import annotations

import csv
import json
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields as dc_fields
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .batch import BatchResult, run_batch
from .observables import (ReferenceMean, estimate_bias, load_reference,
                          reference_mean_longrun, reference_mean_quadrature)
from .potentials import PotentialModel, TestFunction, model_from_id
from .variation import NoiseModel, default_burnin_steps, leading_coefficient

__all__ = [
    "SCHEMA_VERSION",
    "CSV_COLUMNS",
    "ExperimentSpec",
    "RunRecord",
    "Selection",
    "load_config",
    "emit_csv",
    "read_csv",
    "resolve_reference",
    "run_bias_sweep",
    "run_compare",
    "run_ratio_table",
    "run_coefficient",
    "select_algorithm",
    "fit_loglog_slope",
    "sampling_error",
]

SCHEMA_VERSION = 1

CSV_COLUMNS = [
    "schema_version", "model", "algorithm", "n_components", "batch_size",
    "h", "total_time", "steps", "replicas", "seed", "statistic", "value",
    "stderr", "reference", "reference_error", "work_units", "wall_time",
    "unreliable", "diverged",
]


class ConfigError(ValueError):
    """Malformed experiment configuration."""


@dataclass(frozen=True)
class ExperimentSpec:
    """One experiment cell group: a model/algorithm over an h-grid."""

    model: str
    algorithm: str
    h_grid: Tuple[float, ...]
    total_time: float
    replicas: int
    seed: int
    reference: Dict = field(default_factory=lambda: {"method": "quadrature", "tol": 1e-10})
    sigma: float = 0.0
    out: Optional[str] = None
    burnin_time: float = 0.0
    predict_slope: bool = False
    coefficient_replicas: int = 2048

    def __post_init__(self):
        grid = tuple(float(h) for h in self.h_grid)
        object.__setattr__(self, "h_grid", grid)
        if not grid:
            raise ConfigError("h_grid must not be empty")
        if any(h <= 0 for h in grid):
            raise ConfigError("every h must be positive")
        if list(grid) != sorted(grid, reverse=True):
            raise ConfigError("h_grid must be sorted descending")
        if self.total_time / min(grid) < 1:
            raise ConfigError("total_time must allow at least one step at every h")
        if self.replicas < 2:
            raise ConfigError("need at least 2 replicas")

    def steps_at(self, h: float) -> int:
        return max(int(round(self.total_time / h)), 1)


@dataclass
class RunRecord:
    model: str
    algorithm: str
    n_components: int
    batch_size: int
    h: float
    total_time: float
    steps: int
    replicas: int
    seed: int
    statistic: str
    value: float
    stderr: Optional[float]
    reference: Optional[float]
    reference_error: Optional[float]
    work_units: int
    wall_time: float
    unreliable: bool = False
    diverged: int = 0

    def row(self) -> List[str]:
        def fmt(x):
            if x is None:
                return ""
            if isinstance(x, bool):
                return str(int(x))
            if isinstance(x, float):
                return repr(x)
            return str(x)
        return [fmt(v) for v in (
            SCHEMA_VERSION, self.model, self.algorithm, self.n_components,
            self.batch_size, self.h, self.total_time, self.steps,
            self.replicas, self.seed, self.statistic, self.value,
            self.stderr, self.reference, self.reference_error,
            self.work_units, self.wall_time, self.unreliable, self.diverged)]


# ---------------------------------------------------------------------------
# Config and CSV plumbing
# ---------------------------------------------------------------------------

_CONFIG_KEYS = {f.name for f in dc_fields(ExperimentSpec)}


def load_config(path) -> ExperimentSpec:
    """Read an ExperimentSpec from a JSON document; unknown keys rejected."""
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError(f"config {path} must be a JSON object")
    unknown = sorted(set(doc) - _CONFIG_KEYS)
    if unknown:
        raise ConfigError(f"unknown config key {unknown[0]!r} in {path}")
    missing = [k for k in ("model", "algorithm", "h_grid", "total_time", "replicas", "seed")
               if k not in doc]
    if missing:
        raise ConfigError(f"config {path} missing required key {missing[0]!r}")
    doc = dict(doc)
    doc["h_grid"] = tuple(doc["h_grid"])
    try:
        return ExperimentSpec(**doc)
    except (TypeError, ConfigError) as exc:
        raise ConfigError(str(exc)) from exc


def emit_csv(records: Sequence[RunRecord], path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for rec in records:
            writer.writerow(rec.row())


def read_csv(path) -> List[dict]:
    """Load a harness CSV, checking the schema version."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        rows = list(reader)
    for row in rows:
        if int(row["schema_version"]) != SCHEMA_VERSION:
            raise ValueError(f"schema version {row['schema_version']} "
                             f"(expected {SCHEMA_VERSION}) in {path}")
    return rows


# ---------------------------------------------------------------------------
# Statistics helpers
# ---------------------------------------------------------------------------


def sampling_error(replica_means: np.ndarray, ref: ReferenceMean) -> Tuple[float, float]:
    """Root-mean-square sampling error sqrt(E |avg - pi(f)|^2) with a
    delta-method standard error."""
    means = np.atleast_2d(np.asarray(replica_means, dtype=float))
    n = means.shape[0]
    sq = np.sum((means - ref.value) ** 2, axis=1)
    mse = float(sq.mean())
    err = math.sqrt(mse)
    if n < 2 or err == 0.0:
        return err, float("inf")
    se_mse = float(sq.std(ddof=1) / math.sqrt(n))
    return err, se_mse / (2.0 * err)


def fit_loglog_slope(hs, values, stderrs) -> Tuple[float, float, int]:
    """Weighted log-log slope of |value| vs h.

    Weights are 1/stderr^2 propagated to the log scale; points with
    stderr > |value|/5 or non-finite entries are excluded.  Returns
    (slope, slope_stderr, points_used).
    """
    hs = np.asarray(hs, dtype=float)
    vals = np.abs(np.asarray(values, dtype=float))
    ses = np.asarray(stderrs, dtype=float)
    keep = np.isfinite(vals) & np.isfinite(ses) & (vals > 0) & (ses <= vals / 5.0)
    if keep.sum() < 2:
        return float("nan"), float("nan"), int(keep.sum())
    x = np.log(hs[keep])
    y = np.log(vals[keep])
    w = (vals[keep] / ses[keep]) ** 2  # var(log v) ~ (se/v)^2
    W = np.sum(w)
    xbar = np.sum(w * x) / W
    ybar = np.sum(w * y) / W
    sxx = np.sum(w * (x - xbar) ** 2)
    slope = np.sum(w * (x - xbar) * (y - ybar)) / sxx
    resid = y - ybar - slope * (x - xbar)
    dof = max(keep.sum() - 2, 1)
    var_slope = np.sum(w * resid ** 2) / dof / sxx
    return float(slope), float(math.sqrt(max(var_slope, 0.0))), int(keep.sum())


def resolve_reference(model: PotentialModel, fn: TestFunction,
                      reference: Dict, seed: int) -> ReferenceMean:
    """Build the pi(f) oracle named by a reference config block."""
    method = reference.get("method")
    if method == "quadrature":
        return reference_mean_quadrature(model, fn, tol=reference.get("tol", 1e-10))
    if method == "longrun":
        return reference_mean_longrun(
            model, fn,
            h_ref=reference["h_ref"],
            t_ref=reference["t_ref"],
            replicas=reference.get("replicas", 32),
            seed=reference.get("seed", seed),
            burnin_time=reference.get("burnin_time", 0.0))
    if method == "fixture":
        return load_reference(reference["path"])
    raise ConfigError(f"unknown reference method {method!r}")


def _algorithm_batch_size(algorithm: str, n_components: int) -> int:
    base, _, arg = algorithm.partition(":")
    if base in ("minibatch", "svrg"):
        return int(arg)
    if base == "saga":
        return int(arg) if arg else 1
    if base == "full":
        return n_components
    return 1


def _run_cells(tasks, workers: int):
    """Execute run_batch tasks, returning results keyed by task index.

    Tasks are (key, callable) pairs; execution order is scheduler-dependent
    but results are consumed in key order, so output is worker-invariant.
    """
    results = {}
    if workers <= 1:
        for key, job in tasks:
            results[key] = job()
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            futs = {key: pool.submit(job) for key, job in tasks}
            for key, fut in futs.items():
                results[key] = fut.result()
    return results


def _merge_blocks(blocks: List[BatchResult]) -> Tuple[np.ndarray, np.ndarray]:
    means = np.concatenate([b.means for b in blocks], axis=0)
    diverged = np.concatenate([b.diverged for b in blocks], axis=0)
    return means, diverged


def _block_tasks(spec: ExperimentSpec, model, fn, algorithm, h, steps,
                 experiment_id, workers, burnin_steps=0):
    """Split replicas into per-worker blocks with explicit offsets."""
    n_blocks = min(max(workers, 1), spec.replicas)
    sizes = [spec.replicas // n_blocks + (1 if i < spec.replicas % n_blocks else 0)
             for i in range(n_blocks)]
    tasks = []
    offset = 0
    for i, n in enumerate(sizes):
        if n == 0:
            continue
        tasks.append((i, _make_job(model, fn, algorithm, h, steps, n, spec.seed,
                                   experiment_id, spec.sigma, offset, burnin_steps)))
        offset += n
    return tasks


def _make_job(model, fn, algorithm, h, steps, n, seed, experiment_id,
              sigma, offset, burnin_steps):
    def job():
        return run_batch(model, fn, algorithm, h, model.constants["M2"], steps,
                         n, seed, experiment_id, sigma=sigma,
                         replica_offset=offset, burnin_steps=burnin_steps)
    return job


def _experiment_id(kind: str, spec_model: str, h: float, total_time: float) -> str:
    # deliberately excludes the algorithm: matched-seed comparisons across
    # algorithms at the same (model, h, T) share their noise streams
    return f"{kind}:{spec_model}:h={h!r}:T={total_time!r}"


# ---------------------------------------------------------------------------
# Experiments
# ---------------------------------------------------------------------------


def run_bias_sweep(spec: ExperimentSpec, workers: int = 1) -> List[RunRecord]:
    """Bias vs step size for one algorithm, with a fitted log-log slope row.

    With ``spec.predict_slope`` the leading-order coefficient is estimated
    and emitted as `coefficient` plus per-h `predicted_bias` rows
    (C0 * h / (2 M2^2), divided by the batch size for subset estimators).
    """
    model, fn = model_from_id(spec.model, spec.seed)
    if fn.out_dim != 1:
        raise ConfigError("bias sweep requires a scalar observable")
    ref = resolve_reference(model, fn, spec.reference, spec.seed)
    refval = float(ref.value[0])
    records: List[RunRecord] = []
    hs, biases, stderrs = [], [], []
    for h in spec.h_grid:
        steps = spec.steps_at(h)
        burnin_steps = int(round(spec.burnin_time / h))
        t0 = time.perf_counter()
        exp_id = _experiment_id("bias", spec.model, h, spec.total_time)
        tasks = _block_tasks(spec, model, fn, spec.algorithm, h, steps,
                             exp_id, workers, burnin_steps)
        blocks = _run_cells(tasks, workers)
        means, diverged = _merge_blocks([blocks[k] for k in sorted(blocks)])
        ok = diverged < 0
        n_div = int(np.sum(~ok))
        if n_div:
            import warnings
            warnings.warn(f"{n_div} replicas diverged at h={h!r}; excluded")
        wall = time.perf_counter() - t0
        if ok.sum() >= 2:
            bias, se = estimate_bias(means[ok], ref)
        else:
            bias, se = float("nan"), float("nan")
        unreliable = (not math.isfinite(bias)) or ref.error_bound > 0.2 * abs(bias)
        records.append(RunRecord(
            model=spec.model, algorithm=spec.algorithm,
            n_components=model.n_components,
            batch_size=_algorithm_batch_size(spec.algorithm, model.n_components),
            h=h, total_time=spec.total_time, steps=steps,
            replicas=int(ok.sum()), seed=spec.seed, statistic="bias",
            value=bias, stderr=se, reference=refval,
            reference_error=ref.error_bound,
            work_units=blocks[min(blocks)].work_units, wall_time=wall,
            unreliable=unreliable, diverged=n_div))
        hs.append(h)
        biases.append(bias)
        stderrs.append(se)
    slope, slope_se, used = fit_loglog_slope(hs, biases, stderrs)
    records.append(RunRecord(
        model=spec.model, algorithm=spec.algorithm,
        n_components=model.n_components,
        batch_size=_algorithm_batch_size(spec.algorithm, model.n_components),
        h=min(spec.h_grid), total_time=spec.total_time,
        steps=spec.steps_at(min(spec.h_grid)), replicas=used,
        seed=spec.seed, statistic="slope", value=slope, stderr=slope_se,
        reference=None, reference_error=None, work_units=0, wall_time=0.0))
    if spec.predict_slope:
        records.extend(_coefficient_records(spec, model, fn))
    return records


def _noise_model_for(spec: ExperimentSpec, model: PotentialModel) -> NoiseModel:
    base = spec.algorithm.split(":")[0]
    if base == "sg":
        sigma = float(spec.algorithm.split(":")[1]) if ":" in spec.algorithm else spec.sigma
        return NoiseModel("gaussian", sigma)
    if model.is_finite_sum:
        return NoiseModel("finite-sum")
    raise ConfigError("coefficient prediction needs additive noise or a finite-sum model")


def _coefficient_records(spec: ExperimentSpec, model, fn) -> List[RunRecord]:
    nm = _noise_model_for(spec, model)
    h_coeff = min(spec.h_grid)
    t0 = time.perf_counter()
    c0, c0_se = leading_coefficient(
        model, fn, nm, h_coeff, K=None, replicas=spec.coefficient_replicas,
        burnin=default_burnin_steps(model, h_coeff), seed=spec.seed,
        experiment_id=f"coeff:{spec.model}:h={h_coeff!r}")
    wall = time.perf_counter() - t0
    M2 = model.constants["M2"]
    p = _algorithm_batch_size(spec.algorithm, model.n_components)
    recs = [RunRecord(
        model=spec.model, algorithm=spec.algorithm,
        n_components=model.n_components, batch_size=p, h=h_coeff,
        total_time=spec.total_time, steps=0,
        replicas=spec.coefficient_replicas, seed=spec.seed,
        statistic="coefficient", value=c0, stderr=c0_se,
        reference=None, reference_error=None, work_units=0, wall_time=wall)]
    for h in spec.h_grid:
        pred = c0 * h / (2.0 * M2 ** 2) / p
        recs.append(RunRecord(
            model=spec.model, algorithm=spec.algorithm,
            n_components=model.n_components, batch_size=p, h=h,
            total_time=spec.total_time, steps=0,
            replicas=spec.coefficient_replicas, seed=spec.seed,
            statistic="predicted_bias", value=pred,
            stderr=abs(c0_se * h / (2.0 * M2 ** 2) / p),
            reference=None, reference_error=None, work_units=0, wall_time=0.0))
    return recs


def run_coefficient(spec: ExperimentSpec) -> List[RunRecord]:
    """Leading-order coefficient only (the `coefficient` subcommand)."""
    model, fn = model_from_id(spec.model, spec.seed)
    if fn.out_dim != 1:
        raise ConfigError("coefficient requires a scalar observable")
    return _coefficient_records(spec, model, fn)


def run_compare(specs: Sequence[ExperimentSpec], workers: int = 1) -> List[RunRecord]:
    """Sampling error vs h for several algorithms on one model.

    All specs must share (model, h_grid, total_time, replicas, seed); each
    (algorithm, h) cell uses the same noise streams, so differences are due
    to the gradient estimator alone.
    """
    if not specs:
        raise ConfigError("run_compare needs at least one spec")
    first = specs[0]
    for s in specs[1:]:
        if (s.model, s.h_grid, s.total_time, s.replicas, s.seed) != (
                first.model, first.h_grid, first.total_time, first.replicas, first.seed):
            raise ConfigError("compare specs must share model, h_grid, total_time, "
                              "replicas and seed")
    model, fn = model_from_id(first.model, first.seed)
    ref = resolve_reference(model, fn, first.reference, first.seed)
    refnorm = float(np.linalg.norm(ref.value))
    records: List[RunRecord] = []
    for spec in specs:
        for h in spec.h_grid:
            steps = spec.steps_at(h)
            burnin_steps = int(round(spec.burnin_time / h))
            exp_id = _experiment_id("compare", spec.model, h, spec.total_time)
            t0 = time.perf_counter()
            tasks = _block_tasks(spec, model, fn, spec.algorithm, h, steps,
                                 exp_id, workers, burnin_steps)
            blocks = _run_cells(tasks, workers)
            means, diverged = _merge_blocks([blocks[k] for k in sorted(blocks)])
            ok = diverged < 0
            n_div = int(np.sum(~ok))
            wall = time.perf_counter() - t0
            if ok.sum() >= 2:
                err, se = sampling_error(means[ok], ref)
            else:
                err, se = float("nan"), float("nan")
            unreliable = (not math.isfinite(err)) or ref.error_bound > 0.2 * abs(err)
            records.append(RunRecord(
                model=spec.model, algorithm=spec.algorithm,
                n_components=model.n_components,
                batch_size=_algorithm_batch_size(spec.algorithm, model.n_components),
                h=h, total_time=spec.total_time, steps=steps,
                replicas=int(ok.sum()), seed=spec.seed, statistic="error",
                value=err, stderr=se, reference=refnorm,
                reference_error=ref.error_bound,
                work_units=blocks[min(blocks)].work_units, wall_time=wall,
                unreliable=unreliable, diverged=n_div))
    return records


def run_ratio_table(model_id: str, p_list: Sequence[int], h_grid: Sequence[float],
                    total_time: float, replicas: int, seed: int,
                    reference: Dict, workers: int = 1,
                    burnin_time: float = 0.0) -> List[RunRecord]:
    """R(p, h) = SVRG sampling error / mini-batch sampling error.

    Both algorithms run on matched noise streams per (p, h) cell; the ratio
    row is omitted when the denominator's stderr exceeds 50% of its value.
    """
    model, fn = model_from_id(model_id, seed)
    if not model.is_finite_sum:
        raise ConfigError("ratio table requires a finite-sum model")
    records: List[RunRecord] = []
    for p in p_list:
        specs = [
            ExperimentSpec(model=model_id, algorithm=f"svrg:{p}",
                           h_grid=tuple(h_grid), total_time=total_time,
                           replicas=replicas, seed=seed, reference=reference,
                           burnin_time=burnin_time),
            ExperimentSpec(model=model_id, algorithm=f"minibatch:{p}",
                           h_grid=tuple(h_grid), total_time=total_time,
                           replicas=replicas, seed=seed, reference=reference,
                           burnin_time=burnin_time),
        ]
        rows = run_compare(specs, workers=workers)
        records.extend(rows)
        by_h = {}
        for row in rows:
            if row.statistic == "error":
                by_h.setdefault(row.h, {})[row.algorithm.split(":")[0]] = row
        for h in h_grid:
            svrg = by_h.get(h, {}).get("svrg")
            mb = by_h.get(h, {}).get("minibatch")
            if svrg is None or mb is None:
                continue
            if (not math.isfinite(mb.value) or mb.value == 0.0
                    or not math.isfinite(mb.stderr) or mb.stderr > 0.5 * abs(mb.value)):
                continue
            ratio = svrg.value / mb.value
            rse = abs(ratio) * math.sqrt((svrg.stderr / svrg.value) ** 2
                                         + (mb.stderr / mb.value) ** 2)
            records.append(RunRecord(
                model=model_id, algorithm=f"svrg:{p}/minibatch:{p}",
                n_components=model.n_components, batch_size=p, h=h,
                total_time=total_time, steps=max(int(round(total_time / h)), 1),
                replicas=min(svrg.replicas, mb.replicas), seed=seed,
                statistic="ratio", value=ratio, stderr=rse,
                reference=None, reference_error=None,
                work_units=svrg.work_units + mb.work_units,
                wall_time=svrg.wall_time + mb.wall_time,
                diverged=svrg.diverged + mb.diverged))
    return records


# ---------------------------------------------------------------------------
# Step-size / algorithm selection heuristic
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Selection:
    h: float
    total_time: float
    steps: int
    choice: str           # "svrg" | "minibatch"
    svrg_window: Tuple[float, float]


def select_algorithm(epsilon: float, d: int, N: int, p: int) -> Selection:
    """Pick step size and estimator for a target root-MSE epsilon.

    h is the largest value with (d h / p) * min(1, N^2 h^2 / p^2) <= eps
    and d h^2 <= eps (both left sides increase in h, so bisection applies);
    T = d / eps^2; SVRG is chosen iff p / sqrt(d T) <= h <= p / N,
    otherwise mini-batch SG.
    """
    if min(epsilon, d, N, p) <= 0:
        raise ValueError("all selection inputs must be positive")

    def constraint(h):
        return max((d * h / p) * min(1.0, (N * h / p) ** 2) - epsilon,
                   d * h * h - epsilon)

    lo, hi = 0.0, 1.0
    while constraint(hi) < 0:
        hi *= 2.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if constraint(mid) <= 0:
            lo = mid
        else:
            hi = mid
    h = lo
    total_time = d / epsilon ** 2
    steps = int(math.ceil(total_time / h))
    window = (p / math.sqrt(d * total_time), p / N)
    choice = "svrg" if window[0] <= h <= window[1] else "minibatch"
    return Selection(h=h, total_time=total_time, steps=steps,
                     choice=choice, svrg_window=window)
