"""Time averages, reference means, numerical bias and MSE estimators.

The time-average convention follows the mean-square-error definition: the
average runs over f(X_k) for k = 0 .. K-1, including the initial state, with
no burn-in.  Accumulators use compensated summation so that runs of 1e8
steps do not lose digits, and merge associatively in replica order.
"""

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from scipy import integrate

from .potentials import PotentialModel, TestFunction

__all__ = [
    "TimeAverageAccumulator",
    "ReferenceMean",
    "reference_mean_quadrature",
    "reference_mean_longrun",
    "estimate_bias",
    "estimate_mse",
    "save_reference",
    "load_reference",
]

FIXTURE_VERSION = 1


@dataclass
class TimeAverageAccumulator:
    """Kahan-compensated running sum of observable values."""

    out_dim: int = 1
    total: np.ndarray = None
    comp: np.ndarray = None
    total_sq: np.ndarray = None
    comp_sq: np.ndarray = None
    count: int = 0

    def __post_init__(self):
        if self.total is None:
            self.total = np.zeros(self.out_dim)
            self.comp = np.zeros(self.out_dim)
            self.total_sq = np.zeros(self.out_dim)
            self.comp_sq = np.zeros(self.out_dim)

    def add(self, value) -> None:
        value = np.atleast_1d(np.asarray(value, dtype=float))
        y = value - self.comp
        t = self.total + y
        self.comp = (t - self.total) - y
        self.total = t
        y2 = value * value - self.comp_sq
        t2 = self.total_sq + y2
        self.comp_sq = (t2 - self.total_sq) - y2
        self.total_sq = t2
        self.count += 1

    # integrator observer protocol
    def observe(self, x, value=None) -> None:
        raise NotImplementedError

    @property
    def mean(self) -> np.ndarray:
        return self.total / self.count

    @property
    def variance(self) -> np.ndarray:
        m = self.mean
        return self.total_sq / self.count - m * m

    def merge(self, other: "TimeAverageAccumulator") -> "TimeAverageAccumulator":
        out = TimeAverageAccumulator(out_dim=self.out_dim)
        out.total = self.total + other.total
        out.comp = self.comp + other.comp
        out.total_sq = self.total_sq + other.total_sq
        out.comp_sq = self.comp_sq + other.comp_sq
        out.count = self.count + other.count
        return out


class FunctionObserver(TimeAverageAccumulator):
    """Accumulator that applies a test function to observed positions."""

    def __init__(self, fn: TestFunction):
        super().__init__(out_dim=fn.out_dim)
        self.fn = fn

    def observe(self, x, value=None) -> None:
        self.add(self.fn.f(x))


@dataclass
class ReferenceMean:
    value: np.ndarray
    error_bound: float
    meta: dict = field(default_factory=dict)


def _quad_box(model: PotentialModel) -> float:
    # Gaussian-envelope tail bound from m-strong convexity where usable;
    # the benchmarks all carry negligible mass outside |x_i| <= 12
    m = model.constants.get("m", 0.0)
    if m > 0.25:
        return max(8.0, 14.0 / math.sqrt(m))
    return 12.0


def reference_mean_quadrature(model: PotentialModel, fn: TestFunction, tol: float = 1e-10) -> ReferenceMean:
    """pi(f) = int f e^{-U} / int e^{-U} by quadrature (d <= 2, scalar f)."""
    if model.dim > 2:
        raise ValueError("quadrature reference supports d <= 2; use the long-run oracle")
    if fn.out_dim != 1:
        raise ValueError("quadrature reference supports scalar f")
    box = _quad_box(model)
    if model.dim == 1:
        num, en = integrate.quad(lambda x: fn.f(np.array([x])) * math.exp(-model.u(np.array([x]))),
                                 -box, box, epsabs=1e-15, epsrel=tol * 0.1, limit=400)
        den, ed = integrate.quad(lambda x: math.exp(-model.u(np.array([x]))),
                                 -box, box, epsabs=1e-15, epsrel=tol * 0.1, limit=400)
    else:
        num, en = _tensor_gauss_2d(lambda p: fn.f(p) * math.exp(-model.u(p)), box, tol)
        den, ed = _tensor_gauss_2d(lambda p: math.exp(-model.u(p)), box, tol)
    value = num / den
    err = (abs(en) + abs(value) * abs(ed)) / abs(den) + tol * 0.1  # tail allowance
    return ReferenceMean(value=np.array([value]), error_bound=float(err),
                         meta={"method": "quadrature", "tol": tol, "box": box, "model": model.name})


def _tensor_gauss_2d(func, box: float, tol: float, n0: int = 60, n_max: int = 2000):
    """Tensor-product Gauss-Legendre with node doubling until convergence."""
    prev = None
    n = n0
    while True:
        nodes, weights = np.polynomial.legendre.leggauss(n)
        pts = box * nodes
        w = box * weights
        total = 0.0
        for i, xi in enumerate(pts):
            row = 0.0
            for j, yj in enumerate(pts):
                row += w[j] * func(np.array([xi, yj]))
            total += w[i] * row
        if prev is not None and abs(total - prev) <= tol * 0.05 * max(abs(total), 1e-300):
            return total, abs(total - prev)
        if n >= n_max:
            return total, abs(total - prev) if prev is not None else abs(total)
        prev = total
        n *= 2


def reference_mean_longrun(model: PotentialModel, fn: TestFunction, h_ref: float,
                           t_ref: float, replicas: int, seed: int,
                           burnin_time: float = 0.0, M2: Optional[float] = None) -> ReferenceMean:
    """pi(f) oracle via long FG-UBU runs at a small step size.

    The error bound combines 3x the replica standard error with a Richardson
    allowance |est(h) - est(2h)| / 3 from the integrator's second-order bias.
    """
    from .batch import run_batch

    M2 = model.constants["M2"] if M2 is None else M2
    ests = {}
    for fac, tag in ((1.0, "h"), (2.0, "2h")):
        h = h_ref * fac
        k = max(int(round(t_ref / h)), 2)
        burn = int(round(burnin_time / h))
        res = run_batch(model, fn, "full", h, M2, k + burn, replicas, seed,
                        f"reference:{model.name}:h={h!r}", burnin_steps=burn)
        if np.any(res.diverged >= 0):
            raise RuntimeError("long-run reference diverged; reduce h_ref")
        ests[tag] = res.means
    mean = ests["h"].mean(axis=0)
    stderr = ests["h"].std(axis=0, ddof=1) / math.sqrt(replicas)
    allowance = np.abs(mean - ests["2h"].mean(axis=0)) / 3.0
    err = float(np.linalg.norm(3.0 * stderr + allowance))
    return ReferenceMean(value=mean, error_bound=err,
                         meta={"method": "longrun", "h_ref": h_ref, "t_ref": t_ref,
                               "replicas": replicas, "seed": seed, "burnin_time": burnin_time,
                               "model": model.name})


def estimate_bias(replica_means, ref: ReferenceMean):
    """(bias, stderr) of time averages against a reference mean.

    Scalar f: signed mean deviation of the replica time averages.  Vector f:
    the Euclidean-norm sampling error per replica, averaged.
    """
    means = np.atleast_2d(np.asarray(replica_means, dtype=float))
    if means.shape[1] != np.atleast_1d(ref.value).shape[0]:
        raise ValueError("replica averages and reference have mismatched dimensions")
    n = means.shape[0]
    if means.shape[1] == 1:
        devs = means[:, 0] - ref.value[0]
    else:
        devs = np.linalg.norm(means - ref.value, axis=1)
    bias = float(devs.mean())
    stderr = float(devs.std(ddof=1) / math.sqrt(n)) if n > 1 else float("inf")
    return bias, stderr


def estimate_mse(replica_means, ref: ReferenceMean) -> float:
    """Monte Carlo MSE: mean over replicas of |time average - pi(f)|^2."""
    means = np.atleast_2d(np.asarray(replica_means, dtype=float))
    if means.shape[0] < 2:
        raise ValueError("MSE estimate needs at least 2 replicas")
    return float(np.mean(np.sum((means - ref.value) ** 2, axis=1)))


def save_reference(ref: ReferenceMean, path) -> None:
    lines = [f"# ubusampler reference fixture v{FIXTURE_VERSION}"]
    for k, v in sorted(ref.meta.items()):
        lines.append(f"meta.{k}={v}")
    lines.append("error_bound=" + repr(ref.error_bound))
    lines.append("value=" + ",".join(repr(float(x)) for x in np.atleast_1d(ref.value)))
    Path(path).write_text("\n".join(lines) + "\n")


def load_reference(path) -> ReferenceMean:
    meta, value, err = {}, None, None
    text = Path(path).read_text().splitlines()
    if not text or not text[0].startswith(f"# ubusampler reference fixture v{FIXTURE_VERSION}"):
        raise ValueError(f"unrecognized fixture header in {path}")
    for line in text[1:]:
        if not line.strip():
            continue
        key, _, raw = line.partition("=")
        if key == "value":
            value = np.array([float(tok) for tok in raw.split(",")])
        elif key == "error_bound":
            err = float(raw)
        elif key.startswith("meta."):
            meta[key[5:]] = raw
    if value is None or err is None:
        raise ValueError(f"incomplete fixture {path}")
    return ReferenceMean(value=value, error_bound=err, meta=meta)
