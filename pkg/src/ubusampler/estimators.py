"""Unbiased gradient estimators: mini-batch, additive Gaussian, SVRG, SAGA.

All estimators expose ``kick_gradient(y, k, stream) -> (gradient, work)``
for the integrator, where work counts component-gradient evaluations
(a full gradient of an N-component model costs N units; SVRG inner steps are
charged p units, with anchor-gradient reuse assumed cached).

Subset indices are 0-based internally.  Subset sampling is a partial
Fisher-Yates shuffle consuming exactly p uniform doubles from the stream, so
chunked and step-by-step generation agree bit-for-bit.
"""

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .potentials import PotentialModel

__all__ = [
    "SubsetSampler",
    "sample_subset",
    "minibatch_grad",
    "gaussian_noise_grad",
    "SvrgState",
    "svrg_refresh",
    "svrg_grad",
    "SagaState",
    "saga_init",
    "saga_grad_and_update",
    "FullGradient",
    "GaussianNoise",
    "MiniBatch",
    "Svrg",
    "Saga",
    "estimator_from_id",
]


def _partial_fisher_yates(n: int, p: int, uniforms: np.ndarray) -> np.ndarray:
    arr = np.arange(n)
    for j in range(p):
        idx = j + int(uniforms[j] * (n - j))
        arr[j], arr[idx] = arr[idx], arr[j]
    return arr[:p]


@dataclass
class SubsetSampler:
    """Uniform p-subsets of {0..n-1} without replacement, stream-driven."""

    n: int
    p: int
    stream: np.random.Generator

    def __post_init__(self):
        if not 1 <= self.p <= self.n:
            raise ValueError(f"batch size {self.p} must lie in [1, {self.n}]")

    def sample(self) -> np.ndarray:
        return _partial_fisher_yates(self.n, self.p, self.stream.random(self.p))


def sample_subset(sampler: SubsetSampler) -> np.ndarray:
    return sampler.sample()


def minibatch_grad(model: PotentialModel, x: np.ndarray, subset) -> np.ndarray:
    """(1/p) sum_{i in subset} grad U_i(x)."""
    subset = np.asarray(subset)
    g = model.grad_i(x, int(subset[0])).copy()
    for i in subset[1:]:
        g += model.grad_i(x, int(i))
    return g / len(subset)


def gaussian_noise_grad(model: PotentialModel, x: np.ndarray, sigma: float,
                        stream: np.random.Generator) -> np.ndarray:
    """grad U(x) + sigma * xi, xi ~ N(0, I_d)."""
    return model.grad(x) + sigma * stream.standard_normal(model.dim)


# ---------------------------------------------------------------------------
# SVRG
# ---------------------------------------------------------------------------


@dataclass
class SvrgState:
    anchor: Optional[np.ndarray] = None
    anchor_grad: Optional[np.ndarray] = None
    steps_since_refresh: int = 0
    epoch_length: int = 1


def svrg_refresh(model: PotentialModel, state: SvrgState, new_anchor: np.ndarray) -> None:
    """Reset the anchor and recompute its full gradient (cost N units)."""
    state.anchor = np.array(new_anchor, dtype=float, copy=True)
    state.anchor_grad = model.grad(state.anchor)
    state.steps_since_refresh = 0


def svrg_grad(model: PotentialModel, x: np.ndarray, state: SvrgState, subset) -> np.ndarray:
    """Control-variate estimate (1/p) sum_i [grad U_i(x) - grad U_i(anchor)] + grad U(anchor)."""
    if state.anchor is None:
        raise ValueError("SVRG state must be refreshed before use")
    return (minibatch_grad(model, x, subset)
            - minibatch_grad(model, state.anchor, subset)
            + state.anchor_grad)


# ---------------------------------------------------------------------------
# SAGA
# ---------------------------------------------------------------------------


@dataclass
class SagaState:
    """Stored component gradients and their running sum.

    ``table[i]`` holds grad U_i at the last position where component i was
    sampled; positions themselves are kept only when requested (diagnostics).
    """

    table: np.ndarray
    running_sum: np.ndarray
    table_positions: Optional[np.ndarray] = None

    def recompute_sum(self) -> np.ndarray:
        return self.table.sum(axis=0)


def saga_init(model: PotentialModel, y0: np.ndarray, keep_positions: bool = False) -> SagaState:
    """Fill the table with grad U_i(y0) for all i (N evaluations)."""
    n, d = model.n_components, model.dim
    table = np.empty((n, d))
    for i in range(n):
        table[i] = model.grad_i(y0, i)
    positions = np.tile(np.asarray(y0, dtype=float), (n, 1)) if keep_positions else None
    return SagaState(table=table, running_sum=table.sum(axis=0), table_positions=positions)


def saga_grad_and_update(model: PotentialModel, x: np.ndarray, state: SagaState, subset) -> np.ndarray:
    """SAGA estimate at x, then overwrite the table rows for the subset.

    Each grad U_i(x) is evaluated once and reused for both the estimate and
    the table write; the running sum is updated incrementally.
    """
    if state is None or state.table is None:
        raise ValueError("SAGA state must be initialized before use")
    subset = np.asarray(subset)
    p = len(subset)
    fresh = np.empty((p, model.dim))
    stale = np.empty((p, model.dim))
    for j, i in enumerate(subset):
        fresh[j] = model.grad_i(x, int(i))
        stale[j] = state.table[int(i)]
    g = fresh.mean(axis=0) - stale.mean(axis=0) + state.running_sum / model.n_components
    for j, i in enumerate(subset):
        state.running_sum += fresh[j] - state.table[int(i)]
        state.table[int(i)] = fresh[j]
        if state.table_positions is not None:
            state.table_positions[int(i)] = x
    return g


# ---------------------------------------------------------------------------
# Strategy objects used by integrators.step / simulate
# ---------------------------------------------------------------------------


class FullGradient:
    algorithm_id = "full"

    def __init__(self, model: PotentialModel):
        self.model = model

    def kick_gradient(self, y, k, stream):
        return self.model.grad(y), self.model.n_components

    def work_for_steps(self, n_steps: int) -> int:
        return n_steps * self.model.n_components


class GaussianNoise:
    """Additive-noise stochastic gradient b = grad U + sigma * xi."""

    algorithm_id = "sg"

    def __init__(self, model: PotentialModel, sigma: float):
        self.model = model
        self.sigma = sigma

    def kick_gradient(self, y, k, stream):
        return gaussian_noise_grad(self.model, y, self.sigma, stream), 1

    def work_for_steps(self, n_steps: int) -> int:
        return n_steps


class MiniBatch:
    def __init__(self, model: PotentialModel, p: int):
        if not 1 <= p <= model.n_components:
            raise ValueError(f"batch size {p} must lie in [1, {model.n_components}]")
        self.model = model
        self.p = p
        self.algorithm_id = f"minibatch:{p}"

    def kick_gradient(self, y, k, stream):
        subset = _partial_fisher_yates(self.model.n_components, self.p, stream.random(self.p))
        return minibatch_grad(self.model, y, subset), self.p

    def work_for_steps(self, n_steps: int) -> int:
        return n_steps * self.p


class Svrg:
    """Epoch-based control variate; the anchor refresh (every q = N/p steps)
    kicks with the exact full gradient and consumes no subset draws."""

    def __init__(self, model: PotentialModel, p: int):
        if not 1 <= p <= model.n_components:
            raise ValueError(f"batch size {p} must lie in [1, {model.n_components}]")
        self.model = model
        self.p = p
        self.q = max(model.n_components // p, 1)
        self.state = SvrgState(epoch_length=self.q)
        self.algorithm_id = f"svrg:{p}"

    def kick_gradient(self, y, k, stream):
        if k % self.q == 0:
            # refresh counts as step 0 of the epoch; the subset draw is
            # discarded so the stream position stays step-indexed
            stream.random(self.p)
            svrg_refresh(self.model, self.state, y)
            return self.state.anchor_grad.copy(), self.model.n_components
        subset = _partial_fisher_yates(self.model.n_components, self.p, stream.random(self.p))
        g = svrg_grad(self.model, y, self.state, subset)
        self.state.steps_since_refresh += 1
        return g, self.p

    def work_for_steps(self, n_steps: int) -> int:
        n_refresh = (n_steps + self.q - 1) // self.q
        return n_refresh * self.model.n_components + (n_steps - n_refresh) * self.p


class Saga:
    """Historical-gradient table estimator; step 0 initializes the table at
    Y_0 and kicks with the full gradient."""

    def __init__(self, model: PotentialModel, p: int = 1):
        if not 1 <= p <= model.n_components:
            raise ValueError(f"batch size {p} must lie in [1, {model.n_components}]")
        self.model = model
        self.p = p
        self.state: Optional[SagaState] = None
        self.algorithm_id = "saga" if p == 1 else f"saga:{p}"

    def kick_gradient(self, y, k, stream):
        if self.state is None:
            stream.random(self.p)  # discarded; keeps the stream step-indexed
            self.state = saga_init(self.model, y)
            return self.state.running_sum / self.model.n_components, self.model.n_components
        subset = _partial_fisher_yates(self.model.n_components, self.p, stream.random(self.p))
        return saga_grad_and_update(self.model, y, self.state, subset), self.p

    def work_for_steps(self, n_steps: int) -> int:
        return self.model.n_components + (n_steps - 1) * self.p


def estimator_from_id(model: PotentialModel, algorithm: str, sigma: float = 0.0):
    """Resolve a CLI algorithm id (full | sg | minibatch:p | svrg:p | saga)."""
    if algorithm == "full":
        return FullGradient(model)
    if algorithm == "sg" or algorithm.startswith("sg:"):
        s = float(algorithm.split(":")[1]) if ":" in algorithm else sigma
        return GaussianNoise(model, s)
    if algorithm.startswith("minibatch:"):
        return MiniBatch(model, int(algorithm.split(":")[1]))
    if algorithm.startswith("svrg:"):
        return Svrg(model, int(algorithm.split(":")[1]))
    if algorithm == "saga":
        return Saga(model, 1)
    if algorithm.startswith("saga:"):
        return Saga(model, int(algorithm.split(":")[1]))
    raise ValueError(f"unknown algorithm id: {algorithm!r}")
