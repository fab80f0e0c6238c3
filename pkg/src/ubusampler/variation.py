"""Variation processes along full-gradient UBU trajectories.

The first variation (Q, P) = (D_v x, D_v v) and second variation
(Q2, P2) = (D_vv x, D_vv v) are the derivatives of the trajectory with
respect to the initial velocity.  They are propagated with the exact
tangent of the splitting map itself (OU half-flow tangent, gradient-kick
tangent), so they differentiate the discrete trajectory exactly rather
than approximating a continuous-time sensitivity equation.

They feed two consumers:

* ``hessian_phi0_vv`` / ``leading_coefficient`` — the velocity Hessian of
  the Poisson-equation solution at the continuous limit and the
  leading-order bias coefficient C0 it induces; the predicted small-h bias
  slope of a gradient-noise run is C0 * h / (2 * M2**2) (divided by the
  batch size for mini-batching).
* ``contractivity_diagnostic`` — the twisted-norm certificate that the
  first variation decays exponentially for convex targets.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from .integrators import State, TrajectoryDiverged, ou_cholesky
from .potentials import PotentialModel, TestFunction

__all__ = [
    "VariationState",
    "TwistedForm",
    "NoiseModel",
    "step_variation",
    "simulate_with_variation",
    "hessian_phi0_vv",
    "leading_coefficient",
    "ContractivityReport",
    "contractivity_diagnostic",
    "run_contractivity",
    "gradient_outer_product",
    "default_truncation_cap",
    "default_burnin_steps",
]


@dataclass
class VariationState:
    """First and second variations w.r.t. the initial velocity.

    Q = D_v x (d, d), P = D_v v (d, d), Q2 = D_vv x (d, d, d),
    P2 = D_vv v (d, d, d); the second-variation tensors are symmetric in
    their trailing two indices.
    """

    Q: np.ndarray
    P: np.ndarray
    Q2: np.ndarray
    P2: np.ndarray

    @classmethod
    def initial(cls, d: int, Q0: Optional[np.ndarray] = None,
                P0: Optional[np.ndarray] = None) -> "VariationState":
        """Default initial condition Q=0, P=I (derivatives w.r.t. v0)."""
        Q = np.zeros((d, d)) if Q0 is None else np.array(Q0, dtype=float)
        P = np.eye(d) if P0 is None else np.array(P0, dtype=float)
        return cls(Q=Q, P=P, Q2=np.zeros((d, d, d)), P2=np.zeros((d, d, d)))

    def copy(self) -> "VariationState":
        return VariationState(self.Q.copy(), self.P.copy(), self.Q2.copy(), self.P2.copy())


@dataclass(frozen=True)
class TwistedForm:
    """Block quadratic form S = [[2I, I], [I, I]] on phase space R^{2d}."""

    d: int

    @property
    def S(self) -> np.ndarray:
        I = np.eye(self.d)
        return np.block([[2.0 * I, I], [I, I]])

    @property
    def sqrtS(self) -> np.ndarray:
        I = np.eye(self.d)
        return np.block([[3.0 * I, I], [I, 2.0 * I]]) / np.sqrt(5.0)

    def weighted(self, W: np.ndarray) -> np.ndarray:
        """W^T S W for a (2d, k) phase-space block."""
        return W.T @ self.S @ W


def _half_flow_variation(var: VariationState, t: float) -> None:
    """Tangent of the OU half-flow: noise terms have zero v0-derivative."""
    a = 0.5 * -math.expm1(-2.0 * t)
    e = math.exp(-2.0 * t)
    var.Q += a * var.P
    var.P *= e
    var.Q2 += a * var.P2
    var.P2 *= e


def step_variation(var: VariationState, y: np.ndarray, model: PotentialModel,
                   h: float, M2: Optional[float] = None) -> VariationState:
    """Advance the variations through one UBU step with kick point y.

    Composition: U half-flow tangent, gradient-kick tangent at y, U
    half-flow tangent.  The kick uses the pre-kick Q (and Q2) values:
        P  -= (h/M2) * H(y) @ Q
        P2 -= (h/M2) * (T(y)<Q, Q> + H(y) . Q2)
    with H the Hessian, T the third-derivative tensor and
    (T<Q,Q>)_{kmn} = sum_{ij} T_{ijk} Q_{im} Q_{jn}.
    """
    if M2 is None:
        M2 = model.constants["M2"]
    out = var.copy()
    _half_flow_variation(out, 0.5 * h)
    H = model.hess(y)
    scale = h / M2
    kick_P = H @ out.Q
    kick_P2 = (np.einsum("ijk,im,jn->kmn", model.third(y), out.Q, out.Q)
               + np.einsum("ki,imn->kmn", H, out.Q2))
    out.P -= scale * kick_P
    out.P2 -= scale * kick_P2
    _half_flow_variation(out, 0.5 * h)
    return out


def simulate_with_variation(model: PotentialModel, h: float, M2: float,
                            n_steps: int, x0: np.ndarray, v0: np.ndarray,
                            noise_stream: np.random.Generator,
                            observe: Optional[Callable[[int, np.ndarray, VariationState], None]] = None,
                            Q0: Optional[np.ndarray] = None,
                            P0: Optional[np.ndarray] = None) -> Tuple[State, VariationState]:
    """Full-gradient UBU trajectory carrying the variation in lock-step.

    ``observe(k, x_k, var_k)`` sees the pre-step state for k = 0..n_steps-1.
    Noise consumption matches ``integrators.flow_u``: 2d standard normals
    per half-flow, leading half first.
    """
    d = len(x0)
    x = np.array(x0, dtype=float)
    v = np.array(v0, dtype=float)
    var = VariationState.initial(d, Q0=Q0, P0=P0)
    t_half = 0.5 * h
    a = 0.5 * -math.expm1(-2.0 * t_half)
    e = math.exp(-2.0 * t_half)
    l11, l21, l22 = ou_cholesky(t_half, M2)
    for k in range(n_steps):
        if observe is not None:
            observe(k, x, var)
        # leading half-flow
        xi = noise_stream.standard_normal(2 * d)
        x = x + a * v + l11 * xi[:d]
        v = e * v + l21 * xi[:d] + l22 * xi[d:]
        var.Q += a * var.P
        var.P *= e
        var.Q2 += a * var.P2
        var.P2 *= e
        # gradient kick at y = x
        scale = h / M2
        v = v - scale * model.grad(x)
        H = model.hess(x)
        kick_P = H @ var.Q
        kick_P2 = (np.einsum("ijk,im,jn->kmn", model.third(x), var.Q, var.Q)
                   + np.einsum("ki,imn->kmn", H, var.Q2))
        var.P -= scale * kick_P
        var.P2 -= scale * kick_P2
        # trailing half-flow
        xi = noise_stream.standard_normal(2 * d)
        x = x + a * v + l11 * xi[:d]
        v = e * v + l21 * xi[:d] + l22 * xi[d:]
        var.Q += a * var.P
        var.P *= e
        var.Q2 += a * var.P2
        var.P2 *= e
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(v))
                and np.linalg.norm(x) < 1e12 and np.linalg.norm(v) < 1e12):
            raise TrajectoryDiverged(k)
    return State(x, v), var


def hessian_phi0_vv(model: PotentialModel, f: TestFunction, h: float, K: int,
                    x0: np.ndarray, v0: np.ndarray,
                    stream: np.random.Generator) -> np.ndarray:
    """Single-trajectory estimate of the velocity Hessian of the limiting
    Poisson solution for a scalar observable:

        h * sum_{k<K} [ (D_vv X_k)^T grad f(X_k)
                        + (D_v X_k)^T hess f(X_k) (D_v X_k) ].
    """
    if f.out_dim != 1:
        raise ValueError("velocity-Hessian estimate requires a scalar observable")
    d = len(x0)
    acc = np.zeros((d, d))

    def observe(k, x, var):
        g = np.asarray(f.grad(x), dtype=float).reshape(d)
        Hf = np.asarray(f.hess(x), dtype=float).reshape(d, d)
        acc[...] += np.einsum("imn,i->mn", var.Q2, g) + var.Q.T @ Hf @ var.Q

    simulate_with_variation(model, h, model.constants["M2"], K,
                            x0, v0, stream, observe=observe)
    return h * acc


# ---------------------------------------------------------------------------
# Leading-order bias coefficient
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class NoiseModel:
    """Gradient-noise description for the coefficient pipeline.

    kind = "gaussian": isotropic additive noise, outer product sigma^2 I.
    kind = "finite-sum": per-component deviation outer product
    (1/N) sum_i grad V_i(x) grad V_i(x)^T with grad V_i = grad U_i - grad U.
    """

    kind: str
    sigma: float = 0.0

    def __post_init__(self):
        if self.kind not in ("gaussian", "finite-sum"):
            raise ValueError(f"unknown noise model {self.kind!r}")


def gradient_outer_product(model: PotentialModel, x: np.ndarray) -> np.ndarray:
    """(1/N) sum_i grad V_i(x) grad V_i(x)^T, the finite-sum noise matrix."""
    g = model.grad(x)
    out = np.zeros((model.dim, model.dim))
    for i in range(model.n_components):
        dv = model.grad_i(x, i) - g
        out += np.outer(dv, dv)
    return out / model.n_components


def default_truncation_cap(model: PotentialModel, h: float) -> int:
    """Step cap from the slowest contraction rate m/(8 M2).

    Chosen so the neglected exponential tail is below 1e-8 of the head.
    Non-convex models (m <= 0) fall back to 200 time units.
    """
    m = model.constants["m"]
    M2 = model.constants["M2"]
    t_max = (8.0 * M2 / m) * math.log(1e8) if m > 0 else 200.0
    return max(64, int(math.ceil(t_max / h)))


def default_burnin_steps(model: PotentialModel, h: float) -> int:
    """Burn-in of 50 relaxation times (M2/m time units each)."""
    m = model.constants["m"]
    M2 = model.constants["M2"]
    t_burn = 50.0 * (M2 / max(m, 1e-2))
    return max(16, int(math.ceil(t_burn / h)))


def _batched_tensor_quad(T: np.ndarray, Q: np.ndarray) -> np.ndarray:
    # (R,i,j,k),(R,i,m),(R,j,n) -> (R,k,m,n)
    return np.einsum("rijk,rim,rjn->rkmn", T, Q, Q, optimize=True)


def _coefficient_traces(model: PotentialModel, f: TestFunction,
                        noise_model: NoiseModel, h: float, K: Optional[int],
                        x0: np.ndarray, v0: np.ndarray,
                        noise_stream: np.random.Generator) -> np.ndarray:
    """Per-replica Tr(E(x0) Hhat) for a batch of initial points (R, d)."""
    R, d = x0.shape
    M2 = model.constants["M2"]
    if noise_model.kind == "gaussian":
        E = None  # trace reduces to sigma^2 * Tr Hhat
    else:
        E = np.stack([gradient_outer_product(model, x0[r]) for r in range(R)])

    x = x0.copy()
    v = v0.copy()
    Q = np.zeros((R, d, d))
    P = np.broadcast_to(np.eye(d), (R, d, d)).copy()
    Q2 = np.zeros((R, d, d, d))
    P2 = np.zeros((R, d, d, d))
    acc = np.zeros((R, d, d))

    t_half = 0.5 * h
    a = 0.5 * -math.expm1(-2.0 * t_half)
    e = math.exp(-2.0 * t_half)
    l11, l21, l22 = ou_cholesky(t_half, M2)
    scale = h / M2

    use_batch = (model.grad_batch is not None and model.hess_batch is not None
                 and model.third_batch is not None
                 and f.grad_batch is not None and f.hess_batch is not None)

    cap = K if K is not None else default_truncation_cap(model, h)
    adaptive = K is None
    quiet_steps = 0
    for k in range(cap):
        # observe increment of the Hessian sum at the pre-step state
        if use_batch:
            gf = f.grad_batch(x)[:, 0, :]           # (R, d)
            Hf = f.hess_batch(x)[:, 0, :, :]        # (R, d, d)
        else:
            gf = np.stack([np.asarray(f.grad(x[r]), dtype=float).reshape(d) for r in range(R)])
            Hf = np.stack([np.asarray(f.hess(x[r]), dtype=float).reshape(d, d) for r in range(R)])
        inc = (np.einsum("rimn,ri->rmn", Q2, gf, optimize=True)
               + np.einsum("rim,rij,rjn->rmn", Q, Hf, Q, optimize=True))
        acc += inc
        if adaptive:
            ratio = np.max(np.linalg.norm(inc, axis=(1, 2))
                           / np.maximum(np.linalg.norm(acc, axis=(1, 2)), 1e-300))
            quiet_steps = quiet_steps + 1 if ratio < 1e-3 else 0
            if quiet_steps >= 50:
                break
        # leading half-flow
        xi = noise_stream.standard_normal((R, 2 * d))
        x = x + a * v + l11 * xi[:, :d]
        v = e * v + l21 * xi[:, :d] + l22 * xi[:, d:]
        Q += a * P
        P *= e
        Q2 += a * P2
        P2 *= e
        # gradient kick
        if use_batch:
            gU = model.grad_batch(x)
            HU = model.hess_batch(x)
            TU = model.third_batch(x)
        else:
            gU = np.stack([model.grad(x[r]) for r in range(R)])
            HU = np.stack([model.hess(x[r]) for r in range(R)])
            TU = np.stack([model.third(x[r]) for r in range(R)])
        v = v - scale * gU
        kick_P = np.einsum("rij,rjm->rim", HU, Q, optimize=True)
        kick_P2 = (_batched_tensor_quad(TU, Q)
                   + np.einsum("rki,rimn->rkmn", HU, Q2, optimize=True))
        P -= scale * kick_P
        P2 -= scale * kick_P2
        # trailing half-flow
        xi = noise_stream.standard_normal((R, 2 * d))
        x = x + a * v + l11 * xi[:, :d]
        v = e * v + l21 * xi[:, :d] + l22 * xi[:, d:]
        Q += a * P
        P *= e
        Q2 += a * P2
        P2 *= e
        if not np.all(np.isfinite(x)):
            raise TrajectoryDiverged(k)

    Hhat = h * acc
    if noise_model.kind == "gaussian":
        return noise_model.sigma ** 2 * np.trace(Hhat, axis1=1, axis2=2)
    return np.einsum("rij,rji->r", E, Hhat, optimize=True)


def leading_coefficient(model: PotentialModel, f: TestFunction,
                        noise_model: NoiseModel, h: float, K: Optional[int],
                        replicas: int, burnin: int,
                        seed: int, experiment_id: str,
                        chunk: int = 4096) -> Tuple[float, float]:
    """Leading-order bias coefficient C0 = E_pi[Tr(E(x0) hess_vv phi0)].

    Draws x0 approximately from the target by an FG-UBU burn-in at the same
    step size, v0 ~ N(0, M2^{-1} I), then averages the per-replica trace.
    Returns (mean, standard error).  K=None applies the adaptive truncation
    rule (increment below 1e-3 of the accumulated sum for 50 consecutive
    steps, capped at the contraction-rate bound).

    The predicted small-h bias of an additive-noise run is
    C0 * h / (2 * M2**2); mini-batching with batch size p divides it by p.
    """
    if f.out_dim != 1:
        raise ValueError("leading coefficient requires a scalar observable")
    if replicas < 2:
        raise ValueError("need at least two replicas for a standard error")
    if not model.convex:
        import warnings
        warnings.warn(f"coefficient pipeline on non-convex model {model.name}; "
                      "variation propagation may be unstable", RuntimeWarning)
    from .batch import run_batch

    M2 = model.constants["M2"]
    traces = np.empty(replicas)
    done = 0
    while done < replicas:
        n = min(chunk, replicas - done)
        warm = run_batch(model, f, "full", h, M2, n_steps=max(burnin, 1),
                         replicas=n, seed=seed, experiment_id=experiment_id,
                         replica_offset=done, burnin_steps=max(burnin - 1, 0))
        x0 = warm.x
        from .rngstream import make_stream
        v_stream = make_stream(seed, experiment_id, done, "coeff-init")
        n_stream = make_stream(seed, experiment_id, done, "coeff-noise")
        v0 = v_stream.standard_normal((n, model.dim)) / math.sqrt(M2)
        traces[done:done + n] = _coefficient_traces(
            model, f, noise_model, h, K, x0, v0, n_stream)
        done += n
    mean = float(np.mean(traces))
    stderr = float(np.std(traces, ddof=1) / math.sqrt(replicas))
    return mean, stderr


# ---------------------------------------------------------------------------
# Contractivity diagnostics
# ---------------------------------------------------------------------------


@dataclass
class ContractivityReport:
    """Twisted-norm decay check W_t^T S W_t <= 2 e^{-m t / M2} I."""

    steps: int
    violations: int
    max_margin: float          # max over steps of lambda_max(W^T S W) - bound
    max_q_norm_margin: float   # max of ||Q_k|| - sqrt(2) e^{-m k h/(2 M2)}


def contractivity_diagnostic(model: PotentialModel,
                             records: Sequence[Tuple[float, VariationState]],
                             tol: float = 1e-9) -> ContractivityReport:
    """Evaluate the decay certificate on recorded (time, variation) pairs."""
    m = model.constants["m"]
    M2 = model.constants["M2"]
    form = TwistedForm(model.dim)
    S = form.S
    violations = 0
    max_margin = -math.inf
    max_qn = -math.inf
    for t, var in records:
        W = np.vstack([var.Q, var.P])
        lam = float(np.linalg.eigvalsh(W.T @ S @ W).max())
        margin = lam - 2.0 * math.exp(-m * t / M2)
        qn = float(np.linalg.norm(var.Q, 2)) - math.sqrt(2.0) * math.exp(-m * t / (2.0 * M2))
        violations += margin > tol
        max_margin = max(max_margin, margin)
        max_qn = max(max_qn, qn)
    return ContractivityReport(steps=len(records), violations=violations,
                               max_margin=max_margin, max_q_norm_margin=max_qn)


def run_contractivity(model: PotentialModel, h: float, n_steps: int,
                      x0: np.ndarray, v0: np.ndarray,
                      noise_stream: np.random.Generator,
                      init: str = "0I") -> ContractivityReport:
    """Propagate variations along an FG-UBU trajectory and check decay.

    init selects the Lemma initial condition: "0I" -> (Q,P)=(0,I),
    "I0" -> (Q,P)=(I,0).
    """
    d = model.dim
    if init == "0I":
        Q0, P0 = np.zeros((d, d)), np.eye(d)
    elif init == "I0":
        Q0, P0 = np.eye(d), np.zeros((d, d))
    else:
        raise ValueError("init must be '0I' or 'I0'")
    records: List[Tuple[float, VariationState]] = []

    def observe(k, x, var):
        records.append((k * h, var.copy()))

    simulate_with_variation(model, h, model.constants["M2"], n_steps,
                            x0, v0, noise_stream, observe=observe,
                            Q0=Q0, P0=P0)
    return contractivity_diagnostic(model, records)
