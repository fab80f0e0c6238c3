"""Benchmark target potentials with analytic derivatives up to third order.

Three families are provided, addressable by string id + seed:

    bench1d          1D trigonometric perturbation of x^2/2
    bench1d-fs:N     bench1d plus N mean-zero trigonometric components
    bench2d          2D anisotropic quadratic with a trigonometric cross term
    bench2d-fs:N     bench2d plus N mean-zero components
    bench10d-fs:N    10D finite sum with a non-convex ridge term per component

Models are immutable after construction and safe to share across workers.
Random coefficients are drawn from a Philox stream keyed by the model id and
seed (row-major by component index, then mean-shifted), so a seed fully
determines the model.
"""

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Optional

import numpy as np
from numba import njit

from .rngstream import stream_key

__all__ = [
    "PotentialModel",
    "TestFunction",
    "make_1d_benchmark",
    "make_1d_finite_sum",
    "make_2d_benchmark",
    "make_2d_finite_sum",
    "make_10d_finite_sum",
    "model_from_id",
]


@dataclass(frozen=True)
class PotentialModel:
    """Target potential U with derivative evaluators and problem constants.

    For finite-sum targets U(x) = (1/N) sum_i U_i(x); ``grad_i`` evaluates a
    single component gradient (0-based index).  ``constants`` holds
    {m, M1, M2, M3, sigma}: lower/upper Hessian bounds, gradient growth,
    third-derivative bound and the additive-noise scale.  The bounds are
    estimated numerically over a documented box and feed diagnostics only;
    integrators read M2 from their own step configuration.
    """

    name: str
    dim: int
    n_components: int
    constants: dict
    u: Callable[[np.ndarray], float]
    grad: Callable[[np.ndarray], np.ndarray]
    hess: Callable[[np.ndarray], np.ndarray]
    third: Callable[[np.ndarray], np.ndarray]
    grad_i: Callable[[np.ndarray, int], np.ndarray]
    convex: bool = True
    # numba scalar kernels for the batched trajectory driver:
    # nb_grad(x_row, out), nb_grad_i(x_row, i, out)
    nb_grad: Optional[Callable] = field(default=None, repr=False)
    nb_grad_i: Optional[Callable] = field(default=None, repr=False)
    # vectorized evaluators over (R, d) point batches (optional fast paths)
    grad_batch: Optional[Callable] = field(default=None, repr=False)
    hess_batch: Optional[Callable] = field(default=None, repr=False)
    third_batch: Optional[Callable] = field(default=None, repr=False)

    @property
    def is_finite_sum(self) -> bool:
        return self.n_components > 1

    def hess_mul(self, x: np.ndarray, q: np.ndarray) -> np.ndarray:
        """Hessian action: (d,d) @ (d,k)."""
        return self.hess(x) @ q

    def third_quad(self, x: np.ndarray, q: np.ndarray) -> np.ndarray:
        """Tensor quadratic form (T<Q,Q>)_{kmn} = sum_{ij} T_{ijk} Q_{im} Q_{jn}."""
        return np.einsum("ijk,im,jn->kmn", self.third(x), q, q)


@dataclass(frozen=True)
class TestFunction:
    """Observable f with gradient and Hessian.

    Scalar observables (out_dim == 1) return plain floats from ``f``; vector
    observables return arrays of shape (out_dim,), with grad (out_dim, d)
    and hess (out_dim, d, d).
    """

    dim: int
    out_dim: int
    f: Callable[[np.ndarray], np.ndarray]
    grad: Callable[[np.ndarray], np.ndarray]
    hess: Callable[[np.ndarray], np.ndarray]
    nb_f: Optional[Callable] = field(default=None, repr=False)
    # vectorized over (R, d) batches: grad_batch -> (R, out_dim, d),
    # hess_batch -> (R, out_dim, d, d)
    grad_batch: Optional[Callable] = field(default=None, repr=False)
    hess_batch: Optional[Callable] = field(default=None, repr=False)


def _as_vec(x):
    return np.atleast_1d(np.asarray(x, dtype=float))


# ---------------------------------------------------------------------------
# 1D benchmark: U(x) = x^2/2 + 0.15 sin(1.6x - 0.5) + 0.1 sin(2.4x + 0.4)
# ---------------------------------------------------------------------------


def _u1(x):
    return 0.5 * x * x + 0.15 * np.sin(1.6 * x - 0.5) + 0.1 * np.sin(2.4 * x + 0.4)


def _du1(x):
    return x + 0.24 * np.cos(1.6 * x - 0.5) + 0.24 * np.cos(2.4 * x + 0.4)


def _ddu1(x):
    return 1.0 - 0.384 * np.sin(1.6 * x - 0.5) - 0.576 * np.sin(2.4 * x + 0.4)


def _dddu1(x):
    return -0.6144 * np.cos(1.6 * x - 0.5) - 1.3824 * np.cos(2.4 * x + 0.4)


def _f1(x):
    return np.cos(x) + 0.5 * np.sin(2.5 * x) + 0.2 * np.sin(0.5 * x + 0.4)


def _df1(x):
    return -np.sin(x) + 1.25 * np.cos(2.5 * x) + 0.1 * np.cos(0.5 * x + 0.4)


def _ddf1(x):
    return -np.cos(x) - 3.125 * np.sin(2.5 * x) - 0.05 * np.sin(0.5 * x + 0.4)


@lru_cache(maxsize=None)
def _constants_1d():
    # dense grid over [-10, 10]; the analytic lower bound for U'' is 0.04
    g = np.linspace(-10.0, 10.0, 200001)
    dd = _ddu1(g)
    return {
        "m": float(dd.min()),
        "M1": float(np.max(np.abs(_du1(g)) / np.sqrt(g * g + 1.0))),
        "M2": float(dd.max()),
        "M3": float(np.max(np.abs(_dddu1(g)))),
        "sigma": 0.0,
    }


def _nb_grad_1d():
    @njit(cache=False)
    def g(x, out):
        out[0] = x[0] + 0.24 * np.cos(1.6 * x[0] - 0.5) + 0.24 * np.cos(2.4 * x[0] + 0.4)

    return g


def make_1d_benchmark():
    """Paper-style 1D benchmark potential and scalar test function."""
    nb_g = _nb_grad_1d()

    @njit(cache=False)
    def nb_gi(x, i, out):
        out[0] = x[0] + 0.24 * np.cos(1.6 * x[0] - 0.5) + 0.24 * np.cos(2.4 * x[0] + 0.4)

    model = PotentialModel(
        name="bench1d",
        dim=1,
        n_components=1,
        constants=_constants_1d(),
        u=lambda x: float(_u1(_as_vec(x)[0])),
        grad=lambda x: np.array([_du1(_as_vec(x)[0])]),
        hess=lambda x: np.array([[_ddu1(_as_vec(x)[0])]]),
        third=lambda x: np.array([[[_dddu1(_as_vec(x)[0])]]]),
        grad_i=lambda x, i: np.array([_du1(_as_vec(x)[0])]),
        convex=True,
        nb_grad=nb_g,
        nb_grad_i=nb_gi,
        grad_batch=lambda X: _du1(X),
        hess_batch=lambda X: _ddu1(X)[:, :, None],
        third_batch=lambda X: _dddu1(X)[:, :, None, None],
    )

    @njit(cache=False)
    def nb_f(x, out):
        out[0] = np.cos(x[0]) + 0.5 * np.sin(2.5 * x[0]) + 0.2 * np.sin(0.5 * x[0] + 0.4)

    fn = TestFunction(
        dim=1,
        out_dim=1,
        f=lambda x: float(_f1(_as_vec(x)[0])),
        grad=lambda x: np.array([_df1(_as_vec(x)[0])]),
        hess=lambda x: np.array([[_ddf1(_as_vec(x)[0])]]),
        nb_f=nb_f,
        grad_batch=lambda X: _df1(X)[:, None, :],
        hess_batch=lambda X: _ddf1(X)[:, None, :, None],
    )
    return model, fn


def _sample_coeffs(model_id: str, seed: int, n: int, lo: float, hi: float) -> np.ndarray:
    """(n, 4) coefficients, uniform on [lo, hi], mean-shifted per column."""
    rng = np.random.Generator(np.random.Philox(key=stream_key(seed, "model:" + model_id, 0, "coeffs")))
    coef = rng.uniform(lo, hi, size=(n, 4))
    coef -= coef.mean(axis=0)
    return coef


def make_1d_finite_sum(n: int, seed: int):
    """1D benchmark with N mean-zero components V_i added per component gradient.

    V_i(x) = a_i sin x + b_i cos 1.2x + c_i sin 2x + d_i cos 2.5x with
    (a,b,c,d) ~ U[-6,6] then column mean-shifted, so (1/N) sum_i grad V_i = 0
    and the mini-batch estimator is exactly unbiased.
    """
    if n < 1:
        raise ValueError("finite-sum model needs at least one component")
    base, _fn = make_1d_benchmark()
    coef = _sample_coeffs(f"bench1d-fs:{n}", seed, n, -6.0, 6.0)
    a, b, c, d = (coef[:, j].copy() for j in range(4))

    def dv(x, i):
        return (a[i] * np.cos(x) - 1.2 * b[i] * np.sin(1.2 * x)
                + 2.0 * c[i] * np.cos(2.0 * x) - 2.5 * d[i] * np.sin(2.5 * x))

    def grad_i(x, i):
        x0 = _as_vec(x)[0]
        return np.array([_du1(x0) + dv(x0, i)])

    # per-point deviation second moment feeds the sigma diagnostic
    g = np.linspace(-8.0, 8.0, 2001)
    dev = (a[:, None] * np.cos(g) - 1.2 * b[:, None] * np.sin(1.2 * g)
           + 2.0 * c[:, None] * np.cos(2.0 * g) - 2.5 * d[:, None] * np.sin(2.5 * g))
    consts = dict(base.constants)
    consts["sigma"] = float(np.sqrt(np.max(np.mean(dev ** 2, axis=0))))

    @njit(cache=False)
    def nb_gi(x, i, out):
        out[0] = (x[0] + 0.24 * np.cos(1.6 * x[0] - 0.5) + 0.24 * np.cos(2.4 * x[0] + 0.4)
                  + a[i] * np.cos(x[0]) - 1.2 * b[i] * np.sin(1.2 * x[0])
                  + 2.0 * c[i] * np.cos(2.0 * x[0]) - 2.5 * d[i] * np.sin(2.5 * x[0]))

    return PotentialModel(
        name=f"bench1d-fs:{n}",
        dim=1,
        n_components=n,
        constants=consts,
        u=base.u,
        grad=base.grad,
        hess=base.hess,
        third=base.third,
        grad_i=grad_i,
        convex=True,
        nb_grad=base.nb_grad,
        nb_grad_i=nb_gi,
        grad_batch=base.grad_batch,
        hess_batch=base.hess_batch,
        third_batch=base.third_batch,
    )


# ---------------------------------------------------------------------------
# 2D benchmark.  With C = 1.1 x1 - 0.4 x2 and D = 0.3 x1 - 1.6 x2,
#   sin(0.7 x1 - x2) cos(0.4 x1 + 0.6 x2) = (sin C + sin D) / 2,
# so U = 0.7 x1^2 + 0.4 x2^2 + (sin C + sin D) / 4 and all derivatives are
# elementary.
# ---------------------------------------------------------------------------

_C2 = np.array([1.1, -0.4])
_D2 = np.array([0.3, -1.6])


def _u2(x):
    return 0.7 * x[0] ** 2 + 0.4 * x[1] ** 2 + 0.25 * (np.sin(_C2 @ x) + np.sin(_D2 @ x))


def _du2(x):
    return (np.array([1.4 * x[0], 0.8 * x[1]])
            + 0.25 * (np.cos(_C2 @ x) * _C2 + np.cos(_D2 @ x) * _D2))


def _ddu2(x):
    return (np.diag([1.4, 0.8])
            - 0.25 * (np.sin(_C2 @ x) * np.outer(_C2, _C2) + np.sin(_D2 @ x) * np.outer(_D2, _D2)))


def _dddu2(x):
    tc = np.einsum("i,j,k->ijk", _C2, _C2, _C2)
    td = np.einsum("i,j,k->ijk", _D2, _D2, _D2)
    return -0.25 * (np.cos(_C2 @ x) * tc + np.cos(_D2 @ x) * td)


def _f2(x):
    return np.cos(1.4 * x[0] - 1.1 * np.sin(1.2 * x[1]))


def _df2(x):
    phi = 1.4 * x[0] - 1.1 * np.sin(1.2 * x[1])
    dphi = np.array([1.4, -1.32 * np.cos(1.2 * x[1])])
    return -np.sin(phi) * dphi


def _ddf2(x):
    phi = 1.4 * x[0] - 1.1 * np.sin(1.2 * x[1])
    dphi = np.array([1.4, -1.32 * np.cos(1.2 * x[1])])
    h = -np.cos(phi) * np.outer(dphi, dphi)
    h[1, 1] += -np.sin(phi) * 1.584 * np.sin(1.2 * x[1])
    return h


def _du2_batch(X):
    cc = np.cos(X @ _C2)[:, None]
    cd = np.cos(X @ _D2)[:, None]
    lin = np.stack([1.4 * X[:, 0], 0.8 * X[:, 1]], axis=1)
    return lin + 0.25 * (cc * _C2 + cd * _D2)


def _ddu2_batch(X):
    sc = np.sin(X @ _C2)[:, None, None]
    sd = np.sin(X @ _D2)[:, None, None]
    return (np.diag([1.4, 0.8])[None]
            - 0.25 * (sc * np.outer(_C2, _C2) + sd * np.outer(_D2, _D2)))


def _dddu2_batch(X):
    tc = np.einsum("i,j,k->ijk", _C2, _C2, _C2)
    td = np.einsum("i,j,k->ijk", _D2, _D2, _D2)
    cc = np.cos(X @ _C2)[:, None, None, None]
    cd = np.cos(X @ _D2)[:, None, None, None]
    return -0.25 * (cc * tc + cd * td)


def _df2_batch(X):
    phi = 1.4 * X[:, 0] - 1.1 * np.sin(1.2 * X[:, 1])
    dphi = np.stack([np.full(len(X), 1.4), -1.32 * np.cos(1.2 * X[:, 1])], axis=1)
    return -np.sin(phi)[:, None] * dphi


def _ddf2_batch(X):
    phi = 1.4 * X[:, 0] - 1.1 * np.sin(1.2 * X[:, 1])
    dphi = np.stack([np.full(len(X), 1.4), -1.32 * np.cos(1.2 * X[:, 1])], axis=1)
    h = -np.cos(phi)[:, None, None] * np.einsum("ri,rj->rij", dphi, dphi)
    h[:, 1, 1] += -np.sin(phi) * 1.584 * np.sin(1.2 * X[:, 1])
    return h


@lru_cache(maxsize=None)
def _constants_2d():
    # 2x2 eigenvalue extremes on a grid over [-8, 8]^2
    g = np.linspace(-8.0, 8.0, 601)
    xx, yy = np.meshgrid(g, g, indexing="ij")
    sc = np.sin(1.1 * xx - 0.4 * yy)
    sd = np.sin(0.3 * xx - 1.6 * yy)
    h11 = 1.4 - 0.25 * (sc * 1.21 + sd * 0.09)
    h22 = 0.8 - 0.25 * (sc * 0.16 + sd * 2.56)
    h12 = -0.25 * (sc * -0.44 + sd * -0.48)
    tr, det = h11 + h22, h11 * h22 - h12 ** 2
    disc = np.sqrt(np.maximum(tr ** 2 / 4 - det, 0.0))
    lo, hi = tr / 2 - disc, tr / 2 + disc
    pts = np.stack([xx.ravel(), yy.ravel()], axis=1)
    gn = np.array([np.linalg.norm(_du2(p)) / np.sqrt(p @ p + 2.0) for p in pts[:: 37]])
    m3 = 0.25 * (np.linalg.norm(np.einsum("i,j,k->ijk", _C2, _C2, _C2))
                 + np.linalg.norm(np.einsum("i,j,k->ijk", _D2, _D2, _D2)))
    return {
        "m": float(lo.min()),
        "M1": float(gn.max()),
        "M2": float(hi.max()),
        "M3": float(m3),
        "sigma": 0.0,
    }


def make_2d_benchmark():
    @njit(cache=False)
    def nb_g(x, out):
        cc = np.cos(1.1 * x[0] - 0.4 * x[1])
        cd = np.cos(0.3 * x[0] - 1.6 * x[1])
        out[0] = 1.4 * x[0] + 0.25 * (1.1 * cc + 0.3 * cd)
        out[1] = 0.8 * x[1] + 0.25 * (-0.4 * cc - 1.6 * cd)

    @njit(cache=False)
    def nb_gi(x, i, out):
        cc = np.cos(1.1 * x[0] - 0.4 * x[1])
        cd = np.cos(0.3 * x[0] - 1.6 * x[1])
        out[0] = 1.4 * x[0] + 0.25 * (1.1 * cc + 0.3 * cd)
        out[1] = 0.8 * x[1] + 0.25 * (-0.4 * cc - 1.6 * cd)

    consts = _constants_2d()
    model = PotentialModel(
        name="bench2d",
        dim=2,
        n_components=1,
        constants=consts,
        u=lambda x: float(_u2(_as_vec(x))),
        grad=lambda x: _du2(_as_vec(x)),
        hess=lambda x: _ddu2(_as_vec(x)),
        third=lambda x: _dddu2(_as_vec(x)),
        grad_i=lambda x, i: _du2(_as_vec(x)),
        convex=consts["m"] > 0,
        nb_grad=nb_g,
        nb_grad_i=nb_gi,
        grad_batch=_du2_batch,
        hess_batch=_ddu2_batch,
        third_batch=_dddu2_batch,
    )

    @njit(cache=False)
    def nb_f(x, out):
        out[0] = np.cos(1.4 * x[0] - 1.1 * np.sin(1.2 * x[1]))

    fn = TestFunction(
        dim=2,
        out_dim=1,
        f=lambda x: float(_f2(_as_vec(x))),
        grad=lambda x: _df2(_as_vec(x)),
        hess=lambda x: _ddf2(_as_vec(x)),
        nb_f=nb_f,
        grad_batch=lambda X: _df2_batch(X)[:, None, :],
        hess_batch=lambda X: _ddf2_batch(X)[:, None, :, :],
    )
    return model, fn


def make_2d_finite_sum(n: int, seed: int):
    """2D benchmark with N mean-zero components, coefficients U[-8,8]."""
    if n < 1:
        raise ValueError("finite-sum model needs at least one component")
    base, _fn = make_2d_benchmark()
    coef = _sample_coeffs(f"bench2d-fs:{n}", seed, n, -8.0, 8.0)
    a, b, c, d = (coef[:, j].copy() for j in range(4))

    def dv(x, i):
        # V_i = a sin(x1+2x2) + b cos(1.2x1-0.7x2) + c exp(-x1^2/2) + d exp(-x2^2/3)
        s = np.cos(x[0] + 2.0 * x[1])
        t = np.sin(1.2 * x[0] - 0.7 * x[1])
        return np.array([
            a[i] * s - 1.2 * b[i] * t - c[i] * x[0] * np.exp(-0.5 * x[0] ** 2),
            2.0 * a[i] * s + 0.7 * b[i] * t - (2.0 / 3.0) * d[i] * x[1] * np.exp(-x[1] ** 2 / 3.0),
        ])

    def grad_i(x, i):
        xv = _as_vec(x)
        return _du2(xv) + dv(xv, i)

    g = np.linspace(-6.0, 6.0, 101)
    pts = np.stack(np.meshgrid(g, g, indexing="ij"), axis=-1).reshape(-1, 2)[::13]
    second = max(float(np.mean([dv(p, i) @ dv(p, i) for i in range(n)])) for p in pts)
    consts = dict(base.constants)
    consts["sigma"] = float(np.sqrt(second))

    @njit(cache=False)
    def nb_gi(x, i, out):
        cc = np.cos(1.1 * x[0] - 0.4 * x[1])
        cd = np.cos(0.3 * x[0] - 1.6 * x[1])
        s = np.cos(x[0] + 2.0 * x[1])
        t = np.sin(1.2 * x[0] - 0.7 * x[1])
        out[0] = (1.4 * x[0] + 0.25 * (1.1 * cc + 0.3 * cd)
                  + a[i] * s - 1.2 * b[i] * t - c[i] * x[0] * np.exp(-0.5 * x[0] ** 2))
        out[1] = (0.8 * x[1] + 0.25 * (-0.4 * cc - 1.6 * cd)
                  + 2.0 * a[i] * s + 0.7 * b[i] * t - (2.0 / 3.0) * d[i] * x[1] * np.exp(-x[1] ** 2 / 3.0))

    return PotentialModel(
        name=f"bench2d-fs:{n}",
        dim=2,
        n_components=n,
        constants=consts,
        u=base.u,
        grad=base.grad,
        hess=base.hess,
        third=base.third,
        grad_i=grad_i,
        convex=base.convex,
        nb_grad=base.nb_grad,
        nb_grad_i=nb_gi,
        grad_batch=base.grad_batch,
        hess_batch=base.hess_batch,
        third_batch=base.third_batch,
    )


# ---------------------------------------------------------------------------
# 10D finite-sum benchmark with ridge nonlinearity
#   U_i(x) = |x|^2/6 + D0(w_i.x + b_i),  D0(y) = 16 e^{-y^2/2} - 8 cos y - 4 sin 2y
# ---------------------------------------------------------------------------


def _d0p(y):
    return -16.0 * y * np.exp(-0.5 * y * y) + 8.0 * np.sin(y) - 8.0 * np.cos(2.0 * y)


def _d0pp(y):
    return 16.0 * (y * y - 1.0) * np.exp(-0.5 * y * y) + 8.0 * np.cos(y) + 16.0 * np.sin(2.0 * y)


def _d0ppp(y):
    return 16.0 * y * (3.0 - y * y) * np.exp(-0.5 * y * y) - 8.0 * np.sin(y) + 32.0 * np.cos(2.0 * y)


def make_10d_finite_sum(n: int, seed: int):
    """Paper-style 10D finite-sum target with its 30-component observable.

    Ridge directions w_i are generated from a seeded standard-normal stream
    (xi drawn as an (N,10) block, then eta as an (N,) block) and normalised so
    |w_i| = 1 exactly.  The ridge term makes the target non-convex; the
    integrator convention M2 = 1 is stored with the model.
    """
    if n < 1:
        raise ValueError("finite-sum model needs at least one component")
    d = 10
    rng = np.random.Generator(np.random.Philox(key=stream_key(seed, f"model:bench10d-fs:{n}", 0, "coeffs")))
    xi = rng.standard_normal((n, d))
    eta = rng.standard_normal(n)
    j = np.arange(1, d + 1, dtype=float)
    w = (j ** 0.25) * xi / np.sqrt(np.sum(np.sqrt(j) * xi ** 2, axis=1))[:, None]
    b = (np.cos(np.arange(1, n + 1, dtype=float)) + eta) / 10.0

    def u(x):
        y = w @ _as_vec(x) + b
        return float(np.dot(x, x) / 6.0
                     + np.mean(16.0 * np.exp(-0.5 * y * y) - 8.0 * np.cos(y) - 4.0 * np.sin(2.0 * y)))

    def grad(x):
        xv = _as_vec(x)
        y = w @ xv + b
        return xv / 3.0 + (_d0p(y) @ w) / n

    def hess(x):
        y = w @ _as_vec(x) + b
        return np.eye(d) / 3.0 + (w.T * _d0pp(y)) @ w / n

    def third(x):
        y = w @ _as_vec(x) + b
        return np.einsum("i,ij,ik,il->jkl", _d0ppp(y) / n, w, w, w)

    def grad_i(x, i):
        xv = _as_vec(x)
        return xv / 3.0 + _d0p(float(w[i] @ xv + b[i])) * w[i]

    # Hessian-norm extremes via the rank-one structure: eigenvalues of
    # I/3 + mean(D0'' w w^T) sampled at random points
    probe = np.random.Generator(np.random.Philox(key=stream_key(seed, f"model:bench10d-fs:{n}", 0, "probe")))
    pts = probe.standard_normal((64, d)) * 2.0
    eig_lo, eig_hi = np.inf, -np.inf
    sig2 = 0.0
    for p in pts:
        ev = np.linalg.eigvalsh(hess(p))
        eig_lo, eig_hi = min(eig_lo, ev[0]), max(eig_hi, ev[-1])
        gm = grad(p)
        sig2 = max(sig2, np.mean([np.dot(grad_i(p, i) - gm, grad_i(p, i) - gm) for i in range(n)]))
    consts = {
        "m": float(eig_lo),
        "M1": float(np.max([np.linalg.norm(grad(p)) / np.sqrt(p @ p + d) for p in pts])),
        "M2": 1.0,
        "M3": float(np.max(np.abs(_d0ppp(np.linspace(-6, 6, 4001))))),
        "sigma": float(np.sqrt(sig2)),
    }

    @njit(cache=False)
    def nb_grad(x, out):
        for k in range(10):
            out[k] = x[k] / 3.0
        for i in range(n):
            y = b[i]
            for k in range(10):
                y += w[i, k] * x[k]
            dp = -16.0 * y * np.exp(-0.5 * y * y) + 8.0 * np.sin(y) - 8.0 * np.cos(2.0 * y)
            for k in range(10):
                out[k] += dp * w[i, k] / n

    @njit(cache=False)
    def nb_grad_i(x, i, out):
        y = b[i]
        for k in range(10):
            y += w[i, k] * x[k]
        dp = -16.0 * y * np.exp(-0.5 * y * y) + 8.0 * np.sin(y) - 8.0 * np.cos(2.0 * y)
        for k in range(10):
            out[k] = x[k] / 3.0 + dp * w[i, k]

    model = PotentialModel(
        name=f"bench10d-fs:{n}",
        dim=d,
        n_components=n,
        constants=consts,
        u=u,
        grad=grad,
        hess=hess,
        third=third,
        grad_i=grad_i,
        convex=False,
        nb_grad=nb_grad,
        nb_grad_i=nb_grad_i,
    )

    offsets = np.array([0.0, 2.0, 4.0])

    def f(x):
        xv = _as_vec(x)
        base = np.exp(-np.dot(xv, xv) / (8.0 * d))
        out = np.empty(3 * d)
        for jj in range(d):
            out[3 * jj: 3 * jj + 3] = base * np.exp(-0.25 * (xv[jj] + offsets) ** 2)
        return out

    def f_grad(x):
        xv = _as_vec(x)
        val = f(xv)
        g = np.empty((3 * d, d))
        for jj in range(d):
            for kk in range(3):
                row = 3 * jj + kk
                g[row] = val[row] * (-xv / (4.0 * d))
                g[row, jj] += val[row] * (-0.5 * (xv[jj] + offsets[kk]))
        return g

    def f_hess(x):
        xv = _as_vec(x)
        val = f(xv)
        h = np.empty((3 * d, d, d))
        for jj in range(d):
            for kk in range(3):
                row = 3 * jj + kk
                lin = -xv / (4.0 * d)
                lin = lin.copy()
                lin[jj] += -0.5 * (xv[jj] + offsets[kk])
                h[row] = val[row] * (np.outer(lin, lin) - np.eye(d) / (4.0 * d))
                h[row, jj, jj] += -0.5 * val[row]
        return h

    @njit(cache=False)
    def nb_f(x, out):
        q = 0.0
        for k in range(10):
            q += x[k] * x[k]
        base = np.exp(-q / 80.0)
        for jj in range(10):
            out[3 * jj] = base * np.exp(-0.25 * x[jj] * x[jj])
            out[3 * jj + 1] = base * np.exp(-0.25 * (x[jj] + 2.0) ** 2)
            out[3 * jj + 2] = base * np.exp(-0.25 * (x[jj] + 4.0) ** 2)

    fn = TestFunction(dim=d, out_dim=3 * d, f=f, grad=f_grad, hess=f_hess, nb_f=nb_f)
    return model, fn


def model_from_id(model_id: str, seed: int = 0):
    """Resolve a CLI model id like ``bench2d-fs:50`` to (model, test function).

    Finite-sum 1D/2D ids return the same test function as their base
    benchmark.
    """
    if model_id == "bench1d":
        return make_1d_benchmark()
    if model_id == "bench2d":
        return make_2d_benchmark()
    for prefix, maker, base in (
        ("bench1d-fs:", make_1d_finite_sum, make_1d_benchmark),
        ("bench2d-fs:", make_2d_finite_sum, make_2d_benchmark),
    ):
        if model_id.startswith(prefix):
            n = int(model_id[len(prefix):])
            return maker(n, seed), base()[1]
    if model_id.startswith("bench10d-fs:"):
        return make_10d_finite_sum(int(model_id.split(":")[1]), seed)
    raise ValueError(f"unknown model id: {model_id!r}")
