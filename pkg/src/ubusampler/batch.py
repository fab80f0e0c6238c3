"""Batched trajectory driver (numba) for long experiment runs.

Replicas advance in lock-step through a compiled kernel; the math per
replica is identical, op for op, to the single-trajectory path in
:mod:`ubusampler.integrators`, and each replica draws from its own streams
keyed per :mod:`ubusampler.rngstream`, so results do not depend on worker
count or chunk size.  Noise is pre-drawn in chunks:

    "noise" stream: (chunk, 4d) normals per replica, row-major; columns
        0..2d-1 feed the leading OU half-flow, 2d..4d-1 the trailing one.
    "est" stream: (chunk, d) normals (additive-noise gradient) or
        (chunk, p) uniforms (subset sampling).  Subset-based estimators
        consume p uniforms on every step, including SVRG refresh and SAGA
        init steps where the draw is discarded, so stream positions are
        step-indexed.

Divergent replicas (non-finite state or norm above the cap) freeze at the
failing step and are reported, not silently dropped.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np
from numba import njit

from .integrators import STATE_NORM_CAP, ou_cholesky
from .potentials import PotentialModel, TestFunction
from .rngstream import make_stream

__all__ = ["BatchResult", "run_batch", "algorithm_work"]

ALGO_CODES = {"full": 0, "sg": 1, "minibatch": 2, "svrg": 3, "saga": 4}

_KERNEL_CACHE: dict = {}


def _make_kernel(nb_grad, nb_grad_i, nb_f):
    @njit(cache=False, nogil=True)
    def kernel(x, v, fsum, fcomp, noise, est, k0, obs_start, algo,
               h, M2, sigma, p, q, n_comp,
               a, e, l11, l21, l22,
               anchor, anchor_g, table, runsum,
               perm, idxbuf, diverged):
        n_rep, chunk, _ = noise.shape
        d = x.shape[1]
        odim = fsum.shape[1]
        g = np.empty(d)
        gtmp = np.empty(d)
        ftmp = np.empty(odim)
        fresh = np.empty((p, d))
        hm = h / M2
        for c in range(chunk):
            k = k0 + c
            for r in range(n_rep):
                if diverged[r] >= 0:
                    continue
                if k >= obs_start:
                    nb_f(x[r], ftmp)
                    for o in range(odim):
                        yk = ftmp[o] - fcomp[r, o]
                        t = fsum[r, o] + yk
                        fcomp[r, o] = (t - fsum[r, o]) - yk
                        fsum[r, o] = t
                # leading OU half-flow
                for j in range(d):
                    na = noise[r, c, j]
                    nb2 = noise[r, c, d + j]
                    dx = l11 * na
                    dv = l21 * na + l22 * nb2
                    xn = x[r, j] + a * v[r, j] + dx
                    vn = e * v[r, j] + dv
                    x[r, j] = xn
                    v[r, j] = vn
                # gradient at the intermediate position
                if algo == 0:
                    nb_grad(x[r], g)
                elif algo == 1:
                    nb_grad(x[r], g)
                    for j in range(d):
                        g[j] = g[j] + sigma * est[r, c, j]
                elif algo == 2:
                    for j in range(p):
                        m = n_comp - j
                        pick = j + int(est[r, c, j] * m)
                        tmp = perm[r, j]
                        perm[r, j] = perm[r, pick]
                        perm[r, pick] = tmp
                        idxbuf[r, j] = pick
                    for j in range(d):
                        g[j] = 0.0
                    for j in range(p):
                        nb_grad_i(x[r], perm[r, j], gtmp)
                        for jj in range(d):
                            g[jj] += gtmp[jj]
                    for j in range(d):
                        g[j] /= p
                    for j in range(p - 1, -1, -1):
                        pick = idxbuf[r, j]
                        tmp = perm[r, j]
                        perm[r, j] = perm[r, pick]
                        perm[r, pick] = tmp
                elif algo == 3:
                    if k % q == 0:
                        for j in range(d):
                            anchor[r, j] = x[r, j]
                        nb_grad(x[r], g)
                        for j in range(d):
                            anchor_g[r, j] = g[j]
                    else:
                        for j in range(p):
                            m = n_comp - j
                            pick = j + int(est[r, c, j] * m)
                            tmp = perm[r, j]
                            perm[r, j] = perm[r, pick]
                            perm[r, pick] = tmp
                            idxbuf[r, j] = pick
                        for j in range(d):
                            g[j] = 0.0
                        for j in range(p):
                            i = perm[r, j]
                            nb_grad_i(x[r], i, gtmp)
                            for jj in range(d):
                                g[jj] += gtmp[jj]
                            nb_grad_i(anchor[r], i, gtmp)
                            for jj in range(d):
                                g[jj] -= gtmp[jj]
                        for j in range(d):
                            g[j] = g[j] / p + anchor_g[r, j]
                        for j in range(p - 1, -1, -1):
                            pick = idxbuf[r, j]
                            tmp = perm[r, j]
                            perm[r, j] = perm[r, pick]
                            perm[r, pick] = tmp
                else:
                    if k == 0:
                        for i in range(n_comp):
                            nb_grad_i(x[r], i, gtmp)
                            for jj in range(d):
                                table[r, i, jj] = gtmp[jj]
                        for jj in range(d):
                            s = 0.0
                            for i in range(n_comp):
                                s += table[r, i, jj]
                            runsum[r, jj] = s
                            g[jj] = s / n_comp
                    else:
                        for j in range(p):
                            m = n_comp - j
                            pick = j + int(est[r, c, j] * m)
                            tmp = perm[r, j]
                            perm[r, j] = perm[r, pick]
                            perm[r, pick] = tmp
                            idxbuf[r, j] = pick
                        for jj in range(d):
                            g[jj] = 0.0
                        for j in range(p):
                            i = perm[r, j]
                            nb_grad_i(x[r], i, fresh[j])
                            for jj in range(d):
                                g[jj] += fresh[j, jj] - table[r, i, jj]
                        for jj in range(d):
                            g[jj] = g[jj] / p + runsum[r, jj] / n_comp
                        for j in range(p):
                            i = perm[r, j]
                            for jj in range(d):
                                runsum[r, jj] += fresh[j, jj] - table[r, i, jj]
                                table[r, i, jj] = fresh[j, jj]
                        for j in range(p - 1, -1, -1):
                            pick = idxbuf[r, j]
                            tmp = perm[r, j]
                            perm[r, j] = perm[r, pick]
                            perm[r, pick] = tmp
                # velocity kick
                for j in range(d):
                    v[r, j] = v[r, j] - hm * g[j]
                # trailing OU half-flow
                ok = True
                for j in range(d):
                    na = noise[r, c, 2 * d + j]
                    nb2 = noise[r, c, 3 * d + j]
                    dx = l11 * na
                    dv = l21 * na + l22 * nb2
                    xn = x[r, j] + a * v[r, j] + dx
                    vn = e * v[r, j] + dv
                    x[r, j] = xn
                    v[r, j] = vn
                    if not (np.isfinite(xn) and np.isfinite(vn)
                            and abs(xn) < 1e12 and abs(vn) < 1e12):
                        ok = False
                if not ok:
                    diverged[r] = k

    return kernel


def _kernel_for(model: PotentialModel, fn: TestFunction):
    key = (id(model.nb_grad), id(model.nb_grad_i), id(fn.nb_f))
    if key not in _KERNEL_CACHE:
        _KERNEL_CACHE[key] = _make_kernel(model.nb_grad, model.nb_grad_i, fn.nb_f)
    return _KERNEL_CACHE[key]


def algorithm_work(algorithm: str, n_comp: int, n_steps: int) -> int:
    """Analytic gradient-work accounting (component evaluations)."""
    if algorithm == "full":
        return n_steps * n_comp
    if algorithm == "sg" or algorithm.startswith("sg:"):
        return n_steps
    if algorithm.startswith("minibatch:"):
        return n_steps * int(algorithm.split(":")[1])
    if algorithm.startswith("svrg:"):
        p = int(algorithm.split(":")[1])
        q = max(n_comp // p, 1)
        n_refresh = -(-n_steps // q)
        return n_refresh * n_comp + (n_steps - n_refresh) * p
    if algorithm == "saga" or algorithm.startswith("saga:"):
        p = int(algorithm.split(":")[1]) if ":" in algorithm else 1
        return n_comp + (n_steps - 1) * p
    raise ValueError(f"unknown algorithm id: {algorithm!r}")


@dataclass
class BatchResult:
    means: np.ndarray          # (replicas, out_dim) time averages of f
    observed: int              # observations per replica
    diverged: np.ndarray       # (replicas,) failing step index or -1
    work_units: int            # per replica
    x: np.ndarray
    v: np.ndarray


def run_batch(model: PotentialModel, fn: TestFunction, algorithm: str,
              h: float, M2: float, n_steps: int, replicas: int,
              seed: int, experiment_id: str, sigma: float = 0.0,
              replica_offset: int = 0, burnin_steps: int = 0,
              chunk: int = 16384,
              initial: Optional[tuple] = None) -> BatchResult:
    """Run `replicas` independent UBU trajectories of `n_steps` steps.

    Time averages cover f(X_k) for burnin_steps <= k < n_steps (the default
    convention has no burn-in).  `initial` optionally supplies (x0, v0)
    arrays of shape (replicas, d); otherwise X_0 = 0 and
    V_0 ~ N(0, M2^{-1} I) from each replica's "init" stream.
    """
    if n_steps <= burnin_steps:
        raise ValueError("no observations: n_steps must exceed burnin_steps")
    d, odim = model.dim, fn.out_dim
    base = algorithm.split(":")[0]
    algo = ALGO_CODES[base]
    p = int(algorithm.split(":")[1]) if base in ("minibatch", "svrg") and ":" in algorithm else 1
    if base == "saga" and ":" in algorithm:
        p = int(algorithm.split(":")[1])
    if base == "sg" and ":" in algorithm:
        sigma = float(algorithm.split(":")[1])
    q = max(model.n_components // p, 1)
    n_comp = model.n_components

    noise_gens = [make_stream(seed, experiment_id, replica_offset + r, "noise") for r in range(replicas)]
    est_gens = [make_stream(seed, experiment_id, replica_offset + r, "est") for r in range(replicas)]

    if initial is None:
        x = np.zeros((replicas, d))
        v = np.empty((replicas, d))
        for r in range(replicas):
            init = make_stream(seed, experiment_id, replica_offset + r, "init")
            v[r] = init.standard_normal(d) / np.sqrt(M2)
    else:
        x = np.array(initial[0], dtype=float, copy=True).reshape(replicas, d)
        v = np.array(initial[1], dtype=float, copy=True).reshape(replicas, d)

    fsum = np.zeros((replicas, odim))
    fcomp = np.zeros((replicas, odim))
    anchor = np.zeros((replicas, d))
    anchor_g = np.zeros((replicas, d))
    if base == "saga":
        table = np.zeros((replicas, n_comp, d))
        runsum = np.zeros((replicas, d))
    else:
        table = np.zeros((1, 1, d))
        runsum = np.zeros((1, d))
    perm = np.tile(np.arange(n_comp, dtype=np.int64), (replicas, 1))
    idxbuf = np.zeros((replicas, max(p, 1)), dtype=np.int64)
    diverged = np.full(replicas, -1, dtype=np.int64)

    t_half = 0.5 * h
    a = 0.5 * -np.expm1(-2.0 * t_half)
    e = np.exp(-2.0 * t_half)
    l11, l21, l22 = ou_cholesky(t_half, M2)

    est_width = d if algo == 1 else max(p, 1)
    kernel = _kernel_for(model, fn)

    k0 = 0
    while k0 < n_steps:
        c = min(chunk, n_steps - k0)
        noise = np.empty((replicas, c, 4 * d))
        est = np.empty((replicas, c, est_width))
        for r in range(replicas):
            noise[r] = noise_gens[r].standard_normal((c, 4 * d))
            if algo == 1:
                est[r] = est_gens[r].standard_normal((c, est_width))
            elif algo >= 2:
                est[r] = est_gens[r].random((c, est_width))
        kernel(x, v, fsum, fcomp, noise, est, k0, burnin_steps, algo,
               h, M2, sigma, p, q, n_comp,
               a, e, l11, l21, l22,
               anchor, anchor_g, table, runsum, perm, idxbuf, diverged)
        k0 += c

    observed = n_steps - burnin_steps
    return BatchResult(
        means=fsum / observed,
        observed=observed,
        diverged=diverged,
        work_units=algorithm_work(algorithm, n_comp, n_steps),
        x=x,
        v=v,
    )
