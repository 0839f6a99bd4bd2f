"""Nelder-Mead simplex minimiser."""
from dataclasses import dataclass, field

import numpy as np


@dataclass
class NelderMeadOptions:
    reflection: float = 1.0
    expansion: float = 2.0
    contraction: float = 0.5
    shrink: float = 0.5
    xtol: float = 1e-8
    ftol: float = 1e-8
    max_iter: int = 5000
    initial_step: float = 0.05


@dataclass
class OptimumResult:
    x: np.ndarray
    fun: float
    iterations: int
    evaluations: int
    converged: bool
    best_history: list = field(default_factory=list)


def _initial_simplex(x0, step):
    n = x0.size
    simplex = np.tile(x0, (n + 1, 1))
    for i in range(n):
        simplex[i + 1, i] = x0[i] * (1 + step) if x0[i] != 0 else 0.00025
    return simplex


def nelder_mead(objective, x0, options=None, simplex=None):
    """Minimise ``objective`` from ``x0``.

    Converges when both the largest coordinate distance from the best vertex
    and the largest objective gap to the best value fall below the
    tolerances.  Without convergence the best vertex is returned with
    ``converged=False``.
    """
    opt = options or NelderMeadOptions()
    x0 = np.asarray(x0, dtype=float).ravel()
    if x0.size < 1 or not np.all(np.isfinite(x0)):
        raise ValueError("x0 must be a finite vector of length at least one")
    n = x0.size
    evals = 0

    def f(x):
        nonlocal evals
        evals += 1
        v = float(objective(x))
        return v if np.isfinite(v) else np.inf

    sim = _initial_simplex(x0, opt.initial_step) if simplex is None else np.array(simplex, dtype=float)
    fs = np.array([f(x) for x in sim])
    history = []
    it = 0
    converged = False
    while it < opt.max_iter:
        order = np.argsort(fs, kind="stable")
        sim, fs = sim[order], fs[order]
        history.append(fs[0])
        if (np.max(np.abs(sim[1:] - sim[0])) <= opt.xtol
                and np.max(np.abs(fs[1:] - fs[0])) <= opt.ftol):
            converged = True
            break
        it += 1
        centroid = sim[:-1].mean(axis=0)
        xr = centroid + opt.reflection * (centroid - sim[-1])
        fr = f(xr)
        if fr < fs[0]:
            xe = centroid + opt.reflection * opt.expansion * (centroid - sim[-1])
            fe = f(xe)
            if fe < fr:
                sim[-1], fs[-1] = xe, fe
            else:
                sim[-1], fs[-1] = xr, fr
            continue
        if fr < fs[-2]:
            sim[-1], fs[-1] = xr, fr
            continue
        if fr < fs[-1]:
            # outside contraction
            xc = centroid + opt.contraction * (xr - centroid)
            fc = f(xc)
            if fc <= fr:
                sim[-1], fs[-1] = xc, fc
                continue
        else:
            # inside contraction
            xc = centroid + opt.contraction * (sim[-1] - centroid)
            fc = f(xc)
            if fc < fs[-1]:
                sim[-1], fs[-1] = xc, fc
                continue
        for i in range(1, n + 1):
            sim[i] = sim[0] + opt.shrink * (sim[i] - sim[0])
            fs[i] = f(sim[i])
    order = np.argsort(fs, kind="stable")
    sim, fs = sim[order], fs[order]
    if not converged:
        history.append(fs[0])
    return OptimumResult(sim[0].copy(), float(fs[0]), it, evals, converged, history)
