"""Derivative-free Nelder-Mead simplex minimiser."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

__all__ = ["SimplexOptions", "SimplexResult", "nelder_mead"]


@dataclass(frozen=True)
class SimplexOptions:
    """Stopping rules and move coefficients.

    ``max_iterations=None`` means ``200 * dim``.  Iteration stops once both
    the largest vertex offset from the best vertex is at most ``xatol`` and
    the largest objective gap to the best vertex is at most ``fatol``.
    """

    max_iterations: int | None = None
    max_evaluations: int | None = None
    xatol: float = 1e-4
    fatol: float = 1e-4
    reflection: float = 1.0
    expansion: float = 2.0
    contraction: float = 0.5
    shrink: float = 0.5
    # initial simplex: relative step for nonzero coordinates, absolute step for zeros
    nonzero_step: float = 0.05
    zero_step: float = 0.00025

    def __post_init__(self):
        if not (self.xatol > 0 and self.fatol > 0):
            raise ValueError("tolerances must be positive")


@dataclass(frozen=True)
class SimplexResult:
    x: np.ndarray
    fun: float
    converged: bool
    n_iterations: int
    n_evaluations: int


def nelder_mead(
    objective: Callable[[np.ndarray], float],
    x0,
    opts: SimplexOptions = SimplexOptions(),
) -> SimplexResult:
    x0 = np.asarray(x0, dtype=float).ravel()
    dim = x0.shape[0]
    max_iter = opts.max_iterations if opts.max_iterations is not None else 200 * dim
    max_fev = opts.max_evaluations if opts.max_evaluations is not None else 200 * dim
    rho, chi, psi, sigma = opts.reflection, opts.expansion, opts.contraction, opts.shrink

    sim = np.empty((dim + 1, dim))
    sim[0] = x0
    for k in range(dim):
        y = x0.copy()
        y[k] = (1 + opts.nonzero_step) * y[k] if y[k] != 0 else opts.zero_step
        sim[k + 1] = y

    fsim = np.empty(dim + 1)
    for k in range(dim + 1):
        fsim[k] = objective(sim[k])
    if not np.all(np.isfinite(fsim)):
        raise ValueError("objective is not finite on the initial simplex")
    n_fev = dim + 1

    order = np.argsort(fsim, kind="stable")
    sim, fsim = sim[order], fsim[order]

    n_iter = 1
    converged = False
    while n_fev < max_fev and n_iter < max_iter:
        if (
            np.max(np.abs(sim[1:] - sim[0])) <= opts.xatol
            and np.max(np.abs(fsim[0] - fsim[1:])) <= opts.fatol
        ):
            converged = True
            break

        centroid = sim[:-1].mean(axis=0)
        xr = (1 + rho) * centroid - rho * sim[-1]
        fxr = objective(xr)
        n_fev += 1
        do_shrink = False

        if fxr < fsim[0]:
            xe = (1 + rho * chi) * centroid - rho * chi * sim[-1]
            fxe = objective(xe)
            n_fev += 1
            if fxe < fxr:
                sim[-1], fsim[-1] = xe, fxe
            else:
                sim[-1], fsim[-1] = xr, fxr
        elif fxr < fsim[-2]:
            sim[-1], fsim[-1] = xr, fxr
        elif fxr < fsim[-1]:
            # outside contraction
            xc = (1 + psi * rho) * centroid - psi * rho * sim[-1]
            fxc = objective(xc)
            n_fev += 1
            if fxc <= fxr:
                sim[-1], fsim[-1] = xc, fxc
            else:
                do_shrink = True
        else:
            # inside contraction
            xcc = (1 - psi) * centroid + psi * sim[-1]
            fxcc = objective(xcc)
            n_fev += 1
            if fxcc < fsim[-1]:
                sim[-1], fsim[-1] = xcc, fxcc
            else:
                do_shrink = True

        if do_shrink:
            for j in range(1, dim + 1):
                sim[j] = sim[0] + sigma * (sim[j] - sim[0])
                fsim[j] = objective(sim[j])
            n_fev += dim

        order = np.argsort(fsim, kind="stable")
        sim, fsim = sim[order], fsim[order]
        n_iter += 1
    else:
        converged = bool(
            np.max(np.abs(sim[1:] - sim[0])) <= opts.xatol
            and np.max(np.abs(fsim[0] - fsim[1:])) <= opts.fatol
        )

    return SimplexResult(sim[0].copy(), float(fsim[0]), converged, n_iter, n_fev)
