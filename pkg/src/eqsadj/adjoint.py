"""Backward-in-time adjoint sweep.

The adjoint of the implicit Euler forward scheme is integrated on the
reversed time axis starting from ``w(T) = 0``. Stepping from ``t_{n+1}``
back to ``t_n`` solves

    (h_n K_sigma_d(u_{n+1}) + K_eps_d) w_n = K_eps_d w_{n+1} + c_{n+1} q_{n+1}

on the free nodes, i.e. the transposed Jacobian of the forward step that
produced ``u_{n+1}``, with the material linearization taken from the stored
forward field. The sweep is linear: one solve per step, no Newton.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
import scipy.sparse.linalg as spla

from .forward import TimeGrid, TransientSolution
from .qoi import AdjointRhs


class AdjointError(RuntimeError):
    def __init__(self, step: int, message: str):
        self.step = step
        super().__init__(f"adjoint step {step}: {message}")


@dataclass(eq=False)
class AdjointSolution:
    name: str
    grid: TimeGrid
    w: np.ndarray  # (N_t, N_N), w[-1] == 0
    rhs: AdjointRhs


def _same_grid(a: TimeGrid, b: TimeGrid) -> bool:
    return a is b or (len(a) == len(b) and np.array_equal(a.t, b.t))


def solve_adjoints(solution: TransientSolution, rhss: Sequence[AdjointRhs]) -> list[AdjointSolution]:
    """Adjoint trajectories for several QoIs, sharing one factorization per step."""
    problem, grid = solution.problem, solution.grid
    N, n_t = problem.mesh.n_nodes, len(grid)
    for r in rhss:
        if not _same_grid(r.grid, grid) or r.q.shape != (n_t, N):
            raise ValueError(f"adjoint load {r.name!r} is not defined on the forward grid")
    if not rhss:
        return []
    F = problem.free
    src = np.stack([r.source for r in rhss], axis=-1)  # (N_t, N, K)
    W = np.zeros((n_t, N, len(rhss)))
    Keps = problem.K_eps
    Keps_FF = Keps[F][:, F]
    lu_cache = {}
    if problem.is_linear:
        Ks_FF = problem.K_sigma(solution.u[0])[F][:, F]

    for n in range(n_t - 2, -1, -1):
        b = (Keps_FF @ W[n + 1][F]) + src[n + 1][F]
        if not np.any(b):
            continue
        h = float(grid.steps[n])
        try:
            if problem.is_linear:
                lu = lu_cache.get(h)
                if lu is None:
                    lu = lu_cache[h] = spla.splu((h * Ks_FF + Keps_FF).tocsc())
            else:
                A = h * problem.K_sigma_d(solution.u[n + 1]) + Keps
                lu = spla.splu(A[F][:, F].tocsc())
        except RuntimeError as exc:
            raise AdjointError(n, str(exc)) from None
        x = lu.solve(b)
        if not np.all(np.isfinite(x)):
            raise AdjointError(n, "non-finite adjoint values (singular step matrix?)")
        W[n][F] = x

    return [AdjointSolution(r.name, grid, np.ascontiguousarray(W[:, :, k]), r)
            for k, r in enumerate(rhss)]


def solve_adjoint(solution: TransientSolution, rhs: AdjointRhs) -> AdjointSolution:
    return solve_adjoints(solution, [rhs])[0]
