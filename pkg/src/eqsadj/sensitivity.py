"""Parameter sensitivities from forward and adjoint trajectories.

For a material parameter p of one region the total derivative splits into

    dgdp          sum_n c_n * integral(dg/dp)
    conduction   -sum_n h_n * w_n^T K_sigma_p(u_{n+1}) u_{n+1}
    displacement  sum_n u_n^T K_eps_p (w_n - w_{n-1})          (n >= 1)
    initial       u_0^T K_eps_p w_0 + w_0^T K_eps u0' + c_0 q_0^T u0'

where ``u0' = d(phi_0)/dp``. With the adjoint sweep of :mod:`eqsadj.adjoint`
this is the exact derivative of the discrete QoI, so it agrees with finite
differences of the forward solver up to the Newton tolerance.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
import scipy.sparse.linalg as spla

from .adjoint import AdjointSolution, _same_grid
from .forward import TransientSolution

TERMS = ("dgdp", "conduction", "displacement", "initial")


@dataclass(frozen=True)
class Parameter:
    """A material parameter ``selector`` of ``region``.

    ``region=None`` marks a parameter that only enters through the initial
    condition; its derivative vector must be passed to
    :func:`compute_sensitivities` explicitly.
    """

    name: str
    region: int | None = None
    selector: str | None = None

    def value(self, materials) -> float:
        return materials[self.region].get(self.selector)


@dataclass
class SensitivityResult:
    qois: list[str]
    parameters: list[str]
    values: np.ndarray  # (N_qoi, N_param)
    breakdown: dict[str, np.ndarray]
    n_t: int
    qoi_values: dict[str, float] = field(default_factory=dict)

    def get(self, qoi: str, param: str) -> float:
        return float(self.values[self.qois.index(qoi), self.parameters.index(param)])

    def rows(self):
        for k, q in enumerate(self.qois):
            for j, p in enumerate(self.parameters):
                yield q, p, float(self.values[k, j]), {t: float(self.breakdown[t][k, j]) for t in TERMS}


def initial_derivative(solution: TransientSolution, param: Parameter) -> np.ndarray:
    """d(u_0)/dp for the initial conditions the forward solver can build."""
    problem = solution.problem
    N = problem.mesh.n_nodes
    if solution.initial != "dc" or param.region is None:
        return np.zeros(N)
    u0 = np.asarray(solution.u[0])
    asm, F = problem.assembler, problem.free
    ds = problem.sigma_dparam(asm.fields(u0), param.region, param.selector)
    if not np.any(ds):
        return np.zeros(N)
    rhs = -(asm.assemble(ds) @ u0)[F]
    J = problem.K_sigma_d(u0)[F][:, F]
    out = np.zeros(N)
    out[F] = spla.splu(J.tocsc()).solve(rhs)
    return out


def _terms(solution, adjoint, param, qoi, du0):
    problem, grid = solution.problem, solution.grid
    asm = problem.assembler
    U = np.asarray(solution.u)
    h = grid.steps
    gu = asm.gradients(U)  # (N_t, M, 2)
    gw = asm.gradients(adjoint.w)
    meas = asm.weights

    dgdp = qoi.dgdp(solution, param.region, param.selector) if qoi is not None else 0.0

    conduction = 0.0
    displacement = 0.0
    initial = 0.0
    if param.region is not None:
        E = solution.fields
        deps = problem.eps_dparam(param.region, param.selector) * meas
        for n in range(len(grid) - 1):
            if not np.any(adjoint.w[n]):
                continue
            ds = problem.sigma_dparam(E[n + 1], param.region, param.selector) * meas
            conduction -= h[n] * float(np.sum(ds * np.sum(gw[n] * gu[n + 1], axis=1)))
        if np.any(deps):
            dgw = np.diff(gw, axis=0)  # w_n - w_{n-1} for n >= 1
            displacement = float(np.einsum("e,nea,nea->", deps, gu[1:], dgw))
            initial += float(np.sum(deps * np.sum(gu[0] * gw[0], axis=1)))

    if du0 is not None and np.any(du0):
        w0 = adjoint.w[0]
        initial += float(w0 @ (problem.K_eps @ du0))
        initial += float(adjoint.rhs.source[0] @ du0)
    return {"dgdp": dgdp, "conduction": conduction, "displacement": displacement,
            "initial": initial}


def compute_sensitivities(solution: TransientSolution, adjoints: Sequence[AdjointSolution],
                          params: Sequence[Parameter], qois: Sequence | None = None,
                          du0: Mapping[str, np.ndarray] | None = None) -> SensitivityResult:
    """dG_k/dp_j for every adjoint trajectory and parameter.

    ``qois`` supplies the explicit dg/dp terms (matched to ``adjoints`` by
    position); ``du0`` overrides the initial-condition derivative per
    parameter name.
    """
    for a in adjoints:
        if not _same_grid(a.grid, solution.grid):
            raise ValueError(f"adjoint {a.name!r} lives on a different time grid")
    if qois is not None and len(qois) != len(adjoints):
        raise ValueError("need one QoI per adjoint trajectory")
    du0 = dict(du0 or {})
    K, P = len(adjoints), len(params)
    parts = {t: np.zeros((K, P)) for t in TERMS}
    for j, p in enumerate(params):
        d0 = du0[p.name] if p.name in du0 else initial_derivative(solution, p)
        for k, a in enumerate(adjoints):
            terms = _terms(solution, a, p, qois[k] if qois is not None else None, d0)
            for t in TERMS:
                parts[t][k, j] = terms[t]
    total = sum(parts[t] for t in TERMS)
    qv = {}
    if qois is not None:
        qv = {q.name: q.evaluate(solution) for q in qois}
    return SensitivityResult([a.name for a in adjoints], [p.name for p in params], total,
                             parts, len(solution.grid), qv)
