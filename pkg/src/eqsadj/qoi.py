"""Quantities of interest and the adjoint loads they induce.

Every QoI is a discrete space-time functional ``G = sum_n c_n g(u_n)`` with
trapezoidal time weights ``c_n``. Pointwise-in-time QoIs place a unit-area
hat at ``t_ref``: ``g`` is scaled by ``1/c_ref`` at the single sample
``t_ref`` and vanishes elsewhere, which on a grid refined around ``t_ref``
is the usual ``1/Delta_imp`` spike.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import ClassVar, Sequence, Union

import numpy as np

from .forward import TimeGrid, TransientSolution
from .materials import E_FLOOR
from .mesh import locate


class QoiError(ValueError):
    pass


@dataclass(eq=False)
class AdjointRhs:
    """Adjoint loads ``q`` (N_t, N_N) and the time weights they are integrated with."""

    name: str
    grid: TimeGrid
    q: np.ndarray
    weights: np.ndarray

    @property
    def source(self) -> np.ndarray:
        """Time-integrated load per sample, c_n * q_n."""
        return self.weights[:, None] * self.q


def _probe_weights(mesh, point):
    """Element and nodal interpolation weights for a probe; snaps to nodes."""
    e, lam = locate(mesh, point)
    nodes = mesh.triangles[e]
    d = np.linalg.norm(mesh.nodes[nodes] - np.asarray(point, dtype=float), axis=1)
    scale = np.sqrt(abs(np.linalg.det(np.c_[mesh.nodes[nodes], np.ones(3)])))
    k = int(np.argmin(d))
    if d[k] <= 1e-9 * scale:
        lam = np.zeros(3)
        lam[k] = 1.0
    return e, nodes, lam


def _check_not_fixed(problem, nodes, weights, name):
    active = nodes[weights != 0]
    if np.all(np.isin(active, problem.fixed)):
        raise QoiError(f"QoI {name!r}: probe lies on a Dirichlet boundary, where the "
                       "adjoint vanishes; move the probe into the domain")


@dataclass(frozen=True)
class EnergyIntegral:
    """Joule losses sum_n c_n * integral(sigma |grad phi|^2) over a time window."""

    name: str
    t_a: float
    t_b: float
    regions: tuple[int, ...] | None = None

    kind: ClassVar[str] = "energy_integral"

    def weights(self, grid: TimeGrid) -> np.ndarray:
        if self.t_b < self.t_a:
            raise QoiError(f"QoI {self.name!r}: empty or reversed window")
        if self.t_a < grid.t[0] - grid.tol or self.t_b > grid.T + grid.tol:
            raise QoiError(f"QoI {self.name!r}: window outside the simulated interval")
        return grid.trapezoid_weights(self.t_a, self.t_b)

    def _mask(self, problem):
        if self.regions is None:
            return np.ones(problem.mesh.n_elements, dtype=bool)
        return np.isin(problem.mesh.regions, self.regions)

    def density(self, solution: TransientSolution, n: int) -> np.ndarray:
        """Per-element sigma |E|^2 * measure at sample ``n`` (zero outside regions)."""
        problem = solution.problem
        E = solution.fields[n]
        out = problem.sigma(E) * np.sum(E * E, axis=1) * problem.assembler.weights
        return np.where(self._mask(problem), out, 0.0)

    def evaluate(self, solution: TransientSolution) -> float:
        c = self.weights(solution.grid)
        return float(sum(c[n] * self.density(solution, n).sum() for n in np.flatnonzero(c)))

    def rhs(self, solution: TransientSolution) -> AdjointRhs:
        problem, asm = solution.problem, solution.problem.assembler
        c = self.weights(solution.grid)
        q = np.zeros((len(solution.grid), problem.mesh.n_nodes))
        mask = self._mask(problem)
        for n in np.flatnonzero(c):
            E = solution.fields[n]
            mag = np.hypot(E[:, 0], E[:, 1])
            # d/du of sigma(|E|)|E|^2 is (2 sigma + sigma' |E|) grad(phi) . grad(N)
            coef = np.where(mask, 2.0 * problem.sigma(E) + problem.sigma_prime(E) * mag, 0.0)
            q[n] = asm.nodal_load(coef[:, None] * -E)
        return AdjointRhs(self.name, solution.grid, q, c)

    def dgdp(self, solution: TransientSolution, region: int | None, selector: str | None) -> float:
        """Time-integrated explicit derivative sum_n c_n * integral(dsigma/dp |E|^2)."""
        if region is None or (self.regions is not None and region not in self.regions):
            return 0.0
        problem = solution.problem
        c = self.weights(solution.grid)
        total = 0.0
        for n in np.flatnonzero(c):
            E = solution.fields[n]
            ds = problem.sigma_dparam(E, region, selector)
            total += c[n] * float(np.sum(ds * np.sum(E * E, axis=1) * problem.assembler.weights))
        return total


@dataclass(frozen=True)
class PointPotential:
    """Potential at ``point`` and time ``t_ref``."""

    name: str
    point: tuple[float, float]
    t_ref: float

    kind: ClassVar[str] = "pointwise_potential"

    def evaluate(self, solution: TransientSolution) -> float:
        n = solution.grid.index(self.t_ref)
        _, nodes, lam = _probe_weights(solution.problem.mesh, self.point)
        return float(np.asarray(solution.u[n])[nodes] @ lam)

    def rhs(self, solution: TransientSolution) -> AdjointRhs:
        grid, problem = solution.grid, solution.problem
        n = grid.index(self.t_ref)
        _, nodes, lam = _probe_weights(problem.mesh, self.point)
        _check_not_fixed(problem, nodes, lam, self.name)
        c = grid.trapezoid_weights()
        q = np.zeros((len(grid), problem.mesh.n_nodes))
        q[n, nodes] = lam / c[n]
        return AdjointRhs(self.name, grid, q, c)

    def dgdp(self, solution, region, selector) -> float:
        return 0.0


@dataclass(frozen=True)
class PointFieldMagnitude:
    """|E| on the element containing ``point`` at time ``t_ref``."""

    name: str
    point: tuple[float, float]
    t_ref: float

    kind: ClassVar[str] = "pointwise_field_magnitude"

    def evaluate(self, solution: TransientSolution) -> float:
        n = solution.grid.index(self.t_ref)
        e, _ = locate(solution.problem.mesh, self.point)
        return float(np.hypot(*solution.fields[n][e]))

    def rhs(self, solution: TransientSolution) -> AdjointRhs:
        grid, problem = solution.grid, solution.problem
        n = grid.index(self.t_ref)
        e, _ = locate(problem.mesh, self.point)
        nodes = problem.mesh.triangles[e]
        E = solution.fields[n][e]
        mag = float(np.hypot(*E))
        # d|E|/du_i = grad(phi) . grad(N_i) / |grad(phi)|
        dg = problem.assembler.grads[e] @ -E / mag if mag > E_FLOOR else np.zeros(3)
        _check_not_fixed(problem, nodes, np.ones(3), self.name)
        c = grid.trapezoid_weights()
        q = np.zeros((len(grid), problem.mesh.n_nodes))
        np.add.at(q[n], nodes, dg / c[n])
        return AdjointRhs(self.name, grid, q, c)

    def dgdp(self, solution, region, selector) -> float:
        return 0.0


@dataclass(frozen=True)
class LinearCombination:
    """sum_k coef_k * G_k for QoIs sharing one forward solution."""

    name: str
    terms: tuple[tuple[float, "Qoi"], ...]

    kind: ClassVar[str] = "linear_combination"

    def evaluate(self, solution):
        return float(sum(a * g.evaluate(solution) for a, g in self.terms))

    def rhs(self, solution):
        c = solution.grid.trapezoid_weights()
        src = sum(a * g.rhs(solution).source for a, g in self.terms)
        return AdjointRhs(self.name, solution.grid, src / c[:, None], c)

    def dgdp(self, solution, region, selector):
        return float(sum(a * g.dgdp(solution, region, selector) for a, g in self.terms))


Qoi = Union[EnergyIntegral, PointPotential, PointFieldMagnitude, LinearCombination]


def eval_qoi(spec: Qoi, solution: TransientSolution) -> float:
    return spec.evaluate(solution)


def adjoint_rhs(spec: Qoi, solution: TransientSolution) -> AdjointRhs:
    return spec.rhs(solution)


def qoi_from_dict(d: dict) -> Qoi:
    kind, name = d["kind"], d["name"]
    if kind == "energy_integral":
        t_a, t_b = (float(x) for x in d["window"])
        regions = d.get("regions")
        return EnergyIntegral(name, t_a, t_b, None if regions is None else tuple(int(r) for r in regions))
    if kind in ("pointwise_potential", "pointwise_field_magnitude"):
        cls = PointPotential if kind == "pointwise_potential" else PointFieldMagnitude
        x, y = (float(v) for v in d["point"])
        return cls(name, (x, y), float(d["t_ref"]))
    raise QoiError(f"unknown QoI kind {kind!r}")


def qoi_to_dict(q: Qoi) -> dict:
    if isinstance(q, EnergyIntegral):
        out = {"name": q.name, "kind": q.kind, "window": [q.t_a, q.t_b]}
        if q.regions is not None:
            out["regions"] = list(q.regions)
        return out
    if isinstance(q, (PointPotential, PointFieldMagnitude)):
        return {"name": q.name, "kind": q.kind, "point": list(q.point), "t_ref": q.t_ref}
    raise QoiError(f"{type(q).__name__} cannot be written to a config")


def time_instants(qois: Sequence[Qoi]) -> tuple[list[float], list[float]]:
    """(instants needing hat refinement, window end points) for grid construction."""
    refine, include = [], []
    for q in qois:
        if isinstance(q, (PointPotential, PointFieldMagnitude)):
            refine.append(q.t_ref)
        elif isinstance(q, EnergyIntegral):
            include += [q.t_a, q.t_b]
        elif isinstance(q, LinearCombination):
            r, i = time_instants([g for _, g in q.terms])
            refine += r
            include += i
    return refine, include
