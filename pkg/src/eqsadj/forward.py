"""Transient EQS solver: implicit Euler in time, damped Newton per step.

The semi-discrete system is ``K_sigma(u) u + d/dt (K_eps u) = 0`` on the free
nodes, with time-dependent Dirichlet values on electrode markers. Each step
solves

    h K_sigma(u_n) u_n + K_eps (u_n - u_{n-1}) = 0

and the whole trajectory is kept, because the adjoint sweep needs the field
at every sample.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Mapping, Sequence, Union

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .assembly import Assembler, dirichlet_dofs
from .materials import MaterialModel, differential_conductivity
from .mesh import Mesh

log = logging.getLogger(__name__)

DEFAULT_NEWTON_TOL = 1e-10
DEFAULT_MAX_NEWTON = 25
MAX_HALVINGS = 8


class NewtonError(RuntimeError):
    def __init__(self, step: int, residual: float, message: str = ""):
        self.step = step
        self.residual = residual
        super().__init__(message or f"Newton failed at step {step} (residual {residual:.3e})")


# --------------------------------------------------------------------------
# excitations


def impulse_voltage(t, peak: float, tau1: float, tau2: float):
    """Double-exponential impulse peak*tau2/(tau2-tau1)*(exp(-t/tau2) - exp(-t/tau1))."""
    if not (tau2 > tau1 > 0):
        raise ValueError(f"impulse needs tau2 > tau1 > 0, got tau1={tau1}, tau2={tau2}")
    t = np.asarray(t, dtype=float)
    return peak * tau2 / (tau2 - tau1) * (np.exp(-t / tau2) - np.exp(-t / tau1))


def impulse_peak_time(tau1: float, tau2: float) -> float:
    return tau1 * tau2 / (tau2 - tau1) * math.log(tau2 / tau1)


@dataclass(frozen=True)
class DC:
    value: float = 0.0

    def __call__(self, t):
        return self.value + 0.0 * np.asarray(t, dtype=float)

    def to_dict(self):
        return {"type": "dc", "value": self.value}


@dataclass(frozen=True)
class Sinusoid:
    amplitude: float
    frequency: float  # Hz

    @property
    def omega(self) -> float:
        return 2.0 * math.pi * self.frequency

    def __call__(self, t):
        return self.amplitude * np.sin(self.omega * np.asarray(t, dtype=float))

    def to_dict(self):
        return {"type": "sinusoid", "amplitude": self.amplitude, "frequency": self.frequency}


@dataclass(frozen=True)
class Impulse:
    """Lightning impulse, optionally riding on a DC level."""

    peak: float
    tau1: float
    tau2: float
    dc: float = 0.0

    def __post_init__(self):
        if not (self.tau2 > self.tau1 > 0):
            raise ValueError("impulse needs tau2 > tau1 > 0")

    @property
    def peak_time(self) -> float:
        return impulse_peak_time(self.tau1, self.tau2)

    def __call__(self, t):
        return self.dc + impulse_voltage(t, self.peak, self.tau1, self.tau2)

    def to_dict(self):
        return {"type": "impulse", "peak": self.peak, "tau1": self.tau1,
                "tau2": self.tau2, "dc": self.dc}


Excitation = Union[DC, Sinusoid, Impulse]


def excitation_from_dict(d: Mapping) -> Excitation:
    kind = d.get("type")
    args = {k: float(v) for k, v in d.items() if k != "type"}
    if kind == "dc":
        return DC(**args)
    if kind == "sinusoid":
        return Sinusoid(**args)
    if kind == "impulse":
        return Impulse(**args)
    raise ValueError(f"unknown excitation type {kind!r}")


# --------------------------------------------------------------------------
# time grid


@dataclass(frozen=True, eq=False)
class TimeGrid:
    t: np.ndarray
    dt_main: float
    dt_imp: float = 0.0
    refine_at: tuple[float, ...] = ()

    def __post_init__(self):
        t = np.asarray(self.t, dtype=float)
        if t.ndim != 1 or len(t) < 2 or np.any(np.diff(t) <= 0):
            raise ValueError("time samples must be strictly increasing")
        t.setflags(write=False)
        object.__setattr__(self, "t", t)

    def __len__(self):
        return len(self.t)

    @property
    def T(self) -> float:
        return float(self.t[-1])

    @cached_property
    def steps(self) -> np.ndarray:
        """Step sizes; values equal up to rounding share one representative.

        Sharing lets the linear solver reuse factorizations, and every module
        (forward, adjoint, quadrature) reads step sizes from here.
        """
        h = np.diff(self.t)
        out = np.empty_like(h)
        reps: list[float] = []
        for i, v in enumerate(h):
            for r in reps:
                if abs(v - r) <= 1e-10 * r:
                    out[i] = r
                    break
            else:
                reps.append(v)
                out[i] = v
        out.setflags(write=False)
        return out

    @cached_property
    def tol(self) -> float:
        """Matching tolerance for instants: a few ulps, well below any step."""
        h_min = float(self.steps.min())
        return min(0.25 * h_min, max(1e-6 * h_min, 16 * np.finfo(float).eps * abs(self.T)))

    def index(self, t: float) -> int:
        """Index of the sample equal to ``t`` up to rounding."""
        i = int(np.argmin(np.abs(self.t - t)))
        if abs(self.t[i] - t) > self.tol:
            raise ValueError(f"t = {t!r} is not a sample of the time grid; "
                             "build the grid with refine_at including it")
        return i

    def trapezoid_weights(self, t_a: float | None = None, t_b: float | None = None) -> np.ndarray:
        """Quadrature weights of the trapezoidal rule over samples in [t_a, t_b]."""
        t_a = self.t[0] if t_a is None else t_a
        t_b = self.t[-1] if t_b is None else t_b
        tol = self.tol
        inside = (self.t >= t_a - tol) & (self.t <= t_b + tol)
        w = np.zeros(len(self.t))
        h = np.where(inside[:-1] & inside[1:], self.steps, 0.0)
        w[:-1] += 0.5 * h
        w[1:] += 0.5 * h
        return w


def build_timegrid(T: float, n_main: int, refine_at: Sequence[float] = (),
                   ratio: float = 1e-8, include: Sequence[float] = ()) -> TimeGrid:
    """Uniform grid with ``n_main`` steps, refined around each ``refine_at``.

    Each refinement instant is inserted together with neighbours at
    +/- ratio * T / n_main. Instants in ``include`` are inserted unrefined.
    """
    if not (T > 0) or int(n_main) != n_main or n_main < 1:
        raise ValueError("need T > 0 and integer n_main >= 1")
    dt = T / n_main
    dt_imp = ratio * dt
    main = np.linspace(0.0, T, int(n_main) + 1)
    extra = []
    for tr in refine_at:
        if not 0 < tr < T:
            raise ValueError(f"refinement instant {tr} outside (0, T)")
        extra += [tr - dt_imp, tr, tr + dt_imp]
    for ti in include:
        if not 0 <= ti <= T:
            raise ValueError(f"instant {ti} outside [0, T]")
        extra.append(ti)
    # an inserted instant replaces any main sample it coincides with
    merge = 1e-3 * dt_imp if dt_imp > 0 else 16 * np.finfo(float).eps * T
    extra = np.unique(np.asarray(extra, dtype=float))
    if len(extra):
        extra = extra[np.concatenate([[True], np.diff(extra) > merge])]
        near = np.min(np.abs(main[:, None] - extra[None, :]), axis=1) <= merge
        main = main[~near]
    t = np.sort(np.concatenate([main, extra]))
    if np.any(np.diff(t) <= merge):
        raise ValueError("refinement instants too close to each other")
    return TimeGrid(t, dt, dt_imp, tuple(float(x) for x in refine_at))


# --------------------------------------------------------------------------
# problem definition


@dataclass(eq=False)
class EQSProblem:
    mesh: Mesh
    materials: Mapping[int, MaterialModel]
    excitation: Mapping[str, Excitation]

    def __post_init__(self):
        missing = set(self.mesh.region_ids()) - set(self.materials)
        if missing:
            raise ValueError(f"no material for region(s) {sorted(missing)}")
        self.materials = dict(self.materials)
        self.excitation = dict(self.excitation)
        self.assembler = Assembler(self.mesh)
        self.fixed, _ = dirichlet_dofs(self.mesh, {k: 0.0 for k in self.excitation})
        self._marker_of = []
        for name in self.excitation:
            self._marker_of.append((name, np.searchsorted(self.fixed, self.mesh.marker(name))))
        self.free = np.setdiff1d(np.arange(self.mesh.n_nodes), self.fixed)

    @property
    def is_linear(self) -> bool:
        return all(m.is_linear for m in self.materials.values())

    def with_material(self, region: int, model: MaterialModel) -> "EQSProblem":
        mats = dict(self.materials)
        mats[region] = model
        return EQSProblem(self.mesh, mats, self.excitation)

    def dirichlet_values(self, t: float) -> np.ndarray:
        vals = np.zeros(len(self.fixed))
        for name, pos in self._marker_of:
            vals[pos] = float(self.excitation[name](t))
        return vals

    def _per_region(self, fn) -> np.ndarray:
        out = None
        for region, mask in self.assembler.region_masks.items():
            vals = fn(self.materials[region], mask)
            if out is None:
                out = np.zeros((self.mesh.n_elements,) + np.shape(vals)[1:])
            out[mask] = vals
        return out

    def sigma(self, E: np.ndarray) -> np.ndarray:
        """Element conductivities for element fields ``E`` of shape (M, 2)."""
        mag = np.hypot(E[:, 0], E[:, 1])
        return self._per_region(lambda m, k: m.conductivity(mag[k]))

    def sigma_prime(self, E: np.ndarray) -> np.ndarray:
        mag = np.hypot(E[:, 0], E[:, 1])
        return self._per_region(lambda m, k: m.conductivity_dE(mag[k]))

    def sigma_d(self, E: np.ndarray) -> np.ndarray:
        return self._per_region(lambda m, k: differential_conductivity(E[k], m))

    def sigma_dparam(self, E: np.ndarray, region: int, selector: str) -> np.ndarray:
        mask = self.assembler.region_masks.get(region)
        out = np.zeros(self.mesh.n_elements)
        if mask is None:
            return out
        mag = np.hypot(E[mask, 0], E[mask, 1])
        out[mask] = self.materials[region].conductivity_dparam(mag, selector)
        return out

    def eps_dparam(self, region: int, selector: str) -> np.ndarray:
        out = np.zeros(self.mesh.n_elements)
        mask = self.assembler.region_masks.get(region)
        if mask is not None:
            out[mask] = self.materials[region].permittivity_dparam(selector)
        return out

    @cached_property
    def eps(self) -> np.ndarray:
        return self._per_region(lambda m, k: np.full(k.sum(), m.eps))

    @cached_property
    def K_eps(self) -> sp.csr_matrix:
        return self.assembler.assemble(self.eps)

    def K_sigma(self, u) -> sp.csr_matrix:
        return self.assembler.assemble(self.sigma(self.assembler.fields(u)))

    def K_sigma_d(self, u) -> sp.csr_matrix:
        E = self.assembler.fields(u)
        if self.is_linear:
            return self.assembler.assemble(self.sigma(E))
        return self.assembler.assemble(self.sigma_d(E))


# --------------------------------------------------------------------------
# solution container


@dataclass(eq=False)
class TransientSolution:
    problem: EQSProblem
    grid: TimeGrid
    u: np.ndarray  # (N_t, N_N)
    newton_iterations: np.ndarray
    residual_norms: np.ndarray
    initial: str = "zero"  # zero | dc | given

    @cached_property
    def fields(self) -> np.ndarray:
        """Element fields E = -grad(phi), shape (N_t, M, 2)."""
        return self.problem.assembler.fields(np.asarray(self.u))

    def potential_at(self, point) -> np.ndarray:
        from .mesh import locate
        e, w = locate(self.problem.mesh, point)
        return np.asarray(self.u)[:, self.problem.mesh.triangles[e]] @ w


# --------------------------------------------------------------------------
# solvers


class _LinearCache:
    """Factorizations of free-block matrices keyed by step size (linear case)."""

    def __init__(self):
        self._lu = {}

    def get(self, key, build):
        lu = self._lu.get(key)
        if lu is None:
            lu = self._lu[key] = spla.splu(build().tocsc())
        return lu


def _newton(residual_and_jacobian, x0, scale, tol, max_iter, step, exact_linear=False):
    """Damped Newton on the free unknowns. Returns (x, iterations, residual)."""
    x = x0.copy()
    r, J = residual_and_jacobian(x, need_jacobian=True)
    rn = float(np.linalg.norm(r))
    for it in range(1, max_iter + 1):
        dx = -J(r) if callable(J) else -spla.splu(J.tocsc()).solve(r)
        alpha = 1.0
        for _ in range(MAX_HALVINGS + 1):
            x_try = x + alpha * dx
            r_try, _ = residual_and_jacobian(x_try, need_jacobian=False)
            rn_try = float(np.linalg.norm(r_try))
            if rn_try <= rn or exact_linear or not np.isfinite(rn):
                break
            alpha *= 0.5
        x, r, rn = x_try, r_try, rn_try
        if not np.isfinite(rn):
            break
        small_update = alpha * np.linalg.norm(dx) <= 1e-13 * max(np.linalg.norm(x), 1e-300)
        if rn <= tol * scale or rn == 0.0 or (small_update and rn <= tol * (1.0 + scale)):
            return x, it, rn
        if exact_linear and rn <= 1e-13 * max(scale, 1e-300):
            return x, it, rn
        _, J = residual_and_jacobian(x, need_jacobian=True)
    raise NewtonError(step, rn)


def solve_dc_steady_state(problem: EQSProblem, t: float = 0.0, newton_tol: float = DEFAULT_NEWTON_TOL,
                          max_newton: int = DEFAULT_MAX_NEWTON) -> np.ndarray:
    """Stationary conduction field K_sigma(u) u = 0 with Dirichlet data at time ``t``.

    Falls back to ramping the electrode voltages when a direct Newton solve
    does not converge.
    """
    target = problem.dirichlet_values(t)
    u = np.zeros(problem.mesh.n_nodes)
    for n_ramp in (1, 4, 16, 64):
        try:
            u = np.zeros(problem.mesh.n_nodes)
            for k in range(1, n_ramp + 1):
                u = _dc_solve(problem, u, target * (k / n_ramp), newton_tol, max_newton)
            return u
        except NewtonError as exc:
            last = exc
            log.info("DC solve failed with %d ramp steps, refining", n_ramp)
    raise last


def _dc_solve(problem, u_guess, uD, tol, max_newton):
    F, D = problem.free, problem.fixed
    u = u_guess.copy()
    u[D] = uD

    def rj(xF, need_jacobian):
        v = u.copy()
        v[F] = xF
        r = (problem.K_sigma(v) @ v)[F]
        J = problem.K_sigma_d(v)[F][:, F] if need_jacobian else None
        return r, J

    def scale_at(v):
        return float(np.linalg.norm((problem.K_sigma(v)[F][:, D]) @ uD))

    # The residual scale depends on the iterate for nonlinear media; a guess
    # with a steep field in the graded layer inflates it, so re-check the
    # tolerance against the converged state and continue if needed.
    scale = scale_at(u)
    for _ in range(4):
        xF, _, rn = _newton(rj, u[F], scale, tol, max_newton, step=0,
                            exact_linear=problem.is_linear)
        u[F] = xF
        new_scale = scale_at(u)
        if problem.is_linear or rn <= tol * new_scale or rn == 0.0:
            break
        scale = new_scale
    return u


def solve_forward(problem: EQSProblem, grid: TimeGrid, initial="zero",
                  newton_tol: float = DEFAULT_NEWTON_TOL, max_newton: int = DEFAULT_MAX_NEWTON,
                  scratch_dir: str | Path | None = None) -> TransientSolution:
    """Integrate the EQS system over ``grid`` with implicit Euler.

    ``initial`` is ``"zero"``, ``"dc"`` (stationary conduction field for the
    electrode voltages at t = 0) or a nodal vector. Dirichlet nodes always
    carry the excitation value, including at t = 0.
    """
    N, n_t = problem.mesh.n_nodes, len(grid)
    F, D = problem.free, problem.fixed
    if scratch_dir is not None:
        Path(scratch_dir).mkdir(parents=True, exist_ok=True)
        path = Path(scratch_dir) / f"trajectory_{id(problem):x}_{n_t}.npy"
        U = np.lib.format.open_memmap(path, mode="w+", dtype=float, shape=(n_t, N))
    else:
        U = np.empty((n_t, N))

    if isinstance(initial, str):
        if initial == "zero":
            u0 = np.zeros(N)
            u0[D] = problem.dirichlet_values(grid.t[0])
        elif initial == "dc":
            u0 = solve_dc_steady_state(problem, grid.t[0], newton_tol, max_newton)
        else:
            raise ValueError(f"unknown initial condition {initial!r}")
        kind = initial
    else:
        u0 = np.array(initial, dtype=float)
        if u0.shape != (N,):
            raise ValueError("initial vector has the wrong length")
        u0[D] = problem.dirichlet_values(grid.t[0])
        kind = "given"
    U[0] = u0

    iters = np.zeros(n_t, dtype=int)
    res = np.zeros(n_t)
    Keps = problem.K_eps
    Keps_FF, Keps_FD = Keps[F][:, F], Keps[F][:, D]
    linear = problem.is_linear
    if linear:
        Ks = problem.K_sigma(u0)
        Ks_FF, Ks_FD = Ks[F][:, F], Ks[F][:, D]
        cache = _LinearCache()

    for n in range(1, n_t):
        h = float(grid.steps[n - 1])
        u_prev = U[n - 1]
        uD = problem.dirichlet_values(grid.t[n])
        known = (Keps @ u_prev)[F]

        if linear:
            lu = cache.get(h, lambda: h * Ks_FF + Keps_FF)
            coupling = h * (Ks_FD @ uD) + Keps_FD @ uD

            def rj(xF, need_jacobian, lu=lu, coupling=coupling, known=known, h=h):
                r = h * (Ks_FF @ xF) + Keps_FF @ xF + coupling - known
                return r, lu.solve

            scale = float(np.linalg.norm(known) + np.linalg.norm(coupling))
        else:
            base = u_prev.copy()
            base[D] = uD

            def rj(xF, need_jacobian, base=base, known=known, h=h):
                v = base.copy()
                v[F] = xF
                r = h * (problem.K_sigma(v) @ v)[F] + (Keps @ v)[F] - known
                J = (h * problem.K_sigma_d(v) + Keps)[F][:, F] if need_jacobian else None
                return r, J

            scale = float(np.linalg.norm(known) + np.linalg.norm(
                (h * problem.K_sigma(base) + Keps)[F][:, D] @ uD))

        try:
            xF, it, rn = _newton(rj, u_prev[F], scale, newton_tol, max_newton, step=n,
                                 exact_linear=linear)
        except NewtonError as exc:
            raise NewtonError(n, exc.residual,
                              f"Newton did not converge at step {n} (t = {grid.t[n]:.6g} s, "
                              f"residual {exc.residual:.3e})") from None
        u = np.empty(N)
        u[F], u[D] = xF, uD
        U[n] = u
        iters[n], res[n] = it, rn

    return TransientSolution(problem, grid, U, iters, res, kind)
