"""Scenario definitions and the two shipped validation cases.

A :class:`Scenario` bundles everything needed for a sensitivity run: mesh
source, per-region materials, electrode excitations, time grid settings,
QoIs and design parameters. The layered resistor has a closed-form oracle;
the graded joint is checked against finite differences.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Mapping

import numpy as np

from .adjoint import solve_adjoints
from .forward import (DC, EQSProblem, Impulse, Sinusoid, TransientSolution, build_timegrid,
                      impulse_peak_time, solve_forward)
from .materials import FGMMaterial, LinearMaterial, MaterialModel
from .mesh import Mesh, build_layered_rect, build_tensor_mesh, load_mesh
from .qoi import EnergyIntegral, PointFieldMagnitude, PointPotential, Qoi, time_instants
from .sensitivity import Parameter, SensitivityResult, compute_sensitivities

EPS0 = 8.8541878128e-12

# field grading sheet parameters and the 1.2/50 lightning impulse
FGM_PARAMS = dict(a1=1e-10, a2=0.7e6, a3=2.4e6, a4=1864.0)
TAU1 = 1.2e-6 / 2.96
TAU2 = 50e-6 / 0.73


class ScenarioError(ValueError):
    pass


@dataclass(frozen=True)
class TimeSpec:
    T: float
    n_main: int
    refine_ratio: float = 1e-8
    sweep: tuple[int, ...] = ()


@dataclass(frozen=True)
class Trace:
    name: str
    point: tuple[float, float]


@dataclass(frozen=True)
class RunOptions:
    newton_tol: float = 1e-10
    max_newton: int = 25
    fd_h_rel: float = 1e-3
    tolerance: float = 0.01
    oracle: str = "fd"  # "fd" or "analytic"
    traces: tuple[Trace, ...] = ()


def build_graded_joint(r_inner=0.02, xlpe=0.02, fgm=0.002, sir=0.03, length=0.3,
                       n_xlpe=10, n_fgm=2, n_sir=10, n_z=60) -> Mesh:
    """Axisymmetric stand-in for a resistively graded cable joint.

    Layers in rho: XLPE (region 4), a thin field grading sheet (region 6) and
    silicone insulation (region 5). The conductor surface rho = r_inner and
    the connector face z = length below the outer FGM surface are marked
    ``hv``; the outer sheath and the cable screen face z = 0 above the XLPE
    are marked ``ground``. The FGM sheet therefore meets both electrodes,
    giving one triple point at each end.
    """
    r1 = r_inner + xlpe
    r2 = r1 + fgm
    r3 = r2 + sir
    rho = np.concatenate([np.linspace(r_inner, r1, n_xlpe + 1),
                          np.linspace(r1, r2, n_fgm + 1)[1:],
                          np.linspace(r2, r3, n_sir + 1)[1:]])
    rho[n_xlpe], rho[n_xlpe + n_fgm] = r1, r2
    z = np.linspace(0.0, length, n_z + 1)

    def region(r, _z):
        return 4 if r < r1 else (6 if r < r2 else 5)

    return build_tensor_mesh(rho, z, region, {
        "hv": lambda r, zz: (r == r_inner) | ((zz == length) & (r <= r2)),
        "ground": lambda r, zz: (r == r3) | ((zz == 0.0) & (r >= r1)),
    }, symmetry="axisymmetric")


MESH_BUILDERS = {
    "layered_rect": build_layered_rect,
    "graded_joint": build_graded_joint,
}


@dataclass
class Scenario:
    name: str
    mesh: dict  # {"builder": name, "params": {...}} or {"path": file}
    materials: dict[int, MaterialModel]
    excitation: dict
    time: TimeSpec
    qois: list[Qoi]
    parameters: list[Parameter]
    initial: str = "zero"
    run: RunOptions = field(default_factory=RunOptions)

    def __post_init__(self):
        names = [q.name for q in self.qois]
        if len(set(names)) != len(names):
            raise ScenarioError("QoI names must be unique")
        pnames = [p.name for p in self.parameters]
        if len(set(pnames)) != len(pnames):
            raise ScenarioError("parameter names must be unique")
        for p in self.parameters:
            if p.region not in self.materials:
                raise ScenarioError(f"parameter {p.name!r}: no material for region {p.region}")
            self.materials[p.region].get(p.selector)  # validates the selector

    @cached_property
    def built_mesh(self) -> Mesh:
        if "path" in self.mesh:
            return load_mesh(self.mesh["path"])
        builder = MESH_BUILDERS.get(self.mesh.get("builder"))
        if builder is None:
            raise ScenarioError(f"unknown mesh builder {self.mesh.get('builder')!r}")
        try:
            return builder(**self.mesh.get("params", {}))
        except TypeError as exc:
            raise ScenarioError(f"mesh builder {self.mesh['builder']!r}: {exc}") from None

    def parameter(self, name: str) -> Parameter:
        for p in self.parameters:
            if p.name == name:
                return p
        raise ScenarioError(f"unknown parameter {name!r}")

    def parameter_value(self, name: str) -> float:
        return self.parameter(name).value(self.materials)

    def problem(self, overrides: Mapping[str, float] | None = None) -> EQSProblem:
        mats = dict(self.materials)
        for name, value in (overrides or {}).items():
            p = self.parameter(name)
            mats[p.region] = mats[p.region].with_value(p.selector, value)
        missing = set(self.built_mesh.region_ids()) - set(mats)
        if missing:
            raise ScenarioError(f"no material for mesh region(s) {sorted(missing)}")
        return EQSProblem(self.built_mesh, mats, self.excitation)

    def timegrid(self, n_main: int | None = None):
        refine, include = time_instants(self.qois)
        return build_timegrid(self.time.T, n_main or self.time.n_main, refine,
                              self.time.refine_ratio, include)

    def solve(self, overrides=None, n_main=None, scratch_dir=None) -> TransientSolution:
        return solve_forward(self.problem(overrides), self.timegrid(n_main), self.initial,
                             self.run.newton_tol, self.run.max_newton, scratch_dir=scratch_dir)

    def qoi_values(self, overrides=None, n_main=None) -> dict[str, float]:
        sol = self.solve(overrides, n_main)
        return {q.name: q.evaluate(sol) for q in self.qois}

    def sensitivities(self, n_main=None, scratch_dir=None) -> tuple[SensitivityResult, TransientSolution]:
        sol = self.solve(n_main=n_main, scratch_dir=scratch_dir)
        adjoints = solve_adjoints(sol, [q.rhs(sol) for q in self.qois])
        return compute_sensitivities(sol, adjoints, self.parameters, self.qois), sol

    # ------------------------------------------------------------------
    # closed-form reference for the layered resistor

    def analytic_stack(self):
        """The equivalent :class:`TwoLayerStack`, or ScenarioError if not a layered resistor."""
        from .oracle import TwoLayerStack

        if self.mesh.get("builder") != "layered_rect":
            raise ScenarioError("analytic oracle needs the layered_rect mesh")
        if self.initial != "zero" or set(self.materials) != {1, 2}:
            raise ScenarioError("analytic oracle needs regions 1, 2 and a zero initial state")
        m1, m2 = self.materials[1], self.materials[2]
        if not (isinstance(m1, LinearMaterial) and isinstance(m2, LinearMaterial)):
            raise ScenarioError("analytic oracle needs linear materials")
        U = self.excitation.get("top_electrode")
        ground = self.excitation.get("bottom_electrode")
        if not isinstance(U, (Sinusoid, DC)) or not (isinstance(ground, DC) and ground.value == 0):
            raise ScenarioError("analytic oracle needs a sinusoidal/DC top electrode and a grounded bottom")
        prm = self.mesh.get("params", {})
        return TwoLayerStack(m1.sigma, m2.sigma, m1.eps, m2.eps, float(prm["layer_thickness"]),
                             U, float(prm["width"]))

    def analytic_value(self, qoi_name: str, param_name: str | None = None) -> float:
        """Closed-form QoI (``param_name=None``) or its derivative."""
        stack = self.analytic_stack()
        q = next((q for q in self.qois if q.name == qoi_name), None)
        if q is None:
            raise ScenarioError(f"unknown QoI {qoi_name!r}")
        if isinstance(q, PointPotential):
            fn, args = "potential", (q.point[1], q.t_ref)
        elif isinstance(q, EnergyIntegral):
            fn, args = "energy", (q.t_a, q.t_b, q.regions or (1, 2))
        else:
            raise ScenarioError(f"no closed form for {q.kind}")
        if param_name is None:
            return float(np.real(getattr(stack, fn)(*args)))
        p = self.parameter(param_name)
        key = {"sigma": "sigma", "eps": "eps"}[p.selector] + str(p.region)
        return float(stack.derivative(key, fn, *args))


def scenario_layered_resistor(n_main: int = 800, eps1: float = 40.0, sigma1: float = 10.0,
                              nx: int = 2, ny_per_layer: int = 4) -> Scenario:
    """Two 1 cm layers under a 1 V, 50 Hz sinusoid; probe mid upper layer at a quarter period."""
    d = 0.01
    f = 50.0
    omega = 2 * math.pi * f
    T = 2 * math.pi / omega
    t_qoi = math.pi / (2 * omega)
    return Scenario(
        name="layered_resistor",
        mesh={"builder": "layered_rect",
              "params": {"width": d, "layer_thickness": d, "nx": nx, "ny_per_layer": ny_per_layer}},
        materials={1: LinearMaterial(sigma1, eps1), 2: LinearMaterial(20.0, 60.0)},
        excitation={"top_electrode": Sinusoid(1.0, f), "bottom_electrode": DC(0.0)},
        time=TimeSpec(T, n_main, 1e-8, (100, 200, 400, 800)),
        qois=[PointPotential("phi_ref", (0.0, d / 2), t_qoi),
              EnergyIntegral("W_el", 0.0, T)],
        parameters=[Parameter("eps1", 1, "eps"), Parameter("sigma1", 1, "sigma")],
        initial="zero",
        run=RunOptions(oracle="analytic", traces=(Trace("phi_ref", (0.0, d / 2)),
                                                  Trace("phi_m", (0.0, d)))),
    )


def scenario_fgm_joint_simplified(n_main: int = 200, n_z: int = 60) -> Scenario:
    """Graded joint stand-in under 320 kV DC plus a 100 kV lightning impulse."""
    geo = dict(r_inner=0.02, xlpe=0.02, fgm=0.002, sir=0.03, length=0.3,
               n_xlpe=10, n_fgm=2, n_sir=10, n_z=n_z)
    t_peak = impulse_peak_time(TAU1, TAU2)
    # probe in the FGM element touching the connector-side triple point
    r_fgm = geo["r_inner"] + geo["xlpe"]
    d_r = geo["fgm"] / geo["n_fgm"]
    d_z = geo["length"] / n_z
    probe = (r_fgm + geo["fgm"] - 0.75 * d_r, geo["length"] - 0.25 * d_z)
    return Scenario(
        name="fgm_joint_simplified",
        mesh={"builder": "graded_joint", "params": geo},
        materials={4: LinearMaterial(1e-14, 2.3 * EPS0),
                   5: LinearMaterial(1e-13, 2.9 * EPS0),
                   6: FGMMaterial(eps=10.0 * EPS0, **FGM_PARAMS)},
        excitation={"hv": Impulse(100e3, TAU1, TAU2, dc=320e3), "ground": DC(0.0)},
        time=TimeSpec(100e-6, n_main, 1e-8, (50, 100, 200)),
        qois=[EnergyIntegral("W_el", 0.0, t_peak),
              PointFieldMagnitude("E_c", probe, t_peak)],
        parameters=[Parameter("a2", 6, "a2")],
        initial="dc",
        run=RunOptions(oracle="fd", fd_h_rel=1e-3, traces=(Trace("E_c_probe_potential", probe),)),
    )


BUILTIN = {
    "layered_resistor": scenario_layered_resistor,
    "fgm_joint": scenario_fgm_joint_simplified,
}
