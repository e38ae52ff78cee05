"""Acceptance criteria 1-6, one test each.

Every test prints a single ``CRITERION n PASS|FAIL`` line (visible even
without ``-s``) before asserting. Run directly with

    python3 tests/test_acceptance.py
"""
import math
import sys
import time
from pathlib import Path

import mpmath
import numpy as np
import pytest
import yaml

from eqsadj.adjoint import solve_adjoints
from eqsadj.assembly import assemble
from eqsadj.cli import main as cli_main, observed_order
from eqsadj.config import scenario_to_config
from eqsadj.forward import DC, EQSProblem, Sinusoid, build_timegrid, solve_dc_steady_state, solve_forward
from eqsadj.materials import FGMMaterial, LinearMaterial, differential_conductivity
from eqsadj.mesh import build_layered_rect, build_tensor_mesh
from eqsadj.oracle import TwoLayerStack, fd_sensitivities
from eqsadj.qoi import EnergyIntegral, LinearCombination, PointPotential
from eqsadj.scenarios import FGM_PARAMS, scenario_fgm_joint_simplified, scenario_layered_resistor
from eqsadj.sensitivity import Parameter, compute_sensitivities

D = 0.01


@pytest.fixture
def report(capsys):
    def _report(n, ok, detail):
        with capsys.disabled():
            print(f"\nCRITERION {n} {'PASS' if ok else 'FAIL'}: {detail}")
        return ok
    return _report


def rel(a, b):
    return abs(a - b) / abs(b)


# 1 ---------------------------------------------------------------------------

def test_criterion_1_layered_dphi_deps1(report):
    lines, ok, slowest = [], True, 0.0
    for eps1 in (4.0, 40.0, 400.0):
        t0 = time.perf_counter()
        sc = scenario_layered_resistor(n_main=800, eps1=eps1)
        res, _ = sc.sensitivities()
        slowest = max(slowest, time.perf_counter() - t0)
        err = rel(res.get("phi_ref", "eps1"), sc.analytic_value("phi_ref", "eps1"))
        ok &= err < 0.01
        lines.append(f"eps1={eps1:g} rel.err={err:.2e}")
    ok &= slowest < 120
    report(1, ok, ", ".join(lines) + f"; slowest point {slowest:.2f}s")
    assert ok


# 2 ---------------------------------------------------------------------------

def test_criterion_2_first_order_convergence(report):
    sweep = [100, 200, 400, 800]
    errs = {"phi_ref": [], "W_el": []}
    base = scenario_layered_resistor()
    exact = {"phi_ref": base.analytic_value("phi_ref", "eps1"),
             "W_el": base.analytic_value("W_el", "sigma1")}
    for n in sweep:
        res, _ = base.sensitivities(n_main=n)
        errs["phi_ref"].append(rel(res.get("phi_ref", "eps1"), exact["phi_ref"]))
        errs["W_el"].append(rel(res.get("W_el", "sigma1"), exact["W_el"]))
    o1, o2 = observed_order(sweep, errs["phi_ref"]), observed_order(sweep, errs["W_el"])
    ok = abs(o1 - 1.0) <= 0.2 and abs(o2 - 1.0) <= 0.2
    report(2, ok, f"order dphi_ref/deps1={o1:.3f}, dW_el/dsigma1={o2:.3f}")
    assert ok


# 3 ---------------------------------------------------------------------------

def test_criterion_3_fgm_joint_against_fd(report):
    t0 = time.perf_counter()
    sc = scenario_fgm_joint_simplified(n_main=200)
    res, _ = sc.sensitivities()
    fd = fd_sensitivities(sc, "a2", sc.run.fd_h_rel)
    elapsed = time.perf_counter() - t0
    errs = {q: rel(res.get(q, "a2"), fd[q].value) for q in ("W_el", "E_c")}
    ok = all(e < 0.01 for e in errs.values()) and all(fd[q].reliable for q in errs) \
        and elapsed < 1800
    report(3, ok, ", ".join(f"d{q}/da2 rel.err={e:.2e}" for q, e in errs.items())
           + f"; {elapsed:.1f}s")
    assert ok


# 4 ---------------------------------------------------------------------------

def _mp_sigma(E, a1, a2, a3, a4):
    return a1 * (1 + a4 ** ((E - a2) / a2)) / (1 + a4 ** ((E - a3) / a2))


def _mp_diff(fn, x):
    with mpmath.workdps(60):
        x = mpmath.mpf(x)
        h = x * mpmath.mpf(10) ** -25
        return float((fn(x + h) - fn(x - h)) / (2 * h))


def _property_assembly(rng):
    m = build_tensor_mesh(np.cumsum(rng.uniform(0.2, 1, 6)), np.cumsum(rng.uniform(0.2, 1, 5)),
                          lambda x, y: 1, symmetry="axisymmetric")
    K = assemble(m, rng.uniform(0.1, 10, m.n_elements))
    return (K - K.T).count_nonzero() == 0 and \
        np.abs(K @ np.ones(m.n_nodes)).max() <= 1e-12 * abs(K).max() * m.n_nodes


def _property_materials(rng):
    mat = FGMMaterial(eps=1e-11, **FGM_PARAMS)
    ok = True
    for E in (2e5, 0.7e6, 1.5e6, 2.4e6, 4e6):
        names = ("a1", "a2", "a3", "a4")
        vals = [getattr(mat, k) for k in names]
        ok &= rel(float(mat.conductivity_dE(E)), _mp_diff(lambda e: _mp_sigma(e, *vals), E)) < 1e-5
        for i, k in enumerate(names):
            def f(p, i=i):
                v = list(map(mpmath.mpf, vals))
                v[i] = p
                return _mp_sigma(mpmath.mpf(E), *v)
            ok &= rel(float(mat.conductivity_dparam(E, k)), _mp_diff(f, vals[i])) < 1e-5
        th = rng.uniform(0, 2 * np.pi)
        R = np.array([[np.cos(th), -np.sin(th)], [np.sin(th), np.cos(th)]])
        Ev = E * np.array([np.cos(0.3), np.sin(0.3)])
        S, SR = differential_conductivity(Ev, mat), differential_conductivity(R @ Ev, mat)
        ok &= np.allclose(S, S.T, rtol=0, atol=1e-15 * abs(S).max())
        ok &= np.allclose(SR, R @ S @ R.T, rtol=1e-12, atol=1e-12 * abs(S).max())
    return bool(ok)


def _layered(top=None):
    return EQSProblem(build_layered_rect(D, D, 2, 4),
                      {1: LinearMaterial(10.0, 40.0), 2: LinearMaterial(20.0, 60.0)},
                      {"top_electrode": top or Sinusoid(1.0, 50.0), "bottom_electrode": DC(0.0)})


def _property_qoi_adjoint_sensitivity(rng):
    p = _layered()
    ok = True
    for frac in rng.uniform(0.05, 0.95, 5):
        grid = build_timegrid(0.02, int(rng.integers(5, 400)), [0.02 * frac])
        sol = solve_forward(p, grid)
        rhs = PointPotential("g", tuple(p.mesh.nodes[13]), 0.02 * frac).rhs(sol)
        ok &= abs(rhs.source.sum(axis=0)[13] - 1.0) <= 1e-12
    grid = build_timegrid(0.02, 80, [0.005])
    sol = solve_forward(p, grid)
    g1, g2 = PointPotential("phi", (0.0, D / 2), 0.005), EnergyIntegral("W", 0.0, 0.02)
    mix = LinearCombination("mix", ((1.5, g1), (-0.25, g2)))
    qois = [g1, g2, mix]
    adj = solve_adjoints(sol, [q.rhs(sol) for q in qois])
    for a in adj:
        ok &= not np.any(a.w[-1]) and not np.any(a.w[:, p.fixed])
    res = compute_sensitivities(sol, adj, [Parameter("e1", 1, "eps"), Parameter("s2", 2, "sigma")], qois)
    expected = 1.5 * res.values[0] - 0.25 * res.values[1]
    ok &= np.allclose(res.values[2], expected, rtol=1e-10, atol=0)
    return bool(ok)


def test_criterion_4_property_suite(report):
    rng = np.random.default_rng(2024)
    results = {"assembly": _property_assembly(rng), "materials": _property_materials(rng),
               "qoi/adjoint/sensitivity": _property_qoi_adjoint_sensitivity(rng)}
    ok = all(results.values())
    report(4, ok, ", ".join(f"{k} {'ok' if v else 'failed'}" for k, v in results.items())
           + " (full property tests live in the per-module test files)")
    assert ok


# 5 ---------------------------------------------------------------------------

def test_criterion_5_forward_fidelity(report):
    p = _layered()
    grid = build_timegrid(0.02, 1000)
    sol = solve_forward(p, grid)
    trace = sol.potential_at((0.0, D))
    exact = TwoLayerStack(10.0, 20.0, 40.0, 60.0, D, Sinusoid(1.0, 50.0)).interface_potential(grid.t)
    err_trace = np.abs(trace - exact).max() / np.abs(exact).max()
    u = solve_dc_steady_state(_layered(DC(1.0)))
    mesh = p.mesh
    mid = np.flatnonzero(np.isclose(mesh.nodes[:, 1], D))
    err_dc = np.abs(u[mid] - 1 / 3).max() * 3
    ok = err_trace < 1e-3 and err_dc <= 1e-10
    report(5, ok, f"interface trace rel.err={err_trace:.2e}, DC divider rel.err={err_dc:.1e}")
    assert ok


# 6 ---------------------------------------------------------------------------

def test_criterion_6_determinism(report, tmp_path):
    cfg = tmp_path / "layered.yaml"
    cfg.write_text(yaml.safe_dump(scenario_to_config(scenario_layered_resistor(n_main=200)),
                                  sort_keys=False))
    for out in ("a", "b"):
        assert cli_main(["run", str(cfg), "--out", str(tmp_path / out), "--threads", "1"]) == 0
    files = sorted(f.name for f in (tmp_path / "a").glob("*.csv"))
    same = [(tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes() for f in files]
    ok = len(files) >= 3 and all(same)
    report(6, ok, f"{sum(same)}/{len(files)} CSV files byte-identical")
    assert ok


if __name__ == "__main__":
    sys.exit(pytest.main([str(Path(__file__)), "-q", "-p", "no:cacheprovider"]))
