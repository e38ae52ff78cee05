import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.integrate import quad, solve_ivp

from eqsadj.forward import DC, Sinusoid
from eqsadj.oracle import (OracleReport, TwoLayerStack, central_difference, fd_sensitivities,
                           lumped_two_layer)
from eqsadj.scenarios import scenario_fgm_joint_simplified, scenario_layered_resistor

D = 0.01
U = Sinusoid(1.0, 50.0)


def ode_interface(s1, s2, e1, e2, U, t_eval):
    def rhs(t, y):
        dU = U.amplitude * U.omega * np.cos(U.omega * t) if isinstance(U, Sinusoid) else 0.0
        return [(s1 * U(t) + e1 * dU - (s1 + s2) * y[0]) / (e1 + e2)]
    sol = solve_ivp(rhs, (0, t_eval[-1]), [0.0], method="Radau", t_eval=t_eval,
                    rtol=1e-12, atol=1e-14)
    return sol.y[0]


@pytest.mark.parametrize("U_", [U, DC(2.0)])
def test_closed_form_matches_ode_integration(U_):
    stack = TwoLayerStack(10.0, 20.0, 40.0, 60.0, D, U_)
    t = np.linspace(0, 0.02, 41)[1:]
    assert np.allclose(stack.interface_potential(t), ode_interface(10, 20, 40, 60, U_, t),
                       rtol=1e-8, atol=1e-10)


def test_energy_matches_adaptive_quadrature():
    stack = TwoLayerStack(10.0, 20.0, 40.0, 60.0, D, U, width=D)
    ref, _ = quad(lambda t: stack.loss_rate(t), 0.0, 0.02, epsabs=0, epsrel=1e-13, limit=200)
    assert stack.energy(0.0, 0.02) == pytest.approx(ref, rel=1e-11)
    assert stack.energy(0.0, 0.02, (1,)) + stack.energy(0.0, 0.02, (2,)) == pytest.approx(ref, rel=1e-12)
    assert stack.energy(0.01, 0.01) == 0.0


@given(s=st.floats(0.1, 100), e=st.floats(0.1, 100))
def test_symmetric_layers_split_voltage_evenly(s, e):
    stack = TwoLayerStack(s, s, e, e, D, U)
    t = np.linspace(0, 0.02, 9)
    assert np.allclose(stack.interface_potential(t), 0.5 * U(t), atol=1e-12)


def test_dc_limit_is_resistive_divider():
    stack = TwoLayerStack(10.0, 20.0, 40.0, 60.0, D, DC(1.0))
    assert stack.interface_potential(1e3) == pytest.approx(1 / 3, rel=1e-12)
    assert stack.potential(D / 2, 1e3) == pytest.approx(2 / 3, rel=1e-12)
    assert stack.potential(2 * D, 1e3) == 0.0


def test_energy_quadrature_self_converged():
    stack = TwoLayerStack(10.0, 20.0, 40.0, 60.0, D, U, width=D)
    for p in ("sigma1", "eps1"):
        a = stack.derivative(p, "energy", 0.0, 0.02, panels=400)
        b = stack.derivative(p, "energy", 0.0, 0.02, panels=800)
        assert abs(a - b) <= 1e-9 * abs(b)


def test_complex_step_matches_real_central_difference():
    stack = TwoLayerStack(10.0, 20.0, 40.0, 60.0, D, U, width=D)
    for p in ("sigma1", "sigma2", "eps1", "eps2"):
        p0 = getattr(stack, p)
        h = 1e-5 * p0
        plus = TwoLayerStack(**{**stack.__dict__, p: p0 + h}).potential(D / 2, 0.005)
        minus = TwoLayerStack(**{**stack.__dict__, p: p0 - h}).potential(D / 2, 0.005)
        cs = stack.derivative(p, "potential", D / 2, 0.005)
        assert cs == pytest.approx((plus - minus) / (2 * h), rel=1e-6)
    with pytest.raises(ValueError):
        stack.derivative("d", "energy", 0, 1)


def test_lumped_two_layer_bundle():
    out = lumped_two_layer(10.0, 20.0, 40.0, 60.0, D, U, [0.005, 0.01], width=D)
    stack = TwoLayerStack(10.0, 20.0, 40.0, 60.0, D, U, D)
    assert out["phi_ref"][0] == pytest.approx(stack.potential(D / 2, 0.005))
    assert out["dW_el_deps1"] == pytest.approx(stack.derivative("eps1", "energy", 0.0, 0.01))
    assert set(k for k in out if k.startswith("dphi_m_d")) == {
        "dphi_m_dsigma1", "dphi_m_dsigma2", "dphi_m_deps1", "dphi_m_deps2"}


# -- finite differences -------------------------------------------------------

def test_central_difference_exact_for_quadratic():
    r = central_difference(lambda p: p * p, 3.0, h_rel=1e-2)
    assert isinstance(r, OracleReport)
    assert r.value == pytest.approx(6.0, rel=1e-10)
    assert r.reliable


def test_central_difference_richardson_cancels_h2():
    r = central_difference(np.exp, 1.0, h_rel=0.05)
    assert abs(r.fd - np.e) > 1e-4
    assert r.value == pytest.approx(np.e, rel=1e-7)


def test_p_floor_for_zero_parameter():
    r = central_difference(lambda p: 5 * p, 0.0)
    assert r.h > 0 and r.value == pytest.approx(5.0)


def test_fd_error_scales_with_h_squared():
    sc = scenario_layered_resistor(n_main=100)
    res, _ = sc.sensitivities()
    errs = []
    for h_rel in (0.1, 0.05):
        r = fd_sensitivities(sc, "eps1", h_rel)
        errs.append({q: abs(r[q].fd - res.get(q, "eps1")) for q in r})
    for q in errs[0]:
        assert 2.5 <= errs[0][q] / errs[1][q] <= 6.0


def test_large_step_on_graded_material_is_flagged():
    sc = scenario_fgm_joint_simplified(n_main=50)
    rough = fd_sensitivities(sc, "a2", h_rel=0.3)
    fine = fd_sensitivities(sc, "a2", h_rel=1e-3)
    assert not any(r.reliable for r in rough.values())
    assert all(r.reliable for r in fine.values())


def test_fd_failure_names_the_parameter():
    sc = scenario_layered_resistor(n_main=10)
    with pytest.raises(RuntimeError, match="sigma1"):
        # a step of 2 * sigma1 drives the conductivity negative
        fd_sensitivities(sc, "sigma1", h_rel=2.0)
