import mpmath
import numpy as np
import pytest
from hypothesis import assume, given, strategies as st

from eqsadj.materials import (E_FLOOR, FGMMaterial, LinearMaterial, MaterialError,
                              differential_conductivity, material_from_dict, material_to_dict,
                              sigma_dparam, sigma_fgm, sigma_fgm_dE)

GRADED = FGMMaterial(a1=1e-10, a2=0.7e6, a3=2.4e6, a4=1864.0, eps=1e-11)


def naive_sigma(E, m):
    """Direct evaluation of the law; fine for moderate fields."""
    return m.a1 * (1 + m.a4 ** ((E - m.a2) / m.a2)) / (1 + m.a4 ** ((E - m.a3) / m.a2))


def test_sigma_at_zero_field():
    assert sigma_fgm(0.0, GRADED) == pytest.approx(naive_sigma(0.0, GRADED), rel=1e-14)
    assert sigma_fgm(0.0, GRADED) == pytest.approx(1.00054e-10, rel=1e-5)


def test_sigma_high_field_limit():
    limit = GRADED.a1 * GRADED.a4 ** ((GRADED.a3 - GRADED.a2) / GRADED.a2)
    assert limit == pytest.approx(8.8e-3, rel=0.01)
    assert sigma_fgm(1e9, GRADED) == pytest.approx(limit, rel=1e-12)
    # far beyond the range where a4**x overflows
    assert np.isfinite(sigma_fgm(1e12, GRADED))
    assert sigma_fgm(1e12, GRADED) == pytest.approx(limit, rel=1e-12)


def test_nearly_flat_law():
    m = FGMMaterial(1e-10, 0.7e6, 2.4e6, 1 + 1e-12, 1e-11)
    E = np.logspace(0, 9, 50)
    assert np.allclose(sigma_fgm(E, m), m.a1, rtol=1e-9)


def test_matches_naive_formula():
    E = np.linspace(0, 8e6, 101)
    assert np.allclose(sigma_fgm(E, GRADED), naive_sigma(E, GRADED), rtol=1e-12)


def test_dE_finite_difference_at_zero():
    h = 1.0
    fd = (naive_sigma(h, GRADED) - naive_sigma(-h, GRADED)) / (2 * h)
    assert sigma_fgm_dE(0.0, GRADED) == pytest.approx(fd, rel=1e-6)


def test_dE_plateau_and_monotone():
    E = np.logspace(3, 8, 400)
    slope = sigma_fgm_dE(E, GRADED)
    assert np.all(slope >= 0)
    assert np.all(np.diff(sigma_fgm(E, GRADED)) >= 0)
    assert sigma_fgm_dE(1e7, GRADED) < 1e-15 * slope.max()


def test_linear_material():
    m = LinearMaterial(3.0, 2.0)
    E = np.array([0.0, 1.0, 1e9])
    assert np.all(m.conductivity(E) == 3.0)
    assert np.all(m.conductivity_dE(E) == 0.0)
    assert np.all(sigma_dparam(E, m, "sigma") == 1.0)
    assert np.all(sigma_dparam(E, m, "eps") == 0.0)
    assert m.permittivity_dparam("eps") == 1.0


@pytest.mark.parametrize("kwargs", [dict(sigma=-1.0, eps=1.0), dict(sigma=1.0, eps=0.0)])
def test_linear_validation(kwargs):
    with pytest.raises(MaterialError):
        LinearMaterial(**kwargs)


@pytest.mark.parametrize("a", [(0, 1, 2, 3), (1, 0, 2, 3), (1, 2, 2, 3), (1, 1, 2, 1.0)])
def test_fgm_validation(a):
    with pytest.raises(MaterialError):
        FGMMaterial(*a, eps=1.0)


def test_selector_errors():
    with pytest.raises(MaterialError, match="does not apply"):
        LinearMaterial(1.0, 1.0).conductivity_dparam(1.0, "a2")
    with pytest.raises(MaterialError):
        GRADED.get("sigma")


def test_dparam_a1_is_prefactor():
    E = np.linspace(0, 5e6, 21)
    assert np.allclose(sigma_dparam(E, GRADED, "a1"), sigma_fgm(E, GRADED) / GRADED.a1, rtol=1e-14)


def test_dparam_a2_switching_point():
    E, h = 1e6, 1.0
    fd = (sigma_fgm(E, GRADED.with_value("a2", GRADED.a2 + h))
          - sigma_fgm(E, GRADED.with_value("a2", GRADED.a2 - h))) / (2 * h)
    assert sigma_dparam(E, GRADED, "a2") == pytest.approx(fd, rel=1e-6)


fgm_params = st.builds(
    lambda a1, a2, gap, a4, eps: FGMMaterial(a1, a2, a2 * (1 + gap), a4, eps),
    st.floats(1e-12, 1e-6), st.floats(1e5, 5e6), st.floats(0.2, 4.0),
    st.floats(2.0, 5000.0), st.floats(1e-12, 1e-9))


def mp_sigma(E, a1, a2, a3, a4):
    return a1 * (1 + a4 ** ((E - a2) / a2)) / (1 + a4 ** ((E - a3) / a2))


def mp_central(fn, args, k, rel=mpmath.mpf("1e-30")):
    """Central difference in argument ``k`` at 120 digits: rounding-free FD oracle."""
    with mpmath.workdps(120):
        args = [mpmath.mpf(a) for a in args]
        h = rel * max(abs(args[k]), 1)
        up, dn = list(args), list(args)
        up[k] += h
        dn[k] -= h
        return float((fn(*up) - fn(*dn)) / (2 * h))


@given(m=fgm_params, sel=st.sampled_from(["a1", "a2", "a3", "a4"]), x=st.floats(0.0, 5.0))
def test_dparam_matches_fd(m, sel, x):
    E = x * m.a3
    k = ["a1", "a2", "a3", "a4"].index(sel) + 1
    fd = mp_central(mp_sigma, [E, m.a1, m.a2, m.a3, m.a4], k)
    an = float(sigma_dparam(E, m, sel))
    # floor for parameters where the derivative crosses zero
    floor = 1e-10 * float(sigma_fgm(E, m)) / m.get(sel)
    assert abs(an - fd) <= 1e-5 * max(abs(fd), floor)


@given(m=fgm_params, x=st.floats(0.0, 5.0))
def test_dE_matches_fd(m, x):
    E = x * m.a3
    fd = mp_central(mp_sigma, [E, m.a1, m.a2, m.a3, m.a4], 0)
    an = float(sigma_fgm_dE(E, m))
    assert abs(an - fd) <= 1e-5 * max(abs(fd), 1e-300)
    assert an >= 0


def test_tensor_linear_and_zero_field():
    m = LinearMaterial(2.5, 1.0)
    assert np.array_equal(differential_conductivity(np.array([3.0, -4.0]), m), 2.5 * np.eye(2))
    T = differential_conductivity(np.zeros(2), GRADED)
    assert np.array_equal(T, sigma_fgm(0.0, GRADED) * np.eye(2))
    T = differential_conductivity(np.array([0.5 * E_FLOOR, 0.0]), GRADED)
    assert np.array_equal(T, sigma_fgm(0.0, GRADED) * np.eye(2))


def test_tensor_against_vector_fd():
    E0 = np.array([1e6, 0.0])

    def J(E):
        return sigma_fgm(np.hypot(*E), GRADED) * E

    h = 1.0
    fd = np.column_stack([(J(E0 + h * e) - J(E0 - h * e)) / (2 * h) for e in np.eye(2)])
    T = differential_conductivity(E0, GRADED)
    assert np.allclose(T, fd, rtol=1e-6, atol=1e-9 * np.abs(fd).max())
    # (1,1) is d(sigma E)/dE along the field, (2,2) the secant conductivity
    assert T[0, 0] == pytest.approx(sigma_fgm(1e6, GRADED) + 1e6 * sigma_fgm_dE(1e6, GRADED), rel=1e-12)
    assert T[1, 1] == pytest.approx(sigma_fgm(1e6, GRADED), rel=1e-12)


vec = st.tuples(st.floats(-1e7, 1e7), st.floats(-1e7, 1e7))


@given(E=vec, theta=st.floats(0, 2 * np.pi))
def test_tensor_symmetry_rotation_psd(E, theta):
    E = np.array(E)
    T = differential_conductivity(E, GRADED)
    assert np.array_equal(T, T.T)
    assert np.all(np.linalg.eigvalsh(T) >= -1e-12 * np.abs(T).max())
    c, s = np.cos(theta), np.sin(theta)
    R = np.array([[c, -s], [s, c]])
    T_rot = differential_conductivity(R @ E, GRADED)
    assert np.allclose(T_rot, R @ T @ R.T, rtol=1e-12, atol=1e-12 * np.abs(T).max())


def test_tensor_vectorized_shape():
    E = np.random.default_rng(0).normal(scale=1e6, size=(4, 5, 2))
    T = differential_conductivity(E, GRADED)
    assert T.shape == (4, 5, 2, 2)
    assert np.allclose(T[2, 3], differential_conductivity(E[2, 3], GRADED))


def test_dict_roundtrip():
    for m in (GRADED, LinearMaterial(10.0, 40.0)):
        assert material_from_dict(material_to_dict(m)) == m
    with pytest.raises(MaterialError):
        material_from_dict({"kind": "magic"})
