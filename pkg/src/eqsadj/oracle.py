"""Reference sensitivities that do not use the adjoint machinery.

* ``fd_sensitivities`` / ``central_difference``: central differences over full
  forward solves, repeated at h/2 for a Richardson estimate and a spread.
* ``TwoLayerStack`` / ``lumped_two_layer``: the series two-layer resistor
  solved in closed form. Current continuity across the interface gives

      (eps1 + eps2) dphi_m/dt + (sigma1 + sigma2) phi_m = sigma1 U + eps1 dU/dt

  for the interface potential. Parameter derivatives are taken by complex
  step through the closed form, time integrals by composite Gauss-Legendre
  quadrature; both are accurate to rounding.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable, Sequence

import numpy as np

from .forward import DC, Sinusoid

P_FLOOR = 1e-12
SPREAD_LIMIT = 0.01


@dataclass
class OracleReport:
    parameter: str
    qoi: str
    p0: float
    h: float
    fd: float
    fd_half: float
    richardson: float
    spread: float

    @property
    def value(self) -> float:
        return self.richardson

    @property
    def reliable(self) -> bool:
        return self.spread <= SPREAD_LIMIT


def _report(p0, h, values, parameter, qoi):
    gp, gm, gp2, gm2 = values
    d1 = (gp - gm) / (2 * h)
    d2 = (gp2 - gm2) / h
    rich = (4 * d2 - d1) / 3
    spread = abs(d1 - d2) / max(abs(d2), 1e-300)
    return OracleReport(parameter, qoi, p0, h, d1, d2, rich, spread)


def central_difference(fn: Callable[[float], float], p0: float, h_rel: float = 1e-3,
                       p_floor: float = P_FLOOR, parameter: str = "", qoi: str = "",
                       map_fn=map) -> OracleReport:
    """Central differences of ``fn`` at ``p0`` with steps h and h/2.

    The Richardson combination (4 D(h/2) - D(h)) / 3 cancels the h^2 term;
    ``spread`` is the relative gap between the two plain estimates.
    ``map_fn`` evaluates the four perturbed points (pass an executor's map
    to run them concurrently).
    """
    h = h_rel * max(abs(p0), p_floor)
    values = list(map_fn(fn, [p0 + h, p0 - h, p0 + h / 2, p0 - h / 2]))
    return _report(p0, h, values, parameter, qoi)


def fd_sensitivities(scenario, param: str, h_rel: float = 1e-3, n_main: int | None = None,
                     map_fn=map) -> dict[str, OracleReport]:
    """Finite-difference dG/dp for every QoI of a scenario from four forward solves."""
    p0 = scenario.parameter_value(param)
    h = h_rel * max(abs(p0), P_FLOOR)

    def G(p):
        try:
            return scenario.qoi_values({param: p}, n_main=n_main)
        except Exception as exc:
            raise RuntimeError(f"forward solve failed at {param} = {p!r}: {exc}") from exc

    values = list(map_fn(G, [p0 + h, p0 - h, p0 + h / 2, p0 - h / 2]))
    return {q: _report(p0, h, [v[q] for v in values], param, q) for q in values[0]}


def fd_sensitivity(scenario, param: str, qoi: str, h_rel: float = 1e-3,
                   n_main: int | None = None, map_fn=map) -> OracleReport:
    """Finite-difference dG/dp for one QoI; each evaluation is a full forward solve."""
    return fd_sensitivities(scenario, param, h_rel, n_main, map_fn)[qoi]


# --------------------------------------------------------------------------
# closed-form two-layer stack

_GL_X, _GL_W = np.polynomial.legendre.leggauss(12)
PARAMS = ("sigma1", "sigma2", "eps1", "eps2")


@dataclass(frozen=True)
class TwoLayerStack:
    """Upper layer 1 (driven electrode side) over layer 2 (grounded side).

    Both layers have thickness ``d``; ``width`` is the electrode width per
    unit depth. ``U`` is a :class:`Sinusoid` (starting at zero) or a
    :class:`DC` level applied from t = 0 with the interface initially at 0 V.
    """

    sigma1: complex
    sigma2: complex
    eps1: complex
    eps2: complex
    d: float
    U: Sinusoid | DC
    width: float = 1.0

    def interface_potential(self, t):
        t = np.asarray(t, dtype=float)
        S_eps, S_sig = self.eps1 + self.eps2, self.sigma1 + self.sigma2
        a = S_sig / S_eps
        if isinstance(self.U, DC):
            V = self.U.value
            return self.sigma1 * V / S_sig * (1 - np.exp(-a * t))
        amp, w = self.U.amplitude, self.U.omega
        b = self.sigma1 * amp / S_eps
        c = self.eps1 * amp * w / S_eps
        A = (a * b + w * c) / (a * a + w * w)
        B = (a * c - w * b) / (a * a + w * w)
        return A * np.sin(w * t) + B * np.cos(w * t) - B * np.exp(-a * t)

    def potential(self, depth: float, t):
        """Potential at ``depth`` below the driven electrode."""
        phi_m = self.interface_potential(t)
        if depth <= self.d:
            return self.U(t) - (self.U(t) - phi_m) * depth / self.d
        return phi_m * (2 * self.d - depth) / self.d

    def loss_rate(self, t, regions=(1, 2)):
        phi_m = self.interface_potential(t)
        U = self.U(np.asarray(t, dtype=float))
        out = 0.0
        if 1 in regions:
            out = out + self.sigma1 * (U - phi_m) ** 2
        if 2 in regions:
            out = out + self.sigma2 * phi_m ** 2
        return out * self.width / self.d

    def energy(self, t_a: float, t_b: float, regions=(1, 2), panels: int = 400):
        """Time integral of the Joule losses over [t_a, t_b]."""
        if t_b <= t_a:
            return 0.0
        edges = np.linspace(t_a, t_b, panels + 1)
        mid, half = 0.5 * (edges[1:] + edges[:-1]), 0.5 * np.diff(edges)
        tq = (mid[:, None] + half[:, None] * _GL_X[None, :]).ravel()
        wq = (half[:, None] * _GL_W[None, :]).ravel()
        return np.sum(wq * self.loss_rate(tq, regions))

    def derivative(self, param: str, fn: str, *args, **kwargs):
        """d(fn)/d(param) by complex step."""
        if param not in PARAMS:
            raise ValueError(f"unknown two-layer parameter {param!r}")
        p0 = float(np.real(getattr(self, param)))
        h = 1e-30 * max(abs(p0), 1.0)
        pert = replace(self, **{param: p0 + 1j * h})
        return np.imag(getattr(pert, fn)(*args, **kwargs)) / h


def lumped_two_layer(sigma1: float, sigma2: float, eps1: float, eps2: float, d: float, U,
                     t_eval: Sequence[float], width: float = 1.0,
                     window: tuple[float, float] | None = None) -> dict:
    """Interface potential, mid-layer potential and losses with derivatives.

    Returns arrays at ``t_eval`` for ``phi_m`` and ``phi_ref`` (the potential
    half way through layer 1) and their derivatives w.r.t. every layer
    parameter, plus the losses ``W_el`` over ``window`` (default [0, max t]).
    """
    stack = TwoLayerStack(sigma1, sigma2, eps1, eps2, d, U, width)
    t = np.asarray(t_eval, dtype=float)
    window = window or (0.0, float(t.max()))
    out = {
        "phi_m": np.real(stack.interface_potential(t)),
        "phi_ref": np.real(stack.potential(d / 2, t)),
        "W_el": float(np.real(stack.energy(*window))),
    }
    for p in PARAMS:
        out[f"dphi_m_d{p}"] = stack.derivative(p, "interface_potential", t)
        out[f"dphi_ref_d{p}"] = stack.derivative(p, "potential", d / 2, t)
        out[f"dW_el_d{p}"] = float(stack.derivative(p, "energy", *window))
    return out
