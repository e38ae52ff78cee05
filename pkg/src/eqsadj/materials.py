"""Conductivity and permittivity laws with field and parameter derivatives.

Two kinds of material are supported: constant (``LinearMaterial``) and the
field grading law

    sigma(E) = a1 * (1 + a4**((E - a2)/a2)) / (1 + a4**((E - a3)/a2))

(``FGMMaterial``). Permittivity is field independent in both, so the
differential permittivity is simply ``eps * I``.

All scalar laws are vectorized over numpy arrays of field magnitudes.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import ClassVar, Union

import numpy as np
from scipy.special import expit

E_FLOOR = 1e-12  # V/m, below this the tensor linearization uses sigma(0) * I


class MaterialError(ValueError):
    pass


@dataclass(frozen=True)
class LinearMaterial:
    sigma: float  # A/Vm
    eps: float  # As/Vm

    kind: ClassVar[str] = "linear"
    selectors: ClassVar[tuple[str, ...]] = ("sigma", "eps")

    def __post_init__(self):
        if not (self.sigma >= 0 and self.eps > 0):
            raise MaterialError(f"linear material needs sigma >= 0 and eps > 0, got {self}")

    @property
    def is_linear(self) -> bool:
        return True

    def conductivity(self, E):
        return np.full(np.shape(E), float(self.sigma))

    def conductivity_dE(self, E):
        return np.zeros(np.shape(E))

    def conductivity_dparam(self, E, selector: str):
        _check_selector(self, selector)
        return np.full(np.shape(E), 1.0 if selector == "sigma" else 0.0)

    def permittivity_dparam(self, selector: str) -> float:
        _check_selector(self, selector)
        return 1.0 if selector == "eps" else 0.0

    def get(self, selector: str) -> float:
        _check_selector(self, selector)
        return float(getattr(self, selector))

    def with_value(self, selector: str, value: float) -> "LinearMaterial":
        _check_selector(self, selector)
        return replace(self, **{selector: float(value)})


@dataclass(frozen=True)
class FGMMaterial:
    a1: float  # A/Vm, base conductivity
    a2: float  # V/m, switching field
    a3: float  # V/m, saturation field
    a4: float  # dimensionless steepness
    eps: float  # As/Vm

    kind: ClassVar[str] = "fgm"
    selectors: ClassVar[tuple[str, ...]] = ("a1", "a2", "a3", "a4", "eps")

    def __post_init__(self):
        if not (self.a1 > 0 and self.a2 > 0 and self.a3 > self.a2 and self.a4 > 1
                and self.eps > 0):
            raise MaterialError(f"invalid field grading parameters {self}")

    @property
    def is_linear(self) -> bool:
        return False

    @property
    def _offset(self) -> float:
        return (self.a3 - self.a2) / self.a2 * np.log(self.a4)

    def _exponents(self, E):
        """(x1, x2) with a4**(...) = exp(x); x1 = x2 + c for the fixed offset c."""
        x2 = (np.asarray(E, dtype=float) - self.a3) / self.a2 * np.log(self.a4)
        return x2 + self._offset, x2

    def conductivity(self, E):
        # log(sigma/a1) = softplus(x + c) - softplus(x). Only x depends on the
        # field, so nothing overflows and both plateaus are exactly flat.
        _, x = self._exponents(E)
        c = self._offset
        xn, xp = np.minimum(x, 0.0), np.maximum(x, 0.0)
        low = np.logaddexp(0.0, xn + c) - np.log1p(np.exp(xn))
        high = c + np.log1p(np.exp(-xp - c)) - np.log1p(np.exp(-xp))
        return self.a1 * np.exp(np.where(x < 0, low, high))

    def conductivity_dE(self, E):
        x1, x2 = self._exponents(E)
        return self.conductivity(E) * _expit_diff(x1, x2) * np.log(self.a4) / self.a2

    def conductivity_dparam(self, E, selector: str):
        _check_selector(self, selector)
        E = np.asarray(E, dtype=float)
        if selector == "eps":
            return np.zeros(E.shape)
        sigma = self.conductivity(E)
        if selector == "a1":
            return sigma / self.a1
        x1, x2 = self._exponents(E)
        s1, s2 = expit(x1), expit(x2)
        L, a2, a4 = np.log(self.a4), self.a2, self.a4
        if selector == "a2":
            dlog = -s1 * E * L / a2**2 + s2 * (E - self.a3) * L / a2**2
        elif selector == "a3":
            dlog = s2 * L / a2
        else:  # a4
            dlog = (s1 * (E - a2) - s2 * (E - self.a3)) / (a2 * a4)
        return sigma * dlog

    def permittivity_dparam(self, selector: str) -> float:
        _check_selector(self, selector)
        return 1.0 if selector == "eps" else 0.0

    def get(self, selector: str) -> float:
        _check_selector(self, selector)
        return float(getattr(self, selector))

    def with_value(self, selector: str, value: float) -> "FGMMaterial":
        _check_selector(self, selector)
        return replace(self, **{selector: float(value)})


MaterialModel = Union[LinearMaterial, FGMMaterial]


def _check_selector(model, selector):
    if selector not in model.selectors:
        raise MaterialError(
            f"parameter {selector!r} does not apply to a {model.kind} material "
            f"(choose from {', '.join(model.selectors)})")


def _expit_diff(x1, x2):
    """expit(x1) - expit(x2) for x1 >= x2 without cancellation at large x."""
    x1, x2 = np.broadcast_arrays(np.asarray(x1, float), np.asarray(x2, float))
    return np.where(x2 > 0, expit(-x2) - expit(-x1), expit(x1) - expit(x2))


def sigma_fgm(E, params: FGMMaterial):
    return params.conductivity(E)


def sigma_fgm_dE(E, params: FGMMaterial):
    return params.conductivity_dE(E)


def sigma_dparam(E, params: MaterialModel, selector: str):
    return params.conductivity_dparam(E, selector)


def differential_conductivity(E_vec, model: MaterialModel) -> np.ndarray:
    """dJ/dE for J = sigma(|E|) E.

    ``E_vec`` has shape (..., 2); the result has shape (..., 2, 2). Below
    ``E_FLOOR`` the isotropic limit sigma(0) * I is returned.
    """
    E_vec = np.asarray(E_vec, dtype=float)
    mag = np.hypot(E_vec[..., 0], E_vec[..., 1])
    sigma = model.conductivity(mag)
    out = sigma[..., None, None] * np.eye(2)
    if model.is_linear:
        return out
    safe = np.where(mag < E_FLOOR, 1.0, mag)
    slope = np.where(mag < E_FLOOR, 0.0, model.conductivity_dE(mag) / safe)
    outer = E_vec[..., :, None] * E_vec[..., None, :]
    return out + slope[..., None, None] * outer


def material_from_dict(d: dict) -> MaterialModel:
    kind = d.get("kind", "linear")
    if kind == "linear":
        return LinearMaterial(float(d["sigma"]), float(d["eps"]))
    if kind == "fgm":
        return FGMMaterial(*(float(d[k]) for k in ("a1", "a2", "a3", "a4", "eps")))
    raise MaterialError(f"unknown material kind {kind!r}")


def material_to_dict(m: MaterialModel) -> dict:
    return {"kind": m.kind, **{s: float(getattr(m, s)) for s in m.selectors}}
