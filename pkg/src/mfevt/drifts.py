"""Named rank-based drift functions.

The rank model's drift B(r) is selected from a small registry of polynomial
shapes rather than arbitrary user code.  Polynomials carry exact calculus
helpers (derivative, antiderivative) so downstream integrals of B need no
numerical quadrature.
"""
from __future__ import annotations

import re
from dataclasses import dataclass

import numpy as np

from .errors import ParameterError


@dataclass(frozen=True)
class PolynomialDrift:
    """Polynomial r -> B(r) on [0, 1], coefficients in ascending powers."""

    coeffs: tuple[float, ...]
    label: str = ""

    def __post_init__(self):
        if len(self.coeffs) == 0:
            raise ParameterError("polynomial drift needs at least one coefficient")
        if not all(np.isfinite(c) for c in self.coeffs):
            raise ParameterError("polynomial drift coefficients must be finite")

    def __call__(self, r):
        return np.polynomial.polynomial.polyval(r, self.coeffs)

    def derivative(self, r):
        dcoeffs = tuple(k * c for k, c in enumerate(self.coeffs))[1:] or (0.0,)
        return np.polynomial.polynomial.polyval(r, dcoeffs)

    def antiderivative(self, u):
        """Integral of B over [0, u], exact."""
        acoeffs = (0.0,) + tuple(c / (k + 1) for k, c in enumerate(self.coeffs))
        return np.polynomial.polynomial.polyval(u, acoeffs)

    @property
    def lipschitz_bound(self) -> float:
        # max |B'| on [0,1] is at most sum_k k*|c_k|
        return float(sum(k * abs(c) for k, c in enumerate(self.coeffs)))

    @property
    def sup_bound(self) -> float:
        # max |B| on [0,1] is at most sum |c_k|
        return float(sum(abs(c) for c in self.coeffs))


_AFFINE_RE = re.compile(r"^affine\(\s*([^,()]+)\s*,\s*([^,()]+)\s*\)$")
_POLY_RE = re.compile(r"^poly\(\s*([^()]+)\s*\)$")


def drift_from_name(name: str) -> PolynomialDrift:
    """Resolve a registry name to a drift.

    Supported: "linear" (1 - 2r), "affine(c0,c1)", "poly(c0,c1,...)".
    """
    name = name.strip()
    if name == "linear":
        return PolynomialDrift((1.0, -2.0), label="linear")
    m = _AFFINE_RE.match(name)
    if m:
        try:
            c0, c1 = float(m.group(1)), float(m.group(2))
        except ValueError as exc:
            raise ParameterError(f"bad affine drift coefficients in {name!r}") from exc
        return PolynomialDrift((c0, c1), label=name)
    m = _POLY_RE.match(name)
    if m:
        try:
            coeffs = tuple(float(tok) for tok in m.group(1).split(","))
        except ValueError as exc:
            raise ParameterError(f"bad poly drift coefficients in {name!r}") from exc
        return PolynomialDrift(coeffs, label=name)
    raise ParameterError(f"unknown drift name {name!r}; use linear, affine(c0,c1) or poly(...)")
