"""Rhombi-slit coefficient model.

All evaluation functions accept scalars or numpy arrays.
"""
from __future__ import annotations

import enum
import math
import warnings
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

POLE_TOL = 1e-14
TYPE_TOL = 1e-12
N_POLE_SAMPLES = 10_000
N_BOUND_SAMPLES = 100_000
SAFETY = 1.01


class PoleError(ValueError):
    pass


class CutoffWarning(UserWarning):
    pass


class DiagTensor2(NamedTuple):
    d11: object
    d22: object


class PdeType(enum.Enum):
    ELLIPTIC = "Elliptic"
    DEGENERATE = "Degenerate"
    HYPERBOLIC = "Hyperbolic"


def rotation(gamma):
    """Rotation matrix R(gamma); for array input the result has shape gamma.shape + (2, 2)."""
    c, s = np.cos(gamma), np.sin(gamma)
    return np.stack([np.stack([c, -s], axis=-1), np.stack([s, c], axis=-1)], axis=-2)


def _check_pole(den, name):
    small = np.abs(den) < POLE_TOL
    if np.any(small):
        raise PoleError(f"{name} vanishes: Gamma has a pole here")


@dataclass(frozen=True)
class MaterialModel:
    """Geometric parameters alpha <= 0, beta >= 0 and the cut-off interval [xi_minus, xi_plus].

    Construction validates the model and fills ``M`` (bound on the cut-off
    coefficients) and ``K`` (their Lipschitz constant).
    """

    alpha: float
    beta: float
    xi_minus: float = -math.pi / 4
    xi_plus: float = math.pi / 3
    M: float = field(init=False)
    K: float = field(init=False)

    def __post_init__(self):
        M, K = validate(self)
        object.__setattr__(self, "M", M)
        object.__setattr__(self, "K", K)

    # raw model
    def mu1(self, xi):
        return np.cos(xi) - self.alpha * np.sin(xi)

    def mu2(self, xi):
        return np.cos(xi) + self.beta * np.sin(xi)

    def dmu1(self, xi):
        return -np.sin(xi) - self.alpha * np.cos(xi)

    def dmu2(self, xi):
        return -np.sin(xi) + self.beta * np.cos(xi)

    def gamma12(self, xi):
        den = self.mu2(xi)
        _check_pole(den, "mu2")
        return -self.dmu1(xi) / den

    def gamma21(self, xi):
        den = self.mu1(xi)
        _check_pole(den, "mu1")
        return self.dmu2(xi) / den

    def _dgamma(self, xi):
        # mu'' = -mu, so both derivatives share the numerator mu1 mu2 + mu1' mu2'
        num = self.mu1(xi) * self.mu2(xi) + self.dmu1(xi) * self.dmu2(xi)
        return -num / self.mu1(xi) ** 2, num / self.mu2(xi) ** 2  # d gamma21, d gamma12

    # cut-off model
    def clamp(self, xi):
        return np.clip(xi, self.xi_minus, self.xi_plus)

    def b_hat(self, xi) -> DiagTensor2:
        x = self.clamp(xi)
        return DiagTensor2(-self.gamma21(x), self.gamma12(x))

    def db_hat_dxi(self, xi) -> DiagTensor2:
        xi = np.asarray(xi, dtype=float)
        inside = (xi >= self.xi_minus) & (xi <= self.xi_plus)
        if self.xi_minus == self.xi_plus:
            inside = np.zeros_like(inside)
        dg21, dg12 = self._dgamma(self.clamp(xi))
        d11 = np.where(inside, -dg21, 0.0)
        d22 = np.where(inside, dg12, 0.0)
        if d11.ndim == 0:
            return DiagTensor2(float(d11), float(d22))
        return DiagTensor2(d11, d22)

    def a_eff(self, xi, warn: bool = True) -> DiagTensor2:
        xi_arr = np.asarray(xi)
        if warn and np.any((xi_arr < self.xi_minus) | (xi_arr > self.xi_plus)):
            warnings.warn("xi leaves the cut-off interval; the shape tensor uses the raw value",
                          CutoffWarning, stacklevel=2)
        return DiagTensor2(self.mu1(xi), self.mu2(xi))

    def det_b_hat(self, xi):
        d = self.b_hat(xi)
        return d.d11 * d.d22

    def classify_type(self, xi) -> PdeType:
        det = float(self.det_b_hat(xi))
        if det > TYPE_TOL:
            return PdeType.ELLIPTIC
        if det < -TYPE_TOL:
            return PdeType.HYPERBOLIC
        return PdeType.DEGENERATE

    def type_census(self, xi) -> dict:
        """Count of sample points per PdeType."""
        det = np.asarray(self.det_b_hat(np.asarray(xi, dtype=float)))
        return {
            PdeType.ELLIPTIC: int(np.count_nonzero(det > TYPE_TOL)),
            PdeType.DEGENERATE: int(np.count_nonzero(np.abs(det) <= TYPE_TOL)),
            PdeType.HYPERBOLIC: int(np.count_nonzero(det < -TYPE_TOL)),
        }


def _sinusoid_roots(a, b, lo, hi):
    """Roots of a*cos(x) + b*sin(x) in [lo, hi]."""
    base = math.atan2(-a, b) if b != 0 else math.pi / 2  # tan x = -a/b
    roots = []
    k0 = math.floor((lo - base) / math.pi) - 1
    for k in range(k0, k0 + 4):
        r = base + k * math.pi
        if lo - 1e-12 <= r <= hi + 1e-12:
            roots.append(r)
    return roots


def validate(model: MaterialModel) -> tuple[float, float]:
    """Check the cut-off interval is pole free and return (M, K)."""
    a, b, lo, hi = model.alpha, model.beta, model.xi_minus, model.xi_plus
    if not all(math.isfinite(v) for v in (a, b, lo, hi)):
        raise ValueError("material parameters must be finite")
    if a > 0:
        raise ValueError(f"alpha must be <= 0, got {a}")
    if b < 0:
        raise ValueError(f"beta must be >= 0, got {b}")
    if not (-math.pi / 2 <= lo <= 0.0):
        raise ValueError(f"xi_minus must lie in [-pi/2, 0], got {lo}")
    if not (0.0 <= hi <= math.pi / 2):
        raise ValueError(f"xi_plus must lie in [0, pi/2], got {hi}")

    xs = np.linspace(lo, hi, N_POLE_SAMPLES)
    # each mu is a shifted sinusoid with at most one zero per period: exact roots plus a sign scan
    bad = []
    for name, fun, (ca, cb) in (("mu1", model.mu1, (1.0, -a)), ("mu2", model.mu2, (1.0, b))):
        roots = _sinusoid_roots(ca, cb, lo, hi)
        vals = fun(xs)
        sign_change = np.flatnonzero(np.sign(vals[:-1]) * np.sign(vals[1:]) <= 0)
        near = np.abs(vals) < POLE_TOL
        if roots or sign_change.size or near.any():
            where = roots[0] if roots else float(xs[sign_change[0]] if sign_change.size else xs[near][0])
            bad.append(f"{name} vanishes near xi = {where:.4f}")
    if bad:
        raise PoleError("cut-off interval contains a pole of Gamma: " + "; ".join(bad))

    xs = np.linspace(lo, hi, N_BOUND_SAMPLES)
    g21, g12 = model.gamma21(xs), model.gamma12(xs)
    M = SAFETY * float(max(np.abs(g21).max(), np.abs(g12).max()))
    dg21, dg12 = model._dgamma(xs)
    K = SAFETY * float(max(np.abs(dg21).max(), np.abs(dg12).max()))
    return M, K


PRESETS = {
    "auxetic": dict(alpha=-0.9, beta=0.9),
    "non_auxetic": dict(alpha=-0.9, beta=0.0),
    "mixed": dict(alpha=-1.6, beta=0.4),
}
