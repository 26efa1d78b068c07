"""Scalar weight functions and radial basis functions.

All functions take a normalized distance ``s = |Xp - Xc| / r_c`` (scalar or
array) and are vectorized over it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, NumericalError

WEIGHT_FAMILIES = (
    "spline3",
    "spline4",
    "linear",
    "powered_spline3",
    "powered_spline4",
    "exponential",
    "imls",
)
RBF_FAMILIES = ("mq", "gaussian", "tps", "log", "spline3", "spline4")


@dataclass(frozen=True)
class WeightSpec:
    """Weight function selection.

    ``gamma`` is the exponent of the powered splines, ``alpha``/``epsilon``
    parametrize the exponential weight and ``n``/``eps``/``cap`` the
    near-singular interpolating MLS weight.
    """

    family: str = "powered_spline4"
    gamma: float = 0.75
    alpha: float = 1.0
    epsilon: float = 0.30
    n: float = 4.0
    eps: float = 1e-15
    cap: float = 1e12

    def __post_init__(self):
        if self.family not in WEIGHT_FAMILIES:
            raise ConfigError(
                f"unknown weight family {self.family!r}; expected one of {WEIGHT_FAMILIES}"
            )
        for name in ("gamma", "alpha", "epsilon", "n", "eps", "cap"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"weight parameter {name} must be positive")


@dataclass(frozen=True)
class RbfSpec:
    """Radial basis function selection (MQ uses ``c`` and ``q``, Gaussian ``c``,
    TPS and logarithmic ``eta``)."""

    family: str = "gaussian"
    c: float = 1.0
    q: float = 0.5
    eta: float = 3.0

    def __post_init__(self):
        if self.family not in RBF_FAMILIES:
            raise ConfigError(
                f"unknown RBF family {self.family!r}; expected one of {RBF_FAMILIES}"
            )
        for name in ("c", "q", "eta"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"RBF parameter {name} must be positive")

    @property
    def smooth_at_origin(self) -> bool:
        """True when phi'(0) = 0, so the Hessian of phi(|x|) exists at the origin."""
        return self.family in ("mq", "gaussian", "spline3", "spline4")


def spline3(s):
    s = np.asarray(s, dtype=float)
    inner = 2.0 / 3.0 - 4.0 * s**2 + 4.0 * s**3
    outer = 4.0 / 3.0 * (1.0 - s) ** 3  # factored so the edge value is exactly 0
    return np.where(s <= 0.5, inner, np.where(s <= 1.0, outer, 0.0))


def spline4(s):
    s = np.asarray(s, dtype=float)
    return np.where(s <= 1.0, (1.0 - s) ** 3 * (1.0 + 3.0 * s), 0.0)


def eval_imls_weight(spec: WeightSpec, s):
    """Near-singular weight ``exp(-s^2) / (s^n - eps)`` on ``[0, 1]``.

    Where ``s^n <= eps`` the formula is negative or infinite; those points and
    any value above ``spec.cap`` get ``spec.cap`` instead.
    """
    s = np.asarray(s, dtype=float)
    denom = s**spec.n - spec.eps
    with np.errstate(divide="ignore", invalid="ignore"):
        raw = np.exp(-(s**2)) / denom
    w = np.where((denom > 0) & (raw < spec.cap), raw, spec.cap)
    return np.where(s <= 1.0, w, 0.0)


def eval_weight(spec: WeightSpec, s):
    s = np.asarray(s, dtype=float)
    fam = spec.family
    if fam == "spline3":
        return spline3(s)
    if fam == "spline4":
        return spline4(s)
    if fam == "powered_spline3":
        return spline3(s) ** spec.gamma
    if fam == "powered_spline4":
        return spline4(s) ** spec.gamma
    if fam == "linear":
        return np.where(s <= 1.0, 1.0 - s, 0.0)
    if fam == "exponential":
        with np.errstate(over="ignore"):
            w = np.exp(-(s**spec.alpha) / spec.epsilon**2)
        return np.where(s <= 1.0, w, 0.0)
    return eval_imls_weight(spec, s)


def eval_rbf(spec: RbfSpec, s):
    """Return ``(phi, dphi/ds, d2phi/ds2)`` at ``s``.

    TPS and logarithmic kernels have no derivative at ``s == 0``; asking for
    one raises :class:`NumericalError`.
    """
    s = np.asarray(s, dtype=float)
    fam = spec.family
    if fam == "gaussian":
        c = spec.c
        e = np.exp(-c * s**2)
        return e, -2.0 * c * s * e, (4.0 * c**2 * s**2 - 2.0 * c) * e
    if fam == "mq":
        c2, q = spec.c**2, spec.q
        base = s**2 + c2
        return (
            base**q,
            2.0 * q * s * base ** (q - 1.0),
            2.0 * q * base ** (q - 1.0) + 4.0 * q * (q - 1.0) * s**2 * base ** (q - 2.0),
        )
    if fam == "spline3":
        d1 = np.where(s <= 0.5, -8.0 * s + 12.0 * s**2, -4.0 + 8.0 * s - 4.0 * s**2)
        d2 = np.where(s <= 0.5, -8.0 + 24.0 * s, 8.0 - 8.0 * s)
        inside = s <= 1.0
        return spline3(s), np.where(inside, d1, 0.0), np.where(inside, d2, 0.0)
    if fam == "spline4":
        inside = s <= 1.0
        d1 = -12.0 * s + 24.0 * s**2 - 12.0 * s**3
        d2 = -12.0 + 48.0 * s - 36.0 * s**2
        return spline4(s), np.where(inside, d1, 0.0), np.where(inside, d2, 0.0)

    if np.any(s <= 0.0):
        raise NumericalError(f"{fam} RBF is not differentiable at s = 0")
    eta = spec.eta
    if fam == "tps":
        return s**eta, eta * s ** (eta - 1.0), eta * (eta - 1.0) * s ** (eta - 2.0)
    ls = np.log(s)
    return (
        s**eta * ls,
        s ** (eta - 1.0) * (eta * ls + 1.0),
        s ** (eta - 2.0) * (eta * (eta - 1.0) * ls + 2.0 * eta - 1.0),
    )
