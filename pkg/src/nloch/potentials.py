"""Double-well potentials and the proliferation nonlinearity.

Two wells are shipped: the quartic polynomial well (r^2-1)^2/4 defined on all
of R, and the logarithmic well on (-1, 1) which is evaluated only strictly
inside the interval: |r| <= 1 - delta_clip.  Crossing that margin raises
DomainViolation instead of clamping silently, because staying inside is a
property of the dynamics that the solver is supposed to exhibit, not enforce.

The proliferation factor f is a bounded C^2 function of the phase field; the
default is a quintic smoothstep (the cubic one has a jump in the second
derivative at the seams, which the rest of the machinery is not allowed to
rely on).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigInvalid, DomainViolation

__all__ = [
    "PotentialSpec",
    "ProliferationSpec",
    "eval_F",
    "eval_f",
    "sample_min_f_second",
    "stabilization_default",
    "growth_condition_ok",
    "quartic_growth_constants",
]

_POTENTIAL_FAMILIES = ("polynomial", "logarithmic")
_PROLIFERATION_FAMILIES = ("smoothstep", "gaussian_bump")


@dataclass(frozen=True)
class PotentialSpec:
    family: str = "polynomial"
    theta: float = 0.2
    theta0: float = 1.0
    delta_clip: float = 1e-4

    def __post_init__(self):
        if self.family == "double_obstacle":
            raise ConfigInvalid(
                "double-obstacle potentials are excluded (non-smooth well)",
                failed=["potential.family"],
            )
        if self.family not in _POTENTIAL_FAMILIES:
            raise ConfigInvalid(
                f"unknown potential family {self.family!r}", failed=["potential.family"]
            )
        if self.family == "logarithmic":
            if not (0.0 < self.theta < self.theta0):
                raise ConfigInvalid(
                    "logarithmic well needs 0 < theta < theta0",
                    failed=["potential.theta"],
                )
            if not (0.0 < self.delta_clip < 1.0):
                raise ConfigInvalid(
                    "delta_clip must lie in (0, 1)", failed=["potential.delta_clip"]
                )

    @property
    def ell(self) -> float:
        """Half-width of the well's domain."""
        return 1.0 if self.family == "logarithmic" else math.inf

    @property
    def r_max(self) -> float:
        """Largest admissible |r| for evaluation."""
        return 1.0 - self.delta_clip if self.family == "logarithmic" else math.inf


def _poly(r: np.ndarray, order: int) -> np.ndarray:
    if order == 0:
        return 0.25 * (r * r - 1.0) ** 2
    if order == 1:
        return r**3 - r
    if order == 2:
        return 3.0 * r * r - 1.0
    if order == 3:
        return 6.0 * r
    return np.full_like(r, 6.0)


def _log(r: np.ndarray, theta: float, theta0: float, order: int) -> np.ndarray:
    if order == 0:
        return 0.5 * theta * ((1 + r) * np.log1p(r) + (1 - r) * np.log1p(-r)) - 0.5 * theta0 * r * r
    if order == 1:
        return 0.5 * theta * (np.log1p(r) - np.log1p(-r)) - theta0 * r
    one_minus_r2 = (1.0 - r) * (1.0 + r)
    if order == 2:
        return theta / one_minus_r2 - theta0
    if order == 3:
        return 2.0 * theta * r / one_minus_r2**2
    return theta * (2.0 + 6.0 * r * r) / one_minus_r2**3


def eval_F(spec: PotentialSpec, r, order: int = 0):
    """Value or derivative (order 0..4) of the double-well potential.

    Logarithmic evaluation outside |r| <= 1 - delta_clip raises DomainViolation.
    Scalar in, scalar out; arrays are processed elementwise.
    """
    if not 0 <= order <= 4:
        raise ValueError("order must be between 0 and 4")
    arr = np.asarray(r, dtype=np.float64)
    scalar = arr.ndim == 0
    arr = np.atleast_1d(arr)
    if spec.family == "polynomial":
        out = _poly(arr, order)
    else:
        bound = spec.r_max
        worst = float(np.max(np.abs(arr)))
        if worst > bound:
            raise DomainViolation(
                f"logarithmic well evaluated at |r| = {worst:.6g} > {bound:.6g} "
                "(separation margin crossed)",
                value=worst,
            )
        out = _log(arr, spec.theta, spec.theta0, order)
    return float(out[0]) if scalar else out


def sample_min_f_second(spec: PotentialSpec, samples: int = 20001) -> float:
    """min F'' over a dense sample of the (clipped) domain.

    For the polynomial well the true minimum sits at r = 0 and any interval
    containing it is exact; we sample [-1.2, 1.2].  For the logarithmic well
    we sample the clipped interval.
    """
    if spec.family == "polynomial":
        r = np.linspace(-1.2, 1.2, samples)
    else:
        b = spec.r_max
        r = np.linspace(-b, b, samples)
    return float(np.min(eval_F(spec, r, 2)))


def stabilization_default(spec: PotentialSpec) -> float:
    """Default stabilization constant: max(0, -min F'') over the usual range."""
    return max(0.0, -sample_min_f_second(spec))


def growth_condition_ok(spec: PotentialSpec, chi_max: float, eta_max: float) -> bool:
    """Does F'(r) - chi_max eta_max r diverge to +-infinity at the domain ends?

    Decided in closed form per family: the logarithmic well has F' blowing up
    at +-1, the quartic well's cubic term dominates any linear correction.
    """
    if spec.family == "logarithmic":
        return True
    return True  # cubic leading term always dominates chi_max * eta_max * r


def quartic_growth_constants(spec: PotentialSpec) -> tuple[float, float] | None:
    """A valid (c_F, C_F) pair for the quartic-growth bounds, if one exists.

    The pair must satisfy both |F''(r)| <= C_F (1 + r^2) and
    F(r) >= c_F r^4 - C_F for all r.  For the polynomial well (1/8, 3) works:
    |3 r^2 - 1| <= 3 (1 + r^2) everywhere, and
    (r^2-1)^2/4 - r^4/8 = (r^4 - 4 r^2 + 2)/8 >= -1/4 >= -3.
    The logarithmic well violates the first bound near +-1, so returns None.
    """
    if spec.family == "polynomial":
        return (0.125, 3.0)
    return None


@dataclass(frozen=True)
class ProliferationSpec:
    family: str = "smoothstep"
    f_max: float = 1.0
    width: float = 0.5  # gaussian_bump only

    def __post_init__(self):
        if self.family not in _PROLIFERATION_FAMILIES:
            raise ConfigInvalid(
                f"unknown proliferation family {self.family!r}", failed=["f.family"]
            )
        if self.f_max < 0:
            raise ConfigInvalid("f_max must be nonnegative", failed=["f.max"])
        if self.family == "gaussian_bump" and self.width <= 0:
            raise ConfigInvalid("gaussian_bump needs a positive width", failed=["f.width"])

    @property
    def lipschitz_bound(self) -> float:
        if self.family == "smoothstep":
            # max of the quintic slope: 15/16 * f_max on r in [-1, 1]
            return 0.9375 * self.f_max
        return self.f_max * math.sqrt(2.0 / math.e) / self.width


def _smoothstep(t: np.ndarray, order: int) -> np.ndarray:
    # quintic smoothstep on [0, 1]: C^2 at both seams
    if order == 0:
        return t * t * t * (10.0 + t * (-15.0 + 6.0 * t))
    if order == 1:
        return 30.0 * t * t * (1.0 - t) ** 2
    return 60.0 * t * (1.0 - t) * (1.0 - 2.0 * t)


def eval_f(spec: ProliferationSpec, r, order: int = 0):
    """Value or derivative (order 0..2) of the proliferation factor."""
    if not 0 <= order <= 2:
        raise ValueError("order must be between 0 and 2")
    arr = np.asarray(r, dtype=np.float64)
    scalar = arr.ndim == 0
    arr = np.atleast_1d(arr)
    if spec.family == "smoothstep":
        t = np.clip((arr + 1.0) * 0.5, 0.0, 1.0)
        out = spec.f_max * _smoothstep(t, order) * 0.5**order
        if order > 0:
            inside = (arr > -1.0) & (arr < 1.0)
            out = np.where(inside, out, 0.0)
    else:
        w2 = spec.width**2
        g = np.exp(-arr * arr / w2)
        if order == 0:
            out = spec.f_max * g
        elif order == 1:
            out = spec.f_max * g * (-2.0 * arr / w2)
        else:
            out = spec.f_max * g * (4.0 * arr * arr / (w2 * w2) - 2.0 / w2)
    return float(out[0]) if scalar else out
