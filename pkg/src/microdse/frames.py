"""abc <-> dq Park transformation in a shared synchronized rotating frame."""

from __future__ import annotations

import math
from dataclasses import dataclass

_SHIFT = 2.0 * math.pi / 3.0


@dataclass(frozen=True)
class ThreePhaseSample:
    """Instantaneous values of the three phases (volts or amperes)."""

    a: float
    b: float
    c: float

    def __post_init__(self):
        if not (math.isfinite(self.a) and math.isfinite(self.b) and math.isfinite(self.c)):
            raise ValueError("phase values must be finite")


@dataclass(frozen=True)
class DqSample:
    """Direct/quadrature pair in the rotating frame (same unit as the source).

    Only balanced circuits are modeled, so the zero-sequence component is
    structurally zero.
    """

    d: float
    q: float

    def __post_init__(self):
        if not (math.isfinite(self.d) and math.isfinite(self.q)):
            raise ValueError("dq values must be finite")

    @property
    def zero(self) -> float:
        return 0.0


def park(sample: ThreePhaseSample, theta: float) -> DqSample:
    """Project an abc sample onto the dq frame rotated by ``theta`` radians.

    Amplitude-invariant convention (2/3 forward factor), cosine-aligned d
    axis, q lagging d by 90 degrees: a balanced set of amplitude V whose
    phase-a peak coincides with ``theta`` maps to (d=V, q=0).
    """
    if not math.isfinite(theta):
        raise ValueError("theta must be finite")
    tb = theta - _SHIFT
    tc = theta + _SHIFT
    d = (2.0 / 3.0) * (
        sample.a * math.cos(theta) + sample.b * math.cos(tb) + sample.c * math.cos(tc)
    )
    q = -(2.0 / 3.0) * (
        sample.a * math.sin(theta) + sample.b * math.sin(tb) + sample.c * math.sin(tc)
    )
    return DqSample(d, q)


def inverse_park(sample: DqSample, theta: float) -> ThreePhaseSample:
    """Rebuild the balanced abc sample whose Park projection at ``theta`` is ``sample``."""
    if not math.isfinite(theta):
        raise ValueError("theta must be finite")
    tb = theta - _SHIFT
    tc = theta + _SHIFT
    return ThreePhaseSample(
        sample.d * math.cos(theta) - sample.q * math.sin(theta),
        sample.d * math.cos(tb) - sample.q * math.sin(tb),
        sample.d * math.cos(tc) - sample.q * math.sin(tc),
    )
