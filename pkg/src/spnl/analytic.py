"""Closed-form detection probabilities, correlations and CHSH values.

Angles are radians throughout. ``xi``/``eta`` are Alice's and Bob's base
measurement angles and ``dphi`` is the reference phase difference
``phi_b - phi_a``. The four post-selected patterns over modes (4, 5, 6, 7) are
keyed by strings: ``"1010"`` means one photon in 4 and one in 6.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

PATTERNS = ("1010", "0101", "1001", "0110")
PATTERN_SIGN = {"1010": 1, "0101": 1, "1001": -1, "0110": -1}
OPTIMAL_XI_MINUS_ETA = 3 * math.pi / 4
RATIO_TOL = 1e-6
TWO_PI = 2 * math.pi


@dataclass(frozen=True)
class MeasurementSetting:
    """One party's measurement axis: base angle plus an optional pi/2 offset.

    The beam splitter realising the axis has amplitude reflectivity
    ``sin(angle / 2)``, i.e. mixing angle equal to ``angle``.
    """

    base: float
    offset: bool = False

    @property
    def angle(self) -> float:
        return self.base + (math.pi / 2 if self.offset else 0.0)

    @property
    def reflectivity(self) -> float:
        return math.sin(self.angle / 2)


@dataclass(frozen=True)
class PhaseSample:
    phi_a: float
    phi_b: float

    @property
    def dphi(self) -> float:
        return (self.phi_b - self.phi_a) % TWO_PI


@dataclass(frozen=True)
class CorrelationQuad:
    """E(xi,eta), E(xi+pi/2,eta), E(xi,eta+pi/2), E(xi+pi/2,eta+pi/2)."""

    e_ab: float
    e_apb: float
    e_abp: float
    e_apbp: float

    def __post_init__(self):
        for v in (self.e_ab, self.e_apb, self.e_abp, self.e_apbp):
            if abs(v) > 1 + 1e-12:
                raise ValueError(f"correlation {v} outside [-1, 1]")

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.e_ab, self.e_apb, self.e_abp, self.e_apbp)


def _weights(dphi):
    # sin^2 and cos^2 of (dphi + pi/2)/2
    h = (dphi + np.pi / 2) / 2
    return np.sin(h) ** 2, np.cos(h) ** 2


def scheme1_pattern_probs(xi: float, eta: float, dphi: float) -> dict[str, float]:
    """Conditional probabilities of the four single-click-per-party patterns."""
    ws, wc = _weights(dphi)
    p_same = 0.5 * (math.sin((xi + eta) / 2) ** 2 * wc + math.sin((xi - eta) / 2) ** 2 * ws)
    p_diff = 0.5 * (math.cos((xi + eta) / 2) ** 2 * wc + math.cos((xi - eta) / 2) ** 2 * ws)
    return {"1010": p_same, "0101": p_same, "1001": p_diff, "0110": p_diff}


def correlation_from_probs(probs: dict[str, float]) -> float:
    return sum(PATTERN_SIGN[p] * probs[p] for p in PATTERNS)


def scheme1_correlation(xi, eta, dphi):
    """E(xi, eta) for fixed reference phase difference; vectorizes over arrays."""
    h = dphi / 2 + np.pi / 4
    return -np.sin(h) ** 2 * np.cos(xi - eta) - np.cos(h) ** 2 * np.cos(xi + eta)


def correlation_quad(xi: float, eta: float, dphi: float) -> CorrelationQuad:
    q = np.pi / 2
    return CorrelationQuad(
        float(scheme1_correlation(xi, eta, dphi)),
        float(scheme1_correlation(xi + q, eta, dphi)),
        float(scheme1_correlation(xi, eta + q, dphi)),
        float(scheme1_correlation(xi + q, eta + q, dphi)),
    )


def chsh_S(q: CorrelationQuad | tuple[float, float, float, float]) -> float:
    e_ab, e_apb, e_abp, e_apbp = q.as_tuple() if isinstance(q, CorrelationQuad) else q
    return abs(e_ab + e_apb - e_abp + e_apbp)


def s_scheme1(xi_minus_eta, dphi):
    ws, _ = _weights(dphi)
    return np.abs(2 * ws * (np.sin(xi_minus_eta) - np.cos(xi_minus_eta)))


def s_scheme1_phase_averaged(xi_minus_eta):
    return np.abs(np.sin(xi_minus_eta) - np.cos(xi_minus_eta))


def s_scheme2(xi_minus_eta):
    return 2 * np.abs(np.sin(xi_minus_eta) - np.cos(xi_minus_eta))


def s_from_c(c, xi_minus_eta=OPTIMAL_XI_MINUS_ETA):
    """S as a function of c = cos(dphi + pi/2), using sin^2((dphi+pi/2)/2) = (1-c)/2."""
    return np.abs((1 - np.asarray(c)) * (np.sin(xi_minus_eta) - np.cos(xi_minus_eta)))


def violation_window() -> tuple[float, float]:
    """Open interval of dphi where S > 2 at the optimal angle difference."""
    lo = math.asin(math.sqrt(2) - 1)
    return lo, math.pi - lo


def scheme3_remainder_intensities(dphi: float, alpha_mag: float) -> tuple[float, float, float]:
    """Printed remainder intensities (N15, N16) and their normalized difference.

    The returned ratio ``(N16 - N15)/(N16 + N15)`` equals ``cos(dphi + pi/2)``.
    """
    if alpha_mag < 1:
        raise ValueError(f"skimming needs |alpha| >= 1, got {alpha_mag}")
    ws, wc = _weights(dphi)
    n15 = (alpha_mag**2 - 1) * ws
    n16 = (alpha_mag**2 - 1) * wc
    total = n15 + n16
    ratio = (n16 - n15) / total if total > 0 else math.cos(dphi + math.pi / 2)
    return float(n15), float(n16), float(ratio)


def delta_phi_cos_from_ratio(ratio: float, erratum_mode: str = "derived") -> float:
    """Map the remainder ratio to c = cos(dphi + pi/2), clamped to [-1, 1].

    ``erratum_mode="paper"`` reads the ratio as ``2 cos(dphi + pi/2)``.
    """
    if erratum_mode == "paper":
        ratio = ratio / 2
    elif erratum_mode != "derived":
        raise ValueError(f"unknown erratum mode {erratum_mode!r}")
    if abs(ratio) > 1 + RATIO_TOL:
        raise ValueError(f"ratio {ratio} outside [-1, 1]")
    return max(-1.0, min(1.0, ratio))


def dphi_principal(c):
    """Principal-branch phase difference in [-pi/2, pi/2] with cos(dphi + pi/2) = c."""
    return -np.arcsin(np.clip(c, -1, 1))
