"""The three single-photon CHSH circuits, built from ``fock_core`` primitives.

Mode labels are the optical path numbers of the circuit diagrams:

* BS1 (50:50) mixes the single photon into paths 1 and 2.
* Alice's reference enters path 3, Bob's path 8.
* BS2 mixes paths 1, 3 into detectors 4, 5; BS3 mixes 2, 8 into 6, 7.
* Scheme 2: BS4 (50:50) splits a coherent state on 9 (vacuum on 10) into 8 and 3.
* Scheme 3: BS4 skims Alice's reference (path 10, vacuum on 9) into 3, leaving
  the remainder on 11; BS5 skims Bob's (path 13, vacuum on 12) into 8 and 14.
  BS6 (50:50) recombines 11 and 14 onto counters 15 and 16.

Detection outcomes are number-resolving. A run is accepted when exactly one
photon reaches each party (one in {4, 5} and one in {6, 7}).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import analytic
from .fock_core import (
    BALANCED,
    TAIL_TOL,
    BeamSplitter,
    PostselectionError,
    StateVector,
    apply_beam_splitter,
    coherent_amplitudes,
    coherent_cutoff,
    distribution,
    make_coherent,
    make_fock,
    make_vacuum,
    postselect,
    project_out,
    relabel,
    sample_outcome,
    tensor,
)

DETECTORS = (4, 5, 6, 7)
REMAINDER = (11, 14)
COUNTERS = (15, 16)
SCHEME_TAIL_TOL = 1e-14
DEFAULT_QUADRATURE = 64
DEFAULT_ALPHA = math.sqrt(2)

COHERENT, PHASE_AVERAGED, NUMBER, NUMBER_MIXTURE = (
    "coherent",
    "phase_averaged",
    "number",
    "number_mixture",
)


@dataclass(frozen=True)
class ReferenceSpec:
    """A party's reference-state family.

    ``coherent`` uses the complex ``alpha``; ``phase_averaged`` uses ``abs(alpha)``;
    ``number`` uses ``n``; ``number_mixture`` uses ``weights[k] = P(k)``.
    ``cutoff`` truncates coherent components (auto-chosen when None).
    """

    kind: str
    alpha: complex = 0j
    n: int = 0
    weights: tuple[float, ...] = ()
    cutoff: int | None = None

    def __post_init__(self):
        if self.kind not in (COHERENT, PHASE_AVERAGED, NUMBER, NUMBER_MIXTURE):
            raise ValueError(f"unknown reference kind {self.kind!r}")
        if self.kind == NUMBER and self.n < 1:
            raise ValueError("number-state reference needs N >= 1")
        if self.kind == NUMBER_MIXTURE:
            w = np.asarray(self.weights, dtype=float)
            if w.size == 0 or np.any(w < 0) or abs(w.sum() - 1) > 1e-9:
                raise ValueError("number-mixture weights must be nonnegative and sum to 1")

    @classmethod
    def coherent(cls, alpha: complex, cutoff: int | None = None) -> "ReferenceSpec":
        return cls(COHERENT, alpha=complex(alpha), cutoff=cutoff)

    @classmethod
    def phase_averaged(cls, alpha_mag: float = DEFAULT_ALPHA, cutoff: int | None = None):
        return cls(PHASE_AVERAGED, alpha=complex(abs(alpha_mag)), cutoff=cutoff)

    @classmethod
    def number(cls, n: int) -> "ReferenceSpec":
        return cls(NUMBER, n=int(n))

    @classmethod
    def number_mixture(cls, weights: Sequence[float]) -> "ReferenceSpec":
        return cls(NUMBER_MIXTURE, weights=tuple(float(w) for w in weights))

    @classmethod
    def poisson_mixture(cls, alpha_mag: float, cutoff: int | None = None) -> "ReferenceSpec":
        """Poisson number mixture equal to the phase-averaged coherent state."""
        cutoff = cutoff if cutoff is not None else coherent_cutoff(alpha_mag, SCHEME_TAIL_TOL)
        w = np.abs(coherent_amplitudes(alpha_mag, cutoff)) ** 2
        return cls.number_mixture(w / w.sum())

    @property
    def is_number_family(self) -> bool:
        return self.kind in (NUMBER, NUMBER_MIXTURE)

    def mean_photons(self) -> float:
        if self.kind == NUMBER:
            return float(self.n)
        if self.kind == NUMBER_MIXTURE:
            return float(np.dot(np.arange(len(self.weights)), self.weights))
        return abs(self.alpha) ** 2

    def skim_transmittivity(self) -> float:
        """Amplitude transmittivity that skims off mean amplitude one."""
        nbar = self.mean_photons()
        if nbar < 1:
            raise ValueError(
                f"skimming needs a reference with mean photon number >= 1, got {nbar:.4g}"
            )
        return 1 / math.sqrt(nbar)

    def resolved_cutoff(self) -> int:
        if self.is_number_family:
            return self.n if self.kind == NUMBER else len(self.weights) - 1
        if self.cutoff is not None:
            return self.cutoff
        return coherent_cutoff(abs(self.alpha), SCHEME_TAIL_TOL)

    def components(self, quadrature: int = DEFAULT_QUADRATURE) -> list[tuple[float, str, complex]]:
        """Pure-state decomposition as ``(weight, "coherent"|"fock", value)`` triples."""
        if self.kind == COHERENT:
            return [(1.0, "coherent", self.alpha)]
        if self.kind == PHASE_AVERAGED:
            mag = abs(self.alpha)
            return [
                (1.0 / quadrature, "coherent", mag * np.exp(2j * math.pi * k / quadrature))
                for k in range(quadrature)
            ]
        if self.kind == NUMBER:
            return [(1.0, "fock", self.n)]
        return [(w, "fock", k) for k, w in enumerate(self.weights) if w > 0]


@dataclass
class CircuitResult:
    """Post-selected statistics of one circuit evaluation.

    ``pattern_probs`` and ``joint`` are conditional on acceptance. ``joint`` maps
    ``(pattern, N15, N16)`` to probability (scheme 3 only). ``remainder`` holds
    the pure conditional state on modes (11, 14) for each pattern when the
    inputs were pure.
    """

    pattern_probs: dict[str, float]
    acceptance: float
    remainder: dict[str, StateVector] | None = None
    joint: dict[tuple[str, int, int], float] | None = None
    remainder_means: tuple[float, float] | None = None
    accepted_state: StateVector | None = field(default=None, repr=False)

    @property
    def correlation(self) -> float:
        return analytic.correlation_from_probs(self.pattern_probs)


def _pattern_key(occ) -> str:
    return "".join(str(int(n)) for n in occ)


def _one_per_party(occ) -> bool:
    return occ[0] + occ[1] == 1 and occ[2] + occ[3] == 1


def _single_photon(photon_mode: int) -> StateVector:
    """BS1 output: photon enters ``photon_mode`` (2 gives |01> + i|10> over paths 1, 2)."""
    other = 1 if photon_mode == 2 else 2
    s = tensor(make_fock(photon_mode, 1, 1), make_vacuum([other], 1))
    return apply_beam_splitter(s, 1, 2, BALANCED)


def _reference(mode: int, prep: str, value, cutoff: int, tail_tol) -> StateVector:
    if prep == "coherent":
        return make_coherent(mode, value, cutoff, tail_tol=tail_tol)
    return make_fock(mode, int(value), max(int(value), 1))


def _skim(ref_mode, vac_mode, out_ref, out_rem, prep, value, t, cutoff, tail_tol) -> StateVector:
    s = tensor(_reference(ref_mode, prep, value, cutoff, tail_tol), make_vacuum([vac_mode], 1))
    s = s.with_cutoff(max(s.cutoff, s.total_photons()))
    s = apply_beam_splitter(s, ref_mode, vac_mode, BeamSplitter.from_transmittivity(t))
    return relabel(s, {ref_mode: out_ref, vac_mode: out_rem})


def _detect(s: StateVector, xi: float, eta: float) -> StateVector:
    s = apply_beam_splitter(s, 1, 3, BeamSplitter(xi))
    s = apply_beam_splitter(s, 2, 8, BeamSplitter(eta))
    return relabel(s, {1: 4, 3: 5, 2: 6, 8: 7})


def _at_most_one(occ) -> bool:
    return occ[0] <= 1


def _finish(
    s: StateVector, xi: float, eta: float, weight: float, early: bool
) -> tuple[float, StateVector | None]:
    """Detection stage on a state over paths 1, 2, 3, 8 (plus remainders).

    Returns the unconditional acceptance probability (times ``weight``) and the
    accepted, renormalized state.
    """
    p_pre = 1.0
    if early:
        # projecting on n3 + n1 = 1, n8 + n2 = 1 commutes with BS2/BS3
        p_pre, s = postselect(
            s, (1, 3, 2, 8), lambda o: o[0] + o[1] == 1 and o[2] + o[3] == 1
        )
        if s is None:
            return 0.0, None
    s = _detect(s, xi, eta)
    p, s = postselect(s, DETECTORS, _one_per_party)
    return weight * p_pre * p, s


def _pattern_probs(s: StateVector) -> dict[str, float]:
    dist = distribution(s, DETECTORS)
    probs = {p: 0.0 for p in analytic.PATTERNS}
    for occ, w in dist.items():
        probs[_pattern_key(occ)] += w
    return probs


def _check_cutoff(cutoff):
    if cutoff is not None and cutoff < 2:
        raise ValueError("scheme runs need cutoff >= 2")


def run_scheme1_exact(
    xi: float,
    eta: float,
    phi_a: float,
    phi_b: float,
    cutoff: int | None = None,
    tail_tol: float | None = TAIL_TOL,
    early_postselect: bool = True,
) -> CircuitResult:
    """Independent unit-amplitude coherent references with phases phi_a, phi_b."""
    _check_cutoff(cutoff)
    c = cutoff if cutoff is not None else coherent_cutoff(1.0, SCHEME_TAIL_TOL)
    s = tensor(_single_photon(2), make_coherent(3, np.exp(1j * phi_a), c, tail_tol))
    s = tensor(s, make_coherent(8, np.exp(1j * phi_b), c, tail_tol))
    s = s.with_cutoff(s.total_photons())
    acc, s = _finish(s, xi, eta, 1.0, early_postselect)
    if s is None:
        raise PostselectionError("scheme 1 run has zero acceptance")
    return CircuitResult(_pattern_probs(s), acc, accepted_state=s)


def run_scheme2_exact(
    xi: float,
    eta: float,
    phi: float,
    cutoff: int | None = None,
    tail_tol: float | None = TAIL_TOL,
    early_postselect: bool = True,
) -> CircuitResult:
    """References from a single |sqrt2 e^{i phi}> split at a 50:50 BS4.

    BS4 gives ``|i e^{i phi}>`` on path 3 and ``|e^{i phi}>`` on path 8; the photon
    enters path 1 so that BS1 yields ``|10> + i|01>``, which fixes the effective
    reference phase difference at pi/2.
    """
    _check_cutoff(cutoff)
    c = cutoff if cutoff is not None else coherent_cutoff(DEFAULT_ALPHA, SCHEME_TAIL_TOL)
    refs = tensor(
        make_coherent(9, DEFAULT_ALPHA * np.exp(1j * phi), c, tail_tol), make_vacuum([10], 1)
    )
    refs = refs.with_cutoff(refs.total_photons())
    refs = relabel(apply_beam_splitter(refs, 9, 10, BALANCED), {9: 8, 10: 3})
    s = tensor(_single_photon(1), refs)
    acc, s = _finish(s, xi, eta, 1.0, early_postselect)
    if s is None:
        raise PostselectionError("scheme 2 run has zero acceptance")
    return CircuitResult(_pattern_probs(s), acc, accepted_state=s)


def _scheme3_pure(xi, eta, comp_a, comp_b, t_a, t_b, cut_a, cut_b, tail_tol, early):
    (_, prep_a, val_a), (_, prep_b, val_b) = comp_a, comp_b
    side_a = _skim(10, 9, 3, 11, prep_a, val_a, t_a, cut_a, tail_tol)
    side_b = _skim(13, 12, 8, 14, prep_b, val_b, t_b, cut_b, tail_tol)
    p_pre = 1.0
    if early:
        # only n3, n8 <= 1 can ever pass the final post-selection
        pa, side_a = postselect(side_a, (3,), _at_most_one)
        pb, side_b = postselect(side_b, (8,), _at_most_one)
        if side_a is None or side_b is None:
            return 0.0, None
        p_pre = pa * pb
    s = tensor(tensor(_single_photon(2), side_a), side_b)
    s = s.with_cutoff(max(s.cutoff, s.total_photons()))
    acc, s = _finish(s, xi, eta, p_pre, early)
    return acc, s


def _bs6(s: StateVector) -> StateVector:
    s = s.with_cutoff(max(s.cutoff, s.total_photons()))
    return relabel(apply_beam_splitter(s, 14, 11, BALANCED), {14: 15, 11: 16})


def _joint(s_after_bs6: StateVector) -> dict[tuple[str, int, int], float]:
    out = {}
    for occ, w in distribution(s_after_bs6, DETECTORS + COUNTERS).items():
        out[_pattern_key(occ[:4]), occ[4], occ[5]] = w
    return out


def run_scheme3_exact(
    xi: float,
    eta: float,
    ref_a: ReferenceSpec,
    ref_b: ReferenceSpec,
    phi_a: float = 0.0,
    phi_b: float = 0.0,
    quadrature: int = DEFAULT_QUADRATURE,
    tail_tol: float | None = TAIL_TOL,
    early_postselect: bool = True,
) -> CircuitResult:
    """Independent skimmed references with remainder beams on paths 11 and 14.

    ``phi_a``/``phi_b`` rotate fixed-phase coherent references. Phase-averaged
    references are evaluated by a uniform ``quadrature``-point phase grid; when
    both are phase-averaged, only the phase difference is gridded because every
    circuit element conserves total photon number.
    """
    t_a, t_b = ref_a.skim_transmittivity(), ref_b.skim_transmittivity()
    cut_a, cut_b = ref_a.resolved_cutoff(), ref_b.resolved_cutoff()
    if not ref_a.is_number_family and cut_a >= quadrature and ref_a.kind == PHASE_AVERAGED:
        raise ValueError(f"quadrature {quadrature} must exceed the reference cutoff {cut_a}")
    comps_a = [(w, p, v * np.exp(1j * phi_a) if p == "coherent" else v)
               for w, p, v in ref_a.components(quadrature)]
    comps_b = [(w, p, v * np.exp(1j * phi_b) if p == "coherent" else v)
               for w, p, v in ref_b.components(quadrature)]
    if ref_a.kind == PHASE_AVERAGED and ref_b.kind == PHASE_AVERAGED:
        comps_a = [(1.0, "coherent", complex(abs(ref_a.alpha)))]

    pure = len(comps_a) == 1 and len(comps_b) == 1
    total_acc = 0.0
    probs = {p: 0.0 for p in analytic.PATTERNS}
    joint: dict[tuple[str, int, int], float] = {}
    means = np.zeros(2)
    last = None
    for ca in comps_a:
        for cb in comps_b:
            w = ca[0] * cb[0]
            acc, s = _scheme3_pure(xi, eta, ca, cb, t_a, t_b, cut_a, cut_b, tail_tol,
                                   early_postselect)
            if s is None or acc == 0.0:
                continue
            acc *= w
            total_acc += acc
            for p, v in _pattern_probs(s).items():
                probs[p] += acc * v
            after = _bs6(s)
            for key, v in _joint(after).items():
                joint[key] = joint.get(key, 0.0) + acc * v
            means += acc * np.array([after.mean_occupation(15), after.mean_occupation(16)])
            last = s
    if total_acc == 0.0:
        raise PostselectionError("scheme 3 run has zero acceptance")
    probs = {p: v / total_acc for p, v in probs.items()}
    joint = {k: v / total_acc for k, v in joint.items()}
    n15, n16 = means / total_acc
    remainder = None
    if pure:
        remainder = {}
        for occ in distribution(last, DETECTORS):
            remainder[_pattern_key(occ)] = project_out(last, DETECTORS, occ)
    return CircuitResult(
        probs, total_acc, remainder=remainder, joint=joint,
        remainder_means=(float(n15), float(n16)), accepted_state=last if pure else None,
    )


def run_scheme3_component(
    xi: float,
    eta: float,
    comp_a: tuple[str, complex],
    comp_b: tuple[str, complex],
    t_a: float,
    t_b: float,
    tail_tol: float | None = TAIL_TOL,
) -> tuple[float, dict[tuple[str, int, int], float]]:
    """One pure reference pair, e.g. ``("fock", 4)``, at explicit skimming transmittivities.

    Returns the acceptance probability and the conditional joint distribution
    over ``(pattern, N15, N16)``.
    """
    cuts = [
        int(v) if p == "fock" else coherent_cutoff(abs(v), SCHEME_TAIL_TOL)
        for p, v in (comp_a, comp_b)
    ]
    acc, s = _scheme3_pure(
        xi, eta, (1.0, *comp_a), (1.0, *comp_b), t_a, t_b, cuts[0], cuts[1], tail_tol, True
    )
    if s is None or acc == 0.0:
        return 0.0, {}
    return acc, _joint(_bs6(s))


def measure_remainder_phase(
    state: StateVector,
    rng: np.random.Generator | None = None,
) -> tuple[float, float]:
    """Combine paths 11 and 14 at BS6 and read counters 15 and 16.

    Without ``rng`` returns the mean counts; with ``rng`` returns one sampled
    count pair. ``state`` may carry other modes, which are traced out.
    """
    for m in REMAINDER:
        if m not in state.modes:
            raise KeyError(f"remainder mode {m} missing from state modes {state.modes}")
    after = _bs6(state)
    if rng is None:
        return after.mean_occupation(15), after.mean_occupation(16)
    out = sample_outcome(after, rng)
    return out[15], out[16]


def remainder_ratio(n15: float, n16: float) -> float:
    return (n16 - n15) / (n16 + n15)
