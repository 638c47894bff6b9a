"""Sparse multimode Fock-space states and passive linear-optical operations.

States are stored as a dict from occupation tuples to complex amplitudes over an
ordered tuple of integer mode labels. Every operation returns a new state.

Beam splitter convention: with mixing angle ``theta``,

    a1^dag -> cos(theta/2) a1^dag + i sin(theta/2) a2^dag
    a2^dag -> cos(theta/2) a2^dag + i sin(theta/2) a1^dag

so the reflected amplitude is ``i sin(theta/2)`` and ``theta = pi/2`` is 50:50.
"""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np
from scipy.linalg import eigh_tridiagonal
from scipy.stats import poisson

PRUNE = 1e-15
TAIL_TOL = 1e-10
NORM_TOL = 1e-9

Ket = tuple[int, ...]
OutcomePattern = dict[int, int]


class CutoffError(ValueError):
    """Raised when an occupation above the cutoff would carry real amplitude."""


class PostselectionError(ValueError):
    pass


@dataclass(frozen=True)
class BeamSplitter:
    """Two-mode mixing angle; ``conjugate`` flips the reflected phase to -i."""

    theta: float
    conjugate: bool = False

    @property
    def reflectivity(self) -> float:
        return math.sin(self.theta / 2)

    @property
    def transmittivity(self) -> float:
        return math.cos(self.theta / 2)

    @classmethod
    def from_reflectivity(cls, r: float) -> "BeamSplitter":
        if not 0.0 <= r <= 1.0:
            raise ValueError(f"amplitude reflectivity must lie in [0, 1], got {r}")
        return cls(2 * math.asin(r))

    @classmethod
    def from_transmittivity(cls, t: float) -> "BeamSplitter":
        if not 0.0 <= t <= 1.0:
            raise ValueError(f"amplitude transmittivity must lie in [0, 1], got {t}")
        return cls(2 * math.acos(t))

    def inverse(self) -> "BeamSplitter":
        return BeamSplitter(self.theta, not self.conjugate)


BALANCED = BeamSplitter(math.pi / 2)


class StateVector:
    """Sparse pure state over labelled bosonic modes.

    ``terms`` maps occupation tuples (ordered like ``modes``) to amplitudes.
    Amplitudes with magnitude at or below ``prune`` are dropped on construction.
    """

    __slots__ = ("modes", "terms", "cutoff", "prune", "_pos")

    def __init__(
        self,
        modes: Sequence[int],
        terms: Mapping[Ket, complex],
        cutoff: int,
        prune: float = PRUNE,
        _trusted: bool = False,
    ):
        modes = tuple(int(m) for m in modes)
        if not modes:
            raise ValueError("a state needs at least one mode")
        if len(set(modes)) != len(modes):
            raise ValueError(f"duplicate mode labels in {modes}")
        if any(m < 0 for m in modes):
            raise ValueError("mode labels must be nonnegative")
        self.modes = modes
        self.cutoff = int(cutoff)
        self.prune = prune
        self._pos = {m: i for i, m in enumerate(modes)}
        if _trusted:
            # kets produced by operations on validated states
            self.terms = {k: a for k, a in terms.items() if abs(a) > prune}
            return
        kept = {}
        for ket, amp in terms.items():
            if abs(amp) <= prune:
                continue
            if len(ket) != len(modes):
                raise ValueError(f"ket {ket} does not match {len(modes)} modes")
            if max(ket) > self.cutoff:
                raise CutoffError(
                    f"ket {ket} exceeds cutoff {self.cutoff}; rebuild with a larger cutoff"
                )
            kept[tuple(ket)] = complex(amp)
        self.terms = kept

    def __len__(self) -> int:
        return len(self.terms)

    def __repr__(self) -> str:
        return f"StateVector(modes={self.modes}, nterms={len(self)}, cutoff={self.cutoff})"

    def index(self, mode: int) -> int:
        try:
            return self._pos[mode]
        except KeyError:
            raise KeyError(f"mode {mode} not in state modes {self.modes}") from None

    def amplitude(self, occupations: Mapping[int, int] | Sequence[int]) -> complex:
        if isinstance(occupations, Mapping):
            ket = tuple(occupations.get(m, 0) for m in self.modes)
        else:
            ket = tuple(occupations)
        return self.terms.get(ket, 0j)

    def norm(self) -> float:
        return math.sqrt(sum(abs(a) ** 2 for a in self.terms.values()))

    def normalized(self) -> "StateVector":
        n = self.norm()
        if n == 0:
            raise ValueError("cannot normalize the zero vector")
        return self._replace({k: a / n for k, a in self.terms.items()})

    def mean_occupation(self, mode: int) -> float:
        i = self.index(mode)
        w = sum(abs(a) ** 2 for a in self.terms.values())
        return sum(k[i] * abs(a) ** 2 for k, a in self.terms.items()) / w

    def total_photons(self) -> int:
        """Largest total photon number among the stored kets."""
        return max(sum(k) for k in self.terms) if self.terms else 0

    def with_cutoff(self, cutoff: int) -> "StateVector":
        if cutoff >= self.cutoff:
            return self._replace(self.terms, cutoff=cutoff)
        return StateVector(self.modes, self.terms, cutoff, self.prune)

    def _replace(self, terms, modes=None, cutoff=None) -> "StateVector":
        return StateVector(
            self.modes if modes is None else modes,
            terms,
            self.cutoff if cutoff is None else cutoff,
            self.prune,
            _trusted=True,
        )


def make_vacuum(modes: Sequence[int], cutoff: int) -> StateVector:
    if not modes:
        raise ValueError("make_vacuum needs at least one mode")
    if cutoff < 1:
        raise ValueError("cutoff must be at least 1")
    return StateVector(modes, {(0,) * len(modes): 1.0}, cutoff)


def make_fock(mode: int, n: int, cutoff: int) -> StateVector:
    if n < 0:
        raise ValueError("photon number must be nonnegative")
    if n > cutoff:
        raise CutoffError(f"n={n} exceeds cutoff {cutoff}")
    return StateVector((mode,), {(n,): 1.0}, cutoff)


def coherent_tail(alpha_mag: float, cutoff: int) -> float:
    """Poisson weight above ``cutoff`` for mean photon number ``|alpha|^2``."""
    return float(poisson.sf(cutoff, alpha_mag**2)) if alpha_mag > 0 else 0.0


def coherent_cutoff(alpha_mag: float, tail_tol: float = TAIL_TOL) -> int:
    """Smallest cutoff whose discarded Poisson tail is below ``tail_tol``."""
    c = 1
    while coherent_tail(alpha_mag, c) >= tail_tol:
        c += 1
    return c


def coherent_amplitudes(alpha: complex, cutoff: int, renormalize: bool = True) -> np.ndarray:
    n = np.arange(cutoff + 1)
    mag, arg = abs(alpha), np.angle(alpha)
    if mag == 0:
        amps = np.zeros(cutoff + 1, dtype=complex)
        amps[0] = 1.0
        return amps
    logmag = -(mag**2) / 2 + n * math.log(mag) - 0.5 * np.array([math.lgamma(k + 1) for k in n])
    amps = np.exp(logmag) * np.exp(1j * arg * n)
    if renormalize:
        amps /= np.linalg.norm(amps)
    return amps


def make_coherent(
    mode: int, amplitude: complex, cutoff: int, tail_tol: float | None = TAIL_TOL
) -> StateVector:
    """Truncated coherent state ``|amplitude>``, renormalized inside the cutoff.

    Pass ``tail_tol=None`` to skip the truncation guard.
    """
    tail = coherent_tail(abs(amplitude), cutoff)
    if tail_tol is not None and tail > tail_tol:
        raise CutoffError(
            f"cutoff {cutoff} discards Poisson weight {tail:.3e} > {tail_tol:.1e} for "
            f"|alpha|={abs(amplitude):.4g}; need cutoff >= {coherent_cutoff(abs(amplitude), tail_tol)}"
        )
    amps = coherent_amplitudes(amplitude, cutoff)
    return StateVector((mode,), {(n,): a for n, a in enumerate(amps)}, cutoff)


def tensor(a: StateVector, b: StateVector) -> StateVector:
    overlap = set(a.modes) & set(b.modes)
    if overlap:
        raise ValueError(f"tensor of states sharing modes {sorted(overlap)}")
    terms = {ka + kb: xa * xb for ka, xa in a.terms.items() for kb, xb in b.terms.items()}
    return StateVector(
        a.modes + b.modes, terms, max(a.cutoff, b.cutoff), min(a.prune, b.prune), _trusted=True
    )


def relabel(s: StateVector, mapping: Mapping[int, int]) -> StateVector:
    """Rename modes (e.g. a splitter's input paths to its output paths)."""
    modes = tuple(mapping.get(m, m) for m in s.modes)
    return s._replace(s.terms, modes=modes)


@lru_cache(maxsize=None)
def _mixing_eigvecs(total: int) -> tuple[np.ndarray, np.ndarray]:
    # generator a1^dag a2 + a2^dag a1 on |j, total-j>; spectrum is total - 2m exactly
    if total == 0:
        return np.zeros(1), np.ones((1, 1))
    j = np.arange(total)
    off = np.sqrt((j + 1.0) * (total - j))
    evals, evecs = eigh_tridiagonal(np.zeros(total + 1), off)
    return np.round(evals), evecs


@lru_cache(maxsize=4096)
def beam_splitter_block(total: int, theta: float, conjugate: bool = False) -> np.ndarray:
    """Unitary on the ``total``-photon subspace, indexed by photons in the first mode."""
    evals, evecs = _mixing_eigvecs(total)
    sign = -1.0 if conjugate else 1.0
    phases = np.exp(1j * sign * theta / 2 * evals)
    return (evecs * phases) @ evecs.T


def apply_beam_splitter(s: StateVector, m1: int, m2: int, bs: BeamSplitter) -> StateVector:
    if m1 == m2:
        raise ValueError("beam splitter needs two distinct modes")
    i1, i2 = s.index(m1), s.index(m2)
    groups: dict[tuple[Ket, int], dict[int, complex]] = defaultdict(dict)
    for ket, amp in s.terms.items():
        n1, n2 = ket[i1], ket[i2]
        rest = list(ket)
        rest[i1] = rest[i2] = 0
        groups[tuple(rest), n1 + n2][n1] = amp

    out: dict[Ket, complex] = defaultdict(complex)
    for (rest, total), comps in groups.items():
        if total == 0:
            out[rest] += comps[0]
            continue
        vec = np.zeros(total + 1, dtype=complex)
        for j, a in comps.items():
            vec[j] = a
        res = beam_splitter_block(total, bs.theta, bs.conjugate) @ vec
        for j in np.flatnonzero(np.abs(res) > s.prune):
            j = int(j)
            if j > s.cutoff or total - j > s.cutoff:
                raise CutoffError(
                    f"beam splitter on modes ({m1}, {m2}) puts {max(j, total - j)} photons "
                    f"in one mode with amplitude {abs(res[j]):.2e}; cutoff {s.cutoff} too small"
                )
            ket = list(rest)
            ket[i1], ket[i2] = j, total - j
            out[tuple(ket)] += res[j]
    return s._replace(out)


def apply_phase(s: StateVector, mode: int, phi: float) -> StateVector:
    i = s.index(mode)
    return s._replace({k: a * np.exp(1j * phi * k[i]) for k, a in s.terms.items()})


def _positions(s: StateVector, modes: Iterable[int]) -> list[int]:
    return [s.index(m) for m in modes]


def outcome_probability(s: StateVector, pattern: Mapping[int, int]) -> float:
    """Probability that number-resolving detection on ``pattern``'s modes gives it."""
    idx = _positions(s, pattern)
    want = tuple(pattern.values())
    return sum(
        abs(a) ** 2 for k, a in s.terms.items() if tuple(k[i] for i in idx) == want
    )


def distribution(s: StateVector, modes: Sequence[int] | None = None) -> dict[Ket, float]:
    """Marginal occupation distribution over ``modes`` (all modes by default)."""
    idx = _positions(s, s.modes if modes is None else modes)
    dist: dict[Ket, float] = defaultdict(float)
    for k, a in s.terms.items():
        dist[tuple(k[i] for i in idx)] += abs(a) ** 2
    return dict(dist)


def postselect(
    s: StateVector,
    modes: Sequence[int],
    predicate: Callable[[Ket], bool],
    strict: bool = False,
) -> tuple[float, StateVector | None]:
    """Project onto kets whose occupations on ``modes`` satisfy ``predicate``.

    Returns the acceptance probability and the renormalized projected state.
    A zero-probability projection yields ``(0.0, None)``, or raises
    :class:`PostselectionError` when ``strict``.
    """
    idx = _positions(s, modes)
    kept = {k: a for k, a in s.terms.items() if predicate(tuple(k[i] for i in idx))}
    prob = sum(abs(a) ** 2 for a in kept.values()) / sum(abs(a) ** 2 for a in s.terms.values())
    if prob == 0.0:
        if strict:
            raise PostselectionError(f"post-selection on modes {tuple(modes)} has zero probability")
        return 0.0, None
    return prob, s._replace(kept).normalized()


def project_out(s: StateVector, modes: Sequence[int], occupations: Sequence[int]) -> StateVector:
    """Condition on a detection pattern and drop the measured modes."""
    idx = _positions(s, modes)
    keep = [i for i in range(len(s.modes)) if i not in idx]
    want = tuple(occupations)
    terms = {
        tuple(k[i] for i in keep): a
        for k, a in s.terms.items()
        if tuple(k[i] for i in idx) == want
    }
    if not terms:
        raise PostselectionError(f"pattern {want} on modes {tuple(modes)} has zero probability")
    return s._replace(terms, modes=tuple(s.modes[i] for i in keep)).normalized()


def sample_outcome(s: StateVector, rng: np.random.Generator) -> OutcomePattern:
    """Draw a full occupation pattern with Born-rule probabilities."""
    n = s.norm()
    if abs(n - 1.0) > NORM_TOL:
        raise ValueError(f"sampling needs a normalized state, norm is {n!r}")
    kets = sorted(s.terms)
    cdf = np.cumsum([abs(s.terms[k]) ** 2 for k in kets])
    j = int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right"))
    ket = kets[min(j, len(kets) - 1)]
    return dict(zip(s.modes, ket))
