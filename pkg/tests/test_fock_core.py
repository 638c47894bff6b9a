import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import bs_binomial
from spnl.fock_core import (
    BALANCED,
    BeamSplitter,
    CutoffError,
    PostselectionError,
    StateVector,
    apply_beam_splitter,
    apply_phase,
    coherent_amplitudes,
    coherent_cutoff,
    distribution,
    make_coherent,
    make_fock,
    make_vacuum,
    outcome_probability,
    postselect,
    relabel,
    sample_outcome,
    tensor,
)
from spnl import schemes
from spnl.analytic import scheme1_pattern_probs

SQRT_HALF = 1 / math.sqrt(2)


def bell_pair():
    return StateVector((1, 2), {(0, 1): SQRT_HALF, (1, 0): 1j * SQRT_HALF}, 2)


def close_states(a, b, tol):
    keys = set(a.terms) | set(b.terms)
    return max((abs(a.terms.get(k, 0) - b.terms.get(k, 0)) for k in keys), default=0.0) < tol


@st.composite
def small_states(draw, nmodes=3, cutoff=4):
    kets = draw(st.lists(
        st.tuples(*[st.integers(0, 2) for _ in range(nmodes)]), min_size=1, max_size=8, unique=True
    ))
    amps = draw(st.lists(
        st.complex_numbers(max_magnitude=1, allow_nan=False, allow_infinity=False),
        min_size=len(kets), max_size=len(kets),
    ))
    terms = {k: a for k, a in zip(kets, amps) if abs(a) > 1e-3}
    if not terms:
        terms = {kets[0]: 1.0}
    return StateVector(tuple(range(1, nmodes + 1)), terms, cutoff).normalized()


angles = st.floats(0, math.pi, allow_nan=False)


# -- constructors


def test_vacuum():
    s = make_vacuum([1, 2], 4)
    assert s.amplitude((0, 0)) == 1
    assert len(s) == 1
    assert s.norm() == 1


def test_vacuum_rejects_empty_modes():
    with pytest.raises(ValueError):
        make_vacuum([], 2)


def test_tensor_with_vacuum_keeps_outcome_distribution():
    s = tensor(bell_pair(), make_vacuum([3], 2))
    assert distribution(s, (1, 2)) == pytest.approx(distribution(bell_pair()))


def test_make_fock():
    assert make_fock(2, 1, 3).amplitude((1,)) == 1
    assert make_fock(2, 0, 3).terms == make_vacuum([2], 3).terms
    assert make_fock(9, 6, 6).amplitude((6,)) == 1
    with pytest.raises(CutoffError):
        make_fock(2, 5, 4)


def test_coherent_zero_is_vacuum():
    assert make_coherent(3, 0, 5).terms == {(0,): 1}


def test_coherent_vacuum_weight_before_renormalization():
    amps = coherent_amplitudes(1.0, 30, renormalize=False)
    assert abs(amps[0]) ** 2 == pytest.approx(math.exp(-1), abs=1e-15)
    assert abs(amps[0]) ** 2 == pytest.approx(0.367879, abs=1e-6)


@pytest.mark.parametrize("phi", [0.0, 0.4, 2.2, -1.3])
def test_coherent_first_ratio_is_phase(phi):
    s = make_coherent(8, np.exp(1j * phi), 15)
    assert s.amplitude((1,)) / s.amplitude((0,)) == pytest.approx(np.exp(1j * phi), abs=1e-14)


def test_coherent_tail_guard():
    with pytest.raises(CutoffError):
        make_coherent(3, 2.0, 5)
    assert len(make_coherent(3, 2.0, 5, tail_tol=None)) == 6
    c = coherent_cutoff(2.0)
    assert make_coherent(3, 2.0, c).norm() == pytest.approx(1, abs=1e-14)


def test_tensor_rejects_overlap():
    with pytest.raises(ValueError):
        tensor(bell_pair(), make_vacuum([2], 2))


def test_tensor_product_state():
    s = tensor(bell_pair(), make_vacuum([3], 2))
    assert len(s) == 2
    assert s.modes == (1, 2, 3)
    assert s.norm() == pytest.approx(1, abs=1e-15)


# -- beam splitter


def test_balanced_on_single_photon():
    s = apply_beam_splitter(tensor(make_vacuum([1], 2), make_fock(2, 1, 2)), 1, 2, BALANCED)
    assert s.amplitude((0, 1)) == pytest.approx(SQRT_HALF, abs=1e-15)
    assert s.amplitude((1, 0)) == pytest.approx(1j * SQRT_HALF, abs=1e-15)


def test_zero_angle_is_identity():
    s = bell_pair()
    assert close_states(apply_beam_splitter(s, 1, 2, BeamSplitter(0.0)), s, 1e-15)


def test_hong_ou_mandel():
    s = apply_beam_splitter(tensor(make_fock(1, 1, 2), make_fock(2, 1, 2)), 1, 2, BALANCED)
    oracle = bs_binomial(1, 1, math.pi / 2)
    assert oracle[0, 2] == pytest.approx(1j * SQRT_HALF)
    assert abs(s.amplitude((1, 1))) < 1e-12
    assert s.amplitude((2, 0)) == pytest.approx(1j * SQRT_HALF, abs=1e-12)
    assert s.amplitude((0, 2)) == pytest.approx(1j * SQRT_HALF, abs=1e-12)


@pytest.mark.parametrize("n1,n2", [(1, 0), (2, 1), (3, 3), (0, 5), (4, 2)])
@pytest.mark.parametrize("theta", [0.3, math.pi / 2, 2.5])
def test_beam_splitter_matches_binomial_expansion(n1, n2, theta):
    s = tensor(make_fock(1, n1, 8), make_fock(2, n2, 8))
    out = apply_beam_splitter(s, 1, 2, BeamSplitter(theta))
    oracle = bs_binomial(n1, n2, theta)
    for ket, amp in oracle.items():
        assert out.amplitude(ket) == pytest.approx(amp, abs=1e-12)


def test_beam_splitter_mode_order_irrelevant():
    s = tensor(make_fock(5, 2, 4), make_fock(3, 1, 4))
    a = apply_beam_splitter(s, 5, 3, BeamSplitter(1.1))
    b = apply_beam_splitter(relabel(s, {}), 5, 3, BeamSplitter(1.1))
    assert close_states(a, b, 1e-15)


def test_beam_splitter_cutoff_overflow():
    s = tensor(make_fock(1, 2, 2), make_fock(2, 2, 2))
    with pytest.raises(CutoffError, match="cutoff"):
        apply_beam_splitter(s, 1, 2, BALANCED)
    assert apply_beam_splitter(s.with_cutoff(4), 1, 2, BALANCED).norm() == pytest.approx(1)


def test_beam_splitter_needs_distinct_modes():
    with pytest.raises(ValueError):
        apply_beam_splitter(bell_pair(), 1, 1, BALANCED)


def test_splitter_params():
    bs = BeamSplitter.from_reflectivity(math.sin(0.4))
    assert bs.theta == pytest.approx(0.8)
    assert bs.reflectivity**2 + bs.transmittivity**2 == pytest.approx(1)
    assert BeamSplitter.from_transmittivity(0.5).transmittivity == pytest.approx(0.5)
    with pytest.raises(ValueError):
        BeamSplitter.from_transmittivity(1.5)


def test_overflow_is_reported_not_truncated():
    s = tensor(make_fock(1, 2, 3), make_fock(2, 2, 3))
    with pytest.raises(CutoffError):
        apply_beam_splitter(s, 1, 2, BeamSplitter(1.0))


@given(small_states(), angles)
def test_unitarity(s, theta):
    s = s.with_cutoff(6)
    out = apply_beam_splitter(s, 1, 3, BeamSplitter(theta))
    assert abs(out.norm() - s.norm()) < 1e-12


@given(small_states(), angles)
def test_inverse_composition(s, theta):
    s = s.with_cutoff(6)
    bs = BeamSplitter(theta)
    back = apply_beam_splitter(apply_beam_splitter(s, 2, 3, bs), 2, 3, bs.inverse())
    assert close_states(back, s, 1e-10)


@given(small_states(), angles)
def test_other_modes_untouched(s, theta):
    s = s.with_cutoff(6)
    out = apply_beam_splitter(s, 2, 3, BeamSplitter(theta))
    assert distribution(out, (1,)) == pytest.approx(distribution(s, (1,)), abs=1e-12)


@given(small_states(), angles, angles)
def test_probability_completeness(s, t1, t2):
    s = s.with_cutoff(6)
    out = apply_beam_splitter(apply_beam_splitter(s, 1, 2, BeamSplitter(t1)), 2, 3, BeamSplitter(t2))
    assert sum(distribution(out).values()) == pytest.approx(1, abs=1e-10)


# -- phases


def test_phase_identities():
    s = make_coherent(1, 0.7 + 0.2j, 20)
    assert close_states(apply_phase(s, 1, 0.0), s, 1e-15)
    assert close_states(apply_phase(s, 1, 2 * math.pi), s, 1e-12)


@pytest.mark.parametrize("phi", [0.3, 1.9, -2.4])
def test_phase_rotates_coherent_state(phi):
    alpha = 1.3
    rotated = apply_phase(make_coherent(1, alpha, 30), 1, phi)
    assert close_states(rotated, make_coherent(1, alpha * np.exp(1j * phi), 30), 1e-12)
    assert rotated.norm() == pytest.approx(1, abs=1e-14)


@pytest.mark.parametrize("phi", [0.5, 2.0])
def test_phase_covariance(phi):
    s = tensor(make_coherent(1, 1.1, 25), make_coherent(2, 0.6j, 25)).with_cutoff(50)
    bs = BeamSplitter(1.2)
    before = apply_beam_splitter(apply_phase(apply_phase(s, 1, phi), 2, phi), 1, 2, bs)
    after = apply_phase(apply_phase(apply_beam_splitter(s, 1, 2, bs), 1, phi), 2, phi)
    assert close_states(before, after, 1e-12)


def test_phase_on_one_input_with_vacuum_partner():
    s = tensor(make_coherent(1, 1.0, 25), make_vacuum([2], 25))
    bs, phi = BeamSplitter(0.9), 1.3
    before = apply_beam_splitter(apply_phase(s, 1, phi), 1, 2, bs)
    after = apply_phase(apply_phase(apply_beam_splitter(s, 1, 2, bs), 1, phi), 2, phi)
    assert close_states(before, after, 1e-12)


# -- truncation


@pytest.mark.parametrize("alpha", [0.5, 1.0, 1.5, 2.0])
def test_truncation_convergence(alpha):
    def probs(cutoff):
        s = tensor(make_coherent(1, alpha, cutoff), make_coherent(2, 1j * alpha / 2, cutoff))
        s = apply_beam_splitter(s.with_cutoff(2 * cutoff), 1, 2, BeamSplitter(1.0))
        return distribution(s)

    c = coherent_cutoff(alpha)
    lo, hi = probs(c), probs(2 * c)
    assert max(abs(lo.get(k, 0) - hi[k]) for k in hi) < 1e-8


# -- measurement


def test_outcome_probability():
    s = tensor(make_fock(1, 1, 2), make_fock(2, 0, 2))
    assert outcome_probability(s, {1: 1, 2: 0}) == 1
    assert outcome_probability(bell_pair(), {1: 1}) == pytest.approx(0.5)
    with pytest.raises(KeyError):
        outcome_probability(bell_pair(), {7: 1})


def test_postselect_true_predicate():
    p, s = postselect(bell_pair(), (1,), lambda o: True)
    assert p == pytest.approx(1)
    assert close_states(s, bell_pair(), 1e-15)


def test_postselect_zero_probability():
    s = make_fock(2, 1, 2)
    assert postselect(s, (2,), lambda o: o[0] == 0) == (0.0, None)
    with pytest.raises(PostselectionError):
        postselect(s, (2,), lambda o: o[0] == 0, strict=True)


def test_postselect_scheme1_matches_probabilities():
    # full-state route, no early projection
    xi, eta, dphi = 0.9, -0.4, 1.1
    r = schemes.run_scheme1_exact(xi, eta, 0.3, 0.3 + dphi, cutoff=4, tail_tol=None,
                                  early_postselect=False)
    assert sum(r.pattern_probs.values()) == pytest.approx(1, abs=1e-12)
    ref = scheme1_pattern_probs(xi, eta, dphi)
    for p, v in ref.items():
        assert r.pattern_probs[p] == pytest.approx(v, abs=1e-12)


def test_sample_single_term():
    rng = np.random.default_rng(1)
    s = tensor(make_fock(1, 2, 2), make_fock(4, 0, 2))
    assert all(sample_outcome(s, rng) == {1: 2, 4: 0} for _ in range(20))


def test_sample_balanced_frequency():
    rng = np.random.default_rng(2024)
    n = 100_000
    hits = sum(sample_outcome(bell_pair(), rng)[1] == 1 for _ in range(n))
    assert abs(hits / n - 0.5) < 3 * math.sqrt(0.25 / n)


def test_sample_scheme1_conditional_frequencies():
    r = schemes.run_scheme1_exact(0.5, 1.4, 0.0, 2.0)
    s = r.accepted_state
    rng = np.random.default_rng(99)
    n = 20_000
    counts = {}
    for _ in range(n):
        o = sample_outcome(s, rng)
        key = "".join(str(o[m]) for m in (4, 5, 6, 7))
        counts[key] = counts.get(key, 0) + 1
    for pattern in ("1010", "0101", "1001", "0110"):
        p = outcome_probability(s, {m: int(ch) for m, ch in zip((4, 5, 6, 7), pattern)})
        assert p == pytest.approx(r.pattern_probs[pattern], abs=1e-12)
        assert abs(counts.get(pattern, 0) / n - p) < 3 * math.sqrt(p * (1 - p) / n)


def test_sample_is_deterministic_given_stream():
    s = make_coherent(1, 1.2, 20)
    a = [sample_outcome(s, np.random.default_rng(5))[1] for _ in range(3)]
    b = [sample_outcome(s, np.random.default_rng(5))[1] for _ in range(3)]
    assert a == b


def test_sample_rejects_unnormalized():
    s = StateVector((1,), {(0,): 0.5}, 1)
    with pytest.raises(ValueError):
        sample_outcome(s, np.random.default_rng(0))


def test_prune_threshold():
    s = StateVector((1,), {(0,): 1.0, (1,): 1e-16}, 2)
    assert len(s) == 1
    assert len(StateVector((1,), {(0,): 1.0, (1,): 1e-16}, 2, prune=1e-20)) == 2
