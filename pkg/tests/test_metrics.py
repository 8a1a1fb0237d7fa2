"""Alignment solver, distance, relative error, incoherence measures."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import demix
from demix.metrics import (
    align_objective,
    align_source,
    align_source_unit,
    align_state,
    aligned_error,
    dist,
    incoherence_measures,
    incoherence_mu,
    relative_error,
)
from demix.objective import DemixState
from demix.problem import Dimensions, make_instance, sample_ground_truth

from oracles import grid_align


def _pair(gen, K=5, scale_lo=0.5, scale_hi=2.0):
    def vec(scale):
        v = gen.standard_normal(K) + 1j * gen.standard_normal(K)
        return scale * v / np.linalg.norm(v)

    return (
        vec(gen.uniform(scale_lo, scale_hi)),
        vec(gen.uniform(scale_lo, scale_hi)),
        vec(gen.uniform(scale_lo, scale_hi)),
        vec(gen.uniform(scale_lo, scale_hi)),
    )


# ------------------------------------------------------------------ alignment


def test_align_recovers_exact_gauge():
    gen = np.random.default_rng(4)
    for _ in range(20):
        h_ref = gen.standard_normal(6) + 1j * gen.standard_normal(6)
        x_ref = gen.standard_normal(6) + 1j * gen.standard_normal(6)
        c = complex(gen.standard_normal() + 1j * gen.standard_normal())
        h = h_ref / np.conj(c)
        x = c * x_ref
        # alpha = 1/c undoes the scaling perfectly
        alpha = align_source(h, x, h_ref, x_ref)
        assert align_objective(alpha, h, x, h_ref, x_ref) <= 1e-12
        assert abs(alpha - 1 / c) <= 1e-7 * abs(1 / c)


def test_align_orthogonal_closed_form():
    # with h \perp h_ref and x \perp x_ref only the norms matter:
    # g(beta) = nh/beta^2 + nx beta^2 + const, minimized at (nh/nx)^(1/4)
    h = np.array([1.0 + 0j, 0.0]) * 3.0
    h_ref = np.array([0.0, 1.0 + 0j])
    x = np.array([0.0, 2.0 + 0j])
    x_ref = np.array([1.0 + 0j, 0.0])
    alpha = align_source(h, x, h_ref, x_ref)
    assert alpha == pytest.approx((9.0 / 4.0) ** 0.25, rel=1e-9)


def test_align_matches_grid_oracle():
    gen = np.random.default_rng(44)
    for _ in range(20):
        h, x, h_ref, x_ref = _pair(gen)
        alpha = align_source(h, x, h_ref, x_ref)
        got = align_objective(alpha, h, x, h_ref, x_ref)
        _, want = grid_align(h, x, h_ref, x_ref)
        assert got <= want + 1e-9


def test_align_never_beaten_by_perturbations():
    gen = np.random.default_rng(45)
    for _ in range(10):
        h, x, h_ref, x_ref = _pair(gen)
        alpha, base = aligned_error(h, x, h_ref, x_ref)
        noise = 1.0 + 0.1 * (gen.uniform(-1, 1, 1000) + 1j * gen.uniform(-1, 1, 1000))
        for cand in alpha * noise:
            assert align_objective(cand, h, x, h_ref, x_ref) >= base - 1e-12


def test_align_unit_constrained_never_below_unconstrained():
    gen = np.random.default_rng(46)
    for _ in range(25):
        h, x, h_ref, x_ref = _pair(gen, scale_lo=0.2, scale_hi=5.0)
        free = align_objective(align_source(h, x, h_ref, x_ref), h, x, h_ref, x_ref)
        unit = align_source_unit(h, x, h_ref, x_ref)
        assert abs(abs(unit) - 1.0) <= 1e-12
        assert align_objective(unit, h, x, h_ref, x_ref) >= free - 1e-12


def test_align_unit_optimal_over_phases():
    gen = np.random.default_rng(47)
    h, x, h_ref, x_ref = _pair(gen)
    unit = align_source_unit(h, x, h_ref, x_ref)
    base = align_objective(unit, h, x, h_ref, x_ref)
    for theta in np.linspace(0, 2 * np.pi, 720):
        assert align_objective(np.exp(1j * theta), h, x, h_ref, x_ref) >= base - 1e-12


def test_align_rejects_zero_vectors():
    z = np.zeros(3, dtype=complex)
    v = np.ones(3, dtype=complex)
    with pytest.raises(ValueError):
        align_source(z, v, v, v)
    with pytest.raises(ValueError):
        align_source_unit(v, z, v, v)


@settings(max_examples=25, deadline=None)
@given(
    seed=st.integers(0, 10_000),
    re=st.floats(-2.0, 2.0),
    im=st.floats(-2.0, 2.0),
)
def test_align_gauge_equivariance(seed, re, im):
    c = complex(re, im)
    if abs(c) < 1e-3:
        c = 1.0 + 0j
    gen = np.random.default_rng(seed)
    h, x, h_ref, x_ref = _pair(gen)
    alpha = align_source(h, x, h_ref, x_ref)
    # the gauge motion (h, x) -> (h/conj(c), c x) shifts the optimum to
    # alpha/c and leaves the optimal objective value unchanged
    alpha_c = align_source(h / np.conj(c), c * x, h_ref, x_ref)
    g1 = align_objective(alpha, h, x, h_ref, x_ref)
    g2 = align_objective(alpha_c, h / np.conj(c), c * x, h_ref, x_ref)
    assert g2 == pytest.approx(g1, rel=1e-7, abs=1e-9)
    assert abs(alpha_c * c - alpha) <= 1e-5 * abs(alpha)


# ------------------------------------------------------------ dist / rel. err


def _gauge_shift(state, cs):
    h = state.h.copy()
    x = state.x.copy()
    for i, c in enumerate(cs):
        h[i] = h[i] / np.conj(c)
        x[i] = c * x[i]
    return DemixState(h=h, x=x)


def test_metrics_vanish_at_truth(small_instance):
    # both go through cancelling subtractions, so the floor is ~sqrt(eps)
    truth = small_instance.truth
    st = DemixState(h=truth.h.copy(), x=truth.x.copy())
    assert dist(st, truth) <= 1e-7
    assert relative_error(st, truth) <= 1e-7


def test_gauge_invariance(small_instance):
    gen = np.random.default_rng(6)
    truth = small_instance.truth
    st = DemixState(
        h=truth.h + 0.1 * (gen.standard_normal(truth.h.shape) + 1j * gen.standard_normal(truth.h.shape)),
        x=truth.x + 0.1 * (gen.standard_normal(truth.x.shape) + 1j * gen.standard_normal(truth.x.shape)),
    )
    d0 = dist(st, truth)
    r0 = relative_error(st, truth)
    for _ in range(5):
        cs = gen.standard_normal(2) + 1j * gen.standard_normal(2)
        shifted = _gauge_shift(st, cs)
        assert dist(shifted, truth) == pytest.approx(d0, abs=1e-10, rel=1e-10)
        assert relative_error(shifted, truth) == pytest.approx(r0, abs=1e-10, rel=1e-10)


def test_dist_error_compatibility(small_instance):
    gen = np.random.default_rng(60)
    truth = small_instance.truth
    st = DemixState(
        h=truth.h + 0.05 * gen.standard_normal(truth.h.shape),
        x=truth.x.copy(),
    )
    assert dist(st, truth) > 1e-3
    assert relative_error(st, truth) > 1e-4
    gauged = _gauge_shift(
        DemixState(h=truth.h.copy(), x=truth.x.copy()), [2.0 + 1j, 0.5 - 0.25j]
    )
    # pure gauge motion: products unchanged, both metrics stay at the floor
    assert relative_error(gauged, truth) <= 1e-7
    assert dist(gauged, truth) <= 1e-7


def test_relative_error_matches_full_matrices(small_instance):
    gen = np.random.default_rng(61)
    truth = small_instance.truth
    st = DemixState(
        h=gen.standard_normal(truth.h.shape) + 1j * gen.standard_normal(truth.h.shape),
        x=gen.standard_normal(truth.x.shape) + 1j * gen.standard_normal(truth.x.shape),
    )
    num = 0.0
    den = 0.0
    for i in range(truth.h.shape[0]):
        diff = np.outer(st.h[i], np.conj(st.x[i])) - np.outer(truth.h[i], np.conj(truth.x[i]))
        num += np.linalg.norm(diff, "fro")
        den += np.linalg.norm(np.outer(truth.h[i], np.conj(truth.x[i])), "fro")
    assert relative_error(st, truth) == pytest.approx(num / den, rel=1e-10)


def test_dist_matches_per_source_definition(small_instance):
    gen = np.random.default_rng(62)
    truth = small_instance.truth
    st = DemixState(
        h=truth.h + 0.2 * (gen.standard_normal(truth.h.shape) + 1j * gen.standard_normal(truth.h.shape)),
        x=truth.x + 0.2 * (gen.standard_normal(truth.x.shape) + 1j * gen.standard_normal(truth.x.shape)),
    )
    total = 0.0
    for i in range(truth.h.shape[0]):
        _, g = aligned_error(st.h[i], st.x[i], truth.h[i], truth.x[i])
        total += g / truth.d[i]
    assert dist(st, truth) == pytest.approx(np.sqrt(total), rel=1e-12)


def test_dist_shape_mismatch():
    truth = sample_ground_truth(Dimensions(s=2, m=8, K=3), kappa=1.0, rng_seed=1)
    st = DemixState(h=np.ones((1, 3), dtype=complex), x=np.ones((1, 3), dtype=complex))
    with pytest.raises(ValueError):
        dist(st, truth)
    with pytest.raises(ValueError):
        relative_error(st, truth)


# ---------------------------------------------------------------- incoherence


def test_mu_bounds_over_random_truths():
    gen = np.random.default_rng(63)
    for _ in range(10):
        K = int(gen.integers(2, 8))
        m = int(gen.integers(K, 64))
        inst = make_instance(
            Dimensions(s=int(gen.integers(1, 4)), m=m, K=K),
            kappa=1.0,
            sigma=0.0,
            seed=int(gen.integers(1 << 30)),
        )
        mu = incoherence_mu(inst.truth, inst.B)
        assert 1.0 - 1e-12 <= mu <= np.sqrt(K) + 1e-12


def test_incoherence_measures_at_truth(small_instance):
    inst = small_instance
    st = DemixState(h=inst.truth.h.copy(), x=inst.truth.x.copy())
    alignments = align_state(st, inst.truth)
    assert np.allclose(alignments.alpha, 1.0, atol=1e-8)
    inc_a, inc_b = incoherence_measures(st, inst.truth, inst, alignments)
    assert inc_a <= 1e-7
    want_b = inst.truth.mu / np.sqrt(inst.dims.m)
    assert inc_b == pytest.approx(want_b, rel=1e-6)


def test_incoherence_requires_alignments(small_instance):
    inst = small_instance
    st = DemixState(h=inst.truth.h.copy(), x=inst.truth.x.copy())
    with pytest.raises(ValueError):
        incoherence_measures(st, inst.truth, inst, None)
