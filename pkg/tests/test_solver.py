"""Spectral initialization, the scaled-step loop, and trajectory recording."""

import numpy as np
import pytest

import demix
from demix.objective import DemixState, gradient_arrays, loss
from demix.problem import Dimensions, make_instance
from demix.solver import (
    DegenerateIterateError,
    DivergenceError,
    SolverConfig,
    backprojection_matrices,
    init_from_matrices,
    leading_triple,
    run,
    spectral_init,
    step_arrays,
    wf_step,
)

from conftest import FIG1A_SEEDS, random_state
from oracles import iters_to, lsq_slope, naive_backprojection


# -------------------------------------------------------------- backprojection


def test_backprojection_matches_naive(small_instance):
    inst = small_instance
    Ms = backprojection_matrices(inst.A, inst.B, inst.y)
    ref = naive_backprojection(inst.A, inst.B, inst.y)
    assert Ms.shape == (inst.dims.s, inst.dims.K, inst.dims.K)
    assert np.allclose(Ms, ref, rtol=1e-12, atol=1e-13)


# -------------------------------------------------------------- leading triple


def test_leading_triple_matches_dense_svd():
    gen = np.random.default_rng(15)
    for n in (1, 2, 5, 9):
        M = gen.standard_normal((n, n)) + 1j * gen.standard_normal((n, n))
        sigma, u, v = leading_triple(M)
        want = np.linalg.svd(M, compute_uv=False)[0]
        assert sigma == pytest.approx(want, rel=1e-10)
        assert np.linalg.norm(u) == pytest.approx(1.0, rel=1e-10)
        assert np.linalg.norm(v) == pytest.approx(1.0, rel=1e-10)
        # defining equations of a singular triple; vector accuracy is about
        # the square root of the sigma tolerance when the gap is small
        assert np.linalg.norm(M @ v - sigma * u) <= 1e-5 * max(sigma, 1.0)
        assert np.linalg.norm(M.conj().T @ u - sigma * v) <= 1e-5 * max(sigma, 1.0)


def test_leading_triple_exact_rank_one():
    u0 = np.array([3.0, 4.0j, 0.0]) / 5.0
    v0 = np.array([1.0, 1.0j, 0.0]) / np.sqrt(2.0)
    M = 2.5 * np.outer(u0, np.conj(v0))
    sigma, u, v = leading_triple(M)
    assert sigma == pytest.approx(2.5, rel=1e-12)
    assert abs(np.vdot(u0, u)) == pytest.approx(1.0, rel=1e-10)
    assert abs(np.vdot(v0, v)) == pytest.approx(1.0, rel=1e-10)


def test_leading_triple_zero_matrix():
    sigma, u, v = leading_triple(np.zeros((4, 4), dtype=complex))
    assert sigma == 0.0
    assert np.all(u == 0)


def test_leading_triple_tied_top_pair():
    # no spectral gap: any unit vector in the top subspace is acceptable
    M = np.diag([1.0, 1.0, 0.25]).astype(complex)
    sigma, u, v = leading_triple(M)
    assert sigma == pytest.approx(1.0, rel=1e-9)
    assert np.linalg.norm(M @ v - sigma * u) <= 1e-8


# ----------------------------------------------------------------- initializer


def test_init_phase_gauge_and_invariance():
    gen = np.random.default_rng(19)
    M = gen.standard_normal((4, 4)) + 1j * gen.standard_normal((4, 4))
    st = init_from_matrices(M[None, :, :])
    h = st.h[0]
    k = int(np.argmax(np.abs(h)))
    assert h[k].imag == pytest.approx(0.0, abs=1e-12)
    assert h[k].real > 0
    # a global phase on M moves only the x factor
    st2 = init_from_matrices((np.exp(0.7j) * M)[None, :, :])
    h2 = st2.h[0]
    k2 = int(np.argmax(np.abs(h2)))
    assert h2[k2].imag == pytest.approx(0.0, abs=1e-12)
    assert h2[k2].real > 0
    assert np.allclose(st2.h[0], st.h[0], atol=1e-9)
    P1 = np.outer(st.h[0], np.conj(st.x[0]))
    P2 = np.outer(st2.h[0], np.conj(st2.x[0]))
    assert np.allclose(P2, np.exp(0.7j) * P1, atol=1e-9)


def test_init_scales_by_sqrt_sigma():
    u0 = np.array([1.0, 0.0], dtype=complex)
    v0 = np.array([0.0, 1.0], dtype=complex)
    M = 9.0 * np.outer(u0, np.conj(v0))
    st = init_from_matrices(M[None, :, :])
    assert np.linalg.norm(st.h[0]) == pytest.approx(3.0, rel=1e-10)
    assert np.linalg.norm(st.x[0]) == pytest.approx(3.0, rel=1e-10)


def test_spectral_init_approximates_truth_at_large_m():
    inst = make_instance(Dimensions(s=2, m=6400, K=8), kappa=1.0, sigma=0.0, seed=3)
    st = spectral_init(inst)
    assert demix.metrics.dist(st, inst.truth) < 0.25


# ----------------------------------------------------------------------- step


def test_step_uses_pre_update_norms(small_instance):
    inst = small_instance
    gen = np.random.default_rng(20)
    st = random_state(inst.dims, gen)
    eta = 0.3
    Gh, Gx = gradient_arrays(st, inst)
    hn2 = np.sum(np.abs(st.h) ** 2, axis=1)
    xn2 = np.sum(np.abs(st.x) ** 2, axis=1)
    want_h = st.h - (eta / xn2)[:, None] * Gh
    want_x = st.x - (eta / hn2)[:, None] * Gx
    new = wf_step(st, inst, eta)
    assert np.allclose(new.h, want_h, rtol=1e-13)
    assert np.allclose(new.x, want_x, rtol=1e-13)


def test_step_arrays_rejects_zero_norm(small_instance):
    inst = small_instance
    st = DemixState(
        h=np.zeros((inst.dims.s, inst.dims.K), dtype=complex),
        x=np.ones((inst.dims.s, inst.dims.K), dtype=complex),
    )
    Gh = np.ones_like(st.h)
    with pytest.raises(DegenerateIterateError):
        step_arrays(st, Gh, Gh, 0.1)


def test_truth_is_a_fixed_point(small_instance):
    inst = small_instance
    st = DemixState(h=inst.truth.h.copy(), x=inst.truth.x.copy())
    for _ in range(5):
        new = wf_step(st, inst, 0.2)
        assert np.array_equal(new.h, st.h)
        assert np.array_equal(new.x, st.x)
        st = new


def test_loss_gauge_invariance_and_phase_commutation(small_instance):
    inst = small_instance
    gen = np.random.default_rng(21)
    st = random_state(inst.dims, gen)
    base = loss(st, inst)
    cs = gen.standard_normal(inst.dims.s) + 1j * gen.standard_normal(inst.dims.s)
    shifted = DemixState(h=st.h / np.conj(cs)[:, None], x=cs[:, None] * st.x)
    assert loss(shifted, inst) == pytest.approx(base, rel=1e-10)

    # global unit phase: stepping commutes with the rotation
    phase = np.exp(0.9j)
    rotated = DemixState(h=phase * st.h, x=phase * st.x)
    a = wf_step(rotated, inst, 0.1)
    b = wf_step(st, inst, 0.1)
    assert np.allclose(a.h, phase * b.h, rtol=1e-10, atol=1e-12)
    assert np.allclose(a.x, phase * b.x, rtol=1e-10, atol=1e-12)
    assert loss(a, inst) == pytest.approx(loss(b, inst), rel=1e-10)


# ------------------------------------------------------------------- full runs


def test_run_record_invariants(small_instance):
    st, recs = run(small_instance, SolverConfig(eta=0.2, max_iters=40, record_every=1))
    iters = [r.iter for r in recs]
    assert iters[0] == 0
    assert iters == sorted(set(iters))
    assert iters[-1] == 40
    for r in recs:
        for field in ("loss", "relative_error", "dist", "incoherence_a", "incoherence_b"):
            v = getattr(r, field)
            assert v is not None and np.isfinite(v)
        assert np.all(np.isfinite(r.alignment_ratios))
    # init record matches the spectral initializer exactly
    init = spectral_init(small_instance)
    assert recs[0].loss == loss(init, small_instance)


def test_run_determinism_bit_identical(small_instance):
    cfg = SolverConfig(eta=0.2, max_iters=25, record_every=5)
    st1, recs1 = run(small_instance, cfg)
    st2, recs2 = run(small_instance, cfg)
    assert st1.h.tobytes() == st2.h.tobytes()
    assert st1.x.tobytes() == st2.x.tobytes()
    assert [r.loss for r in recs1] == [r.loss for r in recs2]
    assert [r.dist for r in recs1] == [r.dist for r in recs2]


def test_run_record_every_and_stop_tol():
    inst = make_instance(Dimensions(s=1, m=64, K=4), kappa=1.0, sigma=0.0, seed=2)
    st, recs = run(inst, SolverConfig(eta=0.2, max_iters=400, stop_tol=1e-6, record_every=7))
    iters = [r.iter for r in recs]
    assert all(t % 7 == 0 for t in iters[:-1])
    final = recs[-1]
    assert final.relative_error <= 1e-6  # stop tolerance reached...
    assert final.iter % 7 == 0 or final.iter == 400  # ...at a record point
    assert final.iter < 400


def test_run_on_iterate_sees_every_iterate(small_instance):
    seen = []
    st, recs = run(
        small_instance,
        SolverConfig(eta=0.2, max_iters=12, record_every=5),
        on_iterate=lambda t, state: seen.append((t, state.h.copy())),
    )
    assert [t for t, _ in seen] == list(range(13))
    init = spectral_init(small_instance)
    assert np.array_equal(seen[0][1], init.h)
    assert np.array_equal(seen[-1][1], st.h)


def test_run_divergence_carries_partial_records():
    inst = make_instance(Dimensions(s=2, m=64, K=8), kappa=1.0, sigma=0.0, seed=4)
    with pytest.raises(DivergenceError) as info:
        run(inst, SolverConfig(eta=50.0, max_iters=200, record_every=1))
    err = info.value
    assert err.iteration > 0
    assert err.loss_value > 0
    assert len(err.records) >= 1
    assert err.records[0].iter == 0
    assert all(r.iter < err.iteration for r in err.records)


# ----------------------------------------------------- benchmark trajectories


def test_noiseless_loss_monotone_after_early_iterations(benchmark_runs):
    for seed in FIG1A_SEEDS:
        losses = [r.loss for r in benchmark_runs[seed]]
        for k in range(10, len(losses) - 1):
            assert losses[k + 1] <= losses[k], f"seed {seed} rose at iter {k}"


def test_convergence_rate_insensitive_to_problem_size(dimension_pair_runs):
    slopes = {}
    for K, recs in dimension_pair_runs.items():
        pts = [(r.iter, np.log10(r.relative_error)) for r in recs
               if r.relative_error is not None and 1e-9 < r.relative_error <= 1e-1]
        slopes[K] = lsq_slope([p[0] for p in pts], [p[1] for p in pts])
    assert slopes[50] < 0 and slopes[100] < 0
    assert abs(slopes[50] - slopes[100]) <= 0.1 * abs(slopes[50])


def test_recorded_relative_error_reaches_stop_level(dimension_pair_runs):
    for K, recs in dimension_pair_runs.items():
        assert iters_to(recs, 1e-5) is not None
