"""Measurement suite: alignment, distance, relative error, incoherence.

Each iterate pair (h_i, x_i) carries a (c, 1/conj(c)) scaling ambiguity:
h_i x_i^* is unchanged by h -> h / conj(c), x -> c x. The alignment
parameter resolves it per source before any l2 comparison.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class Alignment:
    """Per-source complex alignment parameters alpha_i (all nonzero)."""

    alpha: np.ndarray  # (s,) complex


def align_objective(alpha: complex, h, x, h_ref, x_ref) -> float:
    """g(alpha) = ||h/conj(alpha) - h_ref||^2 + ||alpha x - x_ref||^2."""
    a = complex(alpha)
    return float(
        np.linalg.norm(h / np.conj(a) - h_ref) ** 2 + np.linalg.norm(a * x - x_ref) ** 2
    )


def _phi_terms(h, x, h_ref, x_ref):
    nh = float(np.real(np.vdot(h, h)))
    nx = float(np.real(np.vdot(x, x)))
    p = complex(np.vdot(h_ref, h))  # h_ref^* h
    q = complex(np.vdot(x_ref, x))  # x_ref^* x
    c = float(np.real(np.vdot(h_ref, h_ref)) + np.real(np.vdot(x_ref, x_ref)))
    return nh, nx, p, q, c


def _phi(beta, nh, nx, p, q):
    # objective over beta = |alpha| after the optimal phase is substituted in:
    # phi(beta) = nh/beta^2 + nx beta^2 - 2 |p/beta + q beta|
    beta = np.asarray(beta, dtype=float)
    w = p / beta + q * beta
    return nh / beta**2 + nx * beta**2 - 2.0 * np.abs(w)


def _dphi(beta, nh, nx, p, q):
    w = p / beta + q * beta
    dw = -p / beta**2 + q
    aw = np.abs(w)
    grad = -2.0 * nh / beta**3 + 2.0 * nx * beta
    safe = aw > 0
    corr = np.zeros_like(np.asarray(beta, dtype=float))
    corr[safe] = -2.0 * np.real(np.conj(w[safe]) * dw[safe]) / aw[safe]
    return grad + corr


def align_source(h, x, h_ref, x_ref) -> complex:
    """Global minimizer of g(alpha) over alpha in C \\ {0}.

    For fixed beta = |alpha| the optimal phase is closed form,
    exp(i theta) = conj(w)/|w| with w = p/beta + q beta; the remaining
    scalar problem in beta is solved by a derivative sign scan over a log
    grid on [1e-6, 1e6] with bisection refinement.
    """
    if np.linalg.norm(h) == 0 or np.linalg.norm(x) == 0:
        raise ValueError("align_source requires nonzero h and x")
    nh, nx, p, q, _ = _phi_terms(h, x, h_ref, x_ref)

    if p == 0 and q == 0:
        # pure scale balancing, closed form
        beta = (nh / nx) ** 0.25
        return complex(beta)

    grid = np.logspace(-6.0, 6.0, 481)
    # candidate betas: derivative sign changes (bisected), the multistart
    # points, the |w| = 0 kink, and the raw grid argmin as a backstop
    dvals = _dphi(grid, nh, nx, p, q)
    cands = [grid[int(np.argmin(_phi(grid, nh, nx, p, q)))]]
    nrm_x, nrm_ref = np.linalg.norm(x), np.linalg.norm(x_ref)
    if nrm_ref > 0:
        cands.append(float(nrm_ref / nrm_x))
    cands.append(1.0)
    if abs(q) > 0 and abs(p) > 0:
        cands.append(float(np.sqrt(abs(p) / abs(q))))
    sign = np.sign(dvals)
    for idx in np.nonzero(sign[:-1] * sign[1:] < 0)[0]:
        lo, hi = grid[idx], grid[idx + 1]
        flo = _dphi(np.array([lo]), nh, nx, p, q)[0]
        for _ in range(100):
            mid = np.sqrt(lo * hi)
            fmid = _dphi(np.array([mid]), nh, nx, p, q)[0]
            if flo * fmid <= 0:
                hi = mid
            else:
                lo, flo = mid, fmid
            if hi - lo <= 1e-12 * hi:
                break
        cands.append(np.sqrt(lo * hi))

    cand = np.array(cands, dtype=float)
    best = cand[int(np.argmin(_phi(cand, nh, nx, p, q)))]
    # polish by local golden-ratio style shrink around the winner
    lo, hi = best * (1 - 1e-3), best * (1 + 1e-3)
    for _ in range(60):
        m1 = lo + (hi - lo) * 0.381966
        m2 = hi - (hi - lo) * 0.381966
        if _phi(np.array([m1]), nh, nx, p, q)[0] <= _phi(np.array([m2]), nh, nx, p, q)[0]:
            hi = m2
        else:
            lo = m1
    beta = 0.5 * (lo + hi)
    if _phi(np.array([best]), nh, nx, p, q)[0] < _phi(np.array([beta]), nh, nx, p, q)[0]:
        beta = best

    w = p / beta + q * beta
    if abs(w) == 0:
        return complex(beta)
    return complex(beta * np.conj(w) / abs(w))


def align_source_unit(h, x, h_ref, x_ref) -> complex:
    """Phase-only minimizer: alpha with |alpha| = 1.

    Expanding the constrained objective leaves -2 Re(exp(i theta)(p + q))
    to maximize, so alpha = conj(p + q)/|p + q| (alpha = 1 when p + q = 0).
    """
    if np.linalg.norm(h) == 0 or np.linalg.norm(x) == 0:
        raise ValueError("align_source_unit requires nonzero h and x")
    _, _, p, q, _ = _phi_terms(h, x, h_ref, x_ref)
    w = p + q
    if abs(w) == 0:
        return complex(1.0)
    return complex(np.conj(w) / abs(w))


def align_state(state, truth) -> Alignment:
    """Per-source alignment of an iterate against the ground truth."""
    s = state.h.shape[0]
    alpha = np.empty(s, dtype=complex)
    for i in range(s):
        alpha[i] = align_source(state.h[i], state.x[i], truth.h[i], truth.x[i])
    return Alignment(alpha=alpha)


def aligned_error(h, x, h_ref, x_ref) -> tuple[complex, float]:
    """(alpha, g(alpha)) at the unconstrained optimum."""
    alpha = align_source(h, x, h_ref, x_ref)
    return alpha, align_objective(alpha, h, x, h_ref, x_ref)


def dist(state, truth) -> float:
    """sqrt(sum_i min_alpha(...)/d_i) with d_i = ||h_i||^2 + ||x_i||^2."""
    s = state.h.shape[0]
    if truth.h.shape != state.h.shape:
        raise ValueError(
            f"state and truth shapes differ: {state.h.shape} vs {truth.h.shape}"
        )
    total = 0.0
    for i in range(s):
        _, g = aligned_error(state.h[i], state.x[i], truth.h[i], truth.x[i])
        total += g / truth.d[i]
    return float(np.sqrt(max(total, 0.0)))


def relative_error(state, truth) -> float:
    """sum_i ||h_i x_i^* - h'_i x'_i^*||_F / sum_i ||h'_i x'_i^*||_F.

    Rank-1 structure keeps this O(K) per source:
    ||h x^* - u v^*||_F^2 = |h|^2|x|^2 + |u|^2|v|^2 - 2 Re((u^* h)(x^* v)).
    """
    if truth.h.shape != state.h.shape:
        raise ValueError(
            f"state and truth shapes differ: {state.h.shape} vs {truth.h.shape}"
        )
    num = 0.0
    den = 0.0
    for i in range(state.h.shape[0]):
        h, x = state.h[i], state.x[i]
        u, v = truth.h[i], truth.x[i]
        nh = np.real(np.vdot(h, h))
        nx = np.real(np.vdot(x, x))
        nu = np.real(np.vdot(u, u))
        nv = np.real(np.vdot(v, v))
        cross = np.vdot(u, h) * np.vdot(x, v)
        num += np.sqrt(max(nh * nx + nu * nv - 2.0 * np.real(cross), 0.0))
        den += np.sqrt(nu * nv)
    return float(num / den)


def incoherence_mu(truth, B) -> float:
    """Smallest mu with |b_j^* h_i| <= mu ||h_i|| / sqrt(m) for all (i, j)."""
    m = B.shape[0]
    P = np.abs(np.conj(B) @ truth.h.T)  # (m, s)
    norms = np.linalg.norm(truth.h, axis=1)
    return float(np.sqrt(m) * np.max(P / norms[None, :]))


def incoherence_measures(state, truth, inst, alignments: Alignment):
    """Design-coherence trajectory measures (inc_a, inc_b).

    inc_a = max_{i,j} |a_ij^* (alpha_i x_i - x'_i)| / ||x'_i||
    inc_b = max_{i,j} |b_j^* (h_i / conj(alpha_i))| / ||h'_i||
    """
    if alignments is None:
        raise ValueError("incoherence_measures requires precomputed alignments")
    alpha = alignments.alpha
    diff = alpha[:, None] * state.x - truth.x  # (s, K)
    vals = np.abs(np.matmul(np.conj(inst.A), diff[:, :, None])[:, :, 0])  # (s, m)
    xn = np.linalg.norm(truth.x, axis=1)
    inc_a = float(np.max(vals / xn[:, None]))

    ht = state.h / np.conj(alpha)[:, None]
    P = np.abs(np.conj(inst.B) @ ht.T)  # (m, s)
    hn = np.linalg.norm(truth.h, axis=1)
    inc_b = float(np.max(P / hn[None, :]))
    return inc_a, inc_b
