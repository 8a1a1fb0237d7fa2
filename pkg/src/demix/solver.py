"""Spectral initialization and the scaled Wirtinger-flow loop.

Per source, initialization takes the leading singular triple of the
back-projection M_i = sum_j y_j b_j a_ij^*. The iteration then descends
each pair with step sizes eta/||x_i||^2 and eta/||h_i||^2 evaluated at the
pre-update iterate (simultaneous update).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import metrics
from .objective import DemixState, _gradient_full
from .problem import ProblemInstance

_DIVERGENCE_FACTOR = 1e6


class DegenerateIterateError(RuntimeError):
    """A source collapsed to zero norm, so the scaled step is undefined."""


class DivergenceError(RuntimeError):
    """Loss went non-finite or blew past 1e6 times its initial value.

    Carries the records gathered up to the failing iteration so callers can
    still write a partial trajectory.
    """

    def __init__(self, iteration: int, loss_value: float, records=None):
        super().__init__(f"loss diverged at iteration {iteration}: {loss_value!r}")
        self.iteration = iteration
        self.loss_value = loss_value
        self.records = list(records) if records is not None else []


class SpectralInitError(RuntimeError):
    """Leading-triple iteration failed to converge and no fallback applies."""


@dataclass
class SolverConfig:
    eta: float
    max_iters: int
    stop_tol: float = 0.0  # relative-error stop; 0 disables
    record_every: int = 1
    seed: int = 0

    def __post_init__(self):
        if not self.eta > 0:
            raise ValueError(f"eta must be > 0, got {self.eta}")
        if self.max_iters < 1:
            raise ValueError(f"max_iters must be >= 1, got {self.max_iters}")
        if self.record_every < 1:
            raise ValueError(f"record_every must be >= 1, got {self.record_every}")
        if self.stop_tol < 0:
            raise ValueError(f"stop_tol must be >= 0, got {self.stop_tol}")


@dataclass
class TrajectoryRecord:
    """Metrics at one recorded iteration.

    Truth-dependent fields are None when the instance has no ground truth.
    alignment_ratios[i] = |alpha_i(t) / alpha_i(t-1) - 1| between this
    iteration and its predecessor; zeros at iteration 0.
    """

    iter: int
    loss: float
    relative_error: float | None = None
    dist: float | None = None
    incoherence_a: float | None = None
    incoherence_b: float | None = None
    alignment_ratios: np.ndarray | None = field(default=None, repr=False)

    @property
    def max_alignment_ratio(self) -> float | None:
        if self.alignment_ratios is None:
            return None
        return float(np.max(self.alignment_ratios))


def backprojection_matrices(A: np.ndarray, B: np.ndarray, y: np.ndarray) -> np.ndarray:
    """M_i = sum_j y_j b_j a_ij^*, stacked as (s, K, K)."""
    s = A.shape[0]
    By = B * y[:, None]
    return np.stack([By.T @ np.conj(A[i]) for i in range(s)])


def leading_triple(M: np.ndarray, max_iters: int = 5000, tol: float = 1e-12):
    """(sigma1, u, v): leading singular triple of a K x K matrix.

    Power iteration on M^* M from the normalized all-ones vector, stopping
    on eigenvalue change below tol; dense SVD fallback for K <= 64 if the
    iteration stalls.
    """
    K = M.shape[0]
    G = M.conj().T @ M
    v = np.ones(K, dtype=complex) / np.sqrt(K)
    lam_prev = None
    converged = False
    for _ in range(max_iters):
        w = G @ v
        lam = float(np.real(np.vdot(v, w)))
        nw = np.linalg.norm(w)
        if nw == 0:
            # M^* M v = 0 from the all-ones start: treat as (numerically) zero
            return 0.0, np.zeros(K, dtype=complex), v
        v = w / nw
        if lam_prev is not None and abs(lam - lam_prev) <= tol * max(1.0, abs(lam)):
            converged = True
            break
        lam_prev = lam
    if not converged:
        if K > 64:
            raise SpectralInitError(
                f"power iteration did not converge in {max_iters} steps for K={K}"
            )
        U, S, Vh = np.linalg.svd(M)
        return float(S[0]), U[:, 0], Vh[0].conj()
    u_raw = M @ v
    sigma = float(np.linalg.norm(u_raw))
    if sigma == 0:
        return 0.0, np.zeros(K, dtype=complex), v
    return sigma, u_raw / sigma, v


def init_from_matrices(Ms: np.ndarray) -> DemixState:
    """Scaled leading triples of the given (s, K, K) matrices, phase-gauged.

    The left vector's largest-magnitude entry is rotated to the positive
    real axis (first index on ties); the right vector gets the same
    rotation, which leaves the outer product unchanged.
    """
    s, K = Ms.shape[0], Ms.shape[1]
    h = np.empty((s, K), dtype=complex)
    x = np.empty((s, K), dtype=complex)
    for i in range(s):
        sigma, u, v = leading_triple(Ms[i])
        idx = int(np.argmax(np.abs(u)))
        if u[idx] != 0:
            rot = np.exp(-1j * np.angle(u[idx]))
            u = u * rot
            v = v * rot
        h[i] = np.sqrt(sigma) * u
        x[i] = np.sqrt(sigma) * v
    return DemixState(h=h, x=x)


def spectral_init(inst: ProblemInstance) -> DemixState:
    return init_from_matrices(backprojection_matrices(inst.A, inst.B, inst.y))


def step_arrays(state: DemixState, Gh: np.ndarray, Gx: np.ndarray, eta: float) -> DemixState:
    """One scaled descent step using the pre-update norms of the iterate."""
    nh = np.sum(np.abs(state.h) ** 2, axis=1)
    nx = np.sum(np.abs(state.x) ** 2, axis=1)
    if np.any(nh == 0) or np.any(nx == 0):
        raise DegenerateIterateError("a source has zero norm; scaled step undefined")
    return DemixState(
        h=state.h - (eta / nx)[:, None] * Gh,
        x=state.x - (eta / nh)[:, None] * Gx,
    )


def wf_step(state: DemixState, inst: ProblemInstance, eta: float) -> DemixState:
    Gh, Gx, _, _, _ = _gradient_full(state, inst)
    return step_arrays(state, Gh, Gx, eta)


def _record(t, loss_t, state, prev_state, inst) -> TrajectoryRecord:
    truth = inst.truth
    if truth is None:
        return TrajectoryRecord(iter=t, loss=loss_t)
    align = metrics.align_state(state, truth)
    if prev_state is None:
        ratios = np.zeros(state.h.shape[0])
    else:
        prev = metrics.align_state(prev_state, truth)
        ratios = np.abs(align.alpha / prev.alpha - 1.0)
    inc_a, inc_b = metrics.incoherence_measures(state, truth, inst, align)
    return TrajectoryRecord(
        iter=t,
        loss=loss_t,
        relative_error=metrics.relative_error(state, truth),
        dist=metrics.dist(state, truth),
        incoherence_a=inc_a,
        incoherence_b=inc_b,
        alignment_ratios=ratios,
    )


def run(inst: ProblemInstance, cfg: SolverConfig, on_iterate=None):
    """Algorithm loop: spectral init, then max_iters scaled gradient steps.

    Records at iteration 0, every record_every iterations, and at the final
    iterate. Early stop when relative error falls below stop_tol, checked
    at record points only (needs truth attached). The optional on_iterate
    callback sees (t, state) at every iteration.

    Returns (final_state, records). Raises DivergenceError if the loss goes
    non-finite or exceeds 1e6 times the initial loss.
    """
    state = spectral_init(inst)
    truth = inst.truth
    records: list[TrajectoryRecord] = []
    prev_state = None
    loss0 = None
    t = 0
    while True:
        stepping = t < cfg.max_iters
        Gh, Gx, r, _, _ = _gradient_full(state, inst)
        loss_t = float(np.real(np.vdot(r, r)))
        if loss0 is None:
            loss0 = loss_t
        if not np.isfinite(loss_t) or (loss0 > 0 and loss_t > _DIVERGENCE_FACTOR * loss0):
            raise DivergenceError(t, loss_t, records)
        if on_iterate is not None:
            on_iterate(t, state)
        if t % cfg.record_every == 0 or not stepping:
            rec = _record(t, loss_t, state, prev_state, inst)
            records.append(rec)
            if (
                truth is not None
                and cfg.stop_tol > 0
                and rec.relative_error is not None
                and rec.relative_error <= cfg.stop_tol
            ):
                break
        if not stepping:
            break
        prev_state = state
        state = step_arrays(state, Gh, Gx, cfg.eta)
        t += 1
    return state, records
