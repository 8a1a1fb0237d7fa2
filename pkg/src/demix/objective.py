"""Loss, Wirtinger gradients and per-source Wirtinger Hessian blocks.

The loss is f(z) = sum_j |sum_i b_j^* h_i x_i^* a_ij - y_j|^2. Gradients
follow the conjugate-coordinate (df/d z-bar) convention; the gradient of f
under the real 4sK-parameterization is exactly twice [Re g; Im g], a factor
calibrated once on the scalar case and frozen in the tests.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .problem import ProblemInstance, ShapeError, forward_parts


class SizeCapError(ValueError):
    """Dense Hessian assembly refused beyond the small-scale cap."""


@dataclass
class DemixState:
    """Current iterate: rows of h and x are the s source pairs."""

    h: np.ndarray  # (s, K)
    x: np.ndarray  # (s, K)

    def __post_init__(self):
        self.h = np.asarray(self.h, dtype=complex)
        self.x = np.asarray(self.x, dtype=complex)
        if self.h.shape != self.x.shape or self.h.ndim != 2:
            raise ShapeError(f"h and x must both be (s, K): {self.h.shape} vs {self.x.shape}")

    @property
    def sources(self) -> list[tuple[np.ndarray, np.ndarray]]:
        return [(self.h[i], self.x[i]) for i in range(self.h.shape[0])]

    @classmethod
    def from_pairs(cls, pairs) -> "DemixState":
        return cls(h=np.array([p[0] for p in pairs]), x=np.array([p[1] for p in pairs]))

    def copy(self) -> "DemixState":
        return DemixState(h=self.h.copy(), x=self.x.copy())


@dataclass
class HessianBlocks:
    """The five K x K pieces of one source's Wirtinger Hessian."""

    C1: np.ndarray
    C2: np.ndarray
    C3: np.ndarray
    E1: np.ndarray
    E2: np.ndarray


def _check(state: DemixState, inst: ProblemInstance) -> None:
    if state.h.shape != (inst.dims.s, inst.dims.K):
        raise ShapeError(
            f"state is {state.h.shape}, instance wants {(inst.dims.s, inst.dims.K)}"
        )


def residuals(state: DemixState, inst: ProblemInstance) -> np.ndarray:
    """r_j = sum_i b_j^* h_i x_i^* a_ij - y_j."""
    _check(state, inst)
    return forward_parts(state.h, state.x, inst.A, inst.B)[2] - inst.y


def clean_residuals(state: DemixState, inst: ProblemInstance) -> np.ndarray:
    """Noise-free residual sum_k b_j^*(h_k x_k^* - h'_k x'_k^*) a_kj."""
    _check(state, inst)
    if inst.truth is None:
        raise ValueError("clean residuals need the ground truth attached")
    fwd = forward_parts(state.h, state.x, inst.A, inst.B)[2]
    fwd_true = forward_parts(inst.truth.h, inst.truth.x, inst.A, inst.B)[2]
    return fwd - fwd_true


def loss(state: DemixState, inst: ProblemInstance) -> float:
    r = residuals(state, inst)
    return float(np.real(np.vdot(r, r)))


def clean_loss(state: DemixState, inst: ProblemInstance) -> float:
    r = clean_residuals(state, inst)
    return float(np.real(np.vdot(r, r)))


def _gradient_full(state: DemixState, inst: ProblemInstance):
    """(Gh, Gx, r, P, Q) with one shared residual pass."""
    _check(state, inst)
    P, Q, fwd = forward_parts(state.h, state.x, inst.A, inst.B)
    r = fwd - inst.y
    # g_h_i = sum_j r_j (a_ij^* x_i) b_j ; g_x_i = sum_j conj(r_j) (b_j^* h_i) a_ij
    W = r[None, :] * np.conj(Q)
    Gh = W @ inst.B
    V = np.conj(r)[None, :] * P.T
    Gx = np.matmul(V[:, None, :], inst.A)[:, 0, :]
    return Gh, Gx, r, P, Q


def gradient_arrays(state: DemixState, inst: ProblemInstance):
    """Wirtinger gradient stacked as two (s, K) arrays."""
    Gh, Gx, _, _, _ = _gradient_full(state, inst)
    return Gh, Gx


def wirtinger_gradient(state: DemixState, inst: ProblemInstance):
    """List of s pairs (g_h_i, g_x_i)."""
    Gh, Gx = gradient_arrays(state, inst)
    return [(Gh[i], Gx[i]) for i in range(Gh.shape[0])]


def leave_one_out_arrays(state: DemixState, inst: ProblemInstance, l: int):
    """Gradient of the loss with measurement l deleted, as (s, K) arrays.

    Equals the full gradient minus the l-th summand:
    g_h_k - R_l (a_kl^* x_k) b_l and g_x_k - conj(R_l) (b_l^* h_k) a_kl
    with R_l the l-th residual.
    """
    if not 0 <= l < inst.dims.m:
        raise IndexError(f"measurement index {l} out of range [0, {inst.dims.m})")
    Gh, Gx, r, P, Q = _gradient_full(state, inst)
    Gh = Gh - (r[l] * np.conj(Q[:, l]))[:, None] * inst.B[l][None, :]
    Gx = Gx - (np.conj(r[l]) * P[l, :])[:, None] * inst.A[:, l, :]
    return Gh, Gx


def leave_one_out_gradient(state: DemixState, inst: ProblemInstance, l: int):
    """Per-source pairs (g_h_i, g_x_i) of the loss with measurement l deleted."""
    Gh, Gx = leave_one_out_arrays(state, inst, l)
    return [(Gh[i], Gx[i]) for i in range(Gh.shape[0])]


def hessian_blocks(state: DemixState, inst: ProblemInstance, i: int, clean: bool = True) -> HessianBlocks:
    """The five blocks of source i's 4K x 4K Wirtinger Hessian.

    C1 = sum_j |a_ij^* x_i|^2 b_j b_j^*
    C2 = sum_j c_j b_j a_ij^*          (c = clean or measured residual)
    C3 = sum_j |b_j^* h_i|^2 a_ij a_ij^*
    E1 = sum_j (b_j b_j^* h_i)(a_ij a_ij^* x_i)^T   (plain transpose)
    E2 = sum_j (a_ij a_ij^* x_i)(b_j b_j^* h_i)^T
    """
    _check(state, inst)
    if not 0 <= i < inst.dims.s:
        raise IndexError(f"source index {i} out of range [0, {inst.dims.s})")
    P, Q, fwd = forward_parts(state.h, state.x, inst.A, inst.B)
    if clean:
        if inst.truth is None:
            raise ValueError("clean Hessian blocks need the ground truth attached")
        c = fwd - forward_parts(inst.truth.h, inst.truth.x, inst.A, inst.B)[2]
    else:
        c = fwd - inst.y
    B, Ai = inst.B, inst.A[i]
    w1 = np.abs(Q[i]) ** 2
    w3 = np.abs(P[:, i]) ** 2
    coupl = P[:, i] * np.conj(Q[i])  # (b_j^* h_i)(a_ij^* x_i)
    C1 = (B * w1[:, None]).T @ np.conj(B)
    C2 = (B * c[:, None]).T @ np.conj(Ai)
    C3 = (Ai * w3[:, None]).T @ np.conj(Ai)
    E1 = (B * coupl[:, None]).T @ Ai
    E2 = (Ai * coupl[:, None]).T @ B
    return HessianBlocks(C1=C1, C2=C2, C3=C3, E1=E1, E2=E2)


def assemble_source_hessian(blocks: HessianBlocks) -> np.ndarray:
    """Hermitian [[C, E], [E^*, conj(C)]] with C = [[C1, C2], [C2^*, C3]]."""
    K = blocks.C1.shape[0]
    for name in ("C2", "C3", "E1", "E2"):
        if getattr(blocks, name).shape != (K, K):
            raise ShapeError(f"block {name} is {getattr(blocks, name).shape}, wanted {(K, K)}")
    if 4 * K > 4096:
        raise SizeCapError(f"dense assembly capped at 4K <= 4096, got 4K = {4 * K}")
    Z = np.zeros((K, K), dtype=complex)
    C = np.block([[blocks.C1, blocks.C2], [blocks.C2.conj().T, blocks.C3]])
    E = np.block([[Z, blocks.E1], [blocks.E2, Z]])
    return np.block([[C, E], [E.conj().T, np.conj(C)]])


def quadratic_form(H: np.ndarray, dh: np.ndarray, dx: np.ndarray) -> float:
    """u^* H u with u = [dh; dx; conj(dh); conj(dx)].

    Second-order term of the expansion f(z + t d) = f(z) + 2 t Re<g, d>
    + (t^2/2) u^* H u + O(t^3) along a single-source direction.
    """
    u = np.concatenate([dh, dx, np.conj(dh), np.conj(dx)])
    return float(np.real(np.vdot(u, H @ u)))
