"""Estimator-style wrapper around the functional solver.

Mirrors the common fit/predict/get_params surface so the solver drops into
pipelines and grid searches that expect that shape. The fitted "model" is
the recovered set of source pairs; predict() replays the bilinear forward
map through a (possibly new) design.
"""

from __future__ import annotations

import numpy as np

from . import metrics
from .problem import ProblemInstance, bilinear_forward, check_instance
from .solver import SolverConfig, run


class WirtingerFlowDemixer:
    """Blind demixing by spectral initialization + scaled Wirtinger flow.

    Parameters mirror SolverConfig. After fit(): `state_` holds the final
    iterate, `sources_` the per-source (h_i, x_i) pairs, `trajectory_` the
    recorded metrics, and `n_iter_` the last executed iteration index.
    """

    _param_names = ("eta", "max_iters", "stop_tol", "record_every")

    def __init__(self, eta: float = 0.1, max_iters: int = 500, stop_tol: float = 0.0,
                 record_every: int = 1):
        self.eta = eta
        self.max_iters = max_iters
        self.stop_tol = stop_tol
        self.record_every = record_every

    def get_params(self, deep: bool = True) -> dict:
        return {name: getattr(self, name) for name in self._param_names}

    def set_params(self, **params) -> "WirtingerFlowDemixer":
        for name, value in params.items():
            if name not in self._param_names:
                raise ValueError(
                    f"unknown parameter {name!r}; valid: {self._param_names}"
                )
            setattr(self, name, value)
        return self

    def _config(self) -> SolverConfig:
        return SolverConfig(
            eta=self.eta,
            max_iters=self.max_iters,
            stop_tol=self.stop_tol,
            record_every=self.record_every,
        )

    def fit(self, inst: ProblemInstance) -> "WirtingerFlowDemixer":
        check_instance(inst)
        state, records = run(inst, self._config())
        self.instance_ = inst
        self.state_ = state
        self.sources_ = state.sources
        self.trajectory_ = records
        self.n_iter_ = records[-1].iter if records else 0
        return self

    def _require_fitted(self):
        if not hasattr(self, "state_"):
            raise RuntimeError("this estimator is not fitted; call fit() first")

    def predict(self, inst: ProblemInstance | None = None) -> np.ndarray:
        """Forward measurements of the fitted sources through inst's design."""
        self._require_fitted()
        target = self.instance_ if inst is None else inst
        return bilinear_forward(self.state_.h, self.state_.x, target.A, target.B)

    def score(self, inst: ProblemInstance | None = None) -> float:
        """Negative mean squared residual on inst (higher is better)."""
        self._require_fitted()
        target = self.instance_ if inst is None else inst
        r = self.predict(target) - target.y
        return -float(np.real(np.vdot(r, r)) / r.size)

    def reconstruction_error(self) -> float | None:
        """Relative error against the fitted instance's truth, if attached."""
        self._require_fitted()
        truth = self.instance_.truth
        if truth is None:
            return None
        return metrics.relative_error(self.state_, truth)
