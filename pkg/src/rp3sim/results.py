"""Run records: per-step error series, events, and metadata."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class RunResult:
    """Time series and events from one simulation run.

    Series opt/cons/track/loss/max_dev/s_norm_sum have length K+1 (index k=0
    is the initial state). Step-indexed series (projection activity, tracking
    residual) have length K. t_max_trust counts trust rounds including the
    observation window; t_max is on the optimization clock (window subtracted,
    floored at 0). first_s_inactive is the first step after which the tracking
    projection never acts again (0 if it never acted, None if it was still
    active at the horizon).
    """

    seed: int
    algorithm: str
    opt: np.ndarray
    cons: np.ndarray
    track: np.ndarray
    loss: np.ndarray
    max_dev: np.ndarray
    s_norm_sum: np.ndarray
    s_proj_active: np.ndarray
    tracking_residual: np.ndarray
    x_star: np.ndarray
    final_x: np.ndarray
    correct_series: np.ndarray | None = None
    t_max_trust: int | None = None
    t_max: int | None = None
    first_s_inactive: int | None = None
    t_nom_bound: float | None = None
    metadata: dict = field(default_factory=dict)
    trajectory: np.ndarray | None = None
    observation_log: list | None = None

    @property
    def iterations(self) -> int:
        return len(self.opt) - 1

    @property
    def k(self) -> np.ndarray:
        return np.arange(len(self.opt))

    def error_matrix(self) -> np.ndarray:
        """(K+1, 3) stack of the error vector series."""
        return np.stack([self.opt, self.cons, self.track], axis=1)
