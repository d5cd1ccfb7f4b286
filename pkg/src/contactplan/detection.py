"""Torque-residual contact detection and link-level localization.

The detector consumes measured and model joint torques tick by tick:
residual -> weighted norm -> exponential smoothing -> hysteresis vote.
Localization picks the deepest joint whose residual is meaningful,
which is where the falling edge of the residual pattern sits for a
single contact on a serial chain.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class DetectionConfig:
    """Tunables of the residual detector.

    alpha: EWMA smoothing factor in (0, 1].
    threshold: decision level on the smoothed statistic, N*m.
    on_count / off_count: consecutive-sample requirements of the hysteresis.
    localization_threshold: per-joint residual level that counts as
        meaningful when picking the contacted link, N*m.
    weights: optional per-joint weighting of the residual norm.
    qdd_source: "exact" uses commanded accelerations, "filtered"
        differentiates the velocity stream through a low-pass filter.
    filter_cutoff_hz: cutoff of that filter.
    """

    alpha: float = 0.2
    threshold: float = 1.0
    on_count: int = 5
    off_count: int = 10
    localization_threshold: float = 0.3
    weights: tuple[float, ...] | None = None
    qdd_source: str = "exact"
    filter_cutoff_hz: float = 20.0

    def __post_init__(self):
        if not 0.0 < self.alpha <= 1.0:
            raise ValueError("alpha must be in (0, 1]")
        if self.threshold <= 0 or self.localization_threshold <= 0:
            raise ValueError("thresholds must be > 0")
        if self.on_count < 1 or self.off_count < 1:
            raise ValueError("hysteresis counts must be >= 1")
        if self.qdd_source not in ("exact", "filtered"):
            raise ValueError("qdd_source must be 'exact' or 'filtered'")
        if self.filter_cutoff_hz <= 0:
            raise ValueError("filter_cutoff_hz must be > 0")


def compute_residual(tau_measured, tau_model) -> np.ndarray:
    """External-torque residual: measured minus rigid-body model."""
    tau_measured = np.asarray(tau_measured, dtype=float)
    tau_model = np.asarray(tau_model, dtype=float)
    if tau_measured.shape != tau_model.shape:
        raise ValueError("torque vectors must have matching shapes")
    return tau_measured - tau_model


def detection_statistic(tau_hat, weights=None) -> float:
    """Weighted Euclidean norm of the residual vector."""
    tau_hat = np.asarray(tau_hat, dtype=float)
    if weights is None:
        return float(np.linalg.norm(tau_hat))
    weights = np.asarray(weights, dtype=float)
    if weights.shape != tau_hat.shape:
        raise ValueError("weights must match the residual length")
    return float(np.linalg.norm(weights * tau_hat))


def ewma_update(eta: float, eta_bar_prev: float, alpha: float) -> float:
    """One step of the exponentially weighted moving average."""
    return alpha * eta + (1.0 - alpha) * eta_bar_prev


def hysteresis_update(state: int, recent, threshold: float,
                      on_count: int, off_count: int) -> int:
    """Hysteresis vote over the most recent smoothed statistics.

    Turns on only when the last on_count values all reach the threshold,
    off only when the last off_count values all sit at or below it;
    otherwise the previous state holds.  Until enough samples exist a
    branch cannot fire.  The on branch wins when both are satisfied.
    """
    vals = list(recent)
    if len(vals) >= on_count and min(vals[-on_count:]) >= threshold:
        return 1
    if len(vals) >= off_count and max(vals[-off_count:]) <= threshold:
        return 0
    return state


def localize_link(tau_hat, localization_threshold: float) -> int:
    """Contacted link estimate from the residual pattern, 1-based.

    A contact on link l works through joints 1..l only, so the residual
    falls off beyond the contacted link; the deepest joint with a
    meaningful residual marks that falling edge.  Returns 0 when no
    joint exceeds the threshold.
    """
    tau_hat = np.asarray(tau_hat, dtype=float)
    meaningful = np.abs(tau_hat) > localization_threshold
    idx = np.nonzero(meaningful)[0]
    return int(idx[-1]) + 1 if idx.size else 0


class HysteresisDetector:
    """Stateful wrapper around hysteresis_update with its sample buffer."""

    def __init__(self, threshold: float, on_count: int, off_count: int):
        if threshold <= 0:
            raise ValueError("threshold must be > 0")
        if on_count < 1 or off_count < 1:
            raise ValueError("counts must be >= 1")
        self.threshold = threshold
        self.on_count = on_count
        self.off_count = off_count
        self.state = 0
        self._recent = deque(maxlen=max(on_count, off_count))

    def update(self, eta_bar: float) -> int:
        self._recent.append(float(eta_bar))
        self.state = hysteresis_update(self.state, self._recent,
                                       self.threshold, self.on_count,
                                       self.off_count)
        return self.state

    def reset(self):
        self.state = 0
        self._recent.clear()


class ResidualDetector:
    """Full per-tick detection chain: residual, statistic, EWMA, hysteresis.

    update() returns (tau_hat, eta_bar, contact_flag, link) where link is
    the 1-based localization for this tick (0 when nothing is meaningful).
    """

    def __init__(self, config: DetectionConfig, n_joints: int):
        self.config = config
        if config.weights is not None and len(config.weights) != n_joints:
            raise ValueError("weights must have one entry per joint")
        self._weights = (np.asarray(config.weights, dtype=float)
                         if config.weights is not None else None)
        self.eta_bar = 0.0
        self._hysteresis = HysteresisDetector(config.threshold,
                                              config.on_count,
                                              config.off_count)

    @property
    def contact(self) -> int:
        return self._hysteresis.state

    def update(self, tau_measured, tau_model):
        return self.update_from_residual(compute_residual(tau_measured,
                                                          tau_model))

    def update_from_residual(self, tau_hat):
        """Same chain for callers that already hold the residual."""
        tau_hat = np.asarray(tau_hat, dtype=float)
        eta = detection_statistic(tau_hat, self._weights)
        self.eta_bar = ewma_update(eta, self.eta_bar, self.config.alpha)
        flag = self._hysteresis.update(self.eta_bar)
        link = localize_link(tau_hat, self.config.localization_threshold)
        return tau_hat, self.eta_bar, flag, link

    def reset(self):
        self.eta_bar = 0.0
        self._hysteresis.reset()


class FilteredDifferentiator:
    """Acceleration from a velocity stream: backward difference followed by
    a second-order Butterworth low-pass, run per joint at the sample rate."""

    def __init__(self, dt: float, cutoff_hz: float, n_joints: int):
        if dt <= 0 or cutoff_hz <= 0:
            raise ValueError("dt and cutoff must be > 0")
        if cutoff_hz >= 0.5 / dt:
            raise ValueError("cutoff must sit below the Nyquist rate")
        k = np.tan(np.pi * cutoff_hz * dt)
        norm = 1.0 / (1.0 + np.sqrt(2.0) * k + k * k)
        self._b = np.array([k * k, 2 * k * k, k * k]) * norm
        self._a = np.array([2 * (k * k - 1), 1 - np.sqrt(2.0) * k + k * k]) * norm
        self._dt = dt
        self._prev_qd = None
        self._x = np.zeros((2, n_joints))
        self._y = np.zeros((2, n_joints))

    def update(self, qd) -> np.ndarray:
        qd = np.asarray(qd, dtype=float)
        if self._prev_qd is None:
            raw = np.zeros_like(qd)
        else:
            raw = (qd - self._prev_qd) / self._dt
        self._prev_qd = qd.copy()
        out = (self._b[0] * raw + self._b[1] * self._x[0]
               + self._b[2] * self._x[1]
               - self._a[0] * self._y[0] - self._a[1] * self._y[1])
        self._x[1] = self._x[0]
        self._x[0] = raw
        self._y[1] = self._y[0]
        self._y[0] = out
        return out
