"""Per-tick contact perception shared by the simulator and offline tools.

One object owns the whole measurement-side chain: residual detection,
link localization, per-episode sample collection, and window-cadenced
force/location estimation.  The simulation engine feeds it measured and
model torques; the offline estimator feeds recorded residuals.  Both
paths run the identical arithmetic, so replaying a recorded trace
reproduces the live estimates bit for bit.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass

import numpy as np

from .detection import DetectionConfig, FilteredDifferentiator, ResidualDetector
from .estimation import ContactEstimate, EstimationConfig, estimate_contact
from .robot import RobotModel, inverse_dynamics


@dataclass(frozen=True)
class WindowEvent:
    """Summary of one finished commit window.

    force_samples holds the per-tick held force estimate (zero outside
    contact), which is exactly what the planner averages.
    """

    index: int
    tick: int
    fraction: float
    estimate: ContactEstimate | None
    force_samples: np.ndarray


@dataclass(frozen=True)
class TickResult:
    """Everything the detector produced for one tick."""

    tick: int
    tau_hat: np.ndarray
    eta_bar: float
    contact: int
    link: int
    contact_started: bool
    contact_ended: bool
    window: WindowEvent | None


class ContactPipeline:
    """Detection, localization, and windowed estimation over a tick stream."""

    def __init__(self, model: RobotModel, detection: DetectionConfig,
                 estimation: EstimationConfig, dt: float,
                 window_ticks: int = 100, min_contact_fraction: float = 0.5,
                 forced_link: int | None = None):
        if window_ticks < 1:
            raise ValueError("window_ticks must be >= 1")
        if not 0.0 <= min_contact_fraction <= 1.0:
            raise ValueError("min_contact_fraction must be in [0, 1]")
        if forced_link is not None and not 1 <= forced_link <= model.n:
            raise ValueError(
                f"forced_link {forced_link} out of range 1..{model.n}")
        self.model = model
        self.detection = detection
        self.estimation = estimation
        self.dt = dt
        self.window_ticks = window_ticks
        self.min_contact_fraction = min_contact_fraction
        self.forced_link = forced_link
        self.detector = ResidualDetector(detection, model.n)
        self._differentiator = None
        if detection.qdd_source == "filtered":
            self._differentiator = FilteredDifferentiator(
                dt, detection.filter_cutoff_hz, model.n)
        self.latest_estimate: ContactEstimate | None = None
        self._tick = 0
        self._window_index = 0
        self._contact_count = 0
        self._force_samples = np.zeros((window_ticks, 3))
        self._episode_q: list[np.ndarray] = []
        self._episode_tau: list[np.ndarray] = []
        self._episode_links: list[int] = []

    @property
    def tick(self) -> int:
        return self._tick

    def reset(self):
        self.detector.reset()
        if self._differentiator is not None:
            self._differentiator = FilteredDifferentiator(
                self.dt, self.detection.filter_cutoff_hz, self.model.n)
        self.latest_estimate = None
        self._tick = 0
        self._window_index = 0
        self._contact_count = 0
        self._force_samples[:] = 0.0
        self._clear_episode()

    def step(self, q, qd, tau_measured, qdd=None, tau_model=None) -> TickResult:
        """Advance one tick from raw measurements.

        qdd is required in "exact" mode and ignored in "filtered" mode,
        where it is rebuilt from the velocity stream.  tau_model, when
        given, skips the internal inverse-dynamics evaluation; callers
        may pass it only when it was produced by this pipeline's model.
        """
        q = np.asarray(q, dtype=float)
        qd = np.asarray(qd, dtype=float)
        if self._differentiator is not None:
            qdd = self._differentiator.update(qd)
        elif qdd is None:
            raise ValueError("qdd is required when qdd_source is 'exact'")
        if tau_model is None:
            tau_model = inverse_dynamics(self.model, q, qd, qdd)
        tau_hat = np.asarray(tau_measured, dtype=float) - np.asarray(
            tau_model, dtype=float)
        return self._advance(q, tau_hat)

    def step_residual(self, q, tau_hat) -> TickResult:
        """Advance one tick from a precomputed torque residual."""
        return self._advance(np.asarray(q, dtype=float),
                             np.asarray(tau_hat, dtype=float))

    def _clear_episode(self):
        self._episode_q.clear()
        self._episode_tau.clear()
        self._episode_links.clear()

    def _advance(self, q, tau_hat) -> TickResult:
        previous = self.detector.contact
        tau_hat, eta_bar, flag, link = self.detector.update_from_residual(
            tau_hat)
        started = previous == 0 and flag == 1
        ended = previous == 1 and flag == 0
        if started:
            self._clear_episode()
        if ended:
            self._clear_episode()
            self.latest_estimate = None
        if flag:
            self._episode_q.append(q.copy())
            self._episode_tau.append(tau_hat.copy())
            self._episode_links.append(link)
            if len(self._episode_q) > self.estimation.window:
                del self._episode_q[0]
                del self._episode_tau[0]
                del self._episode_links[0]
        if flag and self.latest_estimate is not None:
            force = self.latest_estimate.force
        else:
            force = np.zeros(3)
        self._force_samples[self._tick % self.window_ticks] = force
        self._contact_count += flag
        window = None
        if (self._tick + 1) % self.window_ticks == 0:
            window = self._finish_window()
        result = TickResult(tick=self._tick, tau_hat=tau_hat,
                            eta_bar=eta_bar, contact=flag, link=link,
                            contact_started=started, contact_ended=ended,
                            window=window)
        self._tick += 1
        return result

    def _vote_link(self) -> int:
        votes = [v for v in self._episode_links if v > 0]
        if not votes:
            return 0
        counts = Counter(votes)
        # most frequent wins; a tie goes to the more distal link
        return max(counts.items(), key=lambda kv: (kv[1], kv[0]))[0]

    def _finish_window(self) -> WindowEvent:
        fraction = self._contact_count / self.window_ticks
        estimate = None
        if fraction >= self.min_contact_fraction and self._episode_q:
            link = (self.forced_link if self.forced_link is not None
                    else self._vote_link())
            if link > 0:
                estimate = estimate_contact(
                    self.model, np.stack(self._episode_q),
                    np.stack(self._episode_tau), link, self.estimation)
                self.latest_estimate = estimate
        event = WindowEvent(index=self._window_index, tick=self._tick,
                            fraction=fraction, estimate=estimate,
                            force_samples=self._force_samples.copy())
        self._window_index += 1
        self._contact_count = 0
        return event


def estimate_event_dict(event: WindowEvent, dt: float) -> dict:
    """JSON shape of one produced estimate; shared by the live trace
    export and the offline re-estimation tool so the two match exactly."""
    est = event.estimate
    return {
        "kind": "estimate",
        "tick": event.tick,
        "t": event.tick * dt,
        "window": event.index,
        "fraction": event.fraction,
        "link": est.link,
        "s": est.s,
        "force": [float(v) for v in est.force],
        "cost": est.cost,
        "point": [float(v) for v in est.point],
        "clamped": est.clamped,
        "degenerate": est.degenerate,
        "rank_deficient": est.rank_deficient,
    }
