"""Online path deformation that yields to sustained contact forces.

The reference path is a piecewise-linear position curve with slerped
orientations, parameterized by normalized arc length s in [0, 1].  Each
commit window turns the averaged contact force into an incremental
lateral offset, smoothly blended over a force-scaled horizon ahead of
the current progress by a quartic bump that vanishes with zero slope at
both ends.  Deformations accumulate additively, so the path stays C1
and pinned to its endpoints through any number of commits.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

NEGLIGIBLE_FORCE = 1e-9  # N, below this the window has no usable direction


@dataclass(frozen=True)
class PlannerConfig:
    """Tunables of the deformation planner.

    gain: meters of target deviation per newton of averaged force.
    force_saturation: cap on the averaged force magnitude, N.
    horizon_per_newton: blend-in length on s per newton of averaged force.
    deadband: increments at or below this are dropped, m.
    window: commit-window length in ticks.
    min_contact_fraction: fraction of a window that must be in contact
        for the window to commit.
    """

    gain: float = 0.005
    force_saturation: float = 50.0
    horizon_per_newton: float = 0.01
    deadband: float = 0.005
    window: int = 100
    min_contact_fraction: float = 0.5

    def __post_init__(self):
        if self.gain <= 0:
            raise ValueError("gain must be > 0")
        if self.force_saturation <= 0:
            raise ValueError("force_saturation must be > 0")
        if self.horizon_per_newton <= 0:
            raise ValueError("horizon_per_newton must be > 0")
        if self.deadband < 0:
            raise ValueError("deadband must be >= 0")
        if self.window < 1:
            raise ValueError("window must be >= 1")
        if not 0.0 <= self.min_contact_fraction <= 1.0:
            raise ValueError("min_contact_fraction must be in [0, 1]")


def _slerp(qa: np.ndarray, qb: np.ndarray, t: float) -> np.ndarray:
    dot = float(qa @ qb)
    if dot < 0.0:
        qb = -qb
        dot = -dot
    if dot > 1.0 - 1e-10:
        out = (1.0 - t) * qa + t * qb
        return out / np.linalg.norm(out)
    theta = math.acos(min(dot, 1.0))
    return (math.sin((1.0 - t) * theta) * qa
            + math.sin(t * theta) * qb) / math.sin(theta)


class ReferencePath:
    """Waypoint path over normalized arc length s in [0, 1].

    Positions interpolate linearly between waypoints; orientations, when
    given as unit quaternions [w, x, y, z], interpolate by slerp over the
    same parameter.  Waypoint parameters may be given explicitly (first
    0, last 1, strictly increasing) or derived from cumulative segment
    length.
    """

    def __init__(self, positions, orientations=None, knots=None):
        positions = np.asarray(positions, dtype=float)
        if positions.ndim != 2 or positions.shape[1] != 3 or len(positions) < 2:
            raise ValueError("need at least two 3-d waypoints")
        if not np.all(np.isfinite(positions)):
            raise ValueError("waypoint positions must be finite")
        seg = np.linalg.norm(np.diff(positions, axis=0), axis=1)
        self.total_length = float(seg.sum())
        if self.total_length <= 0:
            raise ValueError("path has zero total length")
        if knots is None:
            if np.any(seg <= 0):
                raise ValueError("waypoints contain a zero-length segment; "
                                 "give explicit s values to allow dwells")
            knots = np.concatenate([[0.0], np.cumsum(seg)]) / seg.sum()
        else:
            knots = np.asarray(knots, dtype=float)
            if knots.shape != (len(positions),):
                raise ValueError("need one s value per waypoint")
            if knots[0] != 0.0 or knots[-1] != 1.0:
                raise ValueError("waypoint s values must start at 0 and end at 1")
            if np.any(np.diff(knots) <= 0):
                raise ValueError("waypoint s values must strictly increase")
        self.positions = positions
        self.knots = knots
        if orientations is None:
            self.orientations = None
        else:
            orientations = np.asarray(orientations, dtype=float)
            if orientations.shape != (len(positions), 4):
                raise ValueError("need one quaternion per waypoint")
            norms = np.linalg.norm(orientations, axis=1)
            if np.any(norms == 0):
                raise ValueError("orientations contain a zero quaternion")
            self.orientations = orientations / norms[:, None]

    @classmethod
    def from_waypoints(cls, waypoints) -> "ReferencePath":
        """Build from the on-disk shape: a list of {s, xyz, quaternion}
        entries, with quaternion optional but all-or-none."""
        if not isinstance(waypoints, list) or len(waypoints) < 2:
            raise ValueError("path needs a list of >= 2 waypoint entries")
        knots, positions, orientations = [], [], []
        for i, entry in enumerate(waypoints):
            if not isinstance(entry, dict):
                raise ValueError(f"waypoint [{i}] must be an object")
            unknown = set(entry) - {"s", "xyz", "quaternion"}
            if unknown:
                raise ValueError(
                    f"waypoint [{i}]: unknown key '{sorted(unknown)[0]}'")
            for key in ("s", "xyz"):
                if key not in entry:
                    raise ValueError(f"waypoint [{i}]: missing key '{key}'")
            knots.append(entry["s"])
            positions.append(entry["xyz"])
            if "quaternion" in entry:
                orientations.append(entry["quaternion"])
        if orientations and len(orientations) != len(positions):
            raise ValueError(
                "quaternion must be given for all waypoints or none")
        return cls(positions, orientations or None, knots=np.array(knots))

    def to_waypoints(self) -> list[dict]:
        """Serialize back to the on-disk list-of-{s, xyz, quaternion} shape."""
        return [
            {"s": float(self.knots[i]),
             "xyz": [float(v) for v in self.positions[i]],
             "quaternion": [float(v) for v in self.orientation(
                 float(self.knots[i]))]}
            for i in range(len(self.positions))
        ]

    def _segment(self, s: float) -> tuple[int, float]:
        s = min(max(float(s), 0.0), 1.0)
        i = int(np.searchsorted(self.knots, s, side="right")) - 1
        i = min(max(i, 0), len(self.knots) - 2)
        span = self.knots[i + 1] - self.knots[i]
        return i, (s - self.knots[i]) / span

    def position(self, s: float) -> np.ndarray:
        i, t = self._segment(s)
        return (1.0 - t) * self.positions[i] + t * self.positions[i + 1]

    def orientation(self, s: float) -> np.ndarray:
        if self.orientations is None:
            return np.array([1.0, 0.0, 0.0, 0.0])
        i, t = self._segment(s)
        return _slerp(self.orientations[i], self.orientations[i + 1], t)


def bump(xi):
    """Quartic blend 16 xi^2 (1 - xi)^2: unit peak, zero value and slope
    at both ends of [0, 1]."""
    xi = np.clip(xi, 0.0, 1.0)
    return 16.0 * xi * xi * (1.0 - xi) * (1.0 - xi)


def xi_of_s(s, s_start: float, horizon: float):
    """Normalized blend coordinate of the window starting at s_start."""
    if horizon <= 0.0:
        return np.zeros_like(np.asarray(s, dtype=float))
    return np.clip((np.asarray(s, dtype=float) - s_start) / horizon, 0.0, 1.0)


def window_average(force_samples):
    """Mean force over a window and its unit direction.

    The direction is None when the mean force is negligible, in which
    case no deviation should be commanded.
    """
    arr = np.asarray(force_samples, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != 3 or arr.shape[0] == 0:
        raise ValueError("force samples must stack to shape (K, 3)")
    mean = arr.mean(axis=0)
    norm = float(np.linalg.norm(mean))
    if norm < NEGLIGIBLE_FORCE:
        return mean, None
    return mean, mean / norm


def target_deviation(f_bar, gain: float, force_saturation: float) -> np.ndarray:
    """Deviation target along the averaged force: gain times the saturated
    magnitude, zero when the force is negligible."""
    f_bar = np.asarray(f_bar, dtype=float)
    norm = float(np.linalg.norm(f_bar))
    if norm < NEGLIGIBLE_FORCE:
        return np.zeros(3)
    return gain * min(norm, force_saturation) * (f_bar / norm)


def incremental_update(delta_x, delta_prev, deadband: float) -> np.ndarray:
    """Change in deviation target since the previous window; increments
    inside the deadband collapse to zero."""
    inc = np.asarray(delta_x, dtype=float) - np.asarray(delta_prev, dtype=float)
    if np.linalg.norm(inc) <= deadband:
        return np.zeros(3)
    return inc


def effective_horizon(f_bar_norm: float, horizon_per_newton: float,
                      s_next: float) -> float:
    """Blend-in length on s: force-proportional but never past the path end."""
    return max(min(horizon_per_newton * f_bar_norm, 1.0 - s_next), 0.0)


@dataclass(frozen=True)
class DeformationTerm:
    """One committed bump: vector * bump((s - s_start) / horizon)."""

    s_start: float
    horizon: float
    vector: np.ndarray

    def displacement(self, s):
        weight = bump(xi_of_s(s, self.s_start, self.horizon))
        if np.ndim(weight) == 0:
            return float(weight) * self.vector
        return np.asarray(weight)[..., None] * self.vector


class DeformedPath:
    """Reference path plus the accumulated deformation field."""

    def __init__(self, reference: ReferencePath):
        self.reference = reference
        self.terms: list[DeformationTerm] = []

    def displacement(self, s) -> np.ndarray:
        total = np.zeros(np.shape(s) + (3,)) if np.ndim(s) else np.zeros(3)
        for term in self.terms:
            total = total + term.displacement(s)
        return total

    def position(self, s: float) -> np.ndarray:
        return self.reference.position(s) + self.displacement(s)

    def orientation(self, s: float) -> np.ndarray:
        return self.reference.orientation(s)

    def sample(self, s_values) -> np.ndarray:
        s_values = np.asarray(s_values, dtype=float)
        ref = np.stack([self.reference.position(s) for s in s_values])
        return ref + self.displacement(s_values)


def evaluate_path(path: DeformedPath, s_values) -> np.ndarray:
    """Deformed positions at the given arc lengths, stacked (K, 3)."""
    return path.sample(s_values)


class AdaptivePlanner:
    """Stateful window-commit logic on top of a deformed path."""

    def __init__(self, reference: ReferencePath, config: PlannerConfig):
        self.config = config
        self.path = DeformedPath(reference)
        self.delta_prev = np.zeros(3)

    def commit_window(self, force_samples, contact_fraction: float,
                      s_next: float) -> DeformationTerm | None:
        """Process one window; returns the committed term or None.

        Windows with too little contact are skipped without touching any
        state.  A processed window always re-baselines the previous
        deviation target, even when the increment lands in the deadband.
        """
        if contact_fraction < self.config.min_contact_fraction:
            return None
        f_bar, direction = window_average(force_samples)
        delta_x = target_deviation(f_bar, self.config.gain,
                                   self.config.force_saturation)
        inc = incremental_update(delta_x, self.delta_prev,
                                 self.config.deadband)
        self.delta_prev = delta_x
        if direction is None or not np.any(inc):
            return None
        horizon = effective_horizon(float(np.linalg.norm(f_bar)),
                                    self.config.horizon_per_newton, s_next)
        if horizon <= 0.0:
            return None
        term = DeformationTerm(s_start=float(s_next), horizon=horizon,
                               vector=inc)
        self.path.terms.append(term)
        return term

    def reset_episode(self):
        """Forget the deviation baseline when a contact episode ends; the
        committed deformation itself stays."""
        self.delta_prev = np.zeros(3)
