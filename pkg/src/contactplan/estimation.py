"""Constrained contact force and location estimation from residual windows.

Given a window of joint configurations and torque residuals attributed to
one contacted link, the estimator fits a single constant world-frame force
and its application point along the link centerline.  For a candidate
arc length s the force has a closed ridge solution; the remaining
one-dimensional search over s runs on a coarse grid and is refined with
a bracketed parabolic/golden-section minimizer.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .robot import RobotModel, forward_kinematics

RANK_GUARD_RATIO = 1e-6      # singular-value ratio that flags rank deficiency
_FLAT_COST_TOL = 1e-12       # relative spread treated as a flat landscape

_GOLDEN = 0.5 * (3.0 - math.sqrt(5.0))
_SQRT_EPS = math.sqrt(np.finfo(float).eps)


@dataclass(frozen=True)
class EstimationConfig:
    """Tunables of the force/location estimator.

    ridge_lambda: Tikhonov weight of the force fit, N*m per N.
    force_max: magnitude cap applied to the fitted force, N.
    grid_points: coarse samples of s in [0, 1] before refinement.
    brent_tol: absolute tolerance of the scalar refinement on s.
    window: number of most recent in-contact samples fed to a fit.
    """

    ridge_lambda: float = 0.05
    force_max: float = 60.0
    grid_points: int = 21
    brent_tol: float = 1e-4
    window: int = 50

    def __post_init__(self):
        if self.ridge_lambda <= 0:
            raise ValueError("ridge_lambda must be > 0")
        if self.force_max <= 0:
            raise ValueError("force_max must be > 0")
        if self.grid_points < 2:
            raise ValueError("grid_points must be >= 2")
        if self.brent_tol <= 0:
            raise ValueError("brent_tol must be > 0")
        if self.window < 1:
            raise ValueError("window must be >= 1")


@dataclass(frozen=True)
class ContactEstimate:
    """Result of one window fit: where and how hard the arm is pushed.

    point is the world-frame contact location at the window's most
    recent configuration.  clamped marks a force scaled back onto the
    magnitude bound; degenerate marks a flat cost landscape (typically
    no excitation) where s is pinned to the centerline midpoint.
    """

    link: int
    s: float
    force: np.ndarray
    cost: float
    point: np.ndarray
    clamped: bool
    degenerate: bool
    rank_deficient: bool


def closed_form_force(jacobians, residuals, ridge_lambda: float,
                      force_max: float) -> tuple[np.ndarray, bool]:
    """Ridge-regularized force fit over a window, capped in magnitude.

    Solves (sum_k J_k J_k^T + lambda^2 I) F = sum_k J_k tau_k for the
    3-vector F, then scales F back onto the force_max ball if it lands
    outside.  Returns (force, clamped).
    """
    jac = np.asarray(jacobians, dtype=float)       # (K, 3, n)
    res = np.asarray(residuals, dtype=float)       # (K, n)
    if jac.ndim != 3 or jac.shape[1] != 3:
        raise ValueError("jacobians must stack to shape (K, 3, n)")
    if res.shape != (jac.shape[0], jac.shape[2]):
        raise ValueError("residuals must stack to shape (K, n)")
    if jac.shape[0] == 0:
        raise ValueError("need at least one sample")
    if not (np.all(np.isfinite(jac)) and np.all(np.isfinite(res))):
        raise ValueError("inputs must be finite")
    gram = np.einsum("kan,kbn->ab", jac, jac)
    rhs = np.einsum("kan,kn->a", jac, res)
    force = np.linalg.solve(gram + ridge_lambda ** 2 * np.eye(3), rhs)
    norm = float(np.linalg.norm(force))
    if norm > force_max:
        return force * (force_max / norm), True
    return force, False


def _misfit(jacobians: np.ndarray, residuals: np.ndarray, force) -> float:
    """Data term 0.5 sum_k ||tau_k - J_k^T F||^2 at a fixed force."""
    diff = residuals - np.einsum("kan,a->kn", jacobians, force)
    return 0.5 * float(np.sum(diff * diff))


def brent_minimize(func, a: float, b: float, c: float, tol: float = 1e-4,
                   max_iter: int = 100) -> float:
    """Scalar minimization from a three-point bracket, derivative-free.

    Requires a < b < c with func(b) <= min(func(a), func(c)).  Combines
    successive parabolic interpolation with golden-section fallback
    steps; stops once the bracket shrinks to the absolute tolerance or
    after max_iter refinement steps.  Returns the minimizer.
    """
    if not a < b < c:
        raise ValueError("need a < b < c")
    if tol <= 0:
        raise ValueError("tol must be > 0")
    fb = func(b)
    if not (fb <= func(a) and fb <= func(c)):
        raise ValueError("bracket does not enclose a minimum")
    lo, hi = a, c
    x = w = v = b
    fx = fw = fv = fb
    d = e = 0.0
    for _ in range(max_iter):
        m = 0.5 * (lo + hi)
        tol1 = _SQRT_EPS * abs(x) + tol
        tol2 = 2.0 * tol1
        if abs(x - m) <= tol2 - 0.5 * (hi - lo):
            break
        p = q = r = 0.0
        if abs(e) > tol1:
            r = (x - w) * (fx - fv)
            q = (x - v) * (fx - fw)
            p = (x - v) * q - (x - w) * r
            q = 2.0 * (q - r)
            if q > 0.0:
                p = -p
            q = abs(q)
            r = e
            e = d
        if abs(p) < abs(0.5 * q * r) and q * (lo - x) < p < q * (hi - x):
            d = p / q
            u = x + d
            if u - lo < tol2 or hi - u < tol2:
                d = tol1 if x < m else -tol1
        else:
            e = (hi if x < m else lo) - x
            d = _GOLDEN * e
        u = x + d if abs(d) >= tol1 else x + (tol1 if d > 0 else -tol1)
        fu = func(u)
        if fu <= fx:
            if u < x:
                hi = x
            else:
                lo = x
            v, fv, w, fw, x, fx = w, fw, x, fx, u, fu
        else:
            if u < x:
                lo = u
            else:
                hi = u
            if fu <= fw or w == x:
                v, fv, w, fw = w, fw, u, fu
            elif fu <= fv or v == x or v == w:
                v, fv = u, fu
    return x


class _SampleFrames:
    """Precomputed world frames of a sample window, for fast J(s) builds."""

    def __init__(self, model: RobotModel, q_samples, link: int):
        q_samples = np.asarray(q_samples, dtype=float)
        if q_samples.ndim != 2 or q_samples.shape[1] != model.n:
            raise ValueError("q_samples must stack to shape (K, n)")
        if q_samples.shape[0] == 0:
            raise ValueError("need at least one sample")
        if not 1 <= link <= model.n:
            raise ValueError(f"link index {link} out of range 1..{model.n}")
        k = q_samples.shape[0]
        n = model.n
        self.link = link
        self.base = np.zeros((k, 3))
        self.tip = np.zeros((k, 3))
        self.axes = np.zeros((k, n, 3))
        self.origins = np.zeros((k, n, 3))
        for i, q in enumerate(q_samples):
            frames = forward_kinematics(model, q)
            self.base[i] = frames.link_base[link - 1]
            self.tip[i] = frames.link_tip[link - 1]
            self.axes[i] = frames.joint_axes
            self.origins[i] = frames.joint_origins

    def jacobians(self, s: float) -> np.ndarray:
        """Stacked (K, 3, n) point Jacobians at arc length s."""
        point = (1.0 - s) * self.base + s * self.tip
        lever = point[:, None, :] - self.origins
        cols = np.cross(self.axes, lever)            # (K, n, 3)
        cols[:, self.link:, :] = 0.0
        return np.transpose(cols, (0, 2, 1))

    def contact_point(self, s: float, sample: int = -1) -> np.ndarray:
        return (1.0 - s) * self.base[sample] + s * self.tip[sample]


def _fit_at(frames: _SampleFrames, residuals: np.ndarray, s: float,
            config: EstimationConfig):
    jac = frames.jacobians(s)
    force, clamped = closed_form_force(jac, residuals, config.ridge_lambda,
                                       config.force_max)
    return _misfit(jac, residuals, force), force, clamped


def reduced_cost(s: float, q_samples, residuals, model: RobotModel,
                 link: int, config: EstimationConfig) -> float:
    """Window misfit at arc length s with the force refit (and capped)
    for that s; the objective of the one-dimensional location search."""
    if not 0.0 <= s <= 1.0:
        raise ValueError(f"arc length s={s} outside [0, 1]")
    frames = _SampleFrames(model, q_samples, link)
    residuals = np.asarray(residuals, dtype=float)
    if residuals.shape != (frames.base.shape[0], model.n):
        raise ValueError("residuals must stack to shape (K, n)")
    return _fit_at(frames, residuals, s, config)[0]


def estimate_contact(model: RobotModel, q_samples, residuals, link: int,
                     config: EstimationConfig) -> ContactEstimate:
    """Fit contact arc length and force for a window attributed to a link.

    The location cost uses the capped force of each candidate s, so the
    refined location can never score worse than the best grid candidate.
    A flat cost landscape pins s to the centerline midpoint and flags
    the estimate as degenerate; a rank-deficient stacked Jacobian at the
    solution is flagged but still returned.
    """
    residuals = np.asarray(residuals, dtype=float)
    frames = _SampleFrames(model, q_samples, link)
    if residuals.shape != (frames.base.shape[0], model.n):
        raise ValueError("residuals must stack to shape (K, n)")

    def cost_at(s: float) -> float:
        return _fit_at(frames, residuals, s, config)[0]

    grid = np.linspace(0.0, 1.0, config.grid_points)
    costs = np.array([cost_at(s) for s in grid])
    spread = float(costs.max() - costs.min())
    best = int(np.argmin(costs))
    if spread <= _FLAT_COST_TOL * max(1.0, float(costs.max())):
        s_star = 0.5
        degenerate = True
    else:
        degenerate = False
        s_star = float(grid[best])
        bracket = None
        if 0 < best < len(grid) - 1:
            bracket = (grid[best - 1], grid[best], grid[best + 1],
                       costs[best])
        else:
            # best sits on an edge: probe half a step inward; a bracket
            # exists only if the probe does not fall above the edge cost
            inward = best + (1 if best == 0 else -1)
            probe = 0.5 * (grid[best] + grid[inward])
            cost_probe = cost_at(probe)
            if cost_probe <= costs[best]:
                lo, hi = sorted((grid[best], grid[inward]))
                bracket = (lo, probe, hi, cost_probe)
        if bracket is not None:
            lo, mid, hi, _ = bracket
            s_ref = brent_minimize(cost_at, lo, mid, hi,
                                   tol=config.brent_tol)
            if cost_at(s_ref) <= costs[best]:
                s_star = float(s_ref)

    cost, force, clamped = _fit_at(frames, residuals, s_star, config)
    stacked = frames.jacobians(s_star).transpose(0, 2, 1).reshape(-1, 3)
    sigma = np.linalg.svd(stacked, compute_uv=False)
    # three force components must be observable; fewer rows than three or a
    # collapsed third direction both count as deficient
    sig_max = float(sigma[0])
    sig_min = float(sigma[2]) if sigma.size >= 3 else 0.0
    rank_deficient = bool(sig_max == 0.0
                          or sig_min < RANK_GUARD_RATIO * sig_max)
    return ContactEstimate(link=link, s=float(s_star), force=force,
                           cost=float(cost),
                           point=frames.contact_point(s_star),
                           clamped=clamped, degenerate=degenerate,
                           rank_deficient=rank_deficient)
