"""Closed-loop simulation of a torque-sensed arm on a deformable path.

One engine owns the whole loop: ground-truth dynamics with scripted or
live contact forces, noisy torque measurement, the perception pipeline,
window-cadenced path deformation, and damped resolved-rate tracking of
the deformed path.  A batch run and a live session drive the identical
per-tick step, so their outputs agree tick for tick.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .pipeline import ContactPipeline, estimate_event_dict
from .planner import AdaptivePlanner, evaluate_path
from .robot import (
    RobotModel,
    forward_kinematics,
    inverse_dynamics,
    point_jacobian,
    resolved_rate_step,
)
from .scenario import ContactSpec, ResolvedContact, Scenario, ScenarioError

TIP_SPEED_LIMIT = 0.5      # m/s cap on the commanded tip velocity
ABORT_ERROR = 0.05         # m of tracking error that starts the abort timer
ABORT_HOLD_S = 0.5         # s the error must persist before aborting
FALSE_POSITIVE_GRACE_S = 0.5   # s after a real contact that still counts as it
PATH_EXPORT_SAMPLES = 201  # dense samples in the deformed-path export


def simulate_measured_torque(model: RobotModel, q, qd, qdd, contacts,
                             tick: int, dt: float, torque_std: float,
                             rng, frames=None) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Measured joint torque of one tick under scripted external forces.

    The drive balances the rigid-body and friction torques plus whatever
    the active contacts induce, so the measurement is their sum; white
    noise is added only when torque_std is positive, which keeps the
    random stream untouched in noiseless runs.  Returns (tau_measured,
    tau_model, tau_external).
    """
    tau_model = inverse_dynamics(model, q, qd, qdd, frames=frames)
    tau_ext = np.zeros(model.n)
    for contact in contacts:
        if contact.active(tick):
            jac = point_jacobian(model, q, contact.spec.link, contact.spec.s,
                                 frames=frames)
            tau_ext += jac.T @ contact.force_at(tick, dt)
    tau_meas = tau_model + tau_ext
    if torque_std > 0.0:
        tau_meas = tau_meas + rng.normal(0.0, torque_std, model.n)
    return tau_meas, tau_model, tau_ext


def settle_configuration(model: RobotModel, target, damping: float,
                         tol: float = 1e-5) -> np.ndarray:
    """Find a joint configuration whose tip sits on a world target point.

    Runs damped resolved-rate iterations from a fixed ladder of seed
    postures; deterministic, so repeated loads agree.  Raises when no
    seed converges, which usually means the target is out of reach.
    """
    target = np.asarray(target, dtype=float)
    n = model.n
    seeds = [
        np.zeros(n),
        np.full(n, 0.3),
        np.full(n, -0.3),
        np.array([0.5 * (-1.0) ** i for i in range(n)]),
        np.array([0.15 * (i + 1) for i in range(n)]),
    ]
    for seed in seeds:
        q = seed.copy()
        for j, joint in enumerate(model.joints):
            if joint.limits is not None:
                q[j] = np.clip(q[j], joint.limits[0], joint.limits[1])
        best = np.inf
        stalled = 0
        for _ in range(8000):
            tip = forward_kinematics(model, q).link_tip[-1]
            err = target - tip
            dist = float(np.linalg.norm(err))
            if dist < tol:
                return q
            # give up on a seed once progress stops, e.g. out of reach
            if dist < best - 1e-9:
                best, stalled = dist, 0
            else:
                stalled += 1
                if stalled >= 50:
                    break
            v = err / max(dist, 1e-12) * min(5.0 * dist, 0.25)
            q = resolved_rate_step(model, q, v, damping, 0.02)
    raise ScenarioError(
        f"no joint configuration reaches the path start {target.tolist()}")


@dataclass
class TickOutput:
    """Everything one simulation tick produced."""

    tick: int
    t: float
    q: np.ndarray
    qd: np.ndarray
    qdd: np.ndarray
    tau_meas: np.ndarray
    tau_model: np.ndarray
    tau_hat: np.ndarray
    tau_ext: np.ndarray
    eta_bar: float
    contact: int
    link: int
    s: float
    target: np.ndarray
    tip: np.ndarray
    events: list[dict] = field(default_factory=list)


class SimEngine:
    """Stateful tick-by-tick simulation of one scenario."""

    def __init__(self, scenario: Scenario):
        self.scenario = scenario
        self.model = scenario.build_model()
        self.detection_model = scenario.build_detection_model()
        self.reference = scenario.build_path()
        self.rng = np.random.default_rng(scenario.seed)
        self.contacts = scenario.resolve_contacts()
        self.dt = scenario.dt
        # the detector may reuse the simulated model torque only when its
        # model and acceleration source cannot differ from the truth
        self._share_model_torque = (
            scenario.noise.model_mass_error == 0.0
            and scenario.detection.qdd_source == "exact")
        self.pipeline = ContactPipeline(
            self.detection_model, scenario.detection, scenario.estimation,
            self.dt, window_ticks=scenario.planner.window,
            min_contact_fraction=scenario.planner.min_contact_fraction)
        self.planner = AdaptivePlanner(self.reference, scenario.planner)
        if scenario.q0 is not None:
            self.q = np.asarray(scenario.q0, dtype=float)
        else:
            self.q = settle_configuration(self.model,
                                          self.reference.position(0.0),
                                          scenario.ik_damping)
        self.qd = np.zeros(self.model.n)
        self.qdd = np.zeros(self.model.n)
        self.s = 0.0
        self.deformed_length = self._deformed_length()
        self.tick = 0
        self.aborted = False
        self.abort_reason: str | None = None
        self._error_streak = 0

    def _deformed_length(self) -> float:
        s_vals = np.linspace(0.0, 1.0, PATH_EXPORT_SAMPLES)
        pts = evaluate_path(self.planner.path, s_vals)
        return float(np.linalg.norm(np.diff(pts, axis=0), axis=1).sum())

    def apply_push(self, link: int, s: float, force, duration: float,
                   profile: str = "constant") -> ResolvedContact:
        """Schedule an external push starting on the next tick.

        Pushes beyond the scenario's force limit are rejected outright.
        """
        force = np.asarray(force, dtype=float)
        if force.shape != (3,) or not np.all(np.isfinite(force)):
            raise ValueError("force must be a finite 3-vector")
        magnitude = float(np.linalg.norm(force))
        limit = self.scenario.push_force_limit
        if magnitude > limit:
            raise ValueError(
                f"push of {magnitude:.1f} N exceeds the {limit:.1f} N limit")
        if duration <= 0.0:
            raise ValueError("duration must be > 0")
        start = self.tick + 1
        if start >= self.scenario.ticks:
            raise ValueError("push would start after the run ends")
        # clamp to the run so shaped profiles resolve the same way when the
        # session is replayed as a batch scenario
        end = min(start + max(1, int(round(duration
                                           * self.scenario.sample_rate))),
                  self.scenario.ticks)
        spec = ContactSpec(link=int(link), s=float(s), force=force,
                           t_start=start * self.dt, t_end=end * self.dt,
                           profile=profile)
        if spec.link > self.model.n:
            raise ValueError(f"chain has only {self.model.n} links")
        contact = ResolvedContact(spec=spec, start_tick=start, end_tick=end)
        self.contacts.append(contact)
        return contact

    def step(self) -> TickOutput:
        """Advance the loop one tick and return everything it produced."""
        if self.aborted:
            raise RuntimeError("engine stepped after abort")
        scenario = self.scenario
        dt = self.dt
        frames = forward_kinematics(self.model, self.q)
        tip = frames.link_tip[-1].copy()
        tau_meas, tau_model_true, tau_ext = simulate_measured_torque(
            self.model, self.q, self.qd, self.qdd, self.contacts, self.tick,
            dt, scenario.noise.torque_std, self.rng, frames=frames)
        shared = tau_model_true if self._share_model_torque else None
        result = self.pipeline.step(self.q, self.qd, tau_meas, qdd=self.qdd,
                                    tau_model=shared)
        t_now = self.tick * dt
        events: list[dict] = []
        if result.contact_started:
            events.append({"kind": "detection", "tick": self.tick, "t": t_now,
                           "contact": 1, "link": result.link})
        if result.contact_ended:
            self.planner.reset_episode()
            events.append({"kind": "detection", "tick": self.tick, "t": t_now,
                           "contact": 0, "link": result.link})
        if result.window is not None:
            if result.window.estimate is not None:
                events.append(estimate_event_dict(result.window, dt))
            term = self.planner.commit_window(result.window.force_samples,
                                              result.window.fraction,
                                              s_next=self.s)
            if term is not None:
                events.append({
                    "kind": "bump", "tick": self.tick, "t": t_now,
                    "s_start": term.s_start, "horizon": term.horizon,
                    "vector": [float(v) for v in term.vector]})
                self.deformed_length = self._deformed_length()
        target_now = self.planner.path.position(self.s)
        error = float(np.linalg.norm(target_now - tip))
        self._error_streak = self._error_streak + 1 if error > ABORT_ERROR else 0
        out = TickOutput(
            tick=self.tick, t=t_now, q=self.q.copy(), qd=self.qd.copy(),
            qdd=self.qdd.copy(), tau_meas=tau_meas,
            tau_model=tau_meas - result.tau_hat, tau_hat=result.tau_hat,
            tau_ext=tau_ext, eta_bar=result.eta_bar, contact=result.contact,
            link=result.link, s=self.s, target=target_now, tip=tip,
            events=events)
        if self._error_streak * dt > ABORT_HOLD_S:
            self.aborted = True
            self.abort_reason = (
                f"tip lagged the path by more than {ABORT_ERROR} m for "
                f"{ABORT_HOLD_S} s (at t={t_now:.3f} s)")
            events.append({"kind": "abort", "tick": self.tick, "t": t_now,
                           "reason": self.abort_reason})
            self.tick += 1
            return out
        if self.deformed_length > 0.0:
            self.s = min(1.0, self.s
                         + scenario.tip_speed * dt / self.deformed_length)
        target_next = self.planner.path.position(self.s)
        v = (target_next - tip) / dt
        speed = float(np.linalg.norm(v))
        if speed > TIP_SPEED_LIMIT:
            v *= TIP_SPEED_LIMIT / speed
        q_new = resolved_rate_step(self.model, self.q, v,
                                   scenario.ik_damping, dt, frames=frames)
        self.qd = (q_new - self.q) / dt
        self.qdd = (self.qd - out.qd) / dt
        self.q = q_new
        self.tick += 1
        return out


@dataclass
class RunResult:
    """Complete record of one batch run."""

    scenario: Scenario
    model: RobotModel
    planner: AdaptivePlanner
    contacts: list[ResolvedContact]
    aborted: bool
    abort_reason: str | None
    t: np.ndarray
    q: np.ndarray
    qd: np.ndarray
    tau_meas: np.ndarray
    tau_model: np.ndarray
    tau_hat: np.ndarray
    tau_ext: np.ndarray
    eta_bar: np.ndarray
    contact: np.ndarray
    link: np.ndarray
    s: np.ndarray
    target: np.ndarray
    tip: np.ndarray
    events: list[dict]

    @property
    def ticks(self) -> int:
        return len(self.t)


def collect_result(engine: SimEngine, outputs: list[TickOutput]) -> RunResult:
    """Pack per-tick outputs into flat arrays."""
    n = engine.model.n
    count = len(outputs)

    def stack(attr, width=None):
        if count == 0:
            shape = (0,) if width is None else (0, width)
            return np.zeros(shape)
        return np.array([getattr(o, attr) for o in outputs])

    events = [e for o in outputs for e in o.events]
    return RunResult(
        scenario=engine.scenario, model=engine.model, planner=engine.planner,
        contacts=list(engine.contacts), aborted=engine.aborted,
        abort_reason=engine.abort_reason,
        t=stack("t"), q=stack("q", n), qd=stack("qd", n),
        tau_meas=stack("tau_meas", n), tau_model=stack("tau_model", n),
        tau_hat=stack("tau_hat", n), tau_ext=stack("tau_ext", n),
        eta_bar=stack("eta_bar"),
        contact=stack("contact").astype(int),
        link=stack("link").astype(int),
        s=stack("s"), target=stack("target", 3), tip=stack("tip", 3),
        events=events)


def run(scenario: Scenario) -> RunResult:
    """Run a scenario to its end or to an abort; never raises for aborts."""
    engine = SimEngine(scenario)
    outputs: list[TickOutput] = []
    for _ in range(scenario.ticks):
        outputs.append(engine.step())
        if engine.aborted:
            break
    return collect_result(engine, outputs)


def _episodes(contact: np.ndarray) -> list[tuple[int, int]]:
    """Half-open [start, end) tick ranges where the detector held contact."""
    spans = []
    start = None
    for i, flag in enumerate(contact):
        if flag and start is None:
            start = i
        elif not flag and start is not None:
            spans.append((start, i))
            start = None
    if start is not None:
        spans.append((start, len(contact)))
    return spans


def _latest_estimates(result: RunResult) -> list[dict | None]:
    """Per-tick zero-order hold of the most recent estimate event, cleared
    when the detector releases; mirrors what the planner consumed."""
    held: list[dict | None] = []
    by_tick: dict[int, dict] = {}
    for event in result.events:
        if event["kind"] == "estimate":
            by_tick[event["tick"]] = event
    current = None
    for tick in range(result.ticks):
        if tick in by_tick:
            current = by_tick[tick]
        if tick > 0 and result.contact[tick - 1] and not result.contact[tick]:
            current = None
        held.append(current)
    return held


def compute_metrics(result: RunResult) -> dict:
    """Summary numbers of one run, JSON-ready."""
    dt = result.scenario.dt
    grace = int(round(FALSE_POSITIVE_GRACE_S / dt))
    episodes = _episodes(result.contact)
    truths = result.contacts
    held = _latest_estimates(result)

    def overlaps(ep, c, slack=0):
        return ep[0] < c.end_tick + slack and ep[1] > c.start_tick

    episode_rows = []
    false_positives = 0
    for ep in episodes:
        matched = [c for c in truths if overlaps(ep, c, grace)]
        last_est = None
        for tick in range(ep[0], min(ep[1], result.ticks)):
            if held[tick] is not None:
                last_est = held[tick]
        row = {
            "start_t": ep[0] * dt,
            "end_t": ep[1] * dt,
            "latency_s": None,
            "link_true": None,
            "link_correct": None,
            "s_error": None,
            "force_error": None,
            "estimate": last_est,
        }
        if matched:
            truth = matched[0]
            row["latency_s"] = (ep[0] - truth.start_tick) * dt
            row["link_true"] = truth.spec.link
            if last_est is not None:
                row["link_correct"] = last_est["link"] == truth.spec.link
                row["s_error"] = abs(last_est["s"] - truth.spec.s)
                row["force_error"] = float(np.linalg.norm(
                    np.array(last_est["force"]) - truth.spec.force))
        else:
            false_positives += 1
        episode_rows.append(row)

    detected = []
    for c in truths:
        hits = [ep for ep in episodes if overlaps(ep, c)]
        detected.append(bool(hits))

    abs_errors = []
    per_tick_active = np.zeros(result.ticks, dtype=bool)
    for c in truths:
        lo = max(c.start_tick, 0)
        hi = min(c.end_tick, result.ticks)
        if lo < hi:
            per_tick_active[lo:hi] = True
    for tick in range(result.ticks):
        est = held[tick]
        if est is None or not per_tick_active[tick] or not result.contact[tick]:
            continue
        jac = point_jacobian(result.model, result.q[tick], est["link"],
                             est["s"])
        pred = jac.T @ np.array(est["force"])
        abs_errors.extend(np.abs(pred - result.tau_hat[tick]).tolist())
    torque_mae = float(np.mean(abs_errors)) if abs_errors else None

    tracking = np.linalg.norm(result.target - result.tip, axis=1) \
        if result.ticks else np.zeros(0)
    s_dense = np.linspace(0.0, 1.0, PATH_EXPORT_SAMPLES)
    deformation = np.linalg.norm(
        [result.planner.path.displacement(s) for s in s_dense], axis=1)
    reference = result.planner.path.reference
    goal_error = None
    if result.ticks and result.s[-1] >= 1.0:
        goal_error = float(np.linalg.norm(
            result.tip[-1] - reference.position(1.0)))

    return {
        "ticks": result.ticks,
        "duration_s": result.ticks * dt,
        "aborted": result.aborted,
        "abort_reason": result.abort_reason,
        "episodes": episode_rows,
        "contacts_total": len(truths),
        "contacts_detected": int(sum(detected)),
        "false_positives": false_positives,
        "torque_mae": torque_mae,
        "tracking_error_max": float(tracking.max()) if result.ticks else None,
        "tracking_error_mean": float(tracking.mean()) if result.ticks else None,
        "deformation_peak": float(deformation.max()),
        "bumps_committed": len(result.planner.path.terms),
        "s_final": float(result.s[-1]) if result.ticks else 0.0,
        "goal_error": goal_error,
    }


def _csv_header(n: int) -> str:
    cols = ["t"]
    for prefix in ("q", "qd", "tau_meas", "tau_model", "tau_hat"):
        cols.extend(f"{prefix}{j + 1}" for j in range(n))
    cols.extend(["eta_bar", "C", "link"])
    return ",".join(cols)


def write_trace_csv(result: RunResult, path: Path):
    """Fixed-column CSV of the per-tick signals; floats keep full
    round-trip precision."""
    n = result.model.n
    lines = [_csv_header(n)]
    for i in range(result.ticks):
        cells = [repr(float(result.t[i]))]
        for arr in (result.q, result.qd, result.tau_meas, result.tau_model,
                    result.tau_hat):
            cells.extend(repr(float(v)) for v in arr[i])
        cells.append(repr(float(result.eta_bar[i])))
        cells.append(str(int(result.contact[i])))
        cells.append(str(int(result.link[i])))
        lines.append(",".join(cells))
    path.write_text("\n".join(lines) + "\n")


def deformed_path_dict(result: RunResult) -> dict:
    """Dense deformed-path samples in the waypoint file schema, plus the
    committed bump terms."""
    return deformed_path_payload(result.planner.path)


def deformed_path_payload(path) -> dict:
    """Same export shape, straight from a deformed path object."""
    samples = []
    for s in np.linspace(0.0, 1.0, PATH_EXPORT_SAMPLES):
        samples.append({
            "s": float(s),
            "xyz": [float(v) for v in path.position(float(s))],
            "quaternion": [float(v) for v in path.orientation(float(s))],
        })
    bumps = [{"s_start": term.s_start, "horizon": term.horizon,
              "vector": [float(v) for v in term.vector]}
             for term in path.terms]
    return {"path": samples, "bumps": bumps}


def render_plot_svg(result: RunResult) -> str:
    """Deterministic two-panel SVG: the smoothed residual statistic with
    its threshold and contact shading, and the tip tracking deviation."""
    width, height, pad = 960, 420, 45
    panel_h = (height - 3 * pad) // 2
    t = result.t
    t_max = float(t[-1]) if result.ticks else 1.0

    def x_of(tv):
        return pad + (width - 2 * pad) * (tv / t_max if t_max else 0.0)

    def polyline(values, top, vmax):
        vmax = vmax or 1.0
        step = max(1, result.ticks // 2000)
        pts = " ".join(
            f"{x_of(t[i]):.2f},{top + panel_h - panel_h * min(values[i] / vmax, 1.0):.2f}"
            for i in range(0, result.ticks, step))
        return pts

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" '
        f'height="{height}" viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
    ]
    top1, top2 = pad, 2 * pad + panel_h
    for top, label in ((top1, "residual statistic"),
                       (top2, "tip deviation [m]")):
        parts.append(
            f'<rect x="{pad}" y="{top}" width="{width - 2 * pad}" '
            f'height="{panel_h}" fill="none" stroke="#888"/>')
        parts.append(
            f'<text x="{pad}" y="{top - 6}" font-size="13" '
            f'font-family="sans-serif">{label}</text>')
    if result.ticks:
        for lo, hi in _episodes(result.contact):
            x0 = x_of(t[lo])
            x1 = x_of(t[min(hi, result.ticks - 1)])
            parts.append(
                f'<rect x="{x0:.2f}" y="{top1}" width="{max(x1 - x0, 1):.2f}" '
                f'height="{panel_h}" fill="#fdd" stroke="none"/>')
        eta_max = max(float(result.eta_bar.max()),
                      result.scenario.detection.threshold) * 1.1
        thr_y = top1 + panel_h - panel_h * (
            result.scenario.detection.threshold / eta_max)
        parts.append(
            f'<line x1="{pad}" y1="{thr_y:.2f}" x2="{width - pad}" '
            f'y2="{thr_y:.2f}" stroke="#c00" stroke-dasharray="6 3"/>')
        parts.append(
            f'<polyline points="{polyline(result.eta_bar, top1, eta_max)}" '
            f'fill="none" stroke="#036" stroke-width="1.2"/>')
        deviation = np.linalg.norm(result.target - result.tip, axis=1)
        dev_max = max(float(deviation.max()), 1e-6) * 1.1
        parts.append(
            f'<polyline points="{polyline(deviation, top2, dev_max)}" '
            f'fill="none" stroke="#063" stroke-width="1.2"/>')
    parts.append(f'<text x="{pad}" y="{height - 10}" font-size="12" '
                 f'font-family="sans-serif">{result.scenario.name}, '
                 f'{result.ticks} ticks</text>')
    parts.append("</svg>")
    return "\n".join(parts)


def export_trace(result: RunResult, out_dir) -> dict[str, Path]:
    """Write the run's artifacts; identical runs produce identical bytes."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "scenario": out / "scenario.json",
        "trace": out / "trace.csv",
        "events": out / "events.jsonl",
        "path": out / "path.json",
        "metrics": out / "metrics.json",
        "plot": out / "plot.svg",
    }
    paths["scenario"].write_text(
        json.dumps(result.scenario.to_dict(), indent=2, sort_keys=True) + "\n")
    write_trace_csv(result, paths["trace"])
    lines = [json.dumps(e, sort_keys=True, separators=(",", ":"))
             for e in result.events]
    paths["events"].write_text("\n".join(lines) + ("\n" if lines else ""))
    paths["path"].write_text(
        json.dumps(deformed_path_dict(result), indent=2, sort_keys=True) + "\n")
    paths["metrics"].write_text(
        json.dumps(compute_metrics(result), indent=2, sort_keys=True) + "\n")
    paths["plot"].write_text(render_plot_svg(result))
    return paths
