"""Declarative simulation scenarios and their strict validation.

A scenario file pins everything a run needs: the robot chain, the
reference path, scripted contact events, noise level and model error,
all detector/estimator/planner tunables, timing, and the seed.  Loading
is strict: unknown keys, missing keys, and out-of-range values fail
with a pointed message instead of being silently ignored.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .detection import DetectionConfig
from .estimation import EstimationConfig
from .planner import PlannerConfig, ReferencePath
from .robot import ConfigurationError, RobotModel, chain_from_dict

PROFILES = ("constant", "trapezoid", "half_sine")


class ScenarioError(ValueError):
    """Scenario file or config override that cannot be used."""


def _read_json(path: Path, what: str):
    try:
        return json.loads(path.read_text())
    except FileNotFoundError:
        raise ScenarioError(f"{what} not found: {path}") from None
    except IsADirectoryError:
        raise ScenarioError(f"{what} is a directory: {path}") from None
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"{what} {path}: invalid JSON ({exc})") from None


def _check_keys(block: dict, allowed, required, where: str):
    if not isinstance(block, dict):
        raise ScenarioError(f"{where}: expected an object")
    unknown = set(block) - set(allowed)
    if unknown:
        raise ScenarioError(f"{where}: unknown key '{sorted(unknown)[0]}'")
    missing = set(required) - set(block)
    if missing:
        raise ScenarioError(f"{where}: missing key '{sorted(missing)[0]}'")


def _config_from(cls, block: dict, where: str):
    allowed = {f.name for f in dataclasses.fields(cls)}
    _check_keys(block, allowed, set(), where)
    if "weights" in block and block["weights"] is not None:
        block = dict(block, weights=tuple(block["weights"]))
    try:
        return cls(**block)
    except (TypeError, ValueError) as exc:
        raise ScenarioError(f"{where}: {exc}") from None


@dataclass(frozen=True)
class ContactSpec:
    """One scripted push: a world-frame force at a fixed point on a link."""

    link: int
    s: float
    force: np.ndarray
    t_start: float
    t_end: float
    profile: str = "constant"
    ramp: float = 0.05

    @classmethod
    def from_dict(cls, data: dict, where: str) -> "ContactSpec":
        _check_keys(data, {"link", "s", "force", "t_start", "t_end",
                           "profile", "ramp"},
                    {"link", "s", "force", "t_start", "t_end"}, where)
        force = np.asarray(data["force"], dtype=float)
        if force.shape != (3,):
            raise ScenarioError(f"{where}.force: expected 3 numbers")
        spec = cls(link=int(data["link"]), s=float(data["s"]), force=force,
                   t_start=float(data["t_start"]), t_end=float(data["t_end"]),
                   profile=data.get("profile", "constant"),
                   ramp=float(data.get("ramp", 0.05)))
        if spec.link < 1:
            raise ScenarioError(f"{where}.link: must be >= 1")
        if not 0.0 <= spec.s <= 1.0:
            raise ScenarioError(f"{where}.s: must be in [0, 1]")
        if spec.t_start < 0 or spec.t_end <= spec.t_start:
            raise ScenarioError(f"{where}: need 0 <= t_start < t_end")
        if spec.profile not in PROFILES:
            raise ScenarioError(
                f"{where}.profile: must be one of {', '.join(PROFILES)}")
        if spec.ramp <= 0:
            raise ScenarioError(f"{where}.ramp: must be > 0")
        return spec

    def to_dict(self) -> dict:
        return {"link": self.link, "s": self.s,
                "force": [float(v) for v in self.force],
                "t_start": self.t_start, "t_end": self.t_end,
                "profile": self.profile, "ramp": self.ramp}


@dataclass(frozen=True)
class ResolvedContact:
    """Contact spec pinned to the simulation tick grid."""

    spec: ContactSpec
    start_tick: int
    end_tick: int

    def active(self, tick: int) -> bool:
        return self.start_tick <= tick < self.end_tick

    def scale(self, tick: int, dt: float) -> float:
        """Force magnitude multiplier at a tick, per the time profile."""
        if not self.active(tick):
            return 0.0
        elapsed = (tick - self.start_tick) * dt
        total = (self.end_tick - self.start_tick) * dt
        if self.spec.profile == "constant":
            return 1.0
        if self.spec.profile == "trapezoid":
            return float(np.clip(min(elapsed / self.spec.ramp,
                                     (total - elapsed) / self.spec.ramp),
                                 0.0, 1.0))
        return math.sin(math.pi * elapsed / total)

    def force_at(self, tick: int, dt: float) -> np.ndarray:
        return self.spec.force * self.scale(tick, dt)


@dataclass(frozen=True)
class NoiseConfig:
    """Measurement noise and deliberate model error of a run.

    torque_std: per-joint white torque noise on the measurement, N*m.
    model_mass_error: relative link-mass error of the detector's model.
    """

    torque_std: float = 0.0
    model_mass_error: float = 0.0

    def __post_init__(self):
        if self.torque_std < 0:
            raise ValueError("torque_std must be >= 0")
        if self.model_mass_error <= -1.0:
            raise ValueError("model_mass_error must be > -1")


_TOP_KEYS = {"name", "robot", "path", "contacts", "noise", "detection",
             "estimation", "planner", "duration", "sample_rate", "seed",
             "q0", "tip_speed", "ik_damping", "push_force_limit"}


@dataclass(frozen=True)
class Scenario:
    """Fully resolved simulation setup."""

    robot: dict
    path: list
    duration: float
    sample_rate: float = 1000.0
    name: str = "scenario"
    contacts: tuple[ContactSpec, ...] = ()
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    detection: DetectionConfig = field(default_factory=DetectionConfig)
    estimation: EstimationConfig = field(default_factory=EstimationConfig)
    planner: PlannerConfig = field(default_factory=PlannerConfig)
    seed: int = 0
    q0: tuple[float, ...] | None = None
    tip_speed: float = 0.05
    ik_damping: float = 0.05
    push_force_limit: float = 100.0

    def __post_init__(self):
        if self.duration <= 0:
            raise ScenarioError("duration must be > 0")
        if self.sample_rate <= 0:
            raise ScenarioError("sample_rate must be > 0")
        if self.tip_speed < 0:
            raise ScenarioError("tip_speed must be >= 0")
        if self.ik_damping <= 0:
            raise ScenarioError("ik_damping must be > 0")
        if self.push_force_limit <= 0:
            raise ScenarioError("push_force_limit must be > 0")

    @property
    def dt(self) -> float:
        return 1.0 / self.sample_rate

    @property
    def ticks(self) -> int:
        return int(round(self.duration * self.sample_rate))

    @classmethod
    def from_dict(cls, data: dict) -> "Scenario":
        _check_keys(data, _TOP_KEYS, {"robot", "path", "duration"}, "scenario")
        for key, want in (("robot", dict), ("path", list)):
            if isinstance(data[key], str):
                raise ScenarioError(
                    f"{key}: file references resolve only through "
                    "Scenario.load")
            if not isinstance(data[key], want):
                raise ScenarioError(f"{key}: expected a {want.__name__}")
        contacts = data.get("contacts", [])
        if not isinstance(contacts, list):
            raise ScenarioError("contacts: expected a list")
        specs = tuple(ContactSpec.from_dict(c, f"contacts[{i}]")
                      for i, c in enumerate(contacts))
        noise = _config_from(NoiseConfig, data.get("noise", {}), "noise")
        detection = _config_from(DetectionConfig, data.get("detection", {}),
                                 "detection")
        estimation = _config_from(EstimationConfig, data.get("estimation", {}),
                                  "estimation")
        planner = _config_from(PlannerConfig, data.get("planner", {}),
                               "planner")
        q0 = data.get("q0")
        scenario = cls(
            robot=data["robot"], path=data["path"],
            duration=float(data["duration"]),
            sample_rate=float(data.get("sample_rate", 1000.0)),
            name=str(data.get("name", "scenario")),
            contacts=specs, noise=noise, detection=detection,
            estimation=estimation, planner=planner,
            seed=int(data.get("seed", 0)),
            q0=tuple(float(v) for v in q0) if q0 is not None else None,
            tip_speed=float(data.get("tip_speed", 0.05)),
            ik_damping=float(data.get("ik_damping", 0.05)),
            push_force_limit=float(data.get("push_force_limit", 100.0)))
        # materialize the robot and path once so structural errors surface
        # at load time, then cross-check the pieces against each other
        model = scenario.build_model()
        scenario.build_path()
        for i, spec in enumerate(specs):
            if spec.link > model.n:
                raise ScenarioError(
                    f"contacts[{i}].link: chain has only {model.n} links")
        if scenario.q0 is not None and len(scenario.q0) != model.n:
            raise ScenarioError(f"q0: expected {model.n} values")
        return scenario

    @classmethod
    def load(cls, path) -> "Scenario":
        path = Path(path)
        data = _read_json(path, "scenario file")
        if not isinstance(data, dict):
            raise ScenarioError(f"scenario file {path}: expected an object")
        # robot and path blocks may reference sibling JSON files by name
        for key in ("robot", "path"):
            if isinstance(data.get(key), str):
                data[key] = _read_json(path.parent / data[key],
                                       f"{key} file")
        return cls.from_dict(data)

    def build_model(self) -> RobotModel:
        try:
            return chain_from_dict(self.robot)
        except ConfigurationError as exc:
            raise ScenarioError(f"robot: {exc}") from None

    def build_detection_model(self) -> RobotModel:
        """Model used by the detector; carries the configured mass error."""
        model = self.build_model()
        if self.noise.model_mass_error == 0.0:
            return model
        factor = 1.0 + self.noise.model_mass_error
        links = tuple(dataclasses.replace(link, mass=link.mass * factor)
                      for link in model.links)
        return dataclasses.replace(model, links=links)

    def build_path(self) -> ReferencePath:
        try:
            return ReferencePath.from_waypoints(self.path)
        except ValueError as exc:
            raise ScenarioError(f"path: {exc}") from None

    def resolve_contacts(self) -> list[ResolvedContact]:
        out = []
        for spec in self.contacts:
            start = int(round(spec.t_start * self.sample_rate))
            end = int(round(spec.t_end * self.sample_rate))
            out.append(ResolvedContact(spec=spec, start_tick=start,
                                       end_tick=min(end, self.ticks)))
        return out

    def to_dict(self) -> dict:
        data = {
            "name": self.name,
            "robot": self.robot,
            "path": self.path,
            "contacts": [c.to_dict() for c in self.contacts],
            "noise": dataclasses.asdict(self.noise),
            "detection": dataclasses.asdict(self.detection),
            "estimation": dataclasses.asdict(self.estimation),
            "planner": dataclasses.asdict(self.planner),
            "duration": self.duration,
            "sample_rate": self.sample_rate,
            "seed": self.seed,
            "tip_speed": self.tip_speed,
            "ik_damping": self.ik_damping,
            "push_force_limit": self.push_force_limit,
        }
        if self.q0 is not None:
            data["q0"] = list(self.q0)
        if self.detection.weights is not None:
            data["detection"]["weights"] = list(self.detection.weights)
        return data


def apply_overrides(data: dict, overrides: dict[str, str]) -> dict:
    """Apply dotted-key CLI overrides ("planner.gain=0.01") onto a raw
    scenario dict; values parse as JSON first and fall back to strings."""
    out = json.loads(json.dumps(data))  # deep copy, JSON types only
    for dotted, raw in overrides.items():
        keys = dotted.split(".")
        target = out
        for key in keys[:-1]:
            if not isinstance(target.get(key), dict):
                target[key] = {}
            target = target[key]
        try:
            target[keys[-1]] = json.loads(raw)
        except json.JSONDecodeError:
            target[keys[-1]] = raw
    return out
