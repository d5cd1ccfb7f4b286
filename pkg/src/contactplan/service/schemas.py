"""Wire types of the live-control protocol.

Every message in either direction carries protocol_version, so mismatched
peers fail loudly instead of misreading each other.  Commands flow client
to server, each answered by an ack carrying the client-chosen id; server
to client traffic is the telemetry stream plus those acks, every message
stamped with a strictly increasing seq.
"""

from __future__ import annotations

from typing import Annotated, Literal, Union

from pydantic import BaseModel, Field, TypeAdapter, ValidationError

PROTOCOL_VERSION = 1

PUSH_PROFILES = ("constant", "trapezoid", "half_sine")


# --------------------------------------------------------------------------
# client -> server

class CommandBase(BaseModel):
    model_config = {"extra": "forbid"}

    protocol_version: int = PROTOCOL_VERSION
    id: str | None = None


class ApplyPush(CommandBase):
    """Schedule an external push on the running simulation."""

    kind: Literal["apply_push"]
    link: int = Field(ge=1)
    s: float = Field(ge=0.0, le=1.0)
    force: tuple[float, float, float]
    duration: float = Field(gt=0.0)
    profile: Literal["constant", "trapezoid", "half_sine"] = "constant"


class Pause(CommandBase):
    kind: Literal["pause"]


class Resume(CommandBase):
    kind: Literal["resume"]


class Reset(CommandBase):
    kind: Literal["reset"]


class SetConfig(CommandBase):
    """Adjust live-tunable planner values; keys are dotted config paths."""

    kind: Literal["set_config"]
    values: dict[str, float]


Command = Annotated[Union[ApplyPush, Pause, Resume, Reset, SetConfig],
                    Field(discriminator="kind")]

_command_adapter: TypeAdapter = TypeAdapter(Command)


def parse_command(text: str) -> Command:
    """Decode one inbound frame; raises ValueError with a readable reason."""
    try:
        command = _command_adapter.validate_json(text)
    except ValidationError as exc:
        first = exc.errors()[0]
        where = ".".join(str(p) for p in first["loc"]) or "message"
        raise ValueError(f"{where}: {first['msg']}") from None
    if command.protocol_version != PROTOCOL_VERSION:
        raise ValueError(
            f"protocol_version {command.protocol_version} not supported; "
            f"this server speaks {PROTOCOL_VERSION}")
    return command


# --------------------------------------------------------------------------
# server -> client

class ServerMessage(BaseModel):
    model_config = {"extra": "forbid"}

    protocol_version: int = PROTOCOL_VERSION
    seq: int


class Hello(ServerMessage):
    """First frame on every connection: what is running and where it is."""

    kind: Literal["hello"] = "hello"
    scenario: str
    joints: int
    sample_rate: float
    duration: float
    tick: int
    paused: bool
    detection_threshold: float


class TickTelemetry(ServerMessage):
    """Decimated per-tick state for strip charts."""

    kind: Literal["tick"] = "tick"
    tick: int
    t: float
    s: float
    eta_bar: float
    contact: int
    link: int
    tip: tuple[float, float, float]
    target: tuple[float, float, float]
    deviation: float


class DetectionTelemetry(ServerMessage):
    kind: Literal["detection"] = "detection"
    tick: int
    t: float
    contact: int
    link: int


class EstimateTelemetry(ServerMessage):
    kind: Literal["estimate"] = "estimate"
    tick: int
    t: float
    window: int
    fraction: float
    link: int
    s: float
    force: tuple[float, float, float]
    cost: float
    point: tuple[float, float, float]
    clamped: bool
    degenerate: bool
    rank_deficient: bool


class BumpTelemetry(ServerMessage):
    kind: Literal["bump"] = "bump"
    tick: int
    t: float
    s_start: float
    horizon: float
    vector: tuple[float, float, float]


class PathUpdate(ServerMessage):
    """Snapshot of the deformed path; sent on connect and after each bump."""

    kind: Literal["path_update"] = "path_update"
    tick: int
    path: list[dict]
    bumps: list[dict]


class MetricsTelemetry(ServerMessage):
    kind: Literal["metrics"] = "metrics"
    tick: int
    data: dict


class Ack(ServerMessage):
    """Command receipt; ok=False carries the rejection reason."""

    kind: Literal["ack"] = "ack"
    id: str | None
    ok: bool
    tick: int
    error: str | None = None


class ErrorMessage(ServerMessage):
    """Protocol-level failure, e.g. an unparseable frame."""

    kind: Literal["error"] = "error"
    error: str
