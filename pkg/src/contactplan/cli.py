"""Command line front end: batch runs, offline re-estimation, live service.

Exit codes: 0 success, 1 rejected command, 2 unusable input, 3 run aborted.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import os
import sys
from pathlib import Path

import click
import numpy as np

from .detection import DetectionConfig
from .estimation import EstimationConfig
from .harness import compute_metrics, export_trace
from .harness import run as run_scenario
from .pipeline import ContactPipeline, estimate_event_dict
from .planner import PlannerConfig
from .robot import ConfigurationError, chain_from_dict
from .scenario import Scenario, ScenarioError, _config_from, apply_overrides


@click.group()
def main():
    """Contact-adaptive manipulator simulation tools."""
    level = os.environ.get("CONTACTPLAN_LOG")
    if level:
        logging.basicConfig(level=level.upper())


def _parse_overrides(pairs) -> dict[str, str]:
    out = {}
    for pair in pairs:
        key, sep, value = pair.partition("=")
        if not sep or not key:
            raise click.UsageError(
                f"--config expects KEY=VALUE, got '{pair}'")
        out[key] = value
    return out


def _fail(message: str, code: int = 2):
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


@main.command(name="run")
@click.argument("scenario_file", type=click.Path(dir_okay=False))
@click.option("--seed", type=int, default=None,
              help="Replace the scenario's noise seed.")
@click.option("--out", "out_dir", type=click.Path(file_okay=False),
              default=None, help="Directory for the full trace export.")
@click.option("--config", "overrides", multiple=True, metavar="KEY=VALUE",
              help="Dotted scenario override, e.g. planner.gain=0.01.")
def run_command(scenario_file, seed, out_dir, overrides):
    """Run a scenario to its end and print run metrics as JSON.

    Exits 3 when the run aborts; artifacts are still exported so the
    failure can be inspected.
    """
    try:
        scenario = Scenario.load(scenario_file)
        if overrides or seed is not None:
            data = apply_overrides(scenario.to_dict(),
                                   _parse_overrides(overrides))
            if seed is not None:
                data["seed"] = seed
            scenario = Scenario.from_dict(data)
    except ScenarioError as exc:
        _fail(str(exc))
    result = run_scenario(scenario)
    if out_dir is not None:
        export_trace(result, out_dir)
    click.echo(json.dumps(compute_metrics(result), indent=2, sort_keys=True))
    if result.aborted:
        sys.exit(3)


@main.command()
@click.argument("trace_csv", type=click.Path(exists=True, dir_okay=False))
@click.argument("chain_json", type=click.Path(exists=True, dir_okay=False))
@click.option("--link", type=int, default=None,
              help="Pin the contact link instead of voting on residuals.")
@click.option("--rate", type=float, default=None,
              help="Sample rate in Hz when the trace has no t column.")
@click.option("--config", "overrides", multiple=True, metavar="KEY=VALUE",
              help="Dotted config override, e.g. detection.threshold=0.5.")
@click.option("--out", "out_file", type=click.Path(dir_okay=False),
              default=None, help="Write JSON lines here instead of stdout.")
def estimate(trace_csv, chain_json, link, rate, overrides, out_file):
    """Re-run contact estimation over an exported torque trace.

    Reads the joint positions and torque residuals from TRACE_CSV and the
    kinematic chain from CHAIN_JSON, then replays the detection and
    estimation pipeline offline.  With the configs of the original run
    this reproduces its estimate events byte for byte.
    """
    try:
        model = chain_from_dict(json.loads(Path(chain_json).read_text()))
    except (ConfigurationError, json.JSONDecodeError) as exc:
        _fail(f"{chain_json}: {exc}")

    blocks = {"detection": dataclasses.asdict(DetectionConfig()),
              "estimation": dataclasses.asdict(EstimationConfig()),
              "planner": dataclasses.asdict(PlannerConfig())}
    try:
        blocks = apply_overrides(blocks, _parse_overrides(overrides))
        detection = _config_from(DetectionConfig, blocks["detection"],
                                 "detection")
        estimation = _config_from(EstimationConfig, blocks["estimation"],
                                  "estimation")
        planner = _config_from(PlannerConfig, blocks["planner"], "planner")
    except ScenarioError as exc:
        _fail(str(exc))

    header, rows = _read_trace(trace_csv)
    columns = {name: i for i, name in enumerate(header)}
    n = sum(1 for name in header
            if name.startswith("q") and name[1:].isdigit())
    if n == 0:
        _fail(f"{trace_csv}: no q columns in header")
    needed = [f"q{j + 1}" for j in range(n)] \
        + [f"tau_hat{j + 1}" for j in range(n)]
    for name in needed:
        if name not in columns:
            _fail(f"{trace_csv}: missing column '{name}'")

    if rate is not None:
        dt = 1.0 / rate
    elif "t" in columns and len(rows) >= 2:
        dt = rows[1][columns["t"]] - rows[0][columns["t"]]
        if dt <= 0:
            _fail(f"{trace_csv}: t column is not increasing")
    else:
        _fail("cannot infer the sample rate; trace has no usable t column "
              "and --rate was not given")

    q_idx = [columns[f"q{j + 1}"] for j in range(n)]
    tau_idx = [columns[f"tau_hat{j + 1}"] for j in range(n)]
    try:
        pipeline = ContactPipeline(
            model, detection, estimation, dt,
            window_ticks=planner.window,
            min_contact_fraction=planner.min_contact_fraction,
            forced_link=link)
    except ValueError as exc:
        _fail(str(exc))

    lines = []
    for row in rows:
        q = np.array([row[i] for i in q_idx])
        tau_hat = np.array([row[i] for i in tau_idx])
        result = pipeline.step_residual(q, tau_hat)
        if result.window is not None and result.window.estimate is not None:
            lines.append(json.dumps(
                estimate_event_dict(result.window, dt),
                sort_keys=True, separators=(",", ":")))
    text = "\n".join(lines) + ("\n" if lines else "")
    if out_file is not None:
        Path(out_file).write_text(text)
        click.echo(f"{len(lines)} estimates -> {out_file}", err=True)
    else:
        click.echo(text, nl=False)


def _read_trace(path: str) -> tuple[list[str], list[list[float]]]:
    """Strictly parsed trace table: any malformed row is a hard error."""
    lines = Path(path).read_text().splitlines()
    if not lines:
        _fail(f"{path}: empty file")
    header = lines[0].split(",")
    rows = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line:
            _fail(f"{path} line {lineno}: empty line")
        cells = line.split(",")
        if len(cells) != len(header):
            _fail(f"{path} line {lineno}: expected {len(header)} cells, "
                  f"got {len(cells)}")
        try:
            rows.append([float(cell) for cell in cells])
        except ValueError:
            bad = next(c for c in cells if not _is_float(c))
            _fail(f"{path} line {lineno}: not a number: '{bad}'")
    return header, rows


def _is_float(cell: str) -> bool:
    try:
        float(cell)
        return True
    except ValueError:
        return False


@main.command()
@click.argument("scenario_file", type=click.Path(dir_okay=False))
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8732, show_default=True, type=int)
@click.option("--pace", default=1.0, show_default=True, type=float,
              help="Wall-clock speed factor; 0 runs as fast as possible.")
def serve(scenario_file, host, port, pace):
    """Serve a scenario for live interaction over HTTP and WebSocket."""
    try:
        scenario = Scenario.load(scenario_file)
    except ScenarioError as exc:
        _fail(str(exc))
    import uvicorn

    from .service import create_app
    uvicorn.run(create_app(scenario, pace=pace), host=host, port=port,
                log_level="info")


@main.command()
@click.option("--link", required=True, type=int)
@click.option("--s", "s", required=True, type=float)
@click.option("--force", required=True, metavar="FX,FY,FZ",
              help="World-frame force vector in newtons.")
@click.option("--duration", required=True, type=float,
              help="Push duration in seconds.")
@click.option("--profile", default="constant", show_default=True,
              type=click.Choice(["constant", "trapezoid", "half_sine"]))
@click.option("--url", default="ws://127.0.0.1:8732/ws", show_default=True)
def push(link, s, force, duration, profile, url):
    """Send one push command to a running service and print its ack."""
    parts = force.split(",")
    if len(parts) != 3 or not all(_is_float(p) for p in parts):
        raise click.UsageError(f"--force expects FX,FY,FZ, got '{force}'")
    command = {"kind": "apply_push", "id": "cli-push", "link": link,
               "s": s, "force": [float(p) for p in parts],
               "duration": duration, "profile": profile}

    import asyncio

    import websockets

    async def send():
        async with websockets.connect(url) as socket:
            await socket.send(json.dumps(command))
            while True:
                message = json.loads(await socket.recv())
                if message.get("kind") == "ack" \
                        and message.get("id") == "cli-push":
                    return message

    try:
        ack = asyncio.run(asyncio.wait_for(send(), timeout=10.0))
    except (OSError, asyncio.TimeoutError,
            websockets.exceptions.WebSocketException) as exc:
        _fail(f"cannot reach {url}: {exc}", code=1)
    click.echo(json.dumps(ack, indent=2, sort_keys=True))
    if not ack["ok"]:
        sys.exit(1)


if __name__ == "__main__":
    main()
