"""Shared test helpers: fixture paths and randomized chain generation."""

from __future__ import annotations

from pathlib import Path

import numpy as np
import pytest

from contactplan.robot import JointSpec, LinkSpec, RobotModel

FIXTURES = Path(__file__).resolve().parent.parent / "fixtures"


def random_chain(rng: np.random.Generator, n: int | None = None,
                 friction: bool = True) -> RobotModel:
    """Well-conditioned random serial chain for property-style tests."""
    if n is None:
        n = int(rng.integers(2, 6))
    joints = []
    links = []
    for _ in range(n):
        axis = rng.normal(size=3)
        axis /= np.linalg.norm(axis)
        tip = rng.uniform(-0.15, 0.15, size=3)
        tip += 0.12 * np.sign(tip + 1e-12)  # keep the centerline off zero length
        span = rng.normal(size=(3, 3)) * 0.05
        joints.append(JointSpec(
            axis=axis,
            origin_xyz=rng.uniform(-0.15, 0.15, size=3),
            origin_rpy=rng.uniform(-0.6, 0.6, size=3),
        ))
        links.append(LinkSpec(
            mass=float(rng.uniform(0.5, 3.0)),
            com=rng.uniform(-0.08, 0.08, size=3),
            inertia=span @ span.T + 0.01 * np.eye(3),
            base=np.zeros(3),
            tip=tip,
        ))
    if friction:
        viscous = rng.uniform(0.0, 0.4, size=n)
        coulomb = rng.uniform(0.0, 0.3, size=n)
    else:
        viscous = np.zeros(n)
        coulomb = np.zeros(n)
    return RobotModel(joints=tuple(joints), links=tuple(links),
                      viscous=viscous, coulomb=coulomb,
                      gravity=np.array([0.0, 0.0, -9.81]))


@pytest.fixture
def rng():
    return np.random.default_rng(20260822)
