"""Kinematics and dynamics of an n-DOF revolute serial arm.

World-frame formulation throughout: forward kinematics produces joint
origins/rotations in the base frame, point Jacobians are built from the
world joint axes, and inverse dynamics runs a recursive Newton-Euler
pass over the same frames.  All angles rad, lengths m, torques N*m.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

VISCOUS_SMOOTHING_VEL = 1e-3  # rad/s, tanh width of the smoothed Coulomb term


class ConfigurationError(ValueError):
    """Bad robot description or mismatched state dimensions."""


@dataclass(frozen=True)
class JointSpec:
    """Revolute joint: fixed parent->joint transform plus rotation axis.

    axis is a unit vector in the joint's local frame; origin_xyz/origin_rpy
    place the joint frame relative to its parent link frame.
    """

    axis: np.ndarray
    origin_xyz: np.ndarray
    origin_rpy: np.ndarray
    limits: tuple[float, float] | None = None


@dataclass(frozen=True)
class LinkSpec:
    """Rigid link fixed to the joint of the same index.

    com and the centerline endpoints base/tip are expressed in the link
    frame; inertia is the 3x3 rotational inertia about the COM.
    """

    mass: float
    com: np.ndarray
    inertia: np.ndarray
    base: np.ndarray
    tip: np.ndarray


@dataclass(frozen=True)
class RobotModel:
    """Immutable kinematic chain with per-link inertial and friction data."""

    joints: tuple[JointSpec, ...]
    links: tuple[LinkSpec, ...]
    viscous: np.ndarray
    coulomb: np.ndarray
    gravity: np.ndarray
    # derived constants, precomputed once per model for the per-tick sweeps
    origin_rotations: tuple[np.ndarray, ...] = field(
        init=False, repr=False, compare=False, default=())
    link_inertias: np.ndarray = field(init=False, repr=False, compare=False,
                                      default=None)
    link_coms: np.ndarray = field(init=False, repr=False, compare=False,
                                  default=None)
    link_masses: tuple[float, ...] = field(init=False, repr=False,
                                           compare=False, default=())

    def __post_init__(self):
        n = len(self.joints)
        if n < 1:
            raise ConfigurationError("chain needs at least one joint")
        if len(self.links) != n:
            raise ConfigurationError(
                f"{n} joints but {len(self.links)} links; counts must match")
        for i, link in enumerate(self.links):
            if not link.mass > 0:
                raise ConfigurationError(f"link {i + 1}: mass must be > 0")
            inertia = np.asarray(link.inertia, dtype=float)
            if not np.allclose(inertia, inertia.T, atol=1e-12):
                raise ConfigurationError(f"link {i + 1}: inertia not symmetric")
            if np.linalg.eigvalsh(inertia).min() <= 0:
                raise ConfigurationError(
                    f"link {i + 1}: inertia not positive-definite")
            if np.linalg.norm(link.tip - link.base) <= 0:
                raise ConfigurationError(
                    f"link {i + 1}: centerline has zero length")
        for i, joint in enumerate(self.joints):
            if abs(np.linalg.norm(joint.axis) - 1.0) > 1e-9:
                raise ConfigurationError(f"joint {i + 1}: axis must be unit")
        object.__setattr__(self, "origin_rotations", tuple(
            rotation_rpy(joint.origin_rpy) for joint in self.joints))
        object.__setattr__(self, "link_inertias", np.stack(
            [np.asarray(link.inertia, dtype=float) for link in self.links]))
        object.__setattr__(self, "link_coms", np.stack(
            [np.asarray(link.com, dtype=float) for link in self.links]))
        object.__setattr__(self, "link_masses",
                           tuple(float(link.mass) for link in self.links))

    @property
    def n(self) -> int:
        return len(self.joints)

    def check_config(self, q) -> np.ndarray:
        q = np.asarray(q, dtype=float)
        if q.shape != (self.n,):
            raise ConfigurationError(
                f"expected configuration of length {self.n}, got shape {q.shape}")
        if not np.all(np.isfinite(q)):
            raise ConfigurationError("configuration contains non-finite values")
        return q


@dataclass
class FrameSet:
    """World poses of every joint frame and link centerline, at one q."""

    joint_origins: np.ndarray    # (n, 3)
    joint_rotations: np.ndarray  # (n, 3, 3), post joint rotation
    joint_axes: np.ndarray       # (n, 3), world rotation axes
    link_base: np.ndarray        # (n, 3)
    link_tip: np.ndarray         # (n, 3)


def _cross3(a, b) -> tuple:
    """Cross product of two 3-vectors; avoids the generic broadcasting
    machinery, which would dominate the cost of the per-tick sweeps."""
    return (a[1] * b[2] - a[2] * b[1],
            a[2] * b[0] - a[0] * b[2],
            a[0] * b[1] - a[1] * b[0])


def rotation_rpy(rpy) -> np.ndarray:
    """Rotation matrix from fixed-axis roll/pitch/yaw (x, then y, then z)."""
    r, p, y = rpy
    cr, sr = math.cos(r), math.sin(r)
    cp, sp = math.cos(p), math.sin(p)
    cy, sy = math.cos(y), math.sin(y)
    return np.array([
        [cy * cp, cy * sp * sr - sy * cr, cy * sp * cr + sy * sr],
        [sy * cp, sy * sp * sr + cy * cr, sy * sp * cr - cy * sr],
        [-sp, cp * sr, cp * cr],
    ])


def rotation_about_axis(axis, angle) -> np.ndarray:
    """Rodrigues rotation about a unit axis; dtype follows the angle."""
    x, y, z = axis
    c = np.cos(angle)
    s = np.sin(angle)
    v = 1.0 - c
    return np.array([
        [x * x * v + c, x * y * v - z * s, x * z * v + y * s],
        [x * y * v + z * s, y * y * v + c, y * z * v - x * s],
        [x * z * v - y * s, y * z * v + x * s, z * z * v + c],
    ])


def forward_kinematics(model: RobotModel, q) -> FrameSet:
    """World joint frames and link centerline endpoints at configuration q."""
    q = np.asarray(q)
    if q.shape != (model.n,):
        raise ConfigurationError(
            f"expected configuration of length {model.n}, got shape {q.shape}")
    if not np.all(np.isfinite(q)):
        raise ConfigurationError("configuration contains non-finite values")
    n = model.n
    dtype = np.result_type(q.dtype, float)
    origins = np.zeros((n, 3), dtype=dtype)
    rotations = np.zeros((n, 3, 3), dtype=dtype)
    axes = np.zeros((n, 3), dtype=dtype)
    base_pts = np.zeros((n, 3), dtype=dtype)
    tip_pts = np.zeros((n, 3), dtype=dtype)

    rot = np.eye(3, dtype=dtype)
    pos = np.zeros(3, dtype=dtype)
    fixed = model.origin_rotations
    for j, joint in enumerate(model.joints):
        pos = pos + rot @ joint.origin_xyz
        rot = rot @ fixed[j]
        # the rotation axis is invariant under the joint's own motion
        axes[j] = rot @ joint.axis
        rot = rot @ rotation_about_axis(joint.axis, q[j])
        origins[j] = pos
        rotations[j] = rot
        base_pts[j] = pos + rot @ model.links[j].base
        tip_pts[j] = pos + rot @ model.links[j].tip
    return FrameSet(origins, rotations, axes, base_pts, tip_pts)


def contact_point(frames: FrameSet, link: int, s: float) -> np.ndarray:
    """World point at normalized arc length s along the link centerline."""
    i = link - 1
    return (1.0 - s) * frames.link_base[i] + s * frames.link_tip[i]


def point_jacobian(model: RobotModel, q, link: int, s: float,
                   frames: FrameSet | None = None) -> np.ndarray:
    """3xn Jacobian of the point at arc length s on the given link (1-based).

    Columns beyond the contacted link are identically zero: a force there
    does no work through the distal joints.
    """
    if not 1 <= link <= model.n:
        raise ValueError(f"link index {link} out of range 1..{model.n}")
    if not 0.0 <= s <= 1.0:
        raise ValueError(f"arc length s={s} outside [0, 1]")
    if frames is None:
        frames = forward_kinematics(model, q)
    p = contact_point(frames, link, s)
    jac = np.zeros((3, model.n), dtype=p.dtype)
    for j in range(link):
        jac[:, j] = _cross3(frames.joint_axes[j], p - frames.joint_origins[j])
    return jac


def ee_jacobian(model: RobotModel, q, frames: FrameSet | None = None) -> np.ndarray:
    """Position Jacobian of the chain tip (point s=1 on the last link)."""
    return point_jacobian(model, q, model.n, 1.0, frames=frames)


def external_torque_from_force(model: RobotModel, q, link: int, s: float,
                               force, frames: FrameSet | None = None) -> np.ndarray:
    """Joint torques equivalent to a Cartesian force at a point on a link."""
    force = np.asarray(force, dtype=float)
    if force.shape != (3,) or not np.all(np.isfinite(force)):
        raise ValueError("force must be a finite 3-vector")
    jac = point_jacobian(model, q, link, s, frames=frames)
    return jac.T @ force


def friction_torque(model: RobotModel, qd) -> np.ndarray:
    """Viscous plus smoothed-Coulomb joint friction at velocity qd."""
    qd = np.asarray(qd, dtype=float)
    return model.viscous * qd + model.coulomb * np.tanh(qd / VISCOUS_SMOOTHING_VEL)


def _rnea(model: RobotModel, q, qd, qdd, gravity, frames=None) -> np.ndarray:
    """Recursive Newton-Euler pass, gravity folded in as a base acceleration.

    Runs once per control tick, so the sweeps are written in scalar
    arithmetic: tiny-ndarray temporaries cost more than the math itself.
    World COM positions and inertia tensors are batched up front instead.
    """
    n = model.n
    if frames is None:
        frames = forward_kinematics(model, q)
    rot = frames.joint_rotations
    z = frames.joint_axes.tolist()
    o = frames.joint_origins.tolist()
    com = (frames.joint_origins
           + np.einsum("nij,nj->ni", rot, model.link_coms)).tolist()
    iw = np.einsum("nij,njk,nlk->nil", rot, model.link_inertias, rot).tolist()
    masses = model.link_masses
    qd = [float(v) for v in qd]
    qdd = [float(v) for v in qdd]
    gx, gy, gz = (float(g) for g in gravity)

    wx = wy = wz = 0.0            # parent angular velocity
    dwx = dwy = dwz = 0.0         # parent angular acceleration
    ax, ay, az = -gx, -gy, -gz    # parent origin acceleration, gravity folded in
    ox = oy = oz = 0.0
    omega: list[tuple] = []
    alpha: list[tuple] = []
    acc_com: list[tuple] = []
    for j in range(n):
        ojx, ojy, ojz = o[j]
        rx, ry, rz = ojx - ox, ojy - oy, ojz - oz
        # a_o = a_p + dw_p x r + w_p x (w_p x r)
        cx = wy * rz - wz * ry
        cy = wz * rx - wx * rz
        cz = wx * ry - wy * rx
        aox = ax + (dwy * rz - dwz * ry) + (wy * cz - wz * cy)
        aoy = ay + (dwz * rx - dwx * rz) + (wz * cx - wx * cz)
        aoz = az + (dwx * ry - dwy * rx) + (wx * cy - wy * cx)
        zx, zy, zz = z[j]
        vx, vy, vz = zx * qd[j], zy * qd[j], zz * qd[j]
        nwx, nwy, nwz = wx + vx, wy + vy, wz + vz
        ndwx = dwx + zx * qdd[j] + (wy * vz - wz * vy)
        ndwy = dwy + zy * qdd[j] + (wz * vx - wx * vz)
        ndwz = dwz + zz * qdd[j] + (wx * vy - wy * vx)
        # a_com = a_o + alpha x rc + omega x (omega x rc)
        rcx, rcy, rcz = com[j][0] - ojx, com[j][1] - ojy, com[j][2] - ojz
        ccx = nwy * rcz - nwz * rcy
        ccy = nwz * rcx - nwx * rcz
        ccz = nwx * rcy - nwy * rcx
        acc_com.append((aox + (ndwy * rcz - ndwz * rcy) + (nwy * ccz - nwz * ccy),
                        aoy + (ndwz * rcx - ndwx * rcz) + (nwz * ccx - nwx * ccz),
                        aoz + (ndwx * rcy - ndwy * rcx) + (nwx * ccy - nwy * ccx)))
        omega.append((nwx, nwy, nwz))
        alpha.append((ndwx, ndwy, ndwz))
        wx, wy, wz = nwx, nwy, nwz
        dwx, dwy, dwz = ndwx, ndwy, ndwz
        ax, ay, az = aox, aoy, aoz
        ox, oy, oz = ojx, ojy, ojz

    tau = [0.0] * n
    fnx = fny = fnz = 0.0
    nnx = nny = nnz = 0.0         # moment about the child joint origin
    onx = ony = onz = 0.0
    for j in range(n - 1, -1, -1):
        m = masses[j]
        acx, acy, acz = acc_com[j]
        fcx, fcy, fcz = m * acx, m * acy, m * acz
        i0, i1, i2 = iw[j]
        alx, aly, alz = alpha[j]
        omx, omy, omz = omega[j]
        # n_com = Iw alpha + omega x (Iw omega)
        hx = i0[0] * omx + i0[1] * omy + i0[2] * omz
        hy = i1[0] * omx + i1[1] * omy + i1[2] * omz
        hz = i2[0] * omx + i2[1] * omy + i2[2] * omz
        ncx = i0[0] * alx + i0[1] * aly + i0[2] * alz + (omy * hz - omz * hy)
        ncy = i1[0] * alx + i1[1] * aly + i1[2] * alz + (omz * hx - omx * hz)
        ncz = i2[0] * alx + i2[1] * aly + i2[2] * alz + (omx * hy - omy * hx)
        ojx, ojy, ojz = o[j]
        rcx, rcy, rcz = com[j][0] - ojx, com[j][1] - ojy, com[j][2] - ojz
        rnx, rny, rnz = onx - ojx, ony - ojy, onz - ojz
        njx = ncx + (rcy * fcz - rcz * fcy) + nnx + (rny * fnz - rnz * fny)
        njy = ncy + (rcz * fcx - rcx * fcz) + nny + (rnz * fnx - rnx * fnz)
        njz = ncz + (rcx * fcy - rcy * fcx) + nnz + (rnx * fny - rny * fnx)
        zx, zy, zz = z[j]
        tau[j] = zx * njx + zy * njy + zz * njz
        fnx, fny, fnz = fcx + fnx, fcy + fny, fcz + fnz
        nnx, nny, nnz = njx, njy, njz
        onx, ony, onz = ojx, ojy, ojz
    return np.array(tau)


def inverse_dynamics(model: RobotModel, q, qd, qdd,
                     frames: FrameSet | None = None) -> np.ndarray:
    """Joint torques for the motion (q, qd, qdd): inertial, Coriolis,
    gravity, and friction terms of the free dynamics."""
    q = model.check_config(q)
    qd = np.asarray(qd, dtype=float)
    qdd = np.asarray(qdd, dtype=float)
    for name, v in (("qd", qd), ("qdd", qdd)):
        if v.shape != (model.n,):
            raise ConfigurationError(f"{name} must have length {model.n}")
        if not np.all(np.isfinite(v)):
            raise ConfigurationError(f"{name} contains non-finite values")
    tau = _rnea(model, q, qd, qdd, model.gravity, frames=frames)
    return tau + friction_torque(model, qd)


def mass_matrix(model: RobotModel, q) -> np.ndarray:
    """Joint-space inertia matrix, assembled column-wise from unit-acceleration
    Newton-Euler sweeps with gravity and velocities zeroed."""
    q = model.check_config(q)
    n = model.n
    frames = forward_kinematics(model, q)
    zero_g = np.zeros(3)
    zeros = np.zeros(n)
    m = np.zeros((n, n))
    for k in range(n):
        e = np.zeros(n)
        e[k] = 1.0
        m[:, k] = _rnea(model, q, zeros, e, zero_g, frames=frames)
    return m


def resolved_rate_step(model: RobotModel, q, tip_velocity, damping: float,
                       dt: float, frames: FrameSet | None = None) -> np.ndarray:
    """One damped-least-squares IK step toward a desired tip velocity.

    q <- q + dt * J^T (J J^T + damping^2 I)^-1 v.  Near-singular J is handled
    by the damping; configured joint limits are clamped after the step.
    """
    if dt <= 0:
        raise ValueError("dt must be > 0")
    if damping <= 0:
        raise ValueError("damping must be > 0")
    q = model.check_config(q)
    v = np.asarray(tip_velocity, dtype=float)
    if v.shape != (3,) or not np.all(np.isfinite(v)):
        raise ValueError("tip velocity must be a finite 3-vector")
    jac = ee_jacobian(model, q, frames=frames)
    gram = jac @ jac.T + (damping ** 2) * np.eye(3)
    qd = jac.T @ np.linalg.solve(gram, v)
    q_new = q + dt * qd
    for j, joint in enumerate(model.joints):
        if joint.limits is not None:
            q_new[j] = min(max(q_new[j], joint.limits[0]), joint.limits[1])
    return q_new


# ---------------------------------------------------------------------------
# chain description file

def _require_keys(block: dict, allowed: set[str], required: set[str], where: str):
    unknown = set(block) - allowed
    if unknown:
        raise ConfigurationError(f"{where}: unknown key '{sorted(unknown)[0]}'")
    missing = required - set(block)
    if missing:
        raise ConfigurationError(f"{where}: missing key '{sorted(missing)[0]}'")


def _vec3(value, where: str) -> np.ndarray:
    arr = np.asarray(value, dtype=float)
    if arr.shape != (3,):
        raise ConfigurationError(f"{where}: expected 3 numbers")
    return arr


def inertia_from_upper_triangular(values) -> np.ndarray:
    """Symmetric 3x3 inertia from [Ixx, Ixy, Ixz, Iyy, Iyz, Izz]."""
    ixx, ixy, ixz, iyy, iyz, izz = values
    return np.array([[ixx, ixy, ixz], [ixy, iyy, iyz], [ixz, iyz, izz]])


def chain_from_dict(data: dict) -> RobotModel:
    """Build a RobotModel from the declarative chain-file structure."""
    _require_keys(data, {"joints", "links", "gravity", "friction", "name"},
                  {"joints", "links"}, "chain")
    joints_raw = data["joints"]
    links_raw = data["links"]
    if not joints_raw:
        raise ConfigurationError("chain: needs at least one joint")
    if len(joints_raw) != len(links_raw):
        raise ConfigurationError("chain: joints and links must have equal length")

    joints = []
    for i, jr in enumerate(joints_raw):
        where = f"joints[{i}]"
        _require_keys(jr, {"axis", "origin_xyz", "origin_rpy", "limits"},
                      {"axis", "origin_xyz"}, where)
        axis = _vec3(jr["axis"], f"{where}.axis")
        norm = np.linalg.norm(axis)
        if norm == 0:
            raise ConfigurationError(f"{where}.axis: zero vector")
        limits = None
        if jr.get("limits") is not None:
            lo, hi = jr["limits"]
            if not lo < hi:
                raise ConfigurationError(f"{where}.limits: need lo < hi")
            limits = (float(lo), float(hi))
        joints.append(JointSpec(
            axis=axis / norm,
            origin_xyz=_vec3(jr["origin_xyz"], f"{where}.origin_xyz"),
            origin_rpy=_vec3(jr.get("origin_rpy", (0, 0, 0)), f"{where}.origin_rpy"),
            limits=limits,
        ))

    links = []
    for i, lr in enumerate(links_raw):
        where = f"links[{i}]"
        _require_keys(lr, {"mass", "com", "inertia", "base", "tip"},
                      {"mass", "com", "inertia", "tip"}, where)
        inertia_vals = lr["inertia"]
        if len(inertia_vals) != 6:
            raise ConfigurationError(
                f"{where}.inertia: expected 6 upper-triangular values")
        links.append(LinkSpec(
            mass=float(lr["mass"]),
            com=_vec3(lr["com"], f"{where}.com"),
            inertia=inertia_from_upper_triangular(inertia_vals),
            base=_vec3(lr.get("base", (0, 0, 0)), f"{where}.base"),
            tip=_vec3(lr["tip"], f"{where}.tip"),
        ))

    n = len(joints)
    friction_raw = data.get("friction")
    viscous = np.zeros(n)
    coulomb = np.zeros(n)
    if friction_raw is not None:
        if len(friction_raw) != n:
            raise ConfigurationError("friction: needs one entry per joint")
        for i, fr in enumerate(friction_raw):
            _require_keys(fr, {"viscous", "coulomb"}, set(), f"friction[{i}]")
            viscous[i] = float(fr.get("viscous", 0.0))
            coulomb[i] = float(fr.get("coulomb", 0.0))
            if viscous[i] < 0 or coulomb[i] < 0:
                raise ConfigurationError(f"friction[{i}]: coefficients must be >= 0")

    gravity = _vec3(data.get("gravity", (0.0, 0.0, -9.81)), "gravity")
    return RobotModel(joints=tuple(joints), links=tuple(links),
                      viscous=viscous, coulomb=coulomb, gravity=gravity)


def load_chain(path) -> RobotModel:
    """Load a robot chain description from a JSON file."""
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except FileNotFoundError:
        raise ConfigurationError(f"chain file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"chain file {path}: invalid JSON ({exc})") from None
    return chain_from_dict(data)
