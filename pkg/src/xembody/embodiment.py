"""Embodiment descriptions, forward kinematics, and pose sampling.

An embodiment is a kinematic chain of named joints. Robot joints are
revolute (one scalar angle, radians); human joints are free rotations
(one wxyz unit quaternion each). Every joint belongs to exactly one of
five body segments: left arm LA, right arm RA, trunk TK, left leg LL,
right leg RL. A segment listed in `segment_available` takes part in
similarity metrics and latent training; other segments are kinematic
plumbing only.
"""
from __future__ import annotations

import json
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import quat

SEGMENTS = ("LA", "RA", "TK", "LL", "RL")
ARM_SEGMENTS = ("LA", "RA")
BASE_LINK = "base"

REVOLUTE = "revolute-scalar"
FREE_QUAT = "free-quaternion"


class SchemaError(ValueError):
    """Raised when an embodiment document violates the schema.

    `path` locates the offending element, e.g. "joints[2].axis".
    """

    def __init__(self, path: str, message: str):
        self.path = path
        super().__init__(f"{path}: {message}")


@dataclass(frozen=True)
class JointSpec:
    name: str
    parent_link: str
    axis: np.ndarray
    origin_translation: np.ndarray
    origin_rotation: np.ndarray
    limits: tuple[float, float] | None
    kind: str
    child_link: str

    def validate(self, path: str) -> None:
        if self.kind not in (REVOLUTE, FREE_QUAT):
            raise SchemaError(f"{path}.kind", f"unknown joint kind {self.kind!r}")
        if abs(np.linalg.norm(self.axis) - 1.0) > 1e-9:
            raise SchemaError(f"{path}.axis", "axis must have unit norm (within 1e-9)")
        if abs(np.linalg.norm(self.origin_rotation) - 1.0) > 1e-9:
            raise SchemaError(f"{path}.origin.quat", "origin rotation must have unit norm (within 1e-9)")
        if self.kind == REVOLUTE:
            if self.limits is None:
                raise SchemaError(f"{path}.limits", "revolute joints require [lo, hi] limits")
            lo, hi = self.limits
            if not lo < hi:
                raise SchemaError(f"{path}.limits", f"need lo < hi, got [{lo}, {hi}]")
        elif self.limits is not None:
            raise SchemaError(f"{path}.limits", "free-quaternion joints take no limits")


@dataclass(frozen=True)
class EmbodimentSpec:
    name: str
    joints: tuple[JointSpec, ...]
    segment_map: dict[str, str]
    segment_available: frozenset[str]
    ee_links: dict[str, str]
    ee_offsets: dict[str, np.ndarray]
    shoulder_joints: dict[str, str]
    arm_length: dict[str, float] = field(default_factory=dict)

    # -- derived layout ----------------------------------------------------
    @property
    def kind(self) -> str:
        return self.joints[0].kind

    @property
    def values_per_joint(self) -> int:
        return 1 if self.kind == REVOLUTE else 4

    @property
    def pose_dim(self) -> int:
        return len(self.joints) * self.values_per_joint

    @property
    def joint_names(self) -> tuple[str, ...]:
        return tuple(j.name for j in self.joints)

    @property
    def link_names(self) -> tuple[str, ...]:
        return (BASE_LINK,) + tuple(j.child_link for j in self.joints)

    def joint(self, name: str) -> JointSpec:
        return self.joints[self.joint_index(name)]

    def joint_index(self, name: str) -> int:
        return self.joint_names.index(name)

    def segment_joints(self, segment: str) -> tuple[str, ...]:
        """Joints assigned to `segment`, in chain (declaration) order."""
        return tuple(j.name for j in self.joints if self.segment_map[j.name] == segment)

    def decode_segment(self, joint_name: str) -> str:
        """Segment whose latent drives this joint when decoding.

        Equals the joint's own segment when available; a joint parked in an
        unavailable segment (e.g. a torso pan on an arms-only robot) is driven
        by the unique available segment found among its chain descendants.
        """
        return self._decode_map()[joint_name]

    def decoded_joints(self, segment: str) -> tuple[str, ...]:
        dm = self._decode_map()
        return tuple(j.name for j in self.joints if dm[j.name] == segment)

    def _decode_map(self) -> dict[str, str]:
        if not hasattr(self, "_decode_map_cache"):
            children: dict[str, list[str]] = {}
            for j in self.joints:
                children.setdefault(j.parent_link, []).append(j.name)
            mapping: dict[str, str] = {}
            for j in self.joints:
                seg = self.segment_map[j.name]
                if seg in self.segment_available:
                    mapping[j.name] = seg
                    continue
                # collect available segments in the subtree below this joint
                segs: set[str] = set()
                stack = [j.child_link]
                while stack:
                    link = stack.pop()
                    for child in children.get(link, []):
                        cseg = self.segment_map[child]
                        if cseg in self.segment_available:
                            segs.add(cseg)
                        stack.append(self.joint(child).child_link)
                if len(segs) != 1:
                    raise SchemaError(
                        f"joints[{self.joint_index(j.name)}]",
                        f"joint {j.name!r} in unavailable segment {seg} needs exactly one "
                        f"available segment among its descendants, found {sorted(segs)}",
                    )
                mapping[j.name] = segs.pop()
            object.__setattr__(self, "_decode_map_cache", mapping)
        return self._decode_map_cache

    # -- serialization -----------------------------------------------------
    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "joints": [
                {
                    "name": j.name,
                    "parent_link": j.parent_link,
                    "child_link": j.child_link,
                    "axis": list(map(float, j.axis)),
                    "origin": {
                        "xyz": list(map(float, j.origin_translation)),
                        "quat": list(map(float, j.origin_rotation)),
                    },
                    "limits": list(j.limits) if j.limits is not None else None,
                    "kind": j.kind,
                }
                for j in self.joints
            ],
            "segments": dict(self.segment_map),
            "available": sorted(self.segment_available),
            "ee_links": dict(self.ee_links),
            "ee_offsets": {s: list(map(float, v)) for s, v in self.ee_offsets.items()},
            "shoulders": dict(self.shoulder_joints),
        }

    def canonical_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    def spec_hash(self) -> str:
        import hashlib

        return hashlib.sha256(self.canonical_json().encode()).hexdigest()


@dataclass
class Pose:
    embodiment: str
    values: np.ndarray

    def validate(self, spec: EmbodimentSpec, atol: float = 1e-6) -> None:
        if self.embodiment != spec.name:
            raise ValueError(f"pose for {self.embodiment!r} used with spec {spec.name!r}")
        if self.values.shape != (spec.pose_dim,):
            raise ValueError(f"pose dim {self.values.shape} != ({spec.pose_dim},)")
        if spec.kind == REVOLUTE:
            for i, j in enumerate(spec.joints):
                lo, hi = j.limits
                v = self.values[i]
                if v < lo - atol or v > hi + atol:
                    raise ValueError(f"joint {j.name} value {v} outside limits [{lo}, {hi}]")
        else:
            q = self.values.reshape(-1, 4)
            norms = np.linalg.norm(q, axis=1)
            if np.any(np.abs(norms - 1.0) > atol):
                raise ValueError("quaternion blocks must be unit-norm within 1e-6")


@dataclass
class Motion:
    embodiment: str
    fps: float
    frames: np.ndarray  # (T, pose_dim)

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=float)
        if self.frames.ndim != 2:
            raise ValueError("frames must be a (T, pose_dim) array")
        if not self.fps > 0:
            raise ValueError("fps must be positive")

    def __len__(self) -> int:
        return self.frames.shape[0]

    def pose(self, t: int) -> Pose:
        return Pose(self.embodiment, self.frames[t])

    def to_dict(self) -> dict:
        return {
            "embodiment": self.embodiment,
            "fps": self.fps,
            "frames": [[float(v) for v in row] for row in self.frames],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Motion":
        return cls(data["embodiment"], float(data["fps"]), np.asarray(data["frames"], dtype=float))


def save_motion(motion: Motion, path: str | Path) -> None:
    Path(path).write_text(json.dumps(motion.to_dict()))


def load_motion(path: str | Path) -> Motion:
    return Motion.from_dict(json.loads(Path(path).read_text()))


# ---------------------------------------------------------------------------
# parsing
# ---------------------------------------------------------------------------

def _vec(data, path: str, n: int) -> np.ndarray:
    try:
        arr = np.asarray(data, dtype=float)
    except (TypeError, ValueError):
        raise SchemaError(path, f"expected {n} numbers") from None
    if arr.shape != (n,):
        raise SchemaError(path, f"expected {n} numbers, got shape {arr.shape}")
    return arr


def parse_embodiment(text: str | dict) -> EmbodimentSpec:
    """Parse and validate an embodiment document (JSON text or parsed dict)."""
    if isinstance(text, str):
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as e:
            raise SchemaError("$", f"invalid JSON: {e}") from None
    else:
        doc = text
    if not isinstance(doc, dict):
        raise SchemaError("$", "document must be a JSON object")
    name = doc.get("name")
    if not isinstance(name, str) or not name:
        raise SchemaError("name", "embodiment name must be a non-empty string")
    raw_joints = doc.get("joints")
    if not isinstance(raw_joints, list) or not raw_joints:
        raise SchemaError("joints", "at least one joint is required")

    joints: list[JointSpec] = []
    seen_names: set[str] = set()
    links: set[str] = {BASE_LINK}
    for i, rj in enumerate(raw_joints):
        path = f"joints[{i}]"
        if not isinstance(rj, dict):
            raise SchemaError(path, "joint must be an object")
        jname = rj.get("name")
        if not isinstance(jname, str) or not jname:
            raise SchemaError(f"{path}.name", "joint name must be a non-empty string")
        if jname in seen_names:
            raise SchemaError(f"{path}.name", f"duplicate joint name {jname!r}")
        seen_names.add(jname)
        parent = rj.get("parent_link")
        if parent not in links:
            raise SchemaError(f"{path}.parent_link", f"dangling link reference {parent!r}")
        origin = rj.get("origin", {})
        limits = rj.get("limits")
        joint = JointSpec(
            name=jname,
            parent_link=parent,
            axis=_vec(rj.get("axis"), f"{path}.axis", 3),
            origin_translation=_vec(origin.get("xyz", [0, 0, 0]), f"{path}.origin.xyz", 3),
            origin_rotation=_vec(origin.get("quat", [1, 0, 0, 0]), f"{path}.origin.quat", 4),
            limits=None if limits is None else (float(limits[0]), float(limits[1])),
            kind=rj.get("kind", REVOLUTE),
            child_link=rj.get("child_link", f"{jname}_link"),
        )
        joint.validate(path)
        if joint.child_link in links:
            raise SchemaError(f"{path}.child_link", f"duplicate link name {joint.child_link!r}")
        links.add(joint.child_link)
        joints.append(joint)

    kinds = {j.kind for j in joints}
    if len(kinds) > 1:
        raise SchemaError("joints", "embodiments must not mix scalar and quaternion joints")

    segment_map = doc.get("segments", {})
    for jname in seen_names:
        seg = segment_map.get(jname)
        if seg not in SEGMENTS:
            raise SchemaError(f"segments.{jname}", f"every joint needs a segment in {SEGMENTS}, got {seg!r}")
    for jname in segment_map:
        if jname not in seen_names:
            raise SchemaError(f"segments.{jname}", f"unknown joint {jname!r}")

    available = doc.get("available")
    if available is None:
        available = sorted({segment_map[j] for j in seen_names})
    for seg in available:
        if seg not in SEGMENTS:
            raise SchemaError("available", f"unknown segment {seg!r}")

    ee_links = doc.get("ee_links", {})
    shoulders = doc.get("shoulders", {})
    ee_offsets = {s: _vec(v, f"ee_offsets.{s}", 3) for s, v in doc.get("ee_offsets", {}).items()}
    for seg in ARM_SEGMENTS:
        if seg in available:
            if seg not in ee_links:
                raise SchemaError(f"ee_links.{seg}", "available arm segments need an EE link")
            if seg not in shoulders:
                raise SchemaError(f"shoulders.{seg}", "available arm segments need a shoulder joint")
    for seg, link in ee_links.items():
        if link not in links:
            raise SchemaError(f"ee_links.{seg}", f"dangling link reference {link!r}")
    for seg, jname in shoulders.items():
        if jname not in seen_names:
            raise SchemaError(f"shoulders.{seg}", f"unknown joint {jname!r}")

    spec = EmbodimentSpec(
        name=name,
        joints=tuple(joints),
        segment_map={j: segment_map[j] for j in (jj.name for jj in joints)},
        segment_available=frozenset(available),
        ee_links=dict(ee_links),
        ee_offsets=ee_offsets,
        shoulder_joints=dict(shoulders),
    )
    for seg in ee_links:
        spec.arm_length[seg] = _chain_length(spec, seg)
        if not spec.arm_length[seg] > 0:
            raise SchemaError(f"ee_links.{seg}", "arm length must be positive")
    spec._decode_map()  # fail fast on unresolvable decode grouping
    return spec


def _chain_length(spec: EmbodimentSpec, segment: str) -> float:
    """Summed link lengths from the shoulder joint down to the EE point."""
    by_child = {j.child_link: j for j in spec.joints}
    shoulder_child = spec.joint(spec.shoulder_joints[segment]).child_link
    total = float(np.linalg.norm(spec.ee_offsets.get(segment, np.zeros(3))))
    link = spec.ee_links[segment]
    while link != shoulder_child:
        if link not in by_child:
            raise SchemaError(f"ee_links.{segment}", f"EE link {link!r} is not below shoulder joint")
        joint = by_child[link]
        total += float(np.linalg.norm(joint.origin_translation))
        link = joint.parent_link
    return total


def parse_urdf(text: str, *, name: str | None = None) -> list[dict]:
    """Map the revolute joints of a URDF document onto schema joint dicts.

    Returns the `joints` list for an embodiment document; segments,
    availability, EE links and shoulders are not expressible in URDF and
    must be supplied by the caller.
    """
    root = ET.fromstring(text)
    joints = []
    for el in root.iter("joint"):
        if el.get("type") != "revolute":
            continue
        origin = el.find("origin")
        rpy = [float(v) for v in (origin.get("rpy", "0 0 0") if origin is not None else "0 0 0").split()]
        xyz = [float(v) for v in (origin.get("xyz", "0 0 0") if origin is not None else "0 0 0").split()]
        limit = el.find("limit")
        axis_el = el.find("axis")
        axis = [float(v) for v in (axis_el.get("xyz", "1 0 0") if axis_el is not None else "1 0 0").split()]
        cr, sr = np.cos(rpy[0] / 2), np.sin(rpy[0] / 2)
        cp, sp = np.cos(rpy[1] / 2), np.sin(rpy[1] / 2)
        cy, sy = np.cos(rpy[2] / 2), np.sin(rpy[2] / 2)
        q = [
            cr * cp * cy + sr * sp * sy,
            sr * cp * cy - cr * sp * sy,
            cr * sp * cy + sr * cp * sy,
            cr * cp * sy - sr * sp * cy,
        ]
        joints.append(
            {
                "name": el.get("name"),
                "parent_link": el.find("parent").get("link"),
                "child_link": el.find("child").get("link"),
                "axis": axis,
                "origin": {"xyz": xyz, "quat": q},
                "limits": [float(limit.get("lower")), float(limit.get("upper"))] if limit is not None else None,
                "kind": REVOLUTE,
            }
        )
    return joints


# ---------------------------------------------------------------------------
# forward kinematics
# ---------------------------------------------------------------------------

@dataclass
class FKResult:
    link_positions: dict[str, np.ndarray]
    link_orientations: dict[str, np.ndarray]
    joint_world_quats: dict[str, np.ndarray]


def local_joint_quaternions(spec: EmbodimentSpec, pose: Pose) -> dict[str, np.ndarray]:
    """Per-joint local rotations as wxyz unit quaternions.

    Scalar joints go through the axis-angle map; quaternion joints are
    passed through normalized.
    """
    if pose.values.shape != (spec.pose_dim,):
        raise ValueError(f"pose dim {pose.values.shape[0]} != {spec.pose_dim}")
    out: dict[str, np.ndarray] = {}
    if spec.kind == REVOLUTE:
        for i, j in enumerate(spec.joints):
            out[j.name] = quat.from_axis_angle(j.axis, pose.values[i])
    else:
        blocks = pose.values.reshape(-1, 4)
        for i, j in enumerate(spec.joints):
            out[j.name] = quat.normalize(blocks[i])
    return out


def segment_local_quaternions(spec: EmbodimentSpec, pose: Pose, segment: str) -> np.ndarray:
    """(J_seg, 4) local quaternions for the joints of one segment, chain order."""
    local = local_joint_quaternions(spec, pose)
    return np.stack([local[j] for j in spec.segment_joints(segment)])


def forward_kinematics(spec: EmbodimentSpec, pose: Pose) -> FKResult:
    """Compose joint transforms root->leaf. Pure; base link at the origin."""
    if pose.embodiment != spec.name:
        raise ValueError(f"pose for {pose.embodiment!r} used with spec {spec.name!r}")
    local = local_joint_quaternions(spec, pose)
    positions = {BASE_LINK: np.zeros(3)}
    orientations = {BASE_LINK: quat.IDENTITY.copy()}
    joint_world = {}
    for j in spec.joints:
        p_parent = positions[j.parent_link]
        q_parent = orientations[j.parent_link]
        p_origin = p_parent + quat.rotate(q_parent, j.origin_translation)
        q_world = quat.multiply(quat.multiply(q_parent, j.origin_rotation), local[j.name])
        positions[j.child_link] = p_origin
        orientations[j.child_link] = q_world
        joint_world[j.name] = q_world
    return FKResult(positions, orientations, joint_world)


def ee_world_position(spec: EmbodimentSpec, fk: FKResult, segment: str) -> np.ndarray:
    """World position of the segment's end-effector point (meters)."""
    link = spec.ee_links[segment]
    offset = spec.ee_offsets.get(segment, np.zeros(3))
    return fk.link_positions[link] + quat.rotate(fk.link_orientations[link], offset)


def ee_position_normalized(spec: EmbodimentSpec, fk: FKResult, segment: str) -> np.ndarray:
    """EE position relative to the shoulder, in the base orientation frame,
    divided by the arm length. Scale-free across embodiments."""
    if segment not in spec.segment_available:
        raise ValueError(f"segment {segment} unavailable on {spec.name}")
    p_ee = ee_world_position(spec, fk, segment)
    shoulder_child = spec.joint(spec.shoulder_joints[segment]).child_link
    p_sh = fk.link_positions[shoulder_child]
    q_base = fk.link_orientations[BASE_LINK]
    rel = quat.rotate(quat.conjugate(q_base), p_ee - p_sh)
    return rel / spec.arm_length[segment]


def sample_random_pose(spec: EmbodimentSpec, rng_seed: int) -> Pose:
    """Uniform pose sample: scalar joints uniform in [lo, hi], quaternion
    joints Haar-uniform on SO(3). Deterministic given the seed."""
    rng = np.random.default_rng(rng_seed)
    if spec.kind == REVOLUTE:
        lo = np.array([j.limits[0] for j in spec.joints])
        hi = np.array([j.limits[1] for j in spec.joints])
        values = rng.uniform(lo, hi)
    else:
        values = quat.random_uniform(rng, (len(spec.joints),)).reshape(-1)
    return Pose(spec.name, values)
