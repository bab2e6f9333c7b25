"""Synthetic articulated-skeleton data (forward kinematics plus perspective
projection), pose record file I/O, input normalization, and the closed-form
linear lifting baseline.

Units: 3D joints are millimeters in the camera frame; 2D joints are
normalized image coordinates in [-1, 1] (width-scaled).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, asdict

import numpy as np

from .errors import DataError, GraphError, ParameterError
from .skeleton import SkeletonGraph, load_skeleton

DEFAULT_BONE_MM = {
    "skeleton16": {
        "0-1": 130.0, "1-2": 450.0, "2-3": 445.0,
        "0-4": 130.0, "4-5": 450.0, "5-6": 445.0,
        "0-7": 240.0, "7-8": 255.0, "8-9": 210.0,
        "8-10": 150.0, "10-11": 280.0, "11-12": 250.0,
        "8-13": 150.0, "13-14": 280.0, "14-15": 250.0,
    },
    "skeleton17": {
        "0-1": 130.0, "1-2": 450.0, "2-3": 445.0,
        "0-4": 130.0, "4-5": 450.0, "5-6": 445.0,
        "0-7": 240.0, "7-8": 255.0, "8-9": 120.0, "9-10": 110.0,
        "8-11": 150.0, "11-12": 280.0, "12-13": 250.0,
        "8-14": 150.0, "14-15": 280.0, "15-16": 250.0,
    },
}

RECORD_FORMAT = "posepyramid-records-v1"


@dataclass
class PoseRecord:
    id: str
    joints2d: np.ndarray   # (N, 2) normalized image coordinates
    joints3d: np.ndarray   # (N, 3) millimeters, camera frame
    action: str = ""


@dataclass
class SynthConfig:
    n_samples: int = 1000
    seed: int = 0
    skeleton: str = "skeleton16"
    bone_lengths: dict = None            # edge "i-j" -> mm, defaults per skeleton
    angle_noise: float = 0.06            # uniform +- radians at every joint
    yaw_range: float = 0.9
    pitch_range: float = 0.15
    focal_px: float = 1100.0
    image_size: tuple = (1000, 1000)
    distance_mm: tuple = (4000.0, 5600.0)
    jitter_std: float = 0.004            # normalized units, added to 2D
    actions: tuple = ("walk", "sit", "reach")

    def resolved_bones(self) -> dict:
        table = dict(DEFAULT_BONE_MM.get(self.skeleton, {}))
        if self.bone_lengths:
            table.update(self.bone_lengths)
        if not table:
            raise ParameterError(f"no bone lengths known for {self.skeleton!r}")
        if any(v <= 0 for v in table.values()):
            raise ParameterError("bone lengths must be positive")
        return table

    @classmethod
    def from_dict(cls, d: dict) -> "SynthConfig":
        known = {k: v for k, v in d.items() if k in cls.__dataclass_fields__}
        for key in ("image_size", "distance_mm", "actions"):
            if key in known and isinstance(known[key], list):
                known[key] = tuple(known[key])
        return cls(**known)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["image_size"] = list(self.image_size)
        d["distance_mm"] = list(self.distance_mm)
        d["actions"] = list(self.actions)
        return d


@dataclass
class SynthSampleMeta:
    """Generation-time extras kept out of the record files."""
    action: str
    distance_mm: float
    pixels2d: np.ndarray        # pre-jitter pixel coordinates
    normalized2d: np.ndarray    # pre-jitter normalized coordinates


# ---------------------------------------------------------------------------
# rotations and forward kinematics


def rot_x(t: float) -> np.ndarray:
    c, s = math.cos(t), math.sin(t)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def rot_y(t: float) -> np.ndarray:
    c, s = math.cos(t), math.sin(t)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def rot_z(t: float) -> np.ndarray:
    c, s = math.cos(t), math.sin(t)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def forward_kinematics(skeleton: SkeletonGraph, bone_mm: dict,
                       local_rot: dict = None) -> np.ndarray:
    """Joint positions (N, 3) in the body frame (mm, y up, facing +z).

    `local_rot` maps joint index to a rotation applied at that joint; it
    affects all bones below it in the tree. Rotations preserve the configured
    bone lengths exactly.
    """
    local_rot = local_rot or {}
    parents = skeleton.parents()
    n = skeleton.n_joints
    order = [skeleton.root]
    seen = {skeleton.root}
    while len(order) < n:
        for j in range(n):
            if j not in seen and parents[j] in seen:
                order.append(j)
                seen.add(j)
    pos = np.zeros((n, 3))
    acc = [None] * n
    acc[skeleton.root] = local_rot.get(skeleton.root, np.eye(3))
    for j in order[1:]:
        p = parents[j]
        key = f"{p}-{j}" if f"{p}-{j}" in skeleton.rest_directions else f"{j}-{p}"
        if key not in skeleton.rest_directions:
            raise GraphError(f"no rest direction for edge ({p},{j})")
        if key not in bone_mm:
            raise GraphError(f"no bone length for edge {key}")
        direction = np.asarray(skeleton.rest_directions[key], dtype=np.float64)
        pos[j] = pos[p] + acc[p] @ (bone_mm[key] * direction)
        acc[j] = acc[p] @ local_rot.get(j, np.eye(3))
    return pos


def body_to_camera(points: np.ndarray, distance_mm: float) -> np.ndarray:
    """Body frame (y up, +z toward camera) to camera frame (y down, +z depth)."""
    out = np.empty_like(points)
    out[:, 0] = points[:, 0]
    out[:, 1] = -points[:, 1]
    out[:, 2] = distance_mm - points[:, 2]
    return out


def project_points(cam_points: np.ndarray, focal: float, cx: float,
                   cy: float) -> np.ndarray:
    z = cam_points[:, 2]
    if np.any(z <= 0):
        raise ParameterError("points behind the camera cannot be projected")
    u = focal * cam_points[:, 0] / z + cx
    v = focal * cam_points[:, 1] / z + cy
    return np.stack([u, v], axis=1)


def normalize_2d(pixels: np.ndarray, image_size) -> np.ndarray:
    """Map pixels to [-1, 1], width-scaled so the aspect ratio is preserved."""
    w, h = image_size
    out = np.empty_like(np.asarray(pixels, dtype=np.float64))
    out[..., 0] = (2.0 * pixels[..., 0] - w) / w
    out[..., 1] = (2.0 * pixels[..., 1] - h) / w
    return out


def denormalize_2d(coords: np.ndarray, image_size) -> np.ndarray:
    w, h = image_size
    out = np.empty_like(np.asarray(coords, dtype=np.float64))
    out[..., 0] = (coords[..., 0] * w + w) / 2.0
    out[..., 1] = (coords[..., 1] * w + h) / 2.0
    return out


# ---------------------------------------------------------------------------
# action families


def _arm_down(side: str, skeleton_name: str):
    # shoulder joint index and the sign that brings the arm from the lateral
    # rest direction to hanging down
    if skeleton_name == "skeleton17":
        return (11, -1.0) if side == "l" else (14, 1.0)
    return (10, -1.0) if side == "l" else (13, 1.0)


def _action_rotations(action: str, rng: np.random.Generator,
                      skeleton: SkeletonGraph) -> dict:
    name = skeleton.name
    if name == "skeleton17":
        l_sh, r_sh, l_el, r_el = 11, 14, 12, 15
    else:
        l_sh, r_sh, l_el, r_el = 10, 13, 11, 14
    rots = {}

    def put(j, r):
        rots[j] = rots[j] @ r if j in rots else r

    if action == "walk":
        phase = rng.uniform(0.0, 2.0 * math.pi)
        amp = rng.uniform(0.25, 0.65)
        swing = amp * math.sin(phase)
        put(1, rot_x(swing))
        put(4, rot_x(-swing))
        put(2, rot_x(0.5 * amp * max(0.0, -math.sin(phase))))
        put(5, rot_x(0.5 * amp * max(0.0, math.sin(phase))))
        put(l_sh, rot_z(-1.35))
        put(r_sh, rot_z(1.35))
        put(l_sh, rot_x(-0.6 * swing))
        put(r_sh, rot_x(0.6 * swing))
        put(7, rot_x(0.05 * swing))
    elif action == "sit":
        hip = rng.uniform(1.2, 1.6)
        knee = rng.uniform(1.2, 1.6)
        put(1, rot_x(hip))
        put(4, rot_x(hip + rng.uniform(-0.1, 0.1)))
        put(2, rot_x(-knee))
        put(5, rot_x(-knee + rng.uniform(-0.1, 0.1)))
        put(7, rot_x(-rng.uniform(0.0, 0.25)))
        put(l_sh, rot_z(-1.2))
        put(r_sh, rot_z(1.2))
        put(l_el, rot_z(rng.uniform(0.0, 0.5)))
        put(r_el, rot_z(-rng.uniform(0.0, 0.5)))
    elif action == "reach":
        side = rng.choice(["l", "r", "both"])
        lift_l = rng.uniform(0.9, 1.6)
        lift_r = rng.uniform(0.9, 1.6)
        if side in ("l", "both"):
            put(l_sh, rot_z(lift_l))
            put(l_el, rot_z(rng.uniform(0.0, 0.4)))
        else:
            put(l_sh, rot_z(-1.3))
        if side in ("r", "both"):
            put(r_sh, rot_z(-lift_r))
            put(r_el, rot_z(-rng.uniform(0.0, 0.4)))
        else:
            put(r_sh, rot_z(1.3))
        put(7, rot_z(rng.uniform(-0.2, 0.2)))
    elif action == "rest":
        pass
    else:
        raise ParameterError(f"unknown action family {action!r}")
    return rots


def _apply_noise(rots: dict, rng: np.random.Generator, n_joints: int,
                 noise: float) -> dict:
    if noise <= 0:
        return rots
    out = dict(rots)
    for j in range(n_joints):
        a = rng.uniform(-noise, noise, size=3)
        r = rot_x(a[0]) @ rot_y(a[1]) @ rot_z(a[2])
        out[j] = out[j] @ r if j in out else r
    return out


def generate_synthetic(config: SynthConfig):
    """Deterministic synthetic dataset; returns (records, metas).

    Every sample is generated from its own counter-based RNG substream, so
    regeneration with the same seed is bitwise identical and samples are
    independent of each other.
    """
    skeleton, _ = load_skeleton(config.skeleton)
    bones = config.resolved_bones()
    w, h = config.image_size
    cx, cy = w / 2.0, h / 2.0
    records, metas = [], []
    for i in range(config.n_samples):
        rng = np.random.Generator(
            np.random.Philox(key=[int(config.seed), 0xFACE0000 + i]))
        action = str(rng.choice(list(config.actions)))
        rots = _action_rotations(action, rng, skeleton)
        yaw = rng.uniform(-config.yaw_range, config.yaw_range)
        pitch = rng.uniform(-config.pitch_range, config.pitch_range)
        root_rot = rot_y(yaw) @ rot_x(pitch)
        rots[skeleton.root] = root_rot @ rots.get(skeleton.root, np.eye(3))
        rots = _apply_noise(rots, rng, skeleton.n_joints, config.angle_noise)
        body = forward_kinematics(skeleton, bones, rots)
        distance = rng.uniform(*config.distance_mm)
        cam = body_to_camera(body, distance)
        pixels = project_points(cam, config.focal_px, cx, cy)
        if (pixels[:, 0].min() < 0 or pixels[:, 0].max() > w
                or pixels[:, 1].min() < 0 or pixels[:, 1].max() > h):
            raise DataError(
                f"sample {i}: projection left the image; increase the camera "
                "distance or shrink the skeleton")
        norm = normalize_2d(pixels, config.image_size)
        jitter = config.jitter_std * rng.standard_normal(norm.shape)
        records.append(PoseRecord(
            id=f"synth-{config.seed}-{i:06d}",
            joints2d=norm + jitter,
            joints3d=cam,
            action=action,
        ))
        metas.append(SynthSampleMeta(
            action=action, distance_mm=distance,
            pixels2d=pixels, normalized2d=norm,
        ))
    return records, metas


# ---------------------------------------------------------------------------
# record file I/O (JSON lines, header first)


def write_records(path, records, skeleton_name: str, config_echo: dict = None) -> None:
    n_joints = None
    if records:
        n_joints = len(records[0].joints2d)
    else:
        skel, _ = load_skeleton(skeleton_name)
        n_joints = skel.n_joints
    header = {
        "format": RECORD_FORMAT,
        "skeleton": skeleton_name,
        "n_joints": n_joints,
        "units": {"joints2d": "normalized", "joints3d": "mm"},
    }
    if config_echo:
        header["config"] = config_echo
    with open(path, "w") as fh:
        fh.write(json.dumps(header) + "\n")
        for rec in records:
            fh.write(json.dumps({
                "id": rec.id,
                "action": rec.action,
                "joints2d": np.asarray(rec.joints2d, dtype=np.float64).tolist(),
                "joints3d": np.asarray(rec.joints3d, dtype=np.float64).tolist(),
            }) + "\n")


def read_records(path):
    """Returns (records, header); raises DataError naming the offending line."""
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise DataError(f"{path}: empty file, expected a header line")
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: line 1: header is not valid JSON ({exc})")
    if header.get("format") != RECORD_FORMAT:
        raise DataError(f"{path}: line 1: unknown format {header.get('format')!r}")
    n_joints = header.get("n_joints")
    records = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise DataError(f"{path}: line {lineno}: invalid JSON ({exc})")
        try:
            j2 = np.asarray(obj["joints2d"], dtype=np.float64)
            j3 = np.asarray(obj["joints3d"], dtype=np.float64)
        except (KeyError, ValueError) as exc:
            raise DataError(f"{path}: line {lineno}: bad record ({exc})")
        if j2.shape != (n_joints, 2) or j3.shape != (n_joints, 3):
            raise DataError(
                f"{path}: line {lineno}: joint count does not match header "
                f"({j2.shape} / {j3.shape}, expected {n_joints} joints)")
        records.append(PoseRecord(id=str(obj.get("id", "")), joints2d=j2,
                                  joints3d=j3, action=str(obj.get("action", ""))))
    return records, header


# ---------------------------------------------------------------------------
# closed-form baseline


def linear_baseline(x_train: np.ndarray, y_train: np.ndarray,
                    x_eval: np.ndarray) -> np.ndarray:
    """Least-squares map from flattened 2D (plus intercept) to flattened 3D."""
    s, n, _ = x_train.shape
    a = np.concatenate([x_train.reshape(s, -1), np.ones((s, 1))], axis=1)
    b = y_train.reshape(s, -1)
    w, *_ = np.linalg.lstsq(a, b, rcond=None)
    se = x_eval.shape[0]
    ae = np.concatenate([x_eval.reshape(se, -1), np.ones((se, 1))], axis=1)
    return (ae @ w).reshape(se, n, 3)
