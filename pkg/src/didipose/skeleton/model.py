"""Skeleton definition, forward kinematics and occluded 2D observations.

Coordinates are millimetres in a y-up frame (x lateral, z depth).  Poses are
root-relative: joint 0 (pelvis) sits at the origin.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import SchemaError, ShapeError

# Human3.6M 17-joint convention.
H36M_JOINTS = (
    "pelvis", "r_hip", "r_knee", "r_ankle", "l_hip", "l_knee", "l_ankle",
    "spine", "thorax", "neck", "head",
    "l_shoulder", "l_elbow", "l_wrist", "r_shoulder", "r_elbow", "r_wrist",
)
H36M_PARENTS = (-1, 0, 1, 2, 0, 4, 5, 0, 7, 8, 9, 8, 11, 12, 8, 14, 15)

# Average segment lengths (mm) over the Human3.6M training subjects.
_HIP, _THIGH, _SHIN = 132.9, 442.9, 454.2
_SPINE, _THORAX, _NECK, _HEAD = 233.4, 257.1, 121.1, 115.0
_SHOULDER, _UPPER_ARM, _FOREARM = 151.0, 278.9, 251.7

_DOWN, _UP, _LEFT, _RIGHT = (0.0, -1.0, 0.0), (0.0, 1.0, 0.0), (1.0, 0.0, 0.0), (-1.0, 0.0, 0.0)

#               length      rest direction  euler (x, y, z) limits in radians
_H36M_TABLE = (
    (0.0,       (0.0, 0.0, 0.0), ((-0.2, 0.2), (-0.6, 0.6), (-0.2, 0.2))),
    (_HIP,      _RIGHT,          ((-0.1, 0.1), (-0.1, 0.1), (-0.1, 0.1))),
    (_THIGH,    _DOWN,           ((-1.2, 0.5), (-0.3, 0.3), (-0.5, 0.2))),
    (_SHIN,     _DOWN,           ((0.0, 1.5), (0.0, 0.0), (-0.1, 0.1))),
    (_HIP,      _LEFT,           ((-0.1, 0.1), (-0.1, 0.1), (-0.1, 0.1))),
    (_THIGH,    _DOWN,           ((-1.2, 0.5), (-0.3, 0.3), (-0.2, 0.5))),
    (_SHIN,     _DOWN,           ((0.0, 1.5), (0.0, 0.0), (-0.1, 0.1))),
    (_SPINE,    _UP,             ((-0.3, 0.6), (-0.3, 0.3), (-0.3, 0.3))),
    (_THORAX,   _UP,             ((-0.2, 0.2), (-0.2, 0.2), (-0.2, 0.2))),
    (_NECK,     _UP,             ((-0.3, 0.3), (-0.3, 0.3), (-0.2, 0.2))),
    (_HEAD,     _UP,             ((-0.3, 0.3), (-0.3, 0.3), (-0.3, 0.3))),
    (_SHOULDER, _LEFT,           ((-0.2, 0.2), (-0.2, 0.2), (-0.2, 0.2))),
    (_UPPER_ARM, _DOWN,          ((-1.5, 1.5), (-0.5, 0.5), (-0.2, 1.4))),
    (_FOREARM,  _DOWN,           ((-1.5, 0.0), (0.0, 0.0), (-0.3, 0.3))),
    (_SHOULDER, _RIGHT,          ((-0.2, 0.2), (-0.2, 0.2), (-0.2, 0.2))),
    (_UPPER_ARM, _DOWN,          ((-1.5, 1.5), (-0.5, 0.5), (-1.4, 0.2))),
    (_FOREARM,  _DOWN,           ((-1.5, 0.0), (0.0, 0.0), (-0.3, 0.3))),
)


@dataclass(frozen=True)
class SkeletonDef:
    """Kinematic tree with per-joint bone lengths and Euler-angle limits.

    ``parent[0]`` is ``-1``.  ``bone_length[0]`` and ``rest_direction[0]`` are
    unused (the root has no incoming bone) and are stored as zeros.  The local
    rotation of joint ``j`` turns its incoming bone; the root rotation sets the
    global body orientation.
    """

    parent: tuple[int, ...]
    bone_length: tuple[float, ...]
    rest_direction: tuple[tuple[float, float, float], ...]
    angle_limits: tuple[tuple[tuple[float, float], ...], ...]
    names: tuple[str, ...] = ()
    name: str = "custom"

    def __post_init__(self):
        J = len(self.parent)
        if J < 1:
            raise SchemaError("skeleton needs at least one joint")
        for label, seq in (("bone_length", self.bone_length),
                           ("rest_direction", self.rest_direction),
                           ("angle_limits", self.angle_limits)):
            if len(seq) != J:
                raise SchemaError(f"{label} has {len(seq)} entries, expected {J}")
        if self.names and len(self.names) != J:
            raise SchemaError(f"names has {len(self.names)} entries, expected {J}")
        if self.parent[0] != -1:
            raise SchemaError("joint 0 must be the root (parent -1)")
        # Parents must precede children, which rules out cycles and makes
        # every joint reachable from the root.
        for j in range(1, J):
            p = self.parent[j]
            if not 0 <= p < j:
                raise SchemaError(f"joint {j} has parent {p}; parents must precede children")
            if not self.bone_length[j] > 0:
                raise SchemaError(f"bone length of joint {j} must be positive")
            if not np.isclose(np.linalg.norm(self.rest_direction[j]), 1.0, atol=1e-12):
                raise SchemaError(f"rest direction of joint {j} is not a unit vector")
        for j, lims in enumerate(self.angle_limits):
            if len(lims) != 3:
                raise SchemaError(f"joint {j} needs three (min, max) angle ranges")
            for lo, hi in lims:
                if lo > hi:
                    raise SchemaError(f"joint {j} has angle range min {lo} > max {hi}")

    @property
    def joint_count(self) -> int:
        return len(self.parent)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "joint_count": self.joint_count,
            "names": list(self.names),
            "parent": [None if p < 0 else p for p in self.parent],
            "bone_length": list(self.bone_length),
            "rest_direction": [list(d) for d in self.rest_direction],
            "angle_limits": [[list(r) for r in lims] for lims in self.angle_limits],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SkeletonDef":
        try:
            return cls(
                parent=tuple(-1 if p is None else int(p) for p in d["parent"]),
                bone_length=tuple(float(x) for x in d["bone_length"]),
                rest_direction=tuple(tuple(float(c) for c in v) for v in d["rest_direction"]),
                angle_limits=tuple(tuple((float(lo), float(hi)) for lo, hi in lims)
                                   for lims in d["angle_limits"]),
                names=tuple(d.get("names", ())),
                name=d.get("name", "custom"),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise SchemaError(f"malformed skeleton definition: {exc}") from exc

    def with_rest_limits(self) -> "SkeletonDef":
        """Copy of this skeleton whose angle ranges collapse to zero."""
        zero = tuple(((0.0, 0.0),) * 3 for _ in self.parent)
        return SkeletonDef(self.parent, self.bone_length, self.rest_direction, zero,
                           self.names, self.name + "-rest")


def h36m_skeleton() -> SkeletonDef:
    return SkeletonDef(
        parent=H36M_PARENTS,
        bone_length=tuple(row[0] for row in _H36M_TABLE),
        rest_direction=tuple(row[1] for row in _H36M_TABLE),
        angle_limits=tuple(row[2] for row in _H36M_TABLE),
        names=H36M_JOINTS,
        name="h36m17",
    )


def euler_to_matrix(angles: np.ndarray) -> np.ndarray:
    """Rotation matrices ``Rx(a) @ Ry(b) @ Rz(c)`` for angles of shape (..., 3)."""
    a, b, c = angles[..., 0], angles[..., 1], angles[..., 2]
    ca, sa, cb, sb, cc, sc = np.cos(a), np.sin(a), np.cos(b), np.sin(b), np.cos(c), np.sin(c)
    one, zero = np.ones_like(a), np.zeros_like(a)
    rx = np.stack([one, zero, zero, zero, ca, -sa, zero, sa, ca], -1).reshape(a.shape + (3, 3))
    ry = np.stack([cb, zero, sb, zero, one, zero, -sb, zero, cb], -1).reshape(a.shape + (3, 3))
    rz = np.stack([cc, -sc, zero, sc, cc, zero, zero, zero, one], -1).reshape(a.shape + (3, 3))
    return rx @ ry @ rz


def forward_kinematics(skeleton: SkeletonDef, angles: np.ndarray) -> np.ndarray:
    """Joint positions (J, 3) from per-joint Euler angles (J, 3)."""
    J = skeleton.joint_count
    rot = euler_to_matrix(np.asarray(angles, dtype=np.float64))
    glob = np.empty((J, 3, 3))
    pos = np.zeros((J, 3))
    glob[0] = rot[0]
    for j in range(1, J):
        p = skeleton.parent[j]
        glob[j] = glob[p] @ rot[j]
        offset = skeleton.bone_length[j] * np.asarray(skeleton.rest_direction[j])
        pos[j] = pos[p] + glob[j] @ offset
    return pos


@dataclass
class Pose:
    """Root-relative joint coordinates in millimetres, shape (J, 3)."""

    coords: np.ndarray

    def __post_init__(self):
        self.coords = np.asarray(self.coords, dtype=np.float64)
        if self.coords.ndim != 2 or self.coords.shape[1] != 3:
            raise ShapeError(f"pose coords must be (J, 3), got {self.coords.shape}")
        if not np.all(np.isfinite(self.coords)):
            raise ShapeError("pose coords must be finite")

    @property
    def joint_count(self) -> int:
        return self.coords.shape[0]

    def root_relative(self) -> "Pose":
        return Pose(self.coords - self.coords[:1])


@dataclass
class Observation:
    """Orthographic 2D projection with an occlusion mask.

    ``occluder`` is the open rectangle ``(x0, y0, x1, y1)``; a joint is hidden
    iff ``x0 < x < x1`` and ``y0 < y < y1``.
    """

    proj2d: np.ndarray
    visible: np.ndarray
    occluder: tuple[float, float, float, float] = (0.0, 0.0, 0.0, 0.0)

    def __post_init__(self):
        self.proj2d = np.asarray(self.proj2d, dtype=np.float64)
        self.visible = np.asarray(self.visible, dtype=bool)
        self.occluder = tuple(float(v) for v in self.occluder)
        if self.proj2d.ndim != 2 or self.proj2d.shape[1] != 2:
            raise ShapeError(f"proj2d must be (J, 2), got {self.proj2d.shape}")
        if self.visible.shape != self.proj2d.shape[:1]:
            raise ShapeError("visible mask length must equal joint count")
        if not np.all(np.isfinite(self.proj2d)):
            raise ShapeError("proj2d must be finite")


@dataclass(frozen=True)
class OccluderSpec:
    """Square occluders of a randomly chosen side length (mm).

    The square centre is uniform over the bounding box of the projected
    joints.  A side of 0 gives a zero-area occluder (everything visible).
    The defaults approximate 40 px and 80 px patches on a 256-pixel-tall
    person crop.
    """

    sizes: tuple[float, ...] = (0.0, 265.0, 530.0)
    probs: tuple[float, ...] = (1 / 3, 1 / 3, 1 / 3)

    def __post_init__(self):
        if len(self.sizes) != len(self.probs) or not self.sizes:
            raise SchemaError("occluder sizes and probs must be non-empty and equally long")
        if any(s < 0 for s in self.sizes) or any(p < 0 for p in self.probs):
            raise SchemaError("occluder sizes and probs must be nonnegative")
        if not np.isclose(sum(self.probs), 1.0):
            raise SchemaError("occluder probs must sum to 1")


def occlusion_mask(proj2d: np.ndarray, occluder) -> np.ndarray:
    x0, y0, x1, y1 = occluder
    x, y = proj2d[..., 0], proj2d[..., 1]
    hidden = (x0 < x) & (x < x1) & (y0 < y) & (y < y1)
    return ~hidden


def generate_pose(skeleton: SkeletonDef, rng: np.random.Generator) -> Pose:
    """Forward kinematics from joint angles drawn uniformly within limits."""
    lims = np.asarray(skeleton.angle_limits, dtype=np.float64)  # (J, 3, 2)
    u = rng.random(lims.shape[:2])
    angles = lims[..., 0] + u * (lims[..., 1] - lims[..., 0])
    return Pose(forward_kinematics(skeleton, angles))


def project_and_occlude(pose: Pose, occluder_spec: OccluderSpec | None,
                        rng: np.random.Generator | None = None,
                        occluder=None) -> Observation:
    """Orthographic projection onto the x-y plane plus a sampled occluder.

    Pass ``occluder`` to use a fixed rectangle instead of sampling one.
    """
    proj = pose.coords[:, :2].copy()
    if occluder is None:
        if occluder_spec is None or rng is None:
            raise ValueError("need either an explicit occluder or (occluder_spec, rng)")
        side = float(occluder_spec.sizes[rng.choice(len(occluder_spec.sizes), p=occluder_spec.probs)])
        lo, hi = proj.min(axis=0), proj.max(axis=0)
        cx, cy = lo + rng.random(2) * (hi - lo)
        occluder = (cx - side / 2, cy - side / 2, cx + side / 2, cy + side / 2)
    return Observation(proj, occlusion_mask(proj, occluder), occluder)


SPLIT_STREAMS = {"train": 0, "val": 1, "test": 2}


def sample_rng(seed: int, split: str, index: int) -> np.random.Generator:
    """Independent stream per (seed, split, draw index); splits never overlap."""
    if split not in SPLIT_STREAMS:
        raise SchemaError(f"unknown split {split!r}; expected one of {sorted(SPLIT_STREAMS)}")
    return np.random.default_rng(np.random.SeedSequence([seed, SPLIT_STREAMS[split], index]))


@dataclass
class PoseDataset:
    """Poses with their observations, stored as stacked arrays.

    ``coords`` (n, J, 3), ``proj2d`` (n, J, 2), ``visible`` (n, J) and
    ``occluders`` (n, 4).  ``meta`` carries provenance such as config hashes.
    """

    skeleton: SkeletonDef
    coords: np.ndarray
    proj2d: np.ndarray
    visible: np.ndarray
    occluders: np.ndarray
    seed: int = 0
    split: str = "train"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        J = self.skeleton.joint_count
        self.coords = np.asarray(self.coords, dtype=np.float64).reshape(-1, J, 3)
        n = self.coords.shape[0]
        self.proj2d = np.asarray(self.proj2d, dtype=np.float64).reshape(n, J, 2)
        self.visible = np.asarray(self.visible, dtype=bool).reshape(n, J)
        self.occluders = np.asarray(self.occluders, dtype=np.float64).reshape(n, 4)

    def __len__(self) -> int:
        return self.coords.shape[0]

    def pose(self, i: int) -> Pose:
        return Pose(self.coords[i])

    def observation(self, i: int) -> Observation:
        return Observation(self.proj2d[i], self.visible[i], tuple(self.occluders[i]))

    @property
    def samples(self) -> list[tuple[Pose, Observation]]:
        return [(self.pose(i), self.observation(i)) for i in range(len(self))]

    def subset(self, idx) -> "PoseDataset":
        idx = np.asarray(idx)
        return PoseDataset(self.skeleton, self.coords[idx], self.proj2d[idx], self.visible[idx],
                           self.occluders[idx], self.seed, self.split, dict(self.meta))

    @classmethod
    def from_samples(cls, skeleton, samples, seed=0, split="train", meta=None) -> "PoseDataset":
        J = skeleton.joint_count
        for pose, obs in samples:
            if pose.joint_count != J or obs.proj2d.shape[0] != J:
                raise SchemaError("sample joint count does not match skeleton")
        coords = np.array([p.coords for p, _ in samples]).reshape(-1, J, 3)
        proj = np.array([o.proj2d for _, o in samples]).reshape(-1, J, 2)
        vis = np.array([o.visible for _, o in samples]).reshape(-1, J)
        occ = np.array([o.occluder for _, o in samples]).reshape(-1, 4)
        return cls(skeleton, coords, proj, vis, occ, seed, split, dict(meta or {}))


def generate_dataset(skeleton: SkeletonDef, count: int, seed: int, split: str = "train",
                     occluder_spec: OccluderSpec | None = None) -> PoseDataset:
    spec = occluder_spec or OccluderSpec()
    samples = []
    for i in range(count):
        rng = sample_rng(seed, split, i)
        pose = generate_pose(skeleton, rng)
        samples.append((pose, project_and_occlude(pose, spec, rng)))
    return PoseDataset.from_samples(skeleton, samples, seed=seed, split=split)
