"""Skeleton topology, rotation algebra, projection and limb scaling.

All functions here are pure numpy (float64) and shared by the data
generator, the network wrappers and the metrics. Rotations use the
continuous 6D parameterisation: two 3-vectors that Gram-Schmidt
orthonormalisation turns into the first two columns of a rotation
matrix, the third column being their cross product.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DegenerateRotation,
    DegenerateSkeleton,
    FrameCountMismatch,
    InvalidScale,
)
from .validation import as_float_array, check_sequence

# Canonical joint indices of the fixed 15-joint tree.
HIP, NECK, HEAD = 0, 1, 2
L_SHOULDER, L_ELBOW, L_WRIST = 3, 4, 5
R_SHOULDER, R_ELBOW, R_WRIST = 6, 7, 8
L_HIP, L_KNEE, L_ANKLE = 9, 10, 11
R_HIP, R_KNEE, R_ANKLE = 12, 13, 14


@dataclass(frozen=True)
class JointTopology:
    """The skeleton tree plus the bone groupings used for scaling and height.

    ``parent_index[j]`` is the parent of joint ``j`` (-1 for the hip root).
    ``limbs`` maps a limb name to the joints whose incoming bone belongs to
    that limb; together the groups partition all non-root joints.
    """

    joint_names: tuple[str, ...]
    parent_index: tuple[int, ...]
    limbs: tuple[tuple[str, tuple[int, ...]], ...]
    # (upper joint, lower joint) pairs: head segment, body segment and the
    # two leg chains averaged into the character height.
    head_bone: tuple[int, int] = (HEAD, NECK)
    body_bone: tuple[int, int] = (NECK, HIP)
    leg_chains: tuple[tuple[tuple[int, int], ...], ...] = (
        ((L_HIP, L_KNEE), (L_KNEE, L_ANKLE)),
        ((R_HIP, R_KNEE), (R_KNEE, R_ANKLE)),
    )

    def __post_init__(self):
        n = len(self.joint_names)
        if len(self.parent_index) != n:
            raise ValueError("parent_index length must match joint_names")
        roots = [j for j, p in enumerate(self.parent_index) if p < 0]
        if roots != [HIP]:
            raise ValueError("topology must be rooted at the hip joint (index 0)")
        # detect cycles / forward references by requiring parents before children
        for j, p in enumerate(self.parent_index):
            if j > 0 and not 0 <= p < j:
                raise ValueError("parents must precede children in joint order")
        covered = sorted(j for _, joints in self.limbs for j in joints)
        if covered != list(range(1, n)):
            raise ValueError("limb groups must partition the non-root joints")

    @property
    def n_joints(self) -> int:
        return len(self.joint_names)

    @property
    def limb_names(self) -> tuple[str, ...]:
        return tuple(name for name, _ in self.limbs)

    def limb_of_joint(self) -> np.ndarray:
        """Per-joint limb index (-1 for the root)."""
        out = np.full(self.n_joints, -1, dtype=int)
        for i, (_, joints) in enumerate(self.limbs):
            out[list(joints)] = i
        return out

    def bones(self) -> list[tuple[int, int]]:
        """(child, parent) pairs in traversal order."""
        return [(j, p) for j, p in enumerate(self.parent_index) if p >= 0]


DEFAULT_TOPOLOGY = JointTopology(
    joint_names=(
        "hip", "neck", "head",
        "l_shoulder", "l_elbow", "l_wrist",
        "r_shoulder", "r_elbow", "r_wrist",
        "l_hip", "l_knee", "l_ankle",
        "r_hip", "r_knee", "r_ankle",
    ),
    parent_index=(-1, 0, 1, 1, 3, 4, 1, 6, 7, 0, 9, 10, 0, 12, 13),
    limbs=(
        ("torso_head", (NECK, HEAD)),
        ("l_arm", (L_SHOULDER, L_ELBOW, L_WRIST)),
        ("r_arm", (R_SHOULDER, R_ELBOW, R_WRIST)),
        ("l_leg", (L_HIP, L_KNEE, L_ANKLE)),
        ("r_leg", (R_HIP, R_KNEE, R_ANKLE)),
    ),
)


def rot6d_to_matrices(raw6d) -> np.ndarray:
    """Convert 6D rotation vectors (T, 6) to rotation matrices (T, 3, 3).

    Gram-Schmidt: b1 = normalize(a1), b2 = normalize(a2 - (b1.a2) b1),
    b3 = b1 x b2; the b vectors are the matrix columns.

    Raises:
        DegenerateRotation: if a1 is (near) zero or a2 is (near) parallel
            to a1, so the construction collapses.
    """
    v = as_float_array(raw6d, "raw6d")
    single = v.ndim == 1
    if single:
        v = v[None]
    if v.ndim != 2 or v.shape[1] != 6:
        raise DegenerateRotation(f"raw6d must have shape (T, 6), got {v.shape}")
    a1, a2 = v[:, :3], v[:, 3:]
    n1 = np.linalg.norm(a1, axis=1)
    if np.any(n1 < 1e-8):
        raise DegenerateRotation("first 6D half has near-zero norm")
    b1 = a1 / n1[:, None]
    u2 = a2 - np.sum(b1 * a2, axis=1, keepdims=True) * b1
    n2 = np.linalg.norm(u2, axis=1)
    if np.any(n2 < 1e-8):
        raise DegenerateRotation("second 6D half is near-parallel to the first")
    b2 = u2 / n2[:, None]
    b3 = np.cross(b1, b2)
    mats = np.stack([b1, b2, b3], axis=2)  # columns (b1, b2, b3)
    return mats[0] if single else mats


def matrices_to_rot6d(mats) -> np.ndarray:
    """Inverse embedding: first two columns of each matrix, flattened to (T, 6)."""
    m = as_float_array(mats, "matrices")
    return np.concatenate([m[..., :, 0], m[..., :, 1]], axis=-1)


def geodesic_angle(r_a, r_b) -> np.ndarray:
    """Geodesic distance (radians) between rotation matrices, elementwise over T."""
    r_a = as_float_array(r_a)
    r_b = as_float_array(r_b)
    rel = np.einsum("...ij,...kj->...ik", r_a, r_b)  # Ra @ Rb^T
    tr = np.trace(rel, axis1=-2, axis2=-1)
    cos = np.clip((tr - 1.0) / 2.0, -1.0, 1.0)
    return np.arccos(cos)


def rotate_sequence(seq, rots) -> np.ndarray:
    """Apply one rotation matrix per frame to every joint of that frame.

    ``seq`` is (N, T, 3) and assumed hip-centred (rotation is about the
    origin); ``rots`` is (T, 3, 3).
    """
    x = check_sequence(seq, 3, n_joints=None, name="seq")
    r = as_float_array(rots, "rots")
    if r.ndim != 3 or r.shape[1:] != (3, 3):
        raise FrameCountMismatch(f"rots must have shape (T, 3, 3), got {r.shape}")
    if r.shape[0] != x.shape[1]:
        raise FrameCountMismatch(
            f"sequence has {x.shape[1]} frames but {r.shape[0]} rotations given"
        )
    return np.einsum("tij,ntj->nti", r, x)


def orthographic_project(seq) -> np.ndarray:
    """Drop the depth coordinate: (N, T, 3) -> (N, T, 2)."""
    x = check_sequence(seq, 3, n_joints=None, name="seq")
    return x[:, :, :2].copy()


def hip_align(seq) -> np.ndarray:
    """Translate every frame so the hip joint sits at the origin."""
    x = as_float_array(seq, "seq")
    if x.ndim != 3:
        raise FrameCountMismatch(f"expected (N, T, D) sequence, got shape {x.shape}")
    return x - x[HIP : HIP + 1]


def limb_scale(seq, global_scale, local_scales, topology: JointTopology = DEFAULT_TOPOLOGY) -> np.ndarray:
    """Rescale bone vectors along the kinematic tree.

    Each bone from parent to child is multiplied by
    ``global_scale * local_scales[limb(child)]``; the hip stays put.
    ``local_scales`` is a mapping from limb name to factor or an array in
    ``topology.limb_names`` order.

    Works for both 2D and 3D sequences of shape (N, T, d).
    """
    x = as_float_array(seq, "seq")
    if x.ndim != 3 or x.shape[0] != topology.n_joints:
        raise InvalidScale(f"seq must have shape (N, T, d) with N={topology.n_joints}")
    g = float(global_scale)
    if isinstance(local_scales, dict):
        locals_arr = np.array([float(local_scales[name]) for name in topology.limb_names])
    else:
        locals_arr = np.asarray(local_scales, dtype=np.float64)
    if locals_arr.shape != (len(topology.limbs),):
        raise InvalidScale(
            f"expected {len(topology.limbs)} local factors, got shape {locals_arr.shape}"
        )
    if g <= 0 or np.any(locals_arr <= 0):
        raise InvalidScale("scale factors must be strictly positive")
    # exact identity short-circuit keeps factor-1 scaling bit-stable
    if g == 1.0 and np.all(locals_arr == 1.0):
        return x.copy()
    limb_of = topology.limb_of_joint()
    out = np.empty_like(x)
    out[HIP] = x[HIP]
    for child, parent in topology.bones():
        factor = g * locals_arr[limb_of[child]]
        out[child] = out[parent] + factor * (x[child] - x[parent])
    return out


def character_height(seq, topology: JointTopology = DEFAULT_TOPOLOGY) -> float:
    """Character height: head + body segment plus the two legs averaged.

    The legs run from the side-hip joints through knee to ankle. The value
    is the mean over frames; rigid motion leaves it unchanged.
    """
    x = as_float_array(seq, "seq")
    if x.ndim != 3 or x.shape[0] != topology.n_joints:
        raise DegenerateSkeleton(f"seq must have shape (N, T, d), got {x.shape}")

    def seg(a, b):
        return np.linalg.norm(x[a] - x[b], axis=-1)

    h = seg(*topology.head_bone) + seg(*topology.body_bone)
    legs = 0.0
    for chain in topology.leg_chains:
        legs = legs + sum(seg(a, b) for a, b in chain)
    h = h + legs / len(topology.leg_chains)
    value = float(np.mean(h))
    if value <= 1e-6:
        raise DegenerateSkeleton(f"character height {value} is not measurable")
    return value


def view_rotation(azimuth: float, elevation: float) -> np.ndarray:
    """Camera-style rotation: yaw about +y then pitch about +x."""
    ca, sa = np.cos(azimuth), np.sin(azimuth)
    ce, se = np.cos(elevation), np.sin(elevation)
    yaw = np.array([[ca, 0.0, sa], [0.0, 1.0, 0.0], [-sa, 0.0, ca]])
    pitch = np.array([[1.0, 0.0, 0.0], [0.0, ce, -se], [0.0, se, ce]])
    return yaw @ pitch


ANCHOR_SPACING = 16  # frames between rotation-track control points


def anchor_positions(t: int, spacing: int = ANCHOR_SPACING) -> np.ndarray:
    """Control-point frame indices: every ``spacing`` frames plus the endpoint."""
    pos = list(range(0, t, spacing))
    if pos[-1] != t - 1:
        pos.append(t - 1)
    return np.asarray(pos)


def interpolate_rotation_track(anchors6d, t: int, spacing: int = ANCHOR_SPACING) -> np.ndarray:
    """Linearly interpolate 6D anchor vectors over time, then orthonormalise.

    ``anchors6d`` has one row per anchor position from ``anchor_positions``.
    Returns (t, 3, 3) rotation matrices.
    """
    pos = anchor_positions(t, spacing)
    a = as_float_array(anchors6d, "anchors6d")
    if a.shape != (len(pos), 6):
        raise FrameCountMismatch(
            f"expected {len(pos)} anchors of dim 6 for T={t}, got shape {a.shape}"
        )
    if len(pos) == 1:
        raw = np.repeat(a, t, axis=0)
    else:
        raw = np.empty((t, 6))
        for i in range(6):
            raw[:, i] = np.interp(np.arange(t), pos, a[:, i])
    return rot6d_to_matrices(raw)


def random_smooth_rotations(t: int, count: int, rng: np.random.Generator) -> np.ndarray:
    """Sample temporally smooth random rotation tracks, shape (count, t, 3, 3).

    Anchor orientations are yaw/pitch cameras; the first anchor's azimuth is
    uniform over the full circle and subsequent anchors take bounded random
    steps so consecutive frames stay within a small geodesic angle after 6D
    interpolation.
    """
    if t < 2:
        raise FrameCountMismatch("need at least 2 frames for a rotation track")
    if count < 1:
        raise FrameCountMismatch("count must be >= 1")
    n_anchor = len(anchor_positions(t))
    tracks = np.empty((count, t, 3, 3))
    for k in range(count):
        az = rng.uniform(-np.pi, np.pi)
        el = rng.uniform(-np.pi / 6, np.pi / 6)
        anchors = np.empty((n_anchor, 6))
        for i in range(n_anchor):
            if i > 0:
                az = az + rng.uniform(-1.0, 1.0)
                el = np.clip(el + rng.uniform(-0.4, 0.4), -np.pi / 6, np.pi / 6)
            anchors[i] = matrices_to_rot6d(view_rotation(az, el))
        tracks[k] = interpolate_rotation_track(anchors, t)
    return tracks
