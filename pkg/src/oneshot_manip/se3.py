"""Rigid-body pose algebra and the weighted least-squares alignment solver.

Poses are immutable (rotation matrix + translation) values; all operations
are pure functions, safe to call concurrently.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray

Array = NDArray[np.float64]

ORTHONORMALITY_TOL = 1e-9


class DegenerateInput(ValueError):
    """Point sets too small or too flat to determine a rigid transform."""


class AllZeroWeights(ValueError):
    """Every correspondence weight is zero."""


@dataclass(frozen=True)
class Pose:
    """Rigid transform in SE(3): p_out = rotation @ p_in + translation.

    Attributes:
        rotation: (3, 3) proper orthonormal matrix.
        translation: (3,) vector in meters.
    """

    rotation: Array
    translation: Array

    def __post_init__(self) -> None:
        rotation = np.asarray(self.rotation, dtype=np.float64)
        translation = np.asarray(self.translation, dtype=np.float64)
        if rotation.shape != (3, 3):
            raise ValueError(f"rotation must be 3x3, got {rotation.shape}")
        if translation.shape != (3,):
            raise ValueError(f"translation must be a 3-vector, got {translation.shape}")
        err = np.linalg.norm(rotation.T @ rotation - np.eye(3))
        if err >= ORTHONORMALITY_TOL:
            raise ValueError(f"rotation is not orthonormal (|R^T R - I|_F = {err:.3e})")
        det = float(np.linalg.det(rotation))
        if abs(det - 1.0) >= ORTHONORMALITY_TOL:
            raise ValueError(f"rotation must be proper (det 1), got det = {det:.12f}")
        rotation.flags.writeable = False
        translation.flags.writeable = False
        object.__setattr__(self, "rotation", rotation)
        object.__setattr__(self, "translation", translation)

    @classmethod
    def identity(cls) -> "Pose":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, matrix: Array) -> "Pose":
        """Build from a 4x4 homogeneous matrix with exact (0,0,0,1) last row."""
        matrix = np.asarray(matrix, dtype=np.float64)
        if matrix.shape != (4, 4):
            raise ValueError(f"expected 4x4 matrix, got {matrix.shape}")
        if not np.allclose(matrix[3], (0.0, 0.0, 0.0, 1.0), atol=1e-9):
            raise ValueError("last row must be (0, 0, 0, 1)")
        return cls(matrix[:3, :3].copy(), matrix[:3, 3].copy())

    @classmethod
    def from_axis_angle(cls, axis, angle: float, translation=(0.0, 0.0, 0.0)) -> "Pose":
        axis = np.asarray(axis, dtype=np.float64)
        norm = np.linalg.norm(axis)
        if norm < 1e-12:
            raise ValueError("rotation axis must be nonzero")
        x, y, z = axis / norm
        k = np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])
        rotation = np.eye(3) + math.sin(angle) * k + (1.0 - math.cos(angle)) * (k @ k)
        return cls(rotation, np.asarray(translation, dtype=np.float64))

    @classmethod
    def rot_z(cls, angle: float, translation=(0.0, 0.0, 0.0)) -> "Pose":
        return cls.from_axis_angle((0.0, 0.0, 1.0), angle, translation)

    @classmethod
    def from_translation(cls, translation) -> "Pose":
        return cls(np.eye(3), np.asarray(translation, dtype=np.float64))

    @property
    def matrix(self) -> Array:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def compose(self, other: "Pose") -> "Pose":
        """Apply `other` first, then this pose: (self * other)(p) = self(other(p))."""
        return Pose(self.rotation @ other.rotation,
                    self.rotation @ other.translation + self.translation)

    def inverse(self) -> "Pose":
        rt = self.rotation.T.copy()
        return Pose(rt, -(rt @ self.translation))

    def apply(self, points: Array) -> Array:
        """Transform one (3,) point or an (N, 3) array of points."""
        points = np.asarray(points, dtype=np.float64)
        if points.ndim == 1:
            return self.rotation @ points + self.translation
        return points @ self.rotation.T + self.translation

    def almost_equal(self, other: "Pose", tol: float = 1e-9) -> bool:
        return (np.abs(self.rotation - other.rotation).max() < tol
                and np.abs(self.translation - other.translation).max() < tol)


def compose(a: Pose, b: Pose) -> Pose:
    """Composition a * b: apply b, then a."""
    return a.compose(b)


def inverse(p: Pose) -> Pose:
    return p.inverse()


def geodesic_angle(ra: Array, rb: Array) -> float:
    """Angle of the relative rotation between two rotation matrices, in radians."""
    cos = (np.trace(ra.T @ rb) - 1.0) / 2.0
    return math.acos(min(1.0, max(-1.0, cos)))


def quat_from_rotation(rotation: Array) -> Array:
    """Unit quaternion (w, x, y, z) for a rotation matrix; w >= 0."""
    m = rotation
    t = np.trace(m)
    if t > 0.0:
        s = math.sqrt(t + 1.0) * 2.0
        q = np.array([0.25 * s, (m[2, 1] - m[1, 2]) / s,
                      (m[0, 2] - m[2, 0]) / s, (m[1, 0] - m[0, 1]) / s])
    elif m[0, 0] > m[1, 1] and m[0, 0] > m[2, 2]:
        s = math.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2]) * 2.0
        q = np.array([(m[2, 1] - m[1, 2]) / s, 0.25 * s,
                      (m[0, 1] + m[1, 0]) / s, (m[0, 2] + m[2, 0]) / s])
    elif m[1, 1] > m[2, 2]:
        s = math.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2]) * 2.0
        q = np.array([(m[0, 2] - m[2, 0]) / s, (m[0, 1] + m[1, 0]) / s,
                      0.25 * s, (m[1, 2] + m[2, 1]) / s])
    else:
        s = math.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1]) * 2.0
        q = np.array([(m[1, 0] - m[0, 1]) / s, (m[0, 2] + m[2, 0]) / s,
                      (m[1, 2] + m[2, 1]) / s, 0.25 * s])
    q = q / np.linalg.norm(q)
    if q[0] < 0.0:
        q = -q
    return q


def rotation_from_quat(q: Array) -> Array:
    w, x, y, z = np.asarray(q, dtype=np.float64) / np.linalg.norm(q)
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def slerp_quat(qa: Array, qb: Array, t: float) -> Array:
    """Spherical interpolation between unit quaternions along the shorter arc."""
    qa = np.asarray(qa, dtype=np.float64)
    qb = np.asarray(qb, dtype=np.float64)
    dot = float(qa @ qb)
    if dot < 0.0:
        qb = -qb
        dot = -dot
    if dot > 1.0 - 1e-12:
        out = qa + t * (qb - qa)
        return out / np.linalg.norm(out)
    theta = math.acos(min(1.0, dot))
    sin_theta = math.sin(theta)
    out = (math.sin((1.0 - t) * theta) * qa + math.sin(t * theta) * qb) / sin_theta
    return out / np.linalg.norm(out)


def interpolate_pose(a: Pose, b: Pose, t: float) -> Pose:
    """Linear translation + slerp rotation interpolation, t in [0, 1]."""
    qa = quat_from_rotation(a.rotation)
    qb = quat_from_rotation(b.rotation)
    rotation = rotation_from_quat(slerp_quat(qa, qb, t))
    translation = (1.0 - t) * a.translation + t * b.translation
    return Pose(rotation, translation)


@dataclass(frozen=True)
class Action:
    """End-effector command: target pose plus gripper and collision flags."""

    pose: Pose
    gripper_open: bool
    allow_collision: bool

    def to_vector(self) -> Array:
        """18 scalars: 16 row-major homogeneous pose entries, then the two flags."""
        return np.concatenate([
            self.pose.matrix.reshape(16),
            [1.0 if self.gripper_open else 0.0, 1.0 if self.allow_collision else 0.0],
        ])

    @classmethod
    def from_vector(cls, vec) -> "Action":
        vec = np.asarray(vec, dtype=np.float64)
        if vec.shape != (18,):
            raise ValueError(f"action vector must have 18 entries, got {vec.shape}")
        return cls(Pose.from_matrix(vec[:16].reshape(4, 4)),
                   gripper_open=bool(vec[16] >= 0.5),
                   allow_collision=bool(vec[17] >= 0.5))


@dataclass(frozen=True)
class WeightedPointSet:
    """Points with per-point nonnegative weights for least-squares alignment."""

    points: Array
    weights: Array

    def __post_init__(self) -> None:
        points = np.asarray(self.points, dtype=np.float64)
        weights = np.asarray(self.weights, dtype=np.float64)
        if points.ndim != 2 or points.shape[1] != 3:
            raise ValueError(f"points must be (N, 3), got {points.shape}")
        if weights.shape != (points.shape[0],):
            raise ValueError("weights must be one scalar per point")
        if not np.all(np.isfinite(weights)):
            raise ValueError("weights must be finite")
        if np.any(weights < 0.0):
            raise ValueError("weights must be nonnegative")
        object.__setattr__(self, "points", points)
        object.__setattr__(self, "weights", weights)

    def __len__(self) -> int:
        return self.points.shape[0]

    @classmethod
    def uniform(cls, points) -> "WeightedPointSet":
        points = np.asarray(points, dtype=np.float64)
        return cls(points, np.ones(points.shape[0]))


def _sym3_eigvals(a: Array) -> tuple[float, float, float]:
    """Eigenvalues of a symmetric 3x3 matrix, descending, by the trig formula."""
    q = (a[0, 0] + a[1, 1] + a[2, 2]) / 3.0
    b = a - q * np.eye(3)
    p2 = float((b * b).sum())
    if p2 <= 0.0:
        return q, q, q
    p = math.sqrt(p2 / 6.0)
    c = b / p
    det = (c[0, 0] * (c[1, 1] * c[2, 2] - c[1, 2] * c[2, 1])
           - c[0, 1] * (c[1, 0] * c[2, 2] - c[1, 2] * c[2, 0])
           + c[0, 2] * (c[1, 0] * c[2, 1] - c[1, 1] * c[2, 0]))
    r = min(1.0, max(-1.0, det / 2.0))
    phi = math.acos(r) / 3.0
    hi = q + 2.0 * p * math.cos(phi)
    lo = q + 2.0 * p * math.cos(phi + 2.0 * math.pi / 3.0)
    return hi, 3.0 * q - hi - lo, lo


def _jacobi_svd3(a: Array) -> tuple[Array, Array, Array]:
    """SVD of a 3x3 matrix via one-sided Jacobi rotations.

    Returns (u, s, v) with a = u @ diag(s) @ v.T, s sorted descending, and
    u, v orthogonal (columns completed for rank-deficient input).
    """
    b = np.asarray(a, dtype=np.float64).copy()
    v = np.eye(3)
    for _ in range(60):
        converged = True
        for p in range(2):
            for q in range(p + 1, 3):
                alpha = float(b[:, p] @ b[:, p])
                beta = float(b[:, q] @ b[:, q])
                gamma = float(b[:, p] @ b[:, q])
                if abs(gamma) <= 1e-30 or abs(gamma) <= 1e-16 * math.sqrt(alpha * beta):
                    continue
                converged = False
                zeta = (beta - alpha) / (2.0 * gamma)
                t = math.copysign(1.0, zeta) / (abs(zeta) + math.sqrt(1.0 + zeta * zeta))
                c = 1.0 / math.sqrt(1.0 + t * t)
                s = c * t
                bp = c * b[:, p] - s * b[:, q]
                bq = s * b[:, p] + c * b[:, q]
                b[:, p], b[:, q] = bp, bq
                vp = c * v[:, p] - s * v[:, q]
                vq = s * v[:, p] + c * v[:, q]
                v[:, p], v[:, q] = vp, vq
        if converged:
            break

    sigma = np.linalg.norm(b, axis=0)
    order = np.argsort(-sigma, kind="stable")
    sigma = sigma[order]
    b = b[:, order]
    v = v[:, order]

    u = np.zeros((3, 3))
    # Columns with singular value this far below the largest are numerical
    # noise; rebuild them so u stays orthogonal for rank-deficient input.
    cutoff = sigma[0] * 1e-12
    for j in range(3):
        if sigma[j] > cutoff:
            u[:, j] = b[:, j] / sigma[j]
        elif j == 2:
            u[:, 2] = np.cross(u[:, 0], u[:, 1])
        elif j == 1:
            # Rank <= 1: pick any direction orthogonal to the first column.
            pivot = np.zeros(3)
            pivot[int(np.argmin(np.abs(u[:, 0])))] = 1.0
            w = np.cross(u[:, 0], pivot)
            norm = np.linalg.norm(w)
            u[:, 1] = w / norm if norm > 0.0 else pivot
        else:
            u = np.eye(3)
            break
    return u, sigma, v


def solve_weighted_procrustes(src: WeightedPointSet, dst: WeightedPointSet) -> Pose:
    """Best proper rigid transform T minimizing sum_i w_i |T(src_i) - dst_i|^2.

    The per-pair weight is src.weights[i] * dst.weights[i]. Solved by weighted
    centroids plus a 3x3 SVD of the cross-covariance; the smallest singular
    direction is flipped when needed so the rotation is never a reflection.

    Raises:
        DegenerateInput: fewer than 3 pairs, or either weighted point set is
            collinear (weighted covariance rank < 2).
        AllZeroWeights: every pair weight is zero.
    """
    if len(src) != len(dst):
        raise DegenerateInput(
            f"point sets must have equal length, got {len(src)} and {len(dst)}")
    n = len(src)
    if n < 3:
        raise DegenerateInput(f"need at least 3 point pairs, got {n}")
    w = src.weights * dst.weights
    total = float(w.sum())
    if total <= 0.0:
        raise AllZeroWeights("all correspondence weights are zero")

    wn = w / total
    src_centroid = wn @ src.points
    dst_centroid = wn @ dst.points
    src_c = src.points - src_centroid
    dst_c = dst.points - dst_centroid

    for name, centered in (("src", src_c), ("dst", dst_c)):
        cov = (centered * wn[:, None]).T @ centered
        largest, middle, _ = _sym3_eigvals(cov)
        if middle <= 1e-12 * max(largest, 1e-30):
            raise DegenerateInput(f"weighted {name} points are collinear")

    cross_cov = (dst_c * wn[:, None]).T @ src_c
    u, _, v = _jacobi_svd3(cross_cov)
    sign = math.copysign(1.0, np.linalg.det(u) * np.linalg.det(v))
    rotation = (u * np.array([1.0, 1.0, sign])) @ v.T
    translation = dst_centroid - rotation @ src_centroid
    return Pose(rotation, translation)


def alignment_residual(pose: Pose, src: WeightedPointSet, dst: WeightedPointSet) -> float:
    """Weighted squared residual of a candidate transform, for diagnostics."""
    w = src.weights * dst.weights
    diff = pose.apply(src.points) - dst.points
    return float((w * (diff * diff).sum(axis=1)).sum())
