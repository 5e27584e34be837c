"""Planar pose algebra, BEV grid indexing, and pinhole camera projection.

Coordinate conventions used throughout the package:

- Ego/BEV frame: x forward, y left, z up (meters). The BEV grid tiles a
  square region of the xy plane; columns index x, rows index y, and the
  flat index of cell (row, col) is ``row * cols + col``.
- Camera frame: x right, y down, z forward along the optical axis.
- Image frame: u right, v down, origin at the top-left corner (pixels).

A ``PlanarPose`` maps point coordinates expressed in its source frame into
its target frame.  Pure forward ego motion of d meters therefore gives a
previous-to-current relative pose with translation (-d, 0): a point that
was d meters ahead is now at the origin.

Grid cells are half-open, ``[lo, hi)`` per axis, so a point exactly on the
upper extent boundary belongs to no cell and ties never yield two indices.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

# Minimum forward depth for a point to be considered in front of a camera.
MIN_CAMERA_DEPTH = 1e-4


@dataclass(frozen=True)
class BEVGrid:
    """Square-celled BEV grid over ``[x_min, x_max) x [y_min, y_max)``."""

    rows: int
    cols: int
    x_min: float
    x_max: float
    y_min: float
    y_max: float

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1:
            raise ValueError("grid must have at least one row and column")
        cell_x = (self.x_max - self.x_min) / self.cols
        cell_y = (self.y_max - self.y_min) / self.rows
        if cell_x <= 0 or cell_y <= 0:
            raise ValueError("grid extent must be non-degenerate")
        if abs(cell_x - cell_y) > 1e-9 * max(abs(cell_x), abs(cell_y)):
            raise ValueError(f"cells must be square, got {cell_x} x {cell_y}")

    @property
    def cell_size(self) -> float:
        return (self.x_max - self.x_min) / self.cols

    @property
    def num_cells(self) -> int:
        return self.rows * self.cols

    def same_shape(self, other: "BEVGrid") -> bool:
        return (
            self.rows == other.rows
            and self.cols == other.cols
            and abs(self.x_min - other.x_min) < 1e-12
            and abs(self.x_max - other.x_max) < 1e-12
            and abs(self.y_min - other.y_min) < 1e-12
            and abs(self.y_max - other.y_max) < 1e-12
        )

    def cell_centers(self) -> np.ndarray:
        """(rows*cols, 2) array of cell-center xy coordinates, flat order."""
        cs = self.cell_size
        xs = self.x_min + (np.arange(self.cols) + 0.5) * cs
        ys = self.y_min + (np.arange(self.rows) + 0.5) * cs
        gx, gy = np.meshgrid(xs, ys)  # rows x cols
        return np.stack([gx.ravel(), gy.ravel()], axis=1)


def square_grid(n: int, half_extent: float) -> BEVGrid:
    """n x n grid centered on the origin with the given half extent."""
    return BEVGrid(n, n, -half_extent, half_extent, -half_extent, half_extent)


def coord_to_index(grid: BEVGrid, p) -> int | None:
    """Flat index of the cell containing xy point ``p``, or None if outside.

    Cells are half-open, so a point exactly on x_max/y_max is outside.
    """
    x, y = float(p[0]), float(p[1])
    if not (grid.x_min <= x < grid.x_max and grid.y_min <= y < grid.y_max):
        return None
    cs = grid.cell_size
    col = int(math.floor((x - grid.x_min) / cs))
    row = int(math.floor((y - grid.y_min) / cs))
    # floating-point safety at the very top edge
    col = min(col, grid.cols - 1)
    row = min(row, grid.rows - 1)
    return row * grid.cols + col


def coords_to_indices(grid: BEVGrid, pts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized ``coord_to_index``.

    Returns (indices, inside_mask); indices are valid only where the mask
    is True.
    """
    pts = np.asarray(pts, dtype=float)
    cs = grid.cell_size
    cols = np.floor((pts[:, 0] - grid.x_min) / cs).astype(np.int64)
    rows = np.floor((pts[:, 1] - grid.y_min) / cs).astype(np.int64)
    inside = (
        (pts[:, 0] >= grid.x_min)
        & (pts[:, 0] < grid.x_max)
        & (pts[:, 1] >= grid.y_min)
        & (pts[:, 1] < grid.y_max)
    )
    np.clip(cols, 0, grid.cols - 1, out=cols)
    np.clip(rows, 0, grid.rows - 1, out=rows)
    return rows * grid.cols + cols, inside


def index_to_coord(grid: BEVGrid, k: int) -> tuple[float, float]:
    """Geometric center of cell ``k``; raises on an out-of-range index."""
    if not 0 <= k < grid.num_cells:
        raise IndexError(f"flat index {k} outside grid with {grid.num_cells} cells")
    row, col = divmod(int(k), grid.cols)
    cs = grid.cell_size
    return (grid.x_min + (col + 0.5) * cs, grid.y_min + (row + 0.5) * cs)


@dataclass(frozen=True)
class PlanarPose:
    """Rigid planar transform: yaw rotation followed by xy translation.

    Applying the pose maps coordinates expressed in the source frame into
    the target frame: ``p' = R(yaw) @ p + t``.
    """

    yaw: float = 0.0
    tx: float = 0.0
    ty: float = 0.0

    @staticmethod
    def identity() -> "PlanarPose":
        return PlanarPose(0.0, 0.0, 0.0)

    def rotation(self) -> np.ndarray:
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        return np.array([[c, -s], [s, c]])

    def inverse(self) -> "PlanarPose":
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        # R(-yaw) @ -t
        return PlanarPose(
            wrap_angle(-self.yaw),
            -(c * self.tx + s * self.ty),
            -(-s * self.tx + c * self.ty),
        )

    def compose(self, first: "PlanarPose") -> "PlanarPose":
        """Pose equivalent to applying ``first`` and then ``self``."""
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        return PlanarPose(
            wrap_angle(self.yaw + first.yaw),
            c * first.tx - s * first.ty + self.tx,
            s * first.tx + c * first.ty + self.ty,
        )

    def is_identity(self, tol: float = 0.0) -> bool:
        return (
            abs(self.yaw) <= tol and abs(self.tx) <= tol and abs(self.ty) <= tol
        )


def wrap_angle(a: float) -> float:
    """Wrap an angle to (-pi, pi]."""
    a = math.fmod(a, 2.0 * math.pi)
    if a > math.pi:
        a -= 2.0 * math.pi
    elif a <= -math.pi:
        a += 2.0 * math.pi
    return a


def apply_planar(pose: PlanarPose, p) -> tuple[float, float]:
    """Apply ``pose`` to a single xy point: ``R(yaw) @ p + t``."""
    x, y = float(p[0]), float(p[1])
    c, s = math.cos(pose.yaw), math.sin(pose.yaw)
    return (c * x - s * y + pose.tx, s * x + c * y + pose.ty)


def apply_planar_many(pose: PlanarPose, pts: np.ndarray) -> np.ndarray:
    """Apply ``pose`` to an (N, 2) array of points."""
    pts = np.asarray(pts, dtype=float)
    return pts @ pose.rotation().T + np.array([pose.tx, pose.ty])


@dataclass(frozen=True)
class HeightRange:
    """Closed vertical interval [z_min, z_max] in meters."""

    z_min: float
    z_max: float

    def __post_init__(self):
        if not self.z_min < self.z_max:
            raise ValueError(f"need z_min < z_max, got [{self.z_min}, {self.z_max}]")

    @property
    def span(self) -> float:
        return self.z_max - self.z_min

    def shifted(self, dz: float) -> "HeightRange":
        return HeightRange(self.z_min + dz, self.z_max + dz)


@dataclass(frozen=True)
class CameraModel:
    """Pinhole camera rigidly mounted on the ego vehicle.

    ``rotation``/``translation`` give the ego-to-camera transform:
    ``p_cam = rotation @ p_ego + translation``.  The camera frame is
    x right, y down, z forward.
    """

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        r = np.asarray(self.rotation, dtype=float).reshape(3, 3)
        t = np.asarray(self.translation, dtype=float).reshape(3)
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)
        if not np.allclose(r @ r.T, np.eye(3), atol=1e-6):
            raise ValueError("camera rotation is not orthonormal")
        if not math.isclose(float(np.linalg.det(r)), 1.0, abs_tol=1e-6):
            raise ValueError("camera rotation has determinant != +1")

    def ego_to_camera(self, pts: np.ndarray) -> np.ndarray:
        """Transform (N, 3) ego-frame points into the camera frame."""
        pts = np.asarray(pts, dtype=float)
        return pts @ self.rotation.T + self.translation


def project_to_camera(cam: CameraModel, p3d) -> tuple[tuple[float, float], float] | None:
    """Project an ego-frame 3D point; None when invisible.

    Returns ((u, v), depth) with u, v in pixels when the point lies in
    front of the camera (depth > MIN_CAMERA_DEPTH) and inside the image
    bounds ``[0, width) x [0, height)``.
    """
    p = np.asarray(p3d, dtype=float).reshape(3)
    x, y, z = cam.ego_to_camera(p[None, :])[0]
    if z <= MIN_CAMERA_DEPTH:
        return None
    u = cam.cx + cam.fx * x / z
    v = cam.cy + cam.fy * y / z
    if not (0.0 <= u < cam.width and 0.0 <= v < cam.height):
        return None
    return ((float(u), float(v)), float(z))


def project_to_camera_many(
    cam: CameraModel, pts: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Vectorized projection of (N, 3) ego-frame points.

    Returns (uv, depth, visible).  uv rows for invisible points are set to
    zero so downstream consumers never see non-finite values.
    """
    pc = cam.ego_to_camera(pts)
    z = pc[:, 2]
    in_front = z > MIN_CAMERA_DEPTH
    safe_z = np.where(in_front, z, 1.0)
    u = cam.cx + cam.fx * pc[:, 0] / safe_z
    v = cam.cy + cam.fy * pc[:, 1] / safe_z
    visible = in_front & (u >= 0) & (u < cam.width) & (v >= 0) & (v < cam.height)
    uv = np.stack([np.where(visible, u, 0.0), np.where(visible, v, 0.0)], axis=1)
    return uv, np.where(visible, z, 0.0), visible


def camera_facing(
    bearing: float,
    fx: float,
    fy: float,
    cx: float,
    cy: float,
    width: int,
    height: int,
    mount_xyz=(0.0, 0.0, 0.0),
) -> CameraModel:
    """Camera whose optical axis points along ego bearing (radians, CCW from +x).

    The camera is mounted at ``mount_xyz`` in the ego frame with a level
    horizon: camera x right, y down, z along the bearing.
    """
    cb, sb = math.cos(bearing), math.sin(bearing)
    forward = np.array([cb, sb, 0.0])
    right = np.array([sb, -cb, 0.0])  # ego y is left, image x is right
    down = np.array([0.0, 0.0, -1.0])
    # rows of R are the camera axes expressed in ego coordinates
    r = np.stack([right, down, forward])
    t = -r @ np.asarray(mount_xyz, dtype=float)
    return CameraModel(fx, fy, cx, cy, width, height, rotation=r, translation=t)


def ring_rig(
    n_cams: int = 6,
    fx: float = 140.0,
    fy: float = 140.0,
    width: int = 320,
    height: int = 192,
    mount_height: float = 1.6,
) -> list[CameraModel]:
    """Evenly spaced ring of identical cameras looking outward."""
    cams = []
    for k in range(n_cams):
        bearing = 2.0 * math.pi * k / n_cams
        cams.append(
            camera_facing(
                bearing,
                fx,
                fy,
                width / 2.0,
                height / 2.0,
                width,
                height,
                mount_xyz=(0.0, 0.0, mount_height),
            )
        )
    return cams
