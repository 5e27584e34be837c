"""Pillar reference points over height ranges and their camera projections.

Each BEV cell owns a vertical pillar of 3D points sharing the cell-center
xy.  Heights follow a cell-center schedule, z_k = z_min + (k + 0.5) * span
/ n, keeping samples strictly inside the range and symmetric about its
midpoint.  Points are projected into every camera; visible hits are
normalized by image size into [0, 1)^2 for use as attention reference
locations.

The object-dense local range can be shifted per scene by a learned scalar
offset, bounded by DELTA_H_MAX through a tanh squash.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .geometry import BEVGrid, CameraModel, HeightRange, project_to_camera_many

# Height ranges for reference-point pillars (meters); the detection volume
# spans the global range, most movers sit inside the local band.
GLOBAL_HEIGHT_RANGE = HeightRange(-5.0, 3.0)
LOCAL_HEIGHT_RANGE = HeightRange(-2.0, 2.0)
# Bound on the learned per-scene shift of the local band.
DELTA_H_MAX = 1.0
# Pillar points per height range.
DEFAULT_PILLAR_POINTS = 4


def pillar_heights(height_range: HeightRange, n: int) -> np.ndarray:
    """Cell-center height schedule: n heights strictly inside the range."""
    if n < 1:
        raise ValueError("need at least one pillar point")
    step = height_range.span / n
    return height_range.z_min + (np.arange(n) + 0.5) * step


@dataclass(frozen=True)
class AdaptiveHeightState:
    """Local height band plus its learned shift."""

    base: HeightRange
    offset: float

    def __post_init__(self):
        if abs(self.offset) > DELTA_H_MAX + 1e-12:
            raise ValueError(f"|offset| {self.offset} exceeds {DELTA_H_MAX}")

    @property
    def shifted(self) -> HeightRange:
        return self.base.shifted(self.offset)


@dataclass
class ReferencePointSet:
    """Projected pillar points for every cell of a grid.

    uv: (num_cells, n_cams, n_heights, 2) normalized image coordinates,
        zeroed where invisible
    visible: (num_cells, n_cams, n_heights) bool
    """

    grid: BEVGrid
    heights: np.ndarray
    uv: np.ndarray
    visible: np.ndarray

    @property
    def n_heights(self) -> int:
        return int(self.heights.size)

    @property
    def n_cams(self) -> int:
        return int(self.uv.shape[1])

    def hits_for_cell(self, k: int) -> list[tuple[int, tuple[float, float], bool]]:
        """Per (camera, height) entries for one cell, flattened."""
        out = []
        for c in range(self.n_cams):
            for h in range(self.n_heights):
                out.append((c, (float(self.uv[k, c, h, 0]), float(self.uv[k, c, h, 1])),
                            bool(self.visible[k, c, h])))
        return out


def build_reference_points(
    grid: BEVGrid,
    cams: list[CameraModel],
    height_range: HeightRange,
    n: int = DEFAULT_PILLAR_POINTS,
) -> ReferencePointSet:
    """Project every cell's pillar into every camera.

    A point invisible in all cameras keeps a zeroed coordinate and a False
    flag; it contributes nothing to attention.
    """
    if not cams:
        raise ValueError("need at least one camera")
    heights = pillar_heights(height_range, n)
    centers = grid.cell_centers()
    ncells = grid.num_cells
    pts = np.empty((ncells * n, 3))
    pts[:, 0] = np.repeat(centers[:, 0], n)
    pts[:, 1] = np.repeat(centers[:, 1], n)
    pts[:, 2] = np.tile(heights, ncells)
    uv = np.zeros((ncells, len(cams), n, 2))
    vis = np.zeros((ncells, len(cams), n), dtype=bool)
    for ci, cam in enumerate(cams):
        puv, _, pvis = project_to_camera_many(cam, pts)
        puv = puv / np.array([cam.width, cam.height])
        uv[:, ci] = puv.reshape(ncells, n, 2)
        vis[:, ci] = pvis.reshape(ncells, n)
    return ReferencePointSet(grid, heights, uv, vis)


def predict_height_offset(bev_values, weights: dict, prefix: str = "dh") -> Tensor:
    """Scalar local-band shift from a BEV feature map.

    Global-average-pools the (C, H, W) feature over cells, applies one
    affine map to a scalar and squashes with DELTA_H_MAX * tanh.  Accepts
    an autodiff tensor or a plain array; always returns a 0-d tensor so
    the offset stays differentiable end to end.
    """
    t = bev_values if isinstance(bev_values, Tensor) else Tensor(np.asarray(bev_values, dtype=float))
    c = t.shape[0]
    pooled = t.reshape(c, -1).mean(axis=1)  # (C,)
    s = pooled @ weights[f"{prefix}.w"] + weights[f"{prefix}.b"]
    return ad.tanh(s.reshape(())) * DELTA_H_MAX


def init_height_offset_weights(channels: int, rng: np.random.Generator, prefix: str = "dh") -> dict:
    return {
        f"{prefix}.w": ad.parameter((channels,), rng, scale=0.02),
        f"{prefix}.b": Tensor(np.zeros(()), requires_grad=True),
    }


class PillarProjector:
    """Differentiable pillar projection for one (grid, camera rig) pair.

    Precomputes, per cell and camera, the coefficients of the camera-frame
    point as an affine function of pillar height z:
    ``p_cam(z) = base + z * dz``.  Evaluating at a tensor-valued height
    keeps normalized image coordinates differentiable with respect to the
    learned height offset.  Visibility is decided numerically at the
    evaluated heights and treated as constant (no gradient through the
    in-or-out decision).
    """

    def __init__(self, grid: BEVGrid, cams: list[CameraModel]):
        if not cams:
            raise ValueError("need at least one camera")
        self.grid = grid
        self.cams = cams
        centers = grid.cell_centers()
        ncells = grid.num_cells
        base = np.empty((len(cams), ncells, 3))
        dz = np.empty((len(cams), 3))
        for ci, cam in enumerate(cams):
            xy0 = np.concatenate([centers, np.zeros((ncells, 1))], axis=1)
            base[ci] = cam.ego_to_camera(xy0)
            dz[ci] = cam.rotation[:, 2]
        self.base = base  # (n_cams, n_cells, 3)
        self.dz = dz  # (n_cams, 3)
        self.img_size = np.array([[c.width, c.height] for c in cams], dtype=float)
        self.intrinsics = np.array([[c.fx, c.fy, c.cx, c.cy] for c in cams], dtype=float)

    def project(self, z_heights: Tensor) -> tuple[Tensor, np.ndarray]:
        """Normalized uv for each (cell, cam, height) plus visibility.

        z_heights: (n,) tensor of pillar heights shared by all cells.
        Returns (uv tensor shaped (n_cells, n_cams, n, 2), bool mask of the
        same leading shape).  Invisible entries are masked to zero.
        """
        from .geometry import MIN_CAMERA_DEPTH

        ncams, ncells, _ = self.base.shape
        n = z_heights.shape[0]
        z = z_heights.reshape(1, 1, n, 1)  # broadcast over cams/cells
        base = self.base[:, :, None, :]  # (cams, cells, 1, 3)
        dz = self.dz[:, None, None, :]  # (cams, 1, 1, 3)
        p = ad.add(Tensor(base), ad.mul(z, Tensor(dz)))  # (cams, cells, n, 3)

        # numeric visibility at the current heights
        zval = z_heights.data.reshape(1, 1, n, 1)
        p_num = base + zval * dz
        depth = p_num[..., 2]
        in_front = depth > MIN_CAMERA_DEPTH
        fx = self.intrinsics[:, 0][:, None, None]
        fy = self.intrinsics[:, 1][:, None, None]
        cx = self.intrinsics[:, 2][:, None, None]
        cy = self.intrinsics[:, 3][:, None, None]
        safe_depth = np.where(in_front, depth, 1.0)
        u_num = cx + fx * p_num[..., 0] / safe_depth
        v_num = cy + fy * p_num[..., 1] / safe_depth
        w = self.img_size[:, 0][:, None, None]
        h = self.img_size[:, 1][:, None, None]
        vis = in_front & (u_num >= 0) & (u_num < w) & (v_num >= 0) & (v_num < h)

        # differentiable uv; invisible slots multiplied to zero
        px = p.reshape(ncams * ncells * n, 3) @ Tensor(np.array([1.0, 0.0, 0.0]))
        py = p.reshape(ncams * ncells * n, 3) @ Tensor(np.array([0.0, 1.0, 0.0]))
        pz = p.reshape(ncams * ncells * n, 3) @ Tensor(np.array([0.0, 0.0, 1.0]))
        mask_flat = vis.reshape(-1).astype(float)
        # guard the division on masked entries
        pz_safe = ad.add(ad.mul(pz, mask_flat), 1.0 - mask_flat)
        fx_f = np.repeat(fx.reshape(ncams), ncells * n)
        fy_f = np.repeat(fy.reshape(ncams), ncells * n)
        cx_f = np.repeat(cx.reshape(ncams), ncells * n)
        cy_f = np.repeat(cy.reshape(ncams), ncells * n)
        w_f = np.repeat(self.img_size[:, 0], ncells * n)
        h_f = np.repeat(self.img_size[:, 1], ncells * n)
        u = ad.mul(ad.add(ad.mul(ad.mul(px, ad.power(pz_safe, -1.0)), fx_f), cx_f), 1.0 / w_f)
        v = ad.mul(ad.add(ad.mul(ad.mul(py, ad.power(pz_safe, -1.0)), fy_f), cy_f), 1.0 / h_f)
        u = ad.mul(u, mask_flat)
        v = ad.mul(v, mask_flat)
        uv = ad.concat([u.reshape(-1, 1), v.reshape(-1, 1)], axis=1)
        uv = uv.reshape(ncams, ncells, n, 2).transpose(1, 0, 2, 3)
        return uv, np.transpose(vis, (1, 0, 2))
