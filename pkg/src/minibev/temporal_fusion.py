"""Ego-motion and object-motion alignment of BEV features across frames.

Alignment works on flat cell indices: every cell center of the previous
grid is carried through the previous-to-current relative pose and, when it
lands inside the current extent, the previous cell's feature replaces the
aligned slot of the current grid (nearest-cell quantization, no
interpolation).  The aligned map is added to the current queries.  Moving
objects are then handled separately: each object's feature is copied from
its previous cell to the cell predicted by position + velocity * dt,
overriding the ego-aligned result there.

When several previous cells quantize to one target cell, the source whose
transformed center lies nearest the target cell center wins (ties break
toward the lower source index).  When several objects predict the same
target cell, the faster object wins (ties break toward the lower source
index).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import (
    BEVGrid,
    PlanarPose,
    apply_planar_many,
    coords_to_indices,
    index_to_coord,
)

# Largest number of object features teleported per frame; fastest first.
MAX_ALIGNED_OBJECTS = 30
# Sanity bound on object speeds fed into motion records.
DEFAULT_MAX_SPEED = 40.0


@dataclass
class BEVFeature:
    """Channel-major feature grid: values shaped (C, rows, cols).

    ``values`` is a float ndarray in plain geometry/fusion code; the
    network module passes autodiff tensors through the same container.
    """

    grid: BEVGrid
    values: object
    timestamp: float = 0.0

    def __post_init__(self):
        shape = self.values.shape
        if len(shape) != 3 or shape[1] != self.grid.rows or shape[2] != self.grid.cols:
            raise ValueError(
                f"values shaped {shape} do not match grid "
                f"{self.grid.rows}x{self.grid.cols}"
            )
        if isinstance(self.values, np.ndarray) and not np.all(np.isfinite(self.values)):
            raise ValueError("BEV feature contains non-finite values")

    @property
    def channels(self) -> int:
        return self.values.shape[0]

    @property
    def flat(self):
        """(C, rows*cols) view sharing storage with the grid view."""
        return self.values.reshape(self.channels, self.grid.num_cells)


@dataclass(frozen=True)
class AlignmentMapping:
    """Pairs (source index in the previous grid, target index in the
    current grid); target indices are distinct."""

    src: np.ndarray
    tgt: np.ndarray

    def __post_init__(self):
        if self.src.shape != self.tgt.shape:
            raise ValueError("source/target index arrays differ in length")
        if len(np.unique(self.tgt)) != self.tgt.size:
            raise ValueError("target indices must be distinct")

    @property
    def n_pairs(self) -> int:
        return int(self.src.size)

    @property
    def pairs(self) -> list[tuple[int, int]]:
        return list(zip(self.src.tolist(), self.tgt.tolist()))


@dataclass
class ObjectMotionRecord:
    """Moving-object state in the previous frame.

    positions: (N, 2) xy meters in the previous ego frame
    velocities: (N, 2) m/s in previous ego-frame axes
    src_indices: (N,) flat cell indices on the previous grid
    """

    positions: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))
    velocities: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))
    src_indices: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    max_speed: float = DEFAULT_MAX_SPEED

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=float).reshape(-1, 2)
        self.velocities = np.asarray(self.velocities, dtype=float).reshape(-1, 2)
        self.src_indices = np.asarray(self.src_indices, dtype=np.int64).reshape(-1)
        n = self.positions.shape[0]
        if self.velocities.shape[0] != n or self.src_indices.shape[0] != n:
            raise ValueError("positions, velocities and src_indices disagree on N")
        speeds = np.linalg.norm(self.velocities, axis=1)
        if n and speeds.max() > self.max_speed:
            raise ValueError(f"speed {speeds.max():.2f} exceeds cap {self.max_speed}")

    def __len__(self) -> int:
        return self.positions.shape[0]

    @property
    def speeds(self) -> np.ndarray:
        return np.linalg.norm(self.velocities, axis=1)

    def take(self, order: np.ndarray) -> "ObjectMotionRecord":
        return ObjectMotionRecord(
            self.positions[order],
            self.velocities[order],
            self.src_indices[order],
            self.max_speed,
        )


def empty_record() -> ObjectMotionRecord:
    return ObjectMotionRecord()


def ego_overlap_mapping(
    grid_prev: BEVGrid, grid_cur: BEVGrid, pose: PlanarPose
) -> AlignmentMapping:
    """Cells of the previous grid that land inside the current grid.

    Transforms every previous cell center by the previous-to-current pose
    and emits (source, containing-target-cell) pairs.  Duplicate targets
    keep the source whose transformed center is nearest the target cell
    center (ties: lower source index).
    """
    if not grid_prev.same_shape(grid_cur):
        raise ValueError("previous and current grids must match in shape and extent")
    centers = grid_prev.cell_centers()
    moved = apply_planar_many(pose, centers)
    tgt, inside = coords_to_indices(grid_cur, moved)
    src = np.arange(grid_prev.num_cells, dtype=np.int64)[inside]
    tgt = tgt[inside]
    moved = moved[inside]
    if src.size == 0:
        return AlignmentMapping(src, tgt)
    # resolve duplicate targets: nearest transformed center wins
    tgt_centers = grid_cur.cell_centers()[tgt]
    dist2 = np.sum((moved - tgt_centers) ** 2, axis=1)
    order = np.lexsort((src, dist2, tgt))  # by target, then distance, then index
    src, tgt = src[order], tgt[order]
    keep = np.ones(src.size, dtype=bool)
    keep[1:] = tgt[1:] != tgt[:-1]
    return AlignmentMapping(src[keep], tgt[keep])


def fuse_ego(prev: BEVFeature, cur: BEVFeature, pose: PlanarPose) -> BEVFeature:
    """Ego-aligned previous features added onto the current queries.

    Builds the aligned map A with A[:, tgt] = prev[:, src] and zeros in
    unmapped cells, then returns A + cur.
    """
    if prev.values.shape != cur.values.shape or not prev.grid.same_shape(cur.grid):
        raise ValueError("previous/current features must share shape and grid")
    mapping = ego_overlap_mapping(prev.grid, cur.grid, pose)
    aligned = np.zeros_like(cur.values)
    aligned.reshape(cur.channels, -1)[:, mapping.tgt] = prev.flat[:, mapping.src]
    return BEVFeature(cur.grid, aligned + cur.values, cur.timestamp)


def predict_object_targets(
    rec: ObjectMotionRecord,
    pose: PlanarPose,
    dt: float,
    grid: BEVGrid,
) -> list[tuple[int, int]]:
    """(source index, predicted current-frame target index) per object.

    Advances each object by velocity * dt in previous-frame coordinates,
    quantizes to a cell, then maps that cell's center through the pose
    into the current frame.  Objects leaving either grid are dropped;
    duplicate targets keep the faster object (ties: lower source index).
    Pairs are returned fastest-first.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    if len(rec) == 0:
        return []
    inside0, _ = coords_to_indices(grid, rec.positions)
    if not _.all():
        raise ValueError("object positions must lie inside the previous grid extent")
    predicted = rec.positions + rec.velocities * dt
    idx_pred, inside = coords_to_indices(grid, predicted)
    order = np.lexsort((rec.src_indices, -rec.speeds))
    taken: set[int] = set()
    pairs: list[tuple[int, int]] = []
    for k in order:
        if not inside[k]:
            continue
        center = index_to_coord(grid, int(idx_pred[k]))
        moved = apply_planar_many(pose, np.asarray([center]))
        tgt, ok = coords_to_indices(grid, moved)
        if not ok[0]:
            continue
        j = int(tgt[0])
        if j in taken:
            continue
        taken.add(j)
        pairs.append((int(rec.src_indices[k]), j))
    return pairs


def fuse_object(
    prev: BEVFeature,
    base: BEVFeature,
    rec: ObjectMotionRecord,
    pose: PlanarPose,
    dt: float,
    max_aligned_objects: int = MAX_ALIGNED_OBJECTS,
) -> BEVFeature:
    """Teleport object features onto their predicted current cells.

    Copies prev[:, src] over base[:, tgt] for each surviving object pair;
    at most ``max_aligned_objects`` objects participate, fastest first.
    """
    if prev.values.shape != base.values.shape or not prev.grid.same_shape(base.grid):
        raise ValueError("previous/base features must share shape and grid")
    capped = rec
    if len(rec) > max_aligned_objects:
        order = np.lexsort((rec.src_indices, -rec.speeds))[:max_aligned_objects]
        capped = rec.take(order)
    pairs = predict_object_targets(capped, pose, dt, base.grid) if len(capped) else []
    out = base.values.copy()
    flat = out.reshape(base.channels, -1)
    for i_src, j_tgt in pairs:
        flat[:, j_tgt] = prev.flat[:, i_src]
    return BEVFeature(base.grid, out, base.timestamp)


def object_aligned_temporal_fusion(
    prev: BEVFeature | None,
    cur: BEVFeature,
    rec: ObjectMotionRecord,
    pose: PlanarPose,
    dt: float,
    max_aligned_objects: int = MAX_ALIGNED_OBJECTS,
) -> BEVFeature:
    """Full ego-then-object alignment; returns ``cur`` at sequence start."""
    if prev is None:
        return cur
    fused = fuse_ego(prev, cur, pose)
    return fuse_object(prev, fused, rec, pose, dt, max_aligned_objects)
