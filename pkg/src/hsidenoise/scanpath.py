"""Serpentine scan orderings over a 2-D grid.

A scan path is a permutation of the H*W row-major pixel indices giving
the order in which a 1-D sequence model visits the grid. The serpentine
(boustrophedon) families alternate traversal direction every row or
column, so consecutive visits are always Manhattan-distance-1 apart and
the sequence never teleports across the image.

Eight directions:
  0  row-major serpentine starting at the top-left
  1  row-major serpentine starting at the top-right
  2  column-major serpentine starting at the top-left
  3  column-major serpentine starting at the bottom-left
  4..7  the same four paths traversed back to front

Sweep (raster) paths with the same direction ids exist for ablations;
they restart every row or column on the same side and therefore break
the adjacency property whenever both grid sides are >= 2.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeError


@dataclass(frozen=True)
class ScanPath:
    direction_id: int
    height: int
    width: int
    perm: np.ndarray          # perm[i] = row-major index visited at step i
    inverse: np.ndarray = field(init=False)

    def __post_init__(self):
        length = self.height * self.width
        if self.perm.shape != (length,) or not np.array_equal(
                np.sort(self.perm), np.arange(length)):
            raise ShapeError(
                f"ScanPath: perm is not a permutation of range({length})")
        inv = np.empty(length, dtype=np.int64)
        inv[self.perm] = np.arange(length, dtype=np.int64)
        object.__setattr__(self, "inverse", inv)


def _check_args(direction_id: int, height: int, width: int) -> None:
    if not 0 <= direction_id <= 7:
        raise ShapeError(f"direction_id must be in 0..7, got {direction_id}")
    if height < 1 or width < 1:
        raise ShapeError(f"grid must be at least 1x1, got {height}x{width}")


def _family_grid(base: int, height: int, width: int) -> np.ndarray:
    """Row-major index grid arranged so flattening yields the base path."""
    idx = np.arange(height * width, dtype=np.int64).reshape(height, width)
    if base >= 2:
        idx = idx.T  # column-major families walk the transposed grid
    if base == 1:
        idx = idx[:, ::-1]  # start each sweep from the right edge
    if base == 3:
        idx = idx[:, ::-1]  # start each sweep from the bottom edge
    return idx


def build_path(direction_id: int, height: int, width: int) -> ScanPath:
    """Serpentine path for one of the eight directions."""
    _check_args(direction_id, height, width)
    base, reverse = direction_id % 4, direction_id >= 4
    idx = _family_grid(base, height, width).copy()
    idx[1::2] = idx[1::2, ::-1]  # alternate direction on odd sweeps
    perm = idx.reshape(-1)
    if reverse:
        perm = perm[::-1]
    return ScanPath(direction_id, height, width, np.ascontiguousarray(perm))


def build_sweep_path(direction_id: int, height: int, width: int) -> ScanPath:
    """Raster path: every sweep restarts on the same side (ablation baseline)."""
    _check_args(direction_id, height, width)
    base, reverse = direction_id % 4, direction_id >= 4
    perm = _family_grid(base, height, width).reshape(-1)
    if reverse:
        perm = perm[::-1]
    return ScanPath(direction_id, height, width, np.ascontiguousarray(perm))


def apply_path(x: np.ndarray, path: ScanPath) -> np.ndarray:
    """Reorder x[C, H*W] from row-major order into visit order."""
    if x.ndim != 2 or x.shape[1] != path.perm.shape[0]:
        raise ShapeError(f"apply_path: x {x.shape} vs path length {path.perm.shape[0]}")
    return x[:, path.perm]


def apply_inverse(x: np.ndarray, path: ScanPath) -> np.ndarray:
    """Undo apply_path: scatter visit-ordered columns back to row-major order."""
    if x.ndim != 2 or x.shape[1] != path.perm.shape[0]:
        raise ShapeError(f"apply_inverse: x {x.shape} vs path length {path.perm.shape[0]}")
    return x[:, path.inverse]


def is_adjacent_walk(path: ScanPath) -> bool:
    """True when every consecutive pair of visits is Manhattan distance 1 apart."""
    rows, cols = np.divmod(path.perm, path.width)
    dist = np.abs(np.diff(rows)) + np.abs(np.diff(cols))
    return bool(np.all(dist == 1))
