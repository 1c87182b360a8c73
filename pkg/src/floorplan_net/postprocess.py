"""Region voting: relabel each wall-bounded region with its most frequent room type."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

_FOUR = ndimage.generate_binary_structure(2, 1)


@dataclass
class RegionMap:
    ids: np.ndarray  # (H, W) int32, 0 on boundary pixels
    count: int
    touches_border: np.ndarray  # (count + 1,) bool, index 0 unused

    def pixels(self, region: int) -> np.ndarray:
        return np.argwhere(self.ids == region)


def boundary_mask(boundary_pred, boundary_classes=(1, 2, 3)) -> np.ndarray:
    """True where the predicted boundary class is one of ``boundary_classes`` (wall, door, window)."""
    return np.isin(np.asarray(boundary_pred), boundary_classes)


def connected_regions(mask) -> RegionMap:
    """4-connected components of the non-boundary pixels, numbered in row-major first-encounter order."""
    mask = np.asarray(mask, dtype=bool)
    # ndimage.label scans in raster order, so ids already follow first encounter
    ids, count = ndimage.label(~mask, structure=_FOUR)
    border = np.zeros(count + 1, dtype=bool)
    edge = np.concatenate([ids[0], ids[-1], ids[:, 0], ids[:, -1]])
    border[np.unique(edge)] = True
    border[0] = False
    return RegionMap(ids.astype(np.int32), int(count), border)


def vote_room_types(regions: RegionMap, room_pred, n_classes: int | None = None, outside_class: int = 0,
                    force_border_outside: bool = True) -> np.ndarray:
    """Set every region to its modal predicted room class (ties go to the smaller id).

    Regions touching the image border become ``outside_class`` when
    ``force_border_outside`` is set.  Boundary pixels keep their prediction.
    """
    room_pred = np.asarray(room_pred)
    if room_pred.shape != regions.ids.shape:
        raise ValueError(f"room prediction shape {room_pred.shape} differs from region map {regions.ids.shape}")
    n = n_classes or int(room_pred.max(initial=0)) + 1
    hist = np.zeros((regions.count + 1, n), dtype=np.int64)
    np.add.at(hist, (regions.ids.ravel(), room_pred.ravel().astype(np.int64)), 1)
    mode = hist.argmax(axis=1)  # argmax returns the smallest id on ties
    if force_border_outside:
        mode[regions.touches_border] = outside_class
    out = room_pred.copy()
    inside = regions.ids > 0
    out[inside] = mode[regions.ids[inside]]
    return out


def postprocess(boundary_pred, room_pred, n_room_classes: int | None = None, outside_class: int = 0,
                force_border_outside: bool = True, boundary_classes=(1, 2, 3)) -> np.ndarray:
    regions = connected_regions(boundary_mask(boundary_pred, boundary_classes))
    return vote_room_types(regions, room_pred, n_room_classes, outside_class, force_border_outside)


def merge_tasks(boundary_labels, room_labels, n_room_classes: int) -> np.ndarray:
    """One label map: room ids, overwritten by ``n_room_classes + b - 1`` where boundary id ``b > 0``."""
    b = np.asarray(boundary_labels).astype(np.int64)
    r = np.asarray(room_labels).astype(np.int64)
    return np.where(b > 0, n_room_classes + b - 1, r)
