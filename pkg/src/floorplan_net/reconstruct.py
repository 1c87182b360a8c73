"""Extrude a wall mask into cuboids and write Wavefront OBJ."""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


@dataclass
class Mesh:
    vertices: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))
    triangles: np.ndarray = field(default_factory=lambda: np.zeros((0, 3), dtype=np.int64))
    boxes: list = field(default_factory=list)  # (row0, col0, row1, col1) per cuboid, in cells

    def validate(self) -> None:
        n = len(self.vertices)
        if self.triangles.size and (self.triangles.min() < 0 or self.triangles.max() >= n):
            raise ValueError("triangle index out of range")
        t = self.triangles
        if len(t) and np.any((t[:, 0] == t[:, 1]) | (t[:, 1] == t[:, 2]) | (t[:, 0] == t[:, 2])):
            raise ValueError("degenerate triangle")


def merge_runs(mask) -> list[tuple[int, int, int, int]]:
    """Greedy row-major cover of ``mask`` by axis-aligned rectangles.

    Each row is split into maximal runs; a run continues the rectangle above
    it when that rectangle has exactly the same column span.
    """
    mask = np.asarray(mask, dtype=bool)
    done = []
    open_rects = {}  # (c0, c1) -> row0
    for r in range(mask.shape[0] + 1):
        runs = set()
        if r < mask.shape[0]:
            row = np.concatenate([[False], mask[r], [False]])
            d = np.flatnonzero(np.diff(row.astype(np.int8)))
            runs = set(zip(d[::2].tolist(), d[1::2].tolist()))
        for span in list(open_rects):
            if span not in runs:
                done.append((open_rects.pop(span), span[0], r, span[1]))
        for span in sorted(runs):
            open_rects.setdefault(span, r)
    return sorted(done)


# outward-facing triangles of a unit cube with corners indexed by (x, y, z) bits
_CUBE_FACES = np.array([
    [0, 2, 1], [1, 2, 3],  # bottom  z=0, normal -z
    [4, 5, 6], [5, 7, 6],  # top     z=1, normal +z
    [0, 1, 4], [1, 5, 4],  # y=0, normal -y
    [2, 6, 3], [3, 6, 7],  # y=1, normal +y
    [0, 4, 2], [2, 4, 6],  # x=0, normal -x
    [1, 3, 5], [3, 7, 5],  # x=1, normal +x
])


def extrude_walls(wall_mask, cell_size: float, height: float) -> Mesh:
    """Cuboid per merged rectangle; x follows columns, y follows rows, z is up (meters)."""
    if cell_size <= 0 or height <= 0:
        raise ValueError(f"cell_size and height must be positive, got {cell_size}, {height}")
    boxes = merge_runs(wall_mask)
    verts, tris = [], []
    for k, (r0, c0, r1, c1) in enumerate(boxes):
        xs = (c0 * cell_size, c1 * cell_size)
        ys = (r0 * cell_size, r1 * cell_size)
        zs = (0.0, float(height))
        for i in range(8):
            verts.append((xs[i & 1], ys[(i >> 1) & 1], zs[(i >> 2) & 1]))
        tris.append(_CUBE_FACES + 8 * k)
    if not boxes:
        return Mesh()
    return Mesh(np.array(verts, dtype=np.float64), np.concatenate(tris).astype(np.int64), boxes)


def write_obj(mesh: Mesh, path) -> None:
    mesh.validate()
    lines = [f"# walls: {len(mesh.vertices)} vertices, {len(mesh.triangles)} triangles"]
    lines += [f"v {x:.6f} {y:.6f} {z:.6f}" for x, y, z in mesh.vertices]
    lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in mesh.triangles]
    with open(Path(path), "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def read_obj(path) -> Mesh:
    verts, tris = [], []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        parts = line.split()
        if not parts or parts[0].startswith("#"):
            continue
        if parts[0] == "v":
            verts.append([float(p) for p in parts[1:4]])
        elif parts[0] == "f":
            tris.append([int(p.split("/")[0]) - 1 for p in parts[1:4]])
    return Mesh(np.array(verts, dtype=np.float64).reshape(-1, 3), np.array(tris, dtype=np.int64).reshape(-1, 3))
