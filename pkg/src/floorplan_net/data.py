"""Palette-coded label maps and a seeded synthetic floor-plan generator.

Synthetic plans are built by recursive binary space partition of a
rectangular footprint.  Partition lines become wall strips, every internal
wall gets one door gap, some exterior walls get a window, and each room is
shaded with a light gray level tied to its room type.
"""
from __future__ import annotations

import dataclasses
from collections import deque
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np
from PIL import Image

TASKS = ("boundary", "room")


# ------------------------------------------------------------------ palette


@dataclass(frozen=True)
class Palette:
    entries: tuple  # of (name, task, (r, g, b))

    def __post_init__(self):
        for task in TASKS:
            names = self.names(task)
            colors = [e[2] for e in self.entries if e[1] == task]
            if len(names) < 2:
                raise ValueError(f"palette needs at least 2 {task} classes")
            if len(set(names)) != len(names):
                raise ValueError(f"duplicate {task} class names in palette")
            if len(set(colors)) != len(colors):
                raise ValueError(f"duplicate {task} colors in palette")
        unknown = {e[1] for e in self.entries} - set(TASKS)
        if unknown:
            raise ValueError(f"unknown palette task(s): {sorted(unknown)}")

    def names(self, task: str) -> list[str]:
        return [e[0] for e in self.entries if e[1] == task]

    def colors(self, task: str) -> np.ndarray:
        return np.array([e[2] for e in self.entries if e[1] == task], dtype=np.uint8)

    def n_classes(self, task: str) -> int:
        return len(self.names(task))

    def class_id(self, task: str, name: str) -> int:
        return self.names(task).index(name)

    def background(self, task: str) -> int:
        return 0

    @classmethod
    def from_text(cls, text: str) -> "Palette":
        entries = []
        for raw in text.splitlines():
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            name, task, r, g, b = [p.strip() for p in line.split(",")]
            entries.append((name, task, (int(r), int(g), int(b))))
        return cls(tuple(entries))

    def to_text(self) -> str:
        return "".join(f"{n},{t},{r},{g},{b}\n" for n, t, (r, g, b) in self.entries)


def default_palette() -> Palette:
    text = resources.files("floorplan_net").joinpath("palette.txt").read_text(encoding="utf-8")
    return Palette.from_text(text)


def ids_to_rgb(ids: np.ndarray, palette: Palette, task: str) -> np.ndarray:
    colors = palette.colors(task)
    ids = np.asarray(ids)
    if ids.size and (ids.min() < 0 or ids.max() >= len(colors)):
        raise ValueError(f"label ids out of range for the {task} palette")
    return colors[ids]


def rgb_to_ids(rgb: np.ndarray, palette: Palette, task: str) -> np.ndarray:
    colors = palette.colors(task).astype(np.int64)
    keys = (colors[:, 0] << 16) | (colors[:, 1] << 8) | colors[:, 2]
    rgb = np.asarray(rgb).astype(np.int64)
    pix = (rgb[..., 0] << 16) | (rgb[..., 1] << 8) | rgb[..., 2]
    order = np.argsort(keys)
    pos = np.clip(np.searchsorted(keys[order], pix), 0, len(keys) - 1)
    found = keys[order][pos] == pix
    if not found.all():
        r, c = np.argwhere(~found)[0]
        color = tuple(int(v) for v in rgb[r, c])
        raise ValueError(f"unknown {task} color {color} at pixel (row={r}, col={c})")
    return order[pos].astype(np.uint8)


def encode_label_png(ids: np.ndarray, palette: Palette, path, task: str = "room") -> None:
    Image.fromarray(ids_to_rgb(ids, palette, task), mode="RGB").save(Path(path), optimize=False)


def decode_label_png(path, palette: Palette, task: str = "room") -> np.ndarray:
    with Image.open(Path(path)) as im:
        rgb = np.asarray(im.convert("RGB"))
    return rgb_to_ids(rgb, palette, task)


def save_image_png(image: np.ndarray, path) -> None:
    arr = np.round(np.clip(image, 0, 1) * 255).astype(np.uint8)
    Image.fromarray(arr, mode="L").save(Path(path), optimize=False)


def load_image_png(path) -> np.ndarray:
    with Image.open(Path(path)) as im:
        return (np.asarray(im.convert("L")).astype(np.float32) / 255.0)


# ------------------------------------------------------------------- sample


@dataclass
class Sample:
    image: np.ndarray  # (S, S) float32 in [0, 1]
    boundary_labels: np.ndarray  # (S, S) uint8
    room_labels: np.ndarray  # (S, S) uint8
    id: str = ""
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if not (self.image.shape == self.boundary_labels.shape == self.room_labels.shape):
            raise ValueError(f"sample layers differ in extent: image {self.image.shape}, boundary "
                             f"{self.boundary_labels.shape}, room {self.room_labels.shape}")

    @property
    def size(self) -> int:
        return self.image.shape[0]

    def same_as(self, other: "Sample") -> bool:
        return (self.id == other.id and np.array_equal(self.image, other.image)
                and np.array_equal(self.boundary_labels, other.boundary_labels)
                and np.array_equal(self.room_labels, other.room_labels))


def _reach_from_border(passable: np.ndarray) -> np.ndarray:
    """4-connected flood fill over ``passable`` seeded from every border pixel."""
    h, w = passable.shape
    seen = np.zeros_like(passable, dtype=bool)
    q = deque()
    for r in range(h):
        for c in (0, w - 1):
            if passable[r, c] and not seen[r, c]:
                seen[r, c] = True
                q.append((r, c))
    for c in range(w):
        for r in (0, h - 1):
            if passable[r, c] and not seen[r, c]:
                seen[r, c] = True
                q.append((r, c))
    while q:
        r, c = q.popleft()
        for dr, dc in ((1, 0), (-1, 0), (0, 1), (0, -1)):
            rr, cc = r + dr, c + dc
            if 0 <= rr < h and 0 <= cc < w and passable[rr, cc] and not seen[rr, cc]:
                seen[rr, cc] = True
                q.append((rr, cc))
    return seen


def validate_sample(sample: Sample, palette: Palette | None = None) -> list[str]:
    """Consistency problems of a sample (empty list when valid)."""
    palette = palette or default_palette()
    problems = []
    nb, nr = palette.n_classes("boundary"), palette.n_classes("room")
    b, r = sample.boundary_labels, sample.room_labels
    if b.max(initial=0) >= nb or r.max(initial=0) >= nr:
        problems.append("label id outside palette range")
        return problems
    outside = palette.class_id("room", "outside")
    inside_bg = nr - 1 if "inside_background" not in palette.names("room") else palette.class_id(
        "room", "inside_background")
    is_boundary = b != palette.background("boundary")
    bad = is_boundary & ~np.isin(r, (outside, inside_bg))
    if bad.any():
        problems.append(f"{int(bad.sum())} boundary pixels carry a room-type label")
    room_px = ~is_boundary & ~np.isin(r, (outside, inside_bg))
    leaked = _reach_from_border(~is_boundary) & room_px
    if leaked.any():
        rr, cc = np.argwhere(leaked)[0]
        problems.append(f"room pixel (row={rr}, col={cc}) is reachable from the canvas border")
    return problems


# ---------------------------------------------------------------- generator


@dataclass(frozen=True)
class GenSpec:
    seed: int = 0
    canvas: int = 64
    rooms: tuple = (3, 6)
    min_room: int = 14
    wall_thickness: tuple = (2, 3)
    door_width: tuple = (3, 5)
    window_density: float = 0.5
    irregular: bool = False
    margin: tuple = (3, 8)
    noise: float = 0.02
    cue: str = "fill"

    def __post_init__(self):
        for name in ("rooms", "wall_thickness", "door_width", "margin"):
            object.__setattr__(self, name, tuple(int(v) for v in getattr(self, name)))
        self.validate()

    def validate(self) -> None:
        problems = []
        for name in ("rooms", "wall_thickness", "door_width", "margin"):
            lo, hi = getattr(self, name)
            if lo > hi or lo < 1:
                problems.append(f"{name} range must satisfy 1 <= min <= max, got {getattr(self, name)}")
        if self.min_room <= 2 * self.wall_thickness[1]:
            problems.append(f"min_room ({self.min_room}) must exceed twice the max wall thickness "
                            f"({self.wall_thickness[1]})")
        if self.door_width[1] + 2 > self.min_room - 2 * self.wall_thickness[1]:
            problems.append(f"door_width max ({self.door_width[1]}) plus 2 pixels of clearance must fit the "
                            f"smallest room interior ({self.min_room - 2 * self.wall_thickness[1]})")
        if not 0 <= self.window_density <= 1:
            problems.append(f"window_density must lie in [0, 1], got {self.window_density}")
        if self.noise < 0:
            problems.append(f"noise must be >= 0, got {self.noise}")
        if self.cue not in ROOM_CUES:
            problems.append(f"cue must be one of {ROOM_CUES}, got {self.cue!r}")
        elif self.cue == "glyph" and self.min_room - 2 * self.wall_thickness[1] < GLYPH_SIZE + 2:
            problems.append(f"glyph cue needs min_room - 2*max wall thickness >= {GLYPH_SIZE + 2}")
        if self.canvas < 8:
            problems.append(f"canvas must be >= 8, got {self.canvas}")
        if problems:
            raise ValueError("invalid GenSpec: " + "; ".join(problems))

    def replace(self, **changes) -> "GenSpec":
        return dataclasses.replace(self, **changes)

    def to_text(self) -> str:
        out = []
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            out.append(f"{f.name}={','.join(map(str, v)) if isinstance(v, tuple) else v}")
        return "\n".join(out) + "\n"


# gray levels: walls/doors/windows are dark, rooms light and type dependent
WALL_INK = 0.05
DOOR_INK = 0.45
WINDOW_INK = 0.30
OUTSIDE_INK = 1.0


def room_fill_levels(n_room_types: int) -> np.ndarray:
    return np.linspace(0.95, 0.65, n_room_types)


# "fill": each room type has its own gray level everywhere in the room.
# "glyph": rooms share one fill and carry a small type icon at a random spot,
# so labelling the whole room needs context from inside its walls.
ROOM_CUES = ("fill", "glyph")
GLYPH_FILL = 0.9
GLYPH_INK = 0.35
GLYPH_SIZE = 5
_GLYPHS = [
    ["..#..", "..#..", "#####", "..#..", "..#.."],
    ["#...#", ".#.#.", "..#..", ".#.#.", "#...#"],
    ["#####", "#...#", "#...#", "#...#", "#####"],
    ["#####", ".....", "#####", ".....", "#####"],
    ["#.#.#", "#.#.#", "#.#.#", "#.#.#", "#.#.#"],
    ["#.#.#", ".....", "#.#.#", ".....", "#.#.#"],
    ["..#..", ".#.#.", "#...#", ".#.#.", "..#.."],
    ["#....", "##...", "#.#..", "#..#.", "#####"],
]


def glyph(k: int) -> np.ndarray:
    """5x5 boolean icon for the ``k``-th room type."""
    return np.array([[ch == "#" for ch in row] for row in _GLYPHS[k % len(_GLYPHS)]])


@dataclass
class _Leaf:
    r0: int
    c0: int
    r1: int
    c1: int


def _bsp(rng, footprint, target, min_room):
    leaves = [_Leaf(*footprint)]
    splits = []  # (orientation, line, span0, span1)
    while len(leaves) < target:
        cands = []
        for i, lf in enumerate(leaves):
            h, w = lf.r1 - lf.r0, lf.c1 - lf.c0
            if max(h, w) >= 2 * min_room:
                cands.append((h * w, i))
        if not cands:
            break
        # split the largest splittable leaf along its longer side
        _, i = max(cands)
        lf = leaves.pop(i)
        h, w = lf.r1 - lf.r0, lf.c1 - lf.c0
        if h > w or (h == w and rng.random() < 0.5):
            cut = int(rng.integers(lf.r0 + min_room, lf.r1 - min_room + 1))
            splits.append(("h", cut, lf.c0, lf.c1))
            leaves[i:i] = [_Leaf(lf.r0, lf.c0, cut, lf.c1), _Leaf(cut, lf.c0, lf.r1, lf.c1)]
        else:
            cut = int(rng.integers(lf.c0 + min_room, lf.c1 - min_room + 1))
            splits.append(("v", cut, lf.r0, lf.r1))
            leaves[i:i] = [_Leaf(lf.r0, lf.c0, lf.r1, cut), _Leaf(lf.r0, cut, lf.r1, lf.c1)]
    return leaves, splits


def generate_synthetic(spec: GenSpec, palette: Palette | None = None, sample_id: str = "") -> Sample:
    """Deterministic synthetic floor plan for ``spec.seed``."""
    spec.validate()
    palette = palette or default_palette()
    rng = np.random.default_rng(spec.seed)
    S = spec.canvas
    wall_id, door_id, window_id = (palette.class_id("boundary", n) for n in ("wall", "door", "window"))
    outside_id = palette.class_id("room", "outside")
    inside_bg = palette.class_id("room", "inside_background")
    room_types = [i for i in range(palette.n_classes("room")) if i not in (outside_id, inside_bg)]

    lo_rooms, hi_rooms = spec.rooms
    target = int(rng.integers(lo_rooms, hi_rooms + 1))
    m = [int(rng.integers(spec.margin[0], spec.margin[1] + 1)) for _ in range(4)]
    footprint = (m[0], m[1], S - m[2], S - m[3])
    if footprint[2] - footprint[0] < spec.min_room or footprint[3] - footprint[1] < spec.min_room:
        raise ValueError(f"infeasible GenSpec: canvas {S} with margins {spec.margin} leaves no room "
                         f"of size {spec.min_room}")
    cut_corner = spec.irregular
    leaves, splits = _bsp(rng, footprint, target + (1 if cut_corner else 0), spec.min_room)
    if len(leaves) - (1 if cut_corner else 0) < lo_rooms:
        raise ValueError(f"infeasible GenSpec: only {len(leaves)} rooms of size >= {spec.min_room} fit on a "
                         f"{S}x{S} canvas, {lo_rooms} requested")

    tmin, tmax = spec.wall_thickness
    wall = np.zeros((S, S), dtype=bool)
    R0, C0, R1, C1 = footprint
    t_ext = int(rng.integers(tmin, tmax + 1))
    exterior = [(R0, C0, R0 + t_ext, C1), (R1 - t_ext, C0, R1, C1), (R0, C0, R1, C0 + t_ext), (R0, C1 - t_ext, R1, C1)]
    segments = []
    for ori, line, a, b in splits:
        t = int(rng.integers(tmin, tmax + 1))
        lo = line - t // 2
        rect = (lo, a, lo + t, b) if ori == "h" else (a, lo, b, lo + t)
        segments.append((ori, line, a, b, rect))

    cut = None
    if cut_corner:
        corners = [i for i, lf in enumerate(leaves)
                   if (lf.r0 == R0 or lf.r1 == R1) and (lf.c0 == C0 or lf.c1 == C1)]
        cut = leaves.pop(corners[int(rng.integers(len(corners)))])

    for r0, c0, r1, c1 in exterior:
        wall[r0:r1, c0:c1] = True
    if cut is not None:
        # the cut corner loses its exterior walls; the partition strips bounding it stay
        wall[cut.r0:cut.r1, cut.c0:cut.c1] = False
    for *_, (r0, c0, r1, c1) in segments:
        wall[r0:r1, c0:c1] = True
    boundary = np.where(wall, wall_id, 0).astype(np.uint8)
    room = np.full((S, S), outside_id, dtype=np.uint8)
    interiors = []
    for lf in leaves:
        block = ~wall[lf.r0:lf.r1, lf.c0:lf.c1]
        rows = np.flatnonzero(block.any(axis=1))
        cols = np.flatnonzero(block.any(axis=0))
        box = (lf.r0 + rows[0], lf.c0 + cols[0], lf.r0 + rows[-1] + 1, lf.c0 + cols[-1] + 1)
        interiors.append(box)
    types = [room_types[int(rng.integers(len(room_types)))] for _ in leaves]
    for box, ty in zip(interiors, types):
        r0, c0, r1, c1 = box
        room[r0:r1, c0:c1] = ty
    room[wall] = inside_bg
    interior_mask = (room != outside_id) & ~wall

    # one door per internal wall segment, placed where both sides are room interior
    dmin, dmax = spec.door_width
    for ori, line, a, b, (r0, c0, r1, c1) in segments:
        width = int(rng.integers(dmin, dmax + 1))
        starts = []
        for s in range(a, b - width + 1):
            if ori == "h":
                before, after = r0 - 1, r1
                ok = (before >= 0 and after < S and interior_mask[before, s:s + width].all()
                      and interior_mask[after, s:s + width].all()
                      and interior_mask[before, s - 1] and interior_mask[before, s + width]
                      and interior_mask[after, s - 1] and interior_mask[after, s + width])
            else:
                before, after = c0 - 1, c1
                ok = (before >= 0 and after < S and interior_mask[s:s + width, before].all()
                      and interior_mask[s:s + width, after].all()
                      and interior_mask[s - 1, before] and interior_mask[s + width, before]
                      and interior_mask[s - 1, after] and interior_mask[s + width, after])
            if ok:
                starts.append(s)
        if not starts:
            continue
        s = starts[int(rng.integers(len(starts)))]
        if ori == "h":
            boundary[r0:r1, s:s + width] = door_id
        else:
            boundary[s:s + width, c0:c1] = door_id

    # windows on exterior sides of rooms
    for box in interiors:
        r0, c0, r1, c1 = box
        for side in ("top", "bottom", "left", "right"):
            if rng.random() >= spec.window_density:
                continue
            length = c1 - c0 if side in ("top", "bottom") else r1 - r0
            wl = min(int(rng.integers(4, 9)), length - 2)
            if wl < 2:
                continue
            off = int(rng.integers(1, length - wl))
            if side in ("top", "bottom"):
                step = -1 if side == "top" else 1
                r = r0 - 1 if side == "top" else r1
                strip = []
                while 0 <= r < S and wall[r, c0 + off:c0 + off + wl].all() and (boundary[r, c0 + off:c0 + off + wl] == wall_id).all():
                    strip.append(r)
                    r += step
                if strip and 0 <= r < S and (room[r, c0 + off:c0 + off + wl] == outside_id).all():
                    for rr in strip:
                        boundary[rr, c0 + off:c0 + off + wl] = window_id
            else:
                step = -1 if side == "left" else 1
                c = c0 - 1 if side == "left" else c1
                strip = []
                while 0 <= c < S and wall[r0 + off:r0 + off + wl, c].all() and (boundary[r0 + off:r0 + off + wl, c] == wall_id).all():
                    strip.append(c)
                    c += step
                if strip and 0 <= c < S and (room[r0 + off:r0 + off + wl, c] == outside_id).all():
                    for cc in strip:
                        boundary[r0 + off:r0 + off + wl, cc] = window_id

    image = np.full((S, S), OUTSIDE_INK, dtype=np.float64)
    if spec.cue == "fill":
        for ty, level in zip(room_types, room_fill_levels(len(room_types))):
            image[room == ty] = level
    else:
        image[interior_mask] = GLYPH_FILL
        g = GLYPH_SIZE
        for (r0, c0, r1, c1), ty in zip(interiors, types):
            r = int(rng.integers(r0 + 1, r1 - g))
            c = int(rng.integers(c0 + 1, c1 - g))
            patch = image[r:r + g, c:c + g]
            patch[glyph(room_types.index(ty))] = GLYPH_INK
    image[boundary == wall_id] = WALL_INK
    image[boundary == door_id] = DOOR_INK
    image[boundary == window_id] = WINDOW_INK
    image += rng.normal(0.0, spec.noise, size=image.shape)
    image = (np.round(np.clip(image, 0, 1) * 255) / 255).astype(np.float32)

    meta = {"seed": spec.seed, "room_count": len(leaves), "room_types": types,
            "wall_thickness": (tmin, tmax), "irregular": cut is not None}
    return Sample(image, boundary, room, id=sample_id, meta=meta)


def count_rooms(sample: Sample, palette: Palette | None = None) -> int:
    """Number of 4-connected room-type regions in the label maps."""
    from scipy import ndimage

    palette = palette or default_palette()
    outside = palette.class_id("room", "outside")
    inside_bg = palette.class_id("room", "inside_background")
    mask = (sample.boundary_labels == 0) & ~np.isin(sample.room_labels, (outside, inside_bg))
    _, n = ndimage.label(mask)
    return int(n)


# ------------------------------------------------------------------- corpus


@dataclass
class Corpus:
    train: list
    test: list
    manifest: list  # of (id, seed, split)

    def manifest_text(self) -> str:
        return "".join(f"{i},{s},{split}\n" for i, s, split in self.manifest)


def make_corpus(spec: GenSpec, n_train: int, n_test: int, palette: Palette | None = None) -> Corpus:
    if n_train < 1 or n_test < 1:
        raise ValueError(f"n_train and n_test must be >= 1, got {n_train}, {n_test}")
    seeds = np.random.SeedSequence(spec.seed).generate_state(n_train + n_test + 16, dtype=np.uint32)
    uniq = list(dict.fromkeys(int(s) for s in seeds))[: n_train + n_test]
    manifest = [(f"train_{i:03d}", uniq[i], "train") for i in range(n_train)]
    manifest += [(f"test_{i:03d}", uniq[n_train + i], "test") for i in range(n_test)]
    return corpus_from_manifest(manifest, spec, palette)


def corpus_from_manifest(manifest, spec: GenSpec, palette: Palette | None = None) -> Corpus:
    """Regenerate a corpus from ``(id, seed, split)`` rows or a manifest file path."""
    if isinstance(manifest, (str, Path)):
        manifest = read_manifest(manifest)
    train, test = [], []
    for sid, seed, split in manifest:
        sample = generate_synthetic(spec.replace(seed=int(seed)), palette, sample_id=sid)
        (train if split == "train" else test).append(sample)
    return Corpus(train, test, [(i, int(s), sp) for i, s, sp in manifest])


def read_manifest(path) -> list:
    rows = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line.strip():
            sid, seed, split = line.split(",")
            if split not in ("train", "test"):
                raise ValueError(f"manifest split must be train or test, got {split!r}")
            rows.append((sid, int(seed), split))
    return rows


def write_corpus(corpus: Corpus, root, palette: Palette | None = None) -> None:
    palette = palette or default_palette()
    root = Path(root)
    for sub in ("images", "labels_boundary", "labels_room"):
        (root / sub).mkdir(parents=True, exist_ok=True)
    for s in corpus.train + corpus.test:
        save_image_png(s.image, root / "images" / f"{s.id}.png")
        encode_label_png(s.boundary_labels, palette, root / "labels_boundary" / f"{s.id}.png", task="boundary")
        encode_label_png(s.room_labels, palette, root / "labels_room" / f"{s.id}.png", task="room")
    (root / "manifest.csv").write_text(corpus.manifest_text(), encoding="utf-8")


def load_corpus(root, palette: Palette | None = None) -> Corpus:
    palette = palette or default_palette()
    root = Path(root)
    manifest = read_manifest(root / "manifest.csv")
    train, test = [], []
    for sid, seed, split in manifest:
        s = Sample(
            load_image_png(root / "images" / f"{sid}.png"),
            decode_label_png(root / "labels_boundary" / f"{sid}.png", palette, task="boundary"),
            decode_label_png(root / "labels_room" / f"{sid}.png", palette, task="room"),
            id=sid, meta={"seed": seed},
        )
        (train if split == "train" else test).append(s)
    return Corpus(train, test, manifest)
