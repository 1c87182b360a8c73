"""Region voting on a noisy room map, then wall extrusion to OBJ."""
import numpy as np

from floorplan_net.data import GenSpec, default_palette, generate_synthetic
from floorplan_net.metrics import accuracy
from floorplan_net.postprocess import boundary_mask, connected_regions, postprocess
from floorplan_net.reconstruct import extrude_walls, merge_runs, write_obj

pal = default_palette()
s = generate_synthetic(GenSpec(seed=3))
rng = np.random.default_rng(0)

regions = connected_regions(boundary_mask(s.boundary_labels))
print(f"{regions.count} regions, {int(regions.touches_border.sum())} touch the border")

# Corrupt a quarter of the room pixels, then let each region vote.
noisy = s.room_labels.copy()
flip = (rng.random(noisy.shape) < 0.25) & (s.boundary_labels == 0)
noisy[flip] = rng.integers(0, pal.n_classes("room"), int(flip.sum()))
fixed = postprocess(s.boundary_labels, noisy, pal.n_classes("room"))
print(f"room accuracy: noisy {accuracy(noisy, s.room_labels)[0]:.3f} -> voted {accuracy(fixed, s.room_labels)[0]:.3f}")

walls = s.boundary_labels == pal.class_id("boundary", "wall")
boxes = merge_runs(walls)
mesh = extrude_walls(walls, cell_size=0.1, height=3.0)
print(f"{int(walls.sum())} wall cells merged into {len(boxes)} cuboids "
      f"({len(mesh.vertices)} vertices, {len(mesh.triangles)} triangles)")
write_obj(mesh, "demo_walls.obj")
print(open("demo_walls.obj").readline().strip())
