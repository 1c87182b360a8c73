"""What the boundary-guided context module computes, level by level."""
import numpy as np

from floorplan_net import tensor as T
from floorplan_net.network import ModelConfig, build_model, direction_kernel, forward
from floorplan_net.data import GenSpec, generate_synthetic

# The fixed aggregation kernel: four all-ones lines through the centre.
print(direction_kernel(2)[0, 0].astype(int))
print("literal reading (centre counted once per offset):")
print(direction_kernel(2, literal_center=True)[0, 0].astype(int))

cfg = ModelConfig()
params = build_model(cfg, rng_seed=0)
print(f"{sum(p.data.size for p in params.values()):,} parameters in {len(params)} tensors")

s = generate_synthetic(GenSpec(seed=1))
trace = {}
with T.no_tape():
    bl, rl = forward(params, cfg, T.Tensor(s.image[None, None]), trace=trace)
print("boundary logits", bl.shape, "room logits", rl.shape)
for level, parts in trace.items():
    a = parts["attention"].data
    print(f"{level}: map {a.shape[2]}x{a.shape[3]}, attention mean {a.mean():.3f} "
          f"range [{a.min():.3f}, {a.max():.3f}], context |f| mean {np.abs(parts['context'].data).mean():.4f}")

for ab in ("no_attention", "no_direction_kernels", "no_context", "two_separate_networks"):
    n = sum(p.data.size for p in build_model(cfg.replace(ablation=ab), 0).values())
    print(f"{ab:<22} {n:>9,} parameters")
