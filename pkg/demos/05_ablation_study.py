"""Seed-averaged ablation table on a fixed 16-plan corpus (12 train, 4 test).

Each of the 12 runs trains from scratch; expect 20 to 25 minutes on one core.
"""
from floorplan_net.experiments import run_ablation_study


def progress(ab, seed, rep):
    print(f"  {ab:<22} seed {seed}: overall {rep.overall_accu:.4f}  mIoU {rep.mean_iou:.4f}", flush=True)


study = run_ablation_study(seeds=(0, 1, 2), progress=progress)
print()
print(study.table())
for claim, holds in study.ordering_holds().items():
    print(f"{claim:<40} {'holds' if holds else 'VIOLATED'}")
print(f"{study.seconds / 60:.1f} minutes")
