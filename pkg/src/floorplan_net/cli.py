"""Command-line pipelines: gen-data, train, eval, infer, postprocess, reconstruct.

Every command resolves its settings from defaults, an optional key=value
config file and flag overrides, then archives the resolved settings next to
its outputs so the run can be repeated with ``--config``.
"""
from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from pathlib import Path

import numpy as np
from PIL import Image

from .data import (GenSpec, Sample, decode_label_png, default_palette, encode_label_png, ids_to_rgb,
                   load_corpus, load_image_png, make_corpus, write_corpus)
from .metrics import write_reports_csv
from .network import ABLATIONS, ModelConfig, _parse_field, predict
from .postprocess import postprocess
from .reconstruct import extrude_walls, write_obj
from .training import (CheckpointError, TrainConfig, evaluate, evaluate_params, image_tensor, load_checkpoint,
                       save_checkpoint, train, write_train_log)

log = logging.getLogger("floorplan_net")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


@dataclasses.dataclass(frozen=True)
class Paths:
    data: str = "data"
    checkpoint: str = "model/checkpoint.bin"
    log: str = "model/train_log.csv"
    predictions: str = "predictions"
    refined: str = "refined"
    reports: str = "reports"
    obj: str = "walls.obj"


@dataclasses.dataclass(frozen=True)
class RunOptions:
    n_train: int = 4
    n_test: int = 2
    split: str = "test"
    postprocess: bool = False
    best: bool = False
    image: str = ""
    labels: str = ""
    wall_classes: str = "wall"
    cell_size: float = 0.1
    height: float = 3.0


SECTIONS = {"model": ModelConfig, "training": TrainConfig, "generation": GenSpec, "paths": Paths, "run": RunOptions}
_SKIP = {("training", "checkpoint_path")}  # the CLI places checkpoints through paths.checkpoint


def _keys(section):
    return {f.name: f for f in dataclasses.fields(SECTIONS[section]) if (section, f.name) not in _SKIP}


class RunConfig:
    """Flat ``section.key -> raw string`` overrides layered over dataclass defaults."""

    def __init__(self):
        self.values: dict[str, str] = {}

    def set(self, dotted: str, raw: str, origin: str = "") -> None:
        section, _, key = dotted.partition(".")
        if section not in SECTIONS or key not in _keys(section):
            where = f" ({origin})" if origin else ""
            raise UsageError(f"unknown config key {dotted!r}{where}")
        self.values[dotted] = str(raw).strip()

    def read(self, path) -> None:
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise UsageError(f"cannot read config {path}: {exc.strerror}") from None
        for n, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, val = line.partition("=")
            if not sep:
                raise UsageError(f"{path}:{n}: expected key=value, got {raw!r}")
            self.set(key.strip(), val, f"{path}:{n}")

    def build(self, section: str):
        kw = {}
        fields = _keys(section)
        for dotted, raw in self.values.items():
            sec, _, key = dotted.partition(".")
            if sec == section:
                try:
                    kw[key] = _parse_field(fields[key].default, raw)
                except ValueError as exc:
                    raise UsageError(f"bad value for {dotted}: {exc}") from None
        try:
            return SECTIONS[section](**kw)
        except ValueError as exc:
            raise UsageError(str(exc)) from None

    def resolved_text(self) -> str:
        lines = ["# fully resolved settings; rerun with --config <this file>"]
        for section in SECTIONS:
            obj = self.build(section)
            for key in _keys(section):
                v = getattr(obj, key)
                lines.append(f"{section}.{key}={','.join(map(str, v)) if isinstance(v, tuple) else v}")
        return "\n".join(lines) + "\n"


# ------------------------------------------------------------------ helpers


def _write_resolved(cfg: RunConfig, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(cfg.resolved_text(), encoding="utf-8")


def _load_split(root: Path, split: str):
    if not (root / "manifest.csv").exists():
        raise DataError(f"no corpus at {root} (manifest.csv missing)")
    corpus = load_corpus(root)
    if split not in ("train", "test", "all"):
        raise UsageError(f"run.split must be train, test or all, got {split!r}")
    return {"train": corpus.train, "test": corpus.test, "all": corpus.train + corpus.test}[split]


def composite(boundary_ids, room_ids, palette) -> np.ndarray:
    """Room colors with boundary colors painted on top wherever a boundary class is predicted."""
    rgb = ids_to_rgb(room_ids, palette, "room")
    b = ids_to_rgb(boundary_ids, palette, "boundary")
    on = boundary_ids != palette.background("boundary")
    rgb[on] = b[on]
    return rgb


def _save_side_by_side(image, boundary_ids, room_ids, palette, path) -> None:
    gray = np.clip(np.rint(np.asarray(image, np.float64) * 255), 0, 255).astype(np.uint8)
    left = np.repeat(gray[..., None], 3, axis=2)
    gap = np.full((gray.shape[0], 2, 3), 255, np.uint8)
    Image.fromarray(np.concatenate([left, gap, composite(boundary_ids, room_ids, palette)], axis=1)).save(path)


# ----------------------------------------------------------------- commands


def cmd_gen_data(cfg: RunConfig, out: Path) -> None:
    spec = cfg.build("generation")
    opts = cfg.build("run")
    root = out / cfg.build("paths").data
    try:
        corpus = make_corpus(spec, opts.n_train, opts.n_test)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    write_corpus(corpus, root)
    _write_resolved(cfg, root / "run.cfg")
    print(f"wrote {len(corpus.train)} train and {len(corpus.test)} test samples to {root}")


def cmd_train(cfg: RunConfig, out: Path) -> None:
    mc, tc, paths = cfg.build("model"), cfg.build("training"), cfg.build("paths")
    root = out / paths.data
    samples = _load_split(root, "train")
    evals = _load_split(root, "test") if tc.eval_every else None
    ck_path = out / paths.checkpoint
    ck_path.parent.mkdir(parents=True, exist_ok=True)
    ck = train(mc, tc, samples, eval_samples=evals)
    save_checkpoint(ck, ck_path)
    write_train_log(ck.log, out / paths.log)
    if ck.evaluations:
        write_reports_csv([rep for _, rep in ck.evaluations], ck_path.with_name("evaluations.csv"))
        best = dataclasses.replace(ck, params=ck.best_params)
        save_checkpoint(best, ck_path.with_name("best.bin"))
    _write_resolved(cfg, ck_path.with_name("run.cfg"))
    print(f"trained {tc.iterations} iterations, final loss {ck.log[-1][3]:.6f}; checkpoint {ck_path}")


def _checkpoint(out: Path, paths: Paths):
    path = out / paths.checkpoint
    if not path.exists():
        raise DataError(f"checkpoint {path} does not exist")
    return load_checkpoint(path)


def cmd_eval(cfg: RunConfig, out: Path, ablation: str | None) -> None:
    paths, opts = cfg.build("paths"), cfg.build("run")
    ck = _checkpoint(out, paths)
    if ablation and ablation != ck.config.ablation:
        raise DataError(f"checkpoint was trained as {ck.config.ablation!r}, not {ablation!r}")
    samples = _load_split(out / paths.data, opts.split)
    label = ck.config.ablation + ("+postprocess" if opts.postprocess else "")
    rep = evaluate(ck, samples, with_postprocess=opts.postprocess, label=label, best=opts.best)
    rdir = out / paths.reports
    rdir.mkdir(parents=True, exist_ok=True)
    (rdir / f"{label}.txt").write_text(rep.to_text(), encoding="utf-8")
    write_reports_csv([rep], rdir / f"{label}.csv")
    _write_resolved(cfg, rdir / f"{label}.cfg")
    print(f"{label}: overall_accu={rep.overall_accu:.4f} mean_iou={rep.mean_iou:.4f} "
          f"wall_f_beta_max={rep.f_beta_max:.4f}")


def _infer_inputs(out: Path, paths: Paths, opts: RunOptions):
    if opts.image:
        img = load_image_png(out / opts.image)
        return [(Path(opts.image).stem, img)]
    return [(s.id, s.image) for s in _load_split(out / paths.data, opts.split)]


def cmd_infer(cfg: RunConfig, out: Path) -> None:
    paths, opts = cfg.build("paths"), cfg.build("run")
    ck = _checkpoint(out, paths)
    pal = default_palette()
    params = ck.model_params(opts.best)
    pdir = out / paths.predictions
    pdir.mkdir(parents=True, exist_ok=True)
    items = _infer_inputs(out, paths, opts)
    for sid, img in items:
        s = ck.config.input_size
        if img.shape != (s, s):
            raise DataError(f"image {sid} is {img.shape[1]}x{img.shape[0]}, model expects {s}x{s}")
        bp, rp, _, _ = predict(params, ck.config, image_tensor(Sample(img, img, img), ck.config))
        encode_label_png(bp.astype(np.uint8), pal, pdir / f"{sid}_boundary.png", "boundary")
        encode_label_png(rp.astype(np.uint8), pal, pdir / f"{sid}_room.png", "room")
        _save_side_by_side(img, bp, rp, pal, pdir / f"{sid}_composite.png")
    _write_resolved(cfg, pdir / "run.cfg")
    print(f"wrote predictions for {len(items)} images to {pdir}")


def cmd_postprocess(cfg: RunConfig, out: Path) -> None:
    paths = cfg.build("paths")
    pal = default_palette()
    src, dst = out / paths.predictions, out / paths.refined
    pairs = sorted(src.glob("*_boundary.png"))
    if not pairs:
        raise DataError(f"no *_boundary.png predictions in {src}")
    dst.mkdir(parents=True, exist_ok=True)
    bnd_ids = tuple(range(1, pal.n_classes("boundary")))
    for bpath in pairs:
        sid = bpath.name[: -len("_boundary.png")]
        rpath = src / f"{sid}_room.png"
        if not rpath.exists():
            raise DataError(f"{rpath} is missing for {bpath.name}")
        b = decode_label_png(bpath, pal, "boundary")
        r = decode_label_png(rpath, pal, "room")
        refined = postprocess(b, r, pal.n_classes("room"), pal.class_id("room", "outside"),
                              boundary_classes=bnd_ids).astype(np.uint8)
        encode_label_png(b, pal, dst / f"{sid}_boundary.png", "boundary")
        encode_label_png(refined, pal, dst / f"{sid}_room.png", "room")
        Image.fromarray(composite(b, refined, pal)).save(dst / f"{sid}_composite.png")
    _write_resolved(cfg, dst / "run.cfg")
    print(f"refined {len(pairs)} predictions into {dst}")


def cmd_reconstruct(cfg: RunConfig, out: Path) -> None:
    paths, opts = cfg.build("paths"), cfg.build("run")
    if not opts.labels:
        raise UsageError("reconstruct needs --labels <boundary label PNG>")
    pal = default_palette()
    labels = decode_label_png(out / opts.labels, pal, "boundary")
    try:
        wanted = [pal.class_id("boundary", n.strip()) for n in opts.wall_classes.split(",")]
    except (KeyError, ValueError) as exc:
        raise UsageError(f"run.wall_classes: {exc}") from None
    mask = np.isin(labels, wanted)
    try:
        mesh = extrude_walls(mask, opts.cell_size, opts.height)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    obj = out / paths.obj
    obj.parent.mkdir(parents=True, exist_ok=True)
    write_obj(mesh, obj)
    _write_resolved(cfg, obj.with_suffix(".cfg"))
    print(f"{int(mask.sum())} wall cells -> {len(mesh.boxes)} cuboids, {len(mesh.triangles)} triangles in {obj}")


# --------------------------------------------------------------------- main


# flag -> config key, per command
FLAG_KEYS = {
    "gen-data": {"seed": "generation.seed", "train": "run.n_train", "test": "run.n_test", "canvas": "generation.canvas",
                 "irregular": "generation.irregular", "data": "paths.data"},
    "train": {"data": "paths.data", "checkpoint": "paths.checkpoint", "iterations": "training.iterations",
              "lr": "training.learning_rate", "seed": "training.seed", "eval_every": "training.eval_every",
              "ablation": "model.ablation", "input_size": "model.input_size"},
    "eval": {"data": "paths.data", "checkpoint": "paths.checkpoint", "split": "run.split",
             "postprocess": "run.postprocess", "best": "run.best", "reports": "paths.reports"},
    "infer": {"data": "paths.data", "checkpoint": "paths.checkpoint", "split": "run.split", "image": "run.image",
              "predictions": "paths.predictions", "best": "run.best"},
    "postprocess": {"predictions": "paths.predictions", "refined": "paths.refined"},
    "reconstruct": {"labels": "run.labels", "obj": "paths.obj", "cell_size": "run.cell_size",
                    "height": "run.height", "wall_classes": "run.wall_classes"},
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="floorplan-net", description=__doc__.splitlines()[0])
    p.add_argument("--out", default=".", help="root directory; every path is relative to it")
    p.add_argument("--config", help="key=value settings file (section.key names, '#' comments)")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override one setting")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="generate a synthetic corpus")
    g.add_argument("--seed", type=int)
    g.add_argument("--train", type=int)
    g.add_argument("--test", type=int)
    g.add_argument("--canvas", type=int)
    g.add_argument("--irregular", action="store_const", const="true")
    g.add_argument("--data")

    t = sub.add_parser("train", help="train a model on the train split")
    t.add_argument("--data")
    t.add_argument("--checkpoint")
    t.add_argument("--iterations", type=int)
    t.add_argument("--lr", type=float)
    t.add_argument("--seed", type=int)
    t.add_argument("--eval-every", type=int)
    t.add_argument("--ablation", choices=ABLATIONS)
    t.add_argument("--input-size", type=int)

    e = sub.add_parser("eval", help="score a checkpoint and write a metrics report")
    e.add_argument("--data")
    e.add_argument("--checkpoint")
    e.add_argument("--split", choices=("train", "test", "all"))
    e.add_argument("--postprocess", action="store_const", const="true")
    e.add_argument("--best", action="store_const", const="true")
    e.add_argument("--reports")
    e.add_argument("--ablation", choices=ABLATIONS, help="expected ablation of the checkpoint; labels the report")

    i = sub.add_parser("infer", help="write argmax label PNGs and composites")
    i.add_argument("--data")
    i.add_argument("--checkpoint")
    i.add_argument("--split", choices=("train", "test", "all"))
    i.add_argument("--image", help="a single grayscale PNG instead of a corpus split")
    i.add_argument("--predictions")
    i.add_argument("--best", action="store_const", const="true")

    pp = sub.add_parser("postprocess", help="region-vote a directory of predictions")
    pp.add_argument("--predictions")
    pp.add_argument("--refined")

    r = sub.add_parser("reconstruct", help="extrude walls of a boundary label map to OBJ")
    r.add_argument("--labels")
    r.add_argument("--obj")
    r.add_argument("--cell-size", type=float)
    r.add_argument("--height", type=float)
    r.add_argument("--wall-classes", help="comma separated boundary classes to extrude (default: wall)")
    return p


def run(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    out = Path(args.out)
    try:
        cfg = RunConfig()
        if args.config:
            cfg.read(args.config)
        for item in args.set:
            key, sep, val = item.partition("=")
            if not sep:
                raise UsageError(f"--set expects KEY=VALUE, got {item!r}")
            cfg.set(key.strip(), val, "--set")
        for flag, key in FLAG_KEYS[args.command].items():
            val = getattr(args, flag, None)
            if val is not None:
                cfg.set(key, str(val), f"--{flag.replace('_', '-')}")
        for section in SECTIONS:
            cfg.build(section)  # surface invalid settings before any work

        cmd = args.command
        if cmd == "gen-data":
            cmd_gen_data(cfg, out)
        elif cmd == "train":
            cmd_train(cfg, out)
        elif cmd == "eval":
            cmd_eval(cfg, out, args.ablation)
        elif cmd == "infer":
            cmd_infer(cfg, out)
        elif cmd == "postprocess":
            cmd_postprocess(cfg, out)
        else:
            cmd_reconstruct(cfg, out)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FloatingPointError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, CheckpointError, ValueError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
