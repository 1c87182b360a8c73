"""Adam training loop, checkpoint files and corpus evaluation."""
from __future__ import annotations

import logging
import os
import struct
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import losses
from . import tensor as T
from .data import Palette, Sample, default_palette
from .metrics import MetricsReport, confusion, f_beta_sweep
from .network import ModelConfig, _param_specs, build_model, predict, forward
from .postprocess import merge_tasks, postprocess
from .tensor import Tensor

log = logging.getLogger(__name__)

MAGIC = b"FPN"
VERSION = b"1"


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-4
    iterations: int = 2000
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    seed: int = 0
    eval_every: int = 0
    checkpoint_path: str = ""
    count_channels: bool = True
    loss_reduction: str = "mean"

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.iterations < 1:
            raise ValueError(f"iterations must be >= 1, got {self.iterations}")
        if self.loss_reduction not in ("mean", "sum"):
            raise ValueError(f"loss_reduction must be mean or sum, got {self.loss_reduction!r}")


@dataclass
class Checkpoint:
    config: ModelConfig
    params: dict  # name -> float32 array
    adam_m: dict
    adam_v: dict
    iteration: int = 0
    log: list = field(default_factory=list, compare=False)
    evaluations: list = field(default_factory=list, compare=False)
    best_params: dict | None = field(default=None, compare=False)

    def model_params(self, best: bool = False) -> dict:
        src = self.best_params if best and self.best_params is not None else self.params
        return {k: Tensor(v, requires_grad=True, name=k) for k, v in src.items()}

    def same_as(self, other: "Checkpoint") -> bool:
        def eq(a, b):
            return a.keys() == b.keys() and all(
                a[k].dtype == b[k].dtype and a[k].tobytes() == b[k].tobytes() for k in a)
        return (self.config == other.config and self.iteration == other.iteration
                and eq(self.params, other.params) and eq(self.adam_m, other.adam_m)
                and eq(self.adam_v, other.adam_v))


# --------------------------------------------------------------------- adam


def adam_step(params: dict, grads: dict, moments: dict, t: int, cfg: TrainConfig):
    """Bias-corrected Adam update applied in place; returns ``(params, moments)``.

    ``params`` maps names to arrays (or tensors), ``moments`` holds ``"m"`` and
    ``"v"`` dicts of the same shapes.
    """
    if t < 1:
        raise ValueError(f"Adam step counter starts at 1, got {t}")
    b1, b2 = cfg.beta1, cfg.beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for name, p in params.items():
        g = grads[name]
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient for parameter {name}")
        data = p.data if isinstance(p, Tensor) else p
        if g.shape != data.shape:
            raise ValueError(f"gradient shape {g.shape} does not match parameter {name} {data.shape}")
        m = moments["m"][name]
        v = moments["v"][name]
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        data -= cfg.learning_rate * (m / c1) / (np.sqrt(v / c2) + cfg.epsilon)
    return params, moments


# ------------------------------------------------------------------- train


def image_tensor(sample: Sample, config: ModelConfig, dtype=np.float32) -> Tensor:
    img = sample.image.astype(dtype)[None, None]
    if config.in_channels == 3:
        img = np.repeat(img, 3, axis=1)
    return Tensor(img)


def sample_loss(params, config: ModelConfig, sample: Sample, tw: losses.TaskWeights, reduction: str = "mean",
                image: Tensor | None = None):
    """``(L_rb, L_rt, L)`` for one sample, recorded on the active tape."""
    img = image if image is not None else image_tensor(sample, config, params[next(iter(params))].dtype)
    bl, rl = forward(params, config, img)
    wb = losses.within_task_weights(losses.class_counts(sample.boundary_labels, config.boundary_classes))
    wr = losses.within_task_weights(losses.class_counts(sample.room_labels, config.room_classes))
    l_rb = losses.within_task_loss(bl, sample.boundary_labels, wb, reduction)
    l_rt = losses.within_task_loss(rl, sample.room_labels, wr, reduction)
    return l_rb, l_rt, losses.total_loss(l_rb, l_rt, tw)


def train(model_cfg: ModelConfig, train_cfg: TrainConfig, corpus, eval_samples=None, palette: Palette | None = None,
          callback=None) -> Checkpoint:
    """Cycle through ``corpus`` one sample per iteration and return the final checkpoint.

    ``corpus`` is a list of samples.  When ``eval_samples`` is given and
    ``train_cfg.eval_every > 0`` the model is evaluated periodically; every
    evaluation is kept in ``checkpoint.evaluations`` and the parameters with the
    best overall accuracy in ``checkpoint.best_params``.
    """
    samples = list(corpus)
    if not samples:
        raise ValueError("training corpus is empty")
    S = model_cfg.input_size
    for s in samples:
        if s.image.shape != (S, S):
            raise ValueError(f"sample {s.id!r} has extent {s.image.shape}, model expects {(S, S)}")
    params = build_model(model_cfg, train_cfg.seed)
    moments = {"m": {k: np.zeros_like(p.data) for k, p in params.items()},
               "v": {k: np.zeros_like(p.data) for k, p in params.items()}}
    tw = losses.cross_task_weights(*losses.output_pixel_counts(
        S, S, model_cfg.boundary_classes, model_cfg.room_classes, train_cfg.count_channels))
    images = [image_tensor(s, model_cfg) for s in samples]

    ck = Checkpoint(model_cfg, {}, moments["m"], moments["v"])
    best = -1.0
    for it in range(1, train_cfg.iterations + 1):
        k = (it - 1) % len(samples)
        for p in params.values():
            p.grad = None
        with T.Tape() as tape:
            l_rb, l_rt, loss = sample_loss(params, model_cfg, samples[k], tw, train_cfg.loss_reduction, images[k])
        row = (it, l_rb.item(), l_rt.item(), loss.item())
        if not np.isfinite(row[3]):
            raise FloatingPointError(f"non-finite loss at iteration {it}")
        tape.backward(loss)
        adam_step(params, {n: p.grad for n, p in params.items()}, moments, it, train_cfg)
        ck.log.append(row)
        log.debug("iter %d loss_rb %.6f loss_rt %.6f loss %.6f", *row)
        if callback is not None:
            callback(row)
        if eval_samples and train_cfg.eval_every and it % train_cfg.eval_every == 0:
            rep = evaluate_params(params, model_cfg, eval_samples, palette=palette, label=f"iter{it}")
            ck.evaluations.append((it, rep))
            if rep.overall_accu > best:
                best = rep.overall_accu
                ck.best_params = {n: p.data.copy() for n, p in params.items()}

    ck.params = {n: p.data for n, p in params.items()}
    ck.iteration = train_cfg.iterations
    if train_cfg.checkpoint_path:
        save_checkpoint(ck, train_cfg.checkpoint_path)
    return ck


def write_train_log(rows, path) -> None:
    with open(Path(path), "w", encoding="utf-8", newline="\n") as fh:
        fh.write("iter,loss_rb,loss_rt,loss_total\n")
        for it, a, b, c in rows:
            fh.write(f"{it},{a!r},{b!r},{c!r}\n")


# -------------------------------------------------------------- checkpoint


def _entries(ck: Checkpoint):
    for prefix, d in (("param", ck.params), ("adam_m", ck.adam_m), ("adam_v", ck.adam_v)):
        for name in d:
            yield f"{prefix}/{name}", d[name]


def save_checkpoint(ck: Checkpoint, path) -> None:
    """Write ``ck`` atomically; a failed write never leaves a partial file behind."""
    path = Path(path)
    text = ck.config.to_text().encode("utf-8")
    entries = list(_entries(ck))
    chunks = [MAGIC + VERSION, struct.pack("<I", len(text)), text,
              struct.pack("<II", ck.iteration, len(entries))]
    for name, arr in entries:
        nb = name.encode("utf-8")
        arr = np.ascontiguousarray(arr, dtype="<f4")
        chunks.append(struct.pack("<I", len(nb)) + nb + struct.pack(f"<I{arr.ndim}I", arr.ndim, *arr.shape))
        chunks.append(arr.tobytes())
    fd, tmp = tempfile.mkstemp(dir=path.parent if str(path.parent) else ".", prefix=".ckpt-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(b"".join(chunks))
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


class CheckpointError(ValueError):
    pass


def load_checkpoint(path) -> Checkpoint:
    buf = Path(path).read_bytes()
    pos = 0

    def take(n):
        nonlocal pos
        if pos + n > len(buf):
            raise CheckpointError(f"truncated checkpoint {path}: needed {n} bytes at offset {pos}, "
                                  f"file has {len(buf)}")
        out = buf[pos:pos + n]
        pos += n
        return out

    head = take(4)
    if head[:3] != MAGIC:
        raise CheckpointError(f"{path} is not a checkpoint (bad magic {head!r})")
    if head[3:] != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {head[3:]!r} in {path}, expected {VERSION!r}")
    (tlen,) = struct.unpack("<I", take(4))
    try:
        config = ModelConfig.from_text(take(tlen).decode("utf-8"))
    except (UnicodeDecodeError, ValueError) as exc:
        raise CheckpointError(f"corrupt model config in {path}: {exc}") from None
    iteration, count = struct.unpack("<II", take(8))
    tables = {"param": {}, "adam_m": {}, "adam_v": {}}
    for _ in range(count):
        (nlen,) = struct.unpack("<I", take(4))
        name = take(nlen).decode("utf-8")
        (rank,) = struct.unpack("<I", take(4))
        dims = struct.unpack(f"<{rank}I", take(4 * rank))
        n = int(np.prod(dims)) if rank else 1
        arr = np.frombuffer(take(4 * n), dtype="<f4").reshape(dims).astype(np.float32)
        prefix, _, pname = name.partition("/")
        if prefix not in tables:
            raise CheckpointError(f"unknown entry {name!r} in {path}")
        tables[prefix][pname] = arr
    if pos != len(buf):
        raise CheckpointError(f"{len(buf) - pos} trailing bytes in {path}")

    expected = {}
    for name, shape in _param_specs(config):
        expected[f"{name}.weight"] = shape
        expected[f"{name}.bias"] = (1, shape[0], 1, 1)
    for prefix, table in tables.items():
        if set(table) != set(expected):
            raise CheckpointError(f"{prefix} entries in {path} do not match the model config")
        for k, arr in table.items():
            if arr.shape != expected[k]:
                raise CheckpointError(f"entry {prefix}/{k} has shape {arr.shape}, config implies {expected[k]}")
    # keep the model's build order
    order = list(expected)
    return Checkpoint(config, {k: tables["param"][k] for k in order}, {k: tables["adam_m"][k] for k in order},
                      {k: tables["adam_v"][k] for k in order}, iteration)


# --------------------------------------------------------------- evaluate


def merged_class_names(palette: Palette) -> list[str]:
    return palette.names("room") + palette.names("boundary")[1:]


def evaluate_predictions(predictions, samples, palette: Palette | None = None, label: str = "",
                         with_postprocess: bool = False) -> MetricsReport:
    """Score ``(boundary_pred, room_pred)`` pairs against samples on the merged label map.

    Counts are summed over all samples before any ratio is formed.  The wall
    F-beta statistics are per-sample scores averaged over the corpus.
    """
    palette = palette or default_palette()
    samples = list(samples)
    predictions = list(predictions)
    if not samples:
        raise ValueError("evaluation corpus is empty")
    if len(predictions) != len(samples):
        raise ValueError(f"{len(predictions)} predictions for {len(samples)} samples")
    nr = palette.n_classes("room")
    names = merged_class_names(palette)
    wall = palette.class_id("boundary", "wall")
    outside = palette.class_id("room", "outside")
    bnd_ids = tuple(range(1, palette.n_classes("boundary")))
    conf = np.zeros((len(names), len(names)), dtype=np.int64)
    f_max, f_mean = [], []
    for (bp, rp), s in zip(predictions, samples):
        if with_postprocess:
            rp = postprocess(bp, rp, nr, outside_class=outside, boundary_classes=bnd_ids)
        pred = merge_tasks(bp, rp, nr)
        gt = merge_tasks(s.boundary_labels, s.room_labels, nr)
        conf += confusion(pred, gt, len(names))
        fm, fa = f_beta_sweep((bp == wall).astype(np.float64), s.boundary_labels == wall)
        f_max.append(fm)
        f_mean.append(fa)
    return MetricsReport.from_confusion(conf, names, label=label, f_beta_max=float(np.mean(f_max)),
                                        f_beta_mean=float(np.mean(f_mean)),
                                        extra={"samples": len(samples), "postprocess": with_postprocess})


def evaluate_params(params, config: ModelConfig, samples, with_postprocess: bool = False,
                    palette: Palette | None = None, label: str = "") -> MetricsReport:
    palette = palette or default_palette()
    if (palette.n_classes("boundary"), palette.n_classes("room")) != (config.boundary_classes, config.room_classes):
        raise ValueError(f"palette has {palette.n_classes('boundary')}/{palette.n_classes('room')} classes, "
                         f"model has {config.boundary_classes}/{config.room_classes}")
    samples = list(samples)
    if not samples:
        raise ValueError("evaluation corpus is empty")
    preds = []
    dtype = next(iter(params.values())).dtype
    for s in samples:
        bp, rp, _, _ = predict(params, config, image_tensor(s, config, dtype))
        preds.append((bp, rp))
    return evaluate_predictions(preds, samples, palette, label or config.ablation, with_postprocess)


def evaluate(ck: Checkpoint, corpus, with_postprocess: bool = False, palette: Palette | None = None,
             label: str = "", best: bool = False) -> MetricsReport:
    return evaluate_params(ck.model_params(best), ck.config, corpus, with_postprocess, palette, label)
