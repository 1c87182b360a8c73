"""Multi-task encoder/decoder with boundary-guided spatial context.

One VGG-style encoder feeds two decoders.  The upper decoder predicts
room-boundary classes (wall, door, window); the lower one predicts room types.
At each of the four decoder levels the room features are refined by
:func:`spatial_context`, which gates them with an attention map computed from
the boundary features at the same resolution and spreads them along four
fixed line kernels.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import tensor as T
from .tensor import Tensor

ABLATIONS = ("full", "no_attention", "no_direction_kernels", "no_context", "two_separate_networks")

ModelParams = dict  # parameter path -> Tensor


@dataclass(frozen=True)
class ModelConfig:
    input_size: int = 64
    encoder_channels: tuple = (8, 16, 32, 64, 64)
    block_depths: tuple = (2, 2, 3, 3, 3)
    levels: int = 4
    in_channels: int = 1
    boundary_classes: int = 4
    room_classes: int = 9
    direction_kernel_halfwidth: int = 4
    alpha: float = 1.0
    literal_center: bool = False
    ablation: str = "full"

    def __post_init__(self):
        object.__setattr__(self, "encoder_channels", tuple(int(c) for c in self.encoder_channels))
        object.__setattr__(self, "block_depths", tuple(int(d) for d in self.block_depths))
        self.validate()

    def validate(self) -> None:
        problems = []
        if self.input_size <= 0 or self.input_size % 32:
            problems.append(f"input_size must be a positive multiple of 32, got {self.input_size}")
        if len(self.encoder_channels) != 5 or min(self.encoder_channels) < 1:
            problems.append(f"encoder_channels must be 5 positive ints, got {self.encoder_channels}")
        if len(self.block_depths) != 5 or min(self.block_depths) < 1:
            problems.append(f"block_depths must be 5 positive ints, got {self.block_depths}")
        if self.levels != 4:
            problems.append(f"levels must be 4, got {self.levels}")
        if self.in_channels not in (1, 3):
            problems.append(f"in_channels must be 1 (grayscale) or 3 (color), got {self.in_channels}")
        if self.boundary_classes < 2:
            problems.append(f"boundary_classes must be >= 2, got {self.boundary_classes}")
        if self.room_classes < 2:
            problems.append(f"room_classes must be >= 2, got {self.room_classes}")
        if self.direction_kernel_halfwidth < 1:
            problems.append(f"direction_kernel_halfwidth must be >= 1, got {self.direction_kernel_halfwidth}")
        if self.ablation not in ABLATIONS:
            problems.append(f"ablation must be one of {ABLATIONS}, got {self.ablation!r}")
        if problems:
            raise ValueError("invalid ModelConfig: " + "; ".join(problems))

    @classmethod
    def full_scale(cls, **overrides) -> "ModelConfig":
        base = dict(input_size=512, encoder_channels=(64, 128, 256, 512, 512))
        base.update(overrides)
        return cls(**base)

    def replace(self, **changes) -> "ModelConfig":
        d = asdict(self)
        d.update(changes)
        return ModelConfig(**d)

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                v = ",".join(str(x) for x in v)
            lines.append(f"{f.name}={v}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "ModelConfig":
        known = {f.name: f for f in fields(cls)}
        kw = {}
        for raw in text.splitlines():
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, val = line.partition("=")
            key, val = key.strip(), val.strip()
            if not sep or key not in known:
                raise ValueError(f"unknown model config entry: {raw!r}")
            kw[key] = _parse_field(known[key].default, val)
        return cls(**kw)


def _parse_field(default, val: str):
    if isinstance(default, bool):
        if val.lower() not in ("true", "false", "1", "0"):
            raise ValueError(f"expected a boolean, got {val!r}")
        return val.lower() in ("true", "1")
    if isinstance(default, tuple):
        return tuple(int(x) for x in val.split(","))
    if isinstance(default, float):
        return float(val)
    if isinstance(default, int):
        return int(val)
    return val


# ---------------------------------------------------------------- params


def _decoder_widths(cfg: ModelConfig) -> list[int]:
    c = cfg.encoder_channels
    # level 1 sits at S/16 next to encoder block 5, level 4 at S/2 next to block 2
    return [c[4], c[3], c[2], c[1]]


def _param_specs(cfg: ModelConfig) -> list[tuple[str, tuple]]:
    """(name, weight shape) for every conv in build order."""
    specs = []

    def conv(name, oc, ic, k):
        specs.append((name, (oc, ic, k, k)))

    def encoder(prefix):
        ic = cfg.in_channels
        for b, (oc, depth) in enumerate(zip(cfg.encoder_channels, cfg.block_depths), start=1):
            for j in range(1, depth + 1):
                conv(f"{prefix}.block{b}.conv{j}", oc, ic, 3)
                ic = oc

    def decoder(prefix, n_classes):
        prev = cfg.encoder_channels[4]
        for lvl, d in enumerate(_decoder_widths(cfg), start=1):
            conv(f"{prefix}.level{lvl}.up", d, prev, 3)
            conv(f"{prefix}.level{lvl}.fuse", d, 2 * d, 3)
            prev = d
        c1 = cfg.encoder_channels[0]
        conv(f"{prefix}.final.up", c1, prev, 3)
        conv(f"{prefix}.final.fuse", c1, 2 * c1, 3)
        conv(f"{prefix}.head", n_classes, c1, 1)

    encoder("encoder")
    if cfg.ablation == "two_separate_networks":
        encoder("room_encoder")
    decoder("boundary_decoder", cfg.boundary_classes)
    decoder("room_decoder", cfg.room_classes)
    if cfg.ablation not in ("no_context", "two_separate_networks"):
        for lvl, d in enumerate(_decoder_widths(cfg), start=1):
            p = f"context.level{lvl}"
            if cfg.ablation != "no_attention":
                conv(f"{p}.attention.conv1", d, d, 3)
                conv(f"{p}.attention.conv2", d, d, 3)
                conv(f"{p}.attention.out", 1, d, 1)
            conv(f"{p}.room.conv", d, d, 3)
            conv(f"{p}.room.reduce", 1, d, 1)
            conv(f"{p}.fuse", d, d + 1, 3)
    return specs


def build_model(config: ModelConfig, rng_seed: int, dtype=np.float32) -> ModelParams:
    """Fresh parameters with He-style uniform init, bound sqrt(6 / fan_in); biases zero."""
    config.validate()
    rng = np.random.default_rng(rng_seed)
    params: ModelParams = {}
    for name, shape in _param_specs(config):
        fan_in = shape[1] * shape[2] * shape[3]
        bound = np.sqrt(6.0 / fan_in)
        w = rng.uniform(-bound, bound, size=shape).astype(dtype)
        params[f"{name}.weight"] = Tensor(w, requires_grad=True, name=f"{name}.weight")
        params[f"{name}.bias"] = Tensor(np.zeros((1, shape[0], 1, 1), dtype=dtype), requires_grad=True,
                                        name=f"{name}.bias")
    return params


def cast_params(params: ModelParams, dtype) -> ModelParams:
    return {k: Tensor(v.data.astype(dtype), requires_grad=True, name=k) for k, v in params.items()}


def _conv(params, name, x, pad=None):
    w = params[f"{name}.weight"]
    k = w.shape[2]
    return T.conv2d(x, w, params[f"{name}.bias"], stride=1, zero_pad=k // 2 if pad is None else pad)


# ----------------------------------------------------------- context module


def direction_kernel(K: int, alpha: float = 1.0, literal_center: bool = False, dtype=np.float64) -> np.ndarray:
    """Sum of the four line kernels (horizontal, vertical, diagonal, anti-diagonal).

    Each line is an all-ones kernel of length ``2K+1`` scaled by ``alpha``, so
    the center weight is ``4*alpha``.  ``literal_center`` counts the center once
    per offset ``k = 1..K`` and direction instead (center weight ``4*K*alpha``).
    """
    n = 2 * K + 1
    ker = np.zeros((n, n), dtype=dtype)
    idx = np.arange(n)
    ker[K, :] += 1  # horizontal
    ker[:, K] += 1  # vertical
    ker[idx, idx] += 1  # main diagonal
    ker[idx, n - 1 - idx] += 1  # anti-diagonal
    if literal_center:
        ker[K, K] = 4 * K
    return (alpha * ker).reshape(1, 1, n, n)


def direction_aware_aggregate(feat2d: Tensor, K: int, alpha: float = 1.0, literal_center: bool = False) -> Tensor:
    """``h + v + d + d'`` over a single-channel map, zero padded."""
    if feat2d.shape[1] != 1:
        raise ValueError(f"direction_aware_aggregate needs a single-channel map, got shape {feat2d.shape}")
    ker = Tensor(direction_kernel(K, alpha, literal_center, dtype=feat2d.dtype))
    return T.conv2d(feat2d, ker, None, stride=1, zero_pad=K)


def attention_weights(boundary_feat: Tensor, params: ModelParams, prefix: str) -> Tensor:
    h = T.relu(_conv(params, f"{prefix}.attention.conv1", boundary_feat))
    h = T.relu(_conv(params, f"{prefix}.attention.conv2", h))
    return T.sigmoid(_conv(params, f"{prefix}.attention.out", h))


def spatial_context(boundary_feat: Tensor, room_feat: Tensor, params: ModelParams, config: ModelConfig,
                    level: int, trace: dict | None = None) -> Tensor:
    """Refine ``room_feat`` with boundary-guided context at one decoder level."""
    if boundary_feat.shape[2:] != room_feat.shape[2:]:
        raise ValueError(f"spatial_context: boundary features {boundary_feat.shape} and room features "
                         f"{room_feat.shape} come from different levels")
    prefix = f"context.level{level}"
    ab = config.ablation
    r = T.relu(_conv(params, f"{prefix}.room.conv", room_feat))
    r2d = _conv(params, f"{prefix}.room.reduce", r)

    if ab == "no_attention":
        a = None
        f1 = r2d
    else:
        a = attention_weights(boundary_feat, params, prefix)
        f1 = T.mul(r2d, a)
    if ab == "no_direction_kernels":
        g = f1
    else:
        g = direction_aware_aggregate(f1, config.direction_kernel_halfwidth, config.alpha, config.literal_center)
    f2 = g if a is None else T.mul(g, a)

    if trace is not None:
        trace[f"level{level}"] = {"attention": a, "reduced": r2d, "gated": f1, "aggregated": g, "context": f2}
    return T.relu(_conv(params, f"{prefix}.fuse", T.concat_channels([room_feat, f2])))


# ------------------------------------------------------------------ forward


def _encode(params, cfg, image, prefix):
    x = image
    skips = []
    for b, depth in enumerate(cfg.block_depths, start=1):
        for j in range(1, depth + 1):
            x = T.relu(_conv(params, f"{prefix}.block{b}.conv{j}", x))
        skips.append(x)
        x = T.max_pool2d(x)
    return x, skips


def _decoder_level(params, prefix, x, skip):
    x = T.relu(_conv(params, f"{prefix}.up", T.upsample_nearest2(x)))
    return T.relu(_conv(params, f"{prefix}.fuse", T.concat_channels([x, skip])))


def forward(params: ModelParams, config: ModelConfig, image: Tensor, trace: dict | None = None):
    """Return ``(boundary_logits, room_logits)`` at full input resolution."""
    s = config.input_size
    if image.shape != (1, config.in_channels, s, s):
        raise ValueError(f"expected image shape {(1, config.in_channels, s, s)}, got {image.shape}")
    ab = config.ablation
    bottleneck, skips = _encode(params, config, image, "encoder")
    if ab == "two_separate_networks":
        room_bottleneck, room_skips = _encode(params, config, image, "room_encoder")
    else:
        room_bottleneck, room_skips = bottleneck, skips
    use_context = ab not in ("no_context", "two_separate_networks")

    xb, xr = bottleneck, room_bottleneck
    for lvl in range(1, 5):
        xb = _decoder_level(params, f"boundary_decoder.level{lvl}", xb, skips[4 - lvl + 1])
        xr = _decoder_level(params, f"room_decoder.level{lvl}", xr, room_skips[4 - lvl + 1])
        if use_context:
            xr = spatial_context(xb, xr, params, config, lvl, trace)

    xb = _decoder_level(params, "boundary_decoder.final", xb, skips[0])
    xr = _decoder_level(params, "room_decoder.final", xr, room_skips[0])
    return _conv(params, "boundary_decoder.head", xb), _conv(params, "room_decoder.head", xr)


def predict(params: ModelParams, config: ModelConfig, image: Tensor):
    """Argmax label maps and softmax probabilities for one image, without recording."""
    with T.no_tape():
        bl, rl = forward(params, config, image)
    pb = T._softmax(bl.data)[0]
    pr = T._softmax(rl.data)[0]
    return pb.argmax(axis=0), pr.argmax(axis=0), pb, pr


def branch_of(name: str) -> str:
    """Which part of the network a parameter belongs to."""
    head = name.split(".", 1)[0]
    return {"encoder": "shared", "room_encoder": "room", "boundary_decoder": "boundary",
            "room_decoder": "room", "context": "context"}[head]
