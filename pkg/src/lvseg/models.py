"""Video segmentation networks with swappable reconstruction/segmentation
heads.

Two families:
  * volumetric: an encoder-decoder over (F, H, W) volumes built from
    residual units (two convs, two instance norms, two PReLUs, skip); the
    encoder has configurable stages whose outputs feed the decoder.
  * super_image: the clip is laid out as a sqrt(F) x sqrt(F) grid image and
    processed by a 2D encoder-decoder with a pluggable backbone.

Internal tensor layout is (B, C, F, H, W); helpers convert from the
(H, W, F, C) domain layout. The segmentation head emits one logit channel
per frame, the reconstruction head three pixel channels.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
import torch
from torch import nn
import torch.nn.functional as F

from . import io as lvio
from .core import VideoTensor
from .superimage import grid_side

HEAD_CHANNELS = {"segmentation": 1, "reconstruction": 3}


class InvalidConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    family: str = "volumetric"
    encoder_channels: tuple[int, ...] = (32, 64, 128, 256, 512)
    residual_units: int = 2
    head: str = "segmentation"
    in_channels: int = 3
    height: int = 112
    width: int = 112
    num_frames: int = 32
    backbone: str = "small_resnet"  # super_image family only
    init_seed: int = 0

    def __post_init__(self):
        if self.family not in ("volumetric", "super_image"):
            raise InvalidConfigError(f"unknown family {self.family!r}")
        if self.head not in HEAD_CHANNELS:
            raise InvalidConfigError(f"unknown head {self.head!r}")
        ch = tuple(int(c) for c in self.encoder_channels)
        if len(ch) < 2 or any(b <= a for a, b in zip(ch, ch[1:])):
            raise InvalidConfigError(
                f"encoder_channels must be strictly increasing with >= 2 stages, "
                f"got {ch}")
        if self.residual_units < 1:
            raise InvalidConfigError("residual_units must be >= 1")
        if self.family == "super_image":
            grid_side(self.num_frames)  # F must be a perfect square
        object.__setattr__(self, "encoder_channels", ch)

    @property
    def out_channels(self) -> int:
        return HEAD_CHANNELS[self.head]

    def with_head(self, head: str) -> "ModelConfig":
        return ModelConfig(**{**asdict(self), "head": head})


class ResidualUnit3d(nn.Module):
    def __init__(self, cin, cout, stride=(1, 1, 1)):
        super().__init__()
        self.conv1 = nn.Conv3d(cin, cout, 3, stride=stride, padding=1)
        self.norm1 = nn.InstanceNorm3d(cout, affine=True)
        self.act1 = nn.PReLU(cout)
        self.conv2 = nn.Conv3d(cout, cout, 3, padding=1)
        self.norm2 = nn.InstanceNorm3d(cout, affine=True)
        self.act2 = nn.PReLU(cout)
        if cin != cout or any(s != 1 for s in stride):
            self.skip = nn.Conv3d(cin, cout, 1, stride=stride)
        else:
            self.skip = nn.Identity()

    def forward(self, x):
        y = self.act1(self.norm1(self.conv1(x)))
        y = self.norm2(self.conv2(y))
        return self.act2(y + self.skip(x))


class ResidualUnit2d(nn.Module):
    def __init__(self, cin, cout, stride=1):
        super().__init__()
        self.conv1 = nn.Conv2d(cin, cout, 3, stride=stride, padding=1)
        self.norm1 = nn.InstanceNorm2d(cout, affine=True)
        self.act1 = nn.PReLU(cout)
        self.conv2 = nn.Conv2d(cout, cout, 3, padding=1)
        self.norm2 = nn.InstanceNorm2d(cout, affine=True)
        self.act2 = nn.PReLU(cout)
        if cin != cout or stride != 1:
            self.skip = nn.Conv2d(cin, cout, 1, stride=stride)
        else:
            self.skip = nn.Identity()

    def forward(self, x):
        y = self.act1(self.norm1(self.conv1(x)))
        y = self.norm2(self.conv2(y))
        return self.act2(y + self.skip(x))


def _stage3d(cin, cout, stride, units):
    layers = [ResidualUnit3d(cin, cout, stride)]
    layers += [ResidualUnit3d(cout, cout) for _ in range(units - 1)]
    return nn.Sequential(*layers)


class VolumetricUNet(nn.Module):
    """Residual-unit encoder-decoder over (F, H, W) volumes.

    Spatial downsampling is 2x per stage after the first; temporal
    downsampling stops once the frame axis reaches 1 so short clips keep
    valid shapes.
    """

    def __init__(self, config: ModelConfig):
        super().__init__()
        ch = config.encoder_channels
        self.encoder = nn.ModuleList()
        f = config.num_frames
        cin = config.in_channels
        for i, cout in enumerate(ch):
            if i == 0:
                stride = (1, 1, 1)
            else:
                ts = 2 if f > 1 else 1
                stride = (ts, 2, 2)
                f = (f - 1) // 2 + 1 if ts == 2 else f
            self.encoder.append(_stage3d(cin, cout, stride, config.residual_units))
            cin = cout
        self.decoder = nn.ModuleList()
        for i in range(len(ch) - 2, -1, -1):
            self.decoder.append(
                _stage3d(ch[i + 1] + ch[i], ch[i], (1, 1, 1), config.residual_units))
        self.head = nn.Conv3d(ch[0], config.out_channels, 1)

    def forward(self, x):
        skips = []
        for stage in self.encoder:
            x = stage(x)
            skips.append(x)
        y = skips[-1]
        for stage, skip in zip(self.decoder, reversed(skips[:-1])):
            y = F.interpolate(y, size=skip.shape[2:], mode="trilinear",
                              align_corners=False)
            y = stage(torch.cat([y, skip], dim=1))
        return self.head(y)


class SmallResNetBackbone(nn.Module):
    """4-stage residual CNN backbone for the super-image family.

    Exposes the stage outputs (stride 1, 2, 4, 8 relative to the input) so
    the decoder can consume them as skips; ``channels`` lists the per-stage
    channel counts.
    """

    def __init__(self, in_channels: int, channels: tuple[int, ...]):
        super().__init__()
        self.channels = tuple(channels)
        self.stages = nn.ModuleList()
        cin = in_channels
        for i, cout in enumerate(self.channels):
            stride = 1 if i == 0 else 2
            self.stages.append(nn.Sequential(
                ResidualUnit2d(cin, cout, stride),
                ResidualUnit2d(cout, cout)))
            cin = cout

    def forward(self, x):
        feats = []
        for stage in self.stages:
            x = stage(x)
            feats.append(x)
        return feats


BACKBONES = {"small_resnet": SmallResNetBackbone}


def register_backbone(name: str, factory) -> None:
    """Register a 2D backbone: factory(in_channels, channels) -> nn.Module
    returning the per-stage feature list and exposing ``channels``."""
    BACKBONES[name] = factory


class SuperImageUNet(nn.Module):
    """2D encoder-decoder applied to the super-image grid layout."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.grid = grid_side(config.num_frames)
        self.num_frames = config.num_frames
        if config.backbone not in BACKBONES:
            raise InvalidConfigError(f"unknown backbone {config.backbone!r}")
        self.backbone = BACKBONES[config.backbone](config.in_channels,
                                                   config.encoder_channels)
        ch = tuple(self.backbone.channels)
        self.decoder = nn.ModuleList()
        for i in range(len(ch) - 2, -1, -1):
            self.decoder.append(ResidualUnit2d(ch[i + 1] + ch[i], ch[i]))
        self.head = nn.Conv2d(ch[0], config.out_channels, 1)

    def _to_grid(self, x):
        b, c, f, h, w = x.shape
        g = self.grid
        x = x.reshape(b, c, g, g, h, w)
        x = x.permute(0, 1, 2, 4, 3, 5)
        return x.reshape(b, c, g * h, g * w)

    def _from_grid(self, x, h, w):
        b, c, _, _ = x.shape
        g = self.grid
        x = x.reshape(b, c, g, h, g, w)
        x = x.permute(0, 1, 2, 4, 3, 5)
        return x.reshape(b, c, g * g, h, w)

    def forward(self, x):
        b, c, f, h, w = x.shape
        if f != self.num_frames:
            raise InvalidConfigError(f"expected F={self.num_frames}, got {f}")
        img = self._to_grid(x)
        feats = self.backbone(img)
        y = feats[-1]
        for stage, skip in zip(self.decoder, reversed(feats[:-1])):
            y = F.interpolate(y, size=skip.shape[2:], mode="bilinear",
                              align_corners=False)
            y = stage(torch.cat([y, skip], dim=1))
        if y.shape[2:] != img.shape[2:]:
            y = F.interpolate(y, size=img.shape[2:], mode="bilinear",
                              align_corners=False)
        y = self.head(y)
        return self._from_grid(y, h, w)


@dataclass
class SegmentationModel:
    config: ModelConfig
    net: nn.Module

    def parameter_count(self) -> int:
        return sum(p.numel() for p in self.net.parameters())


def build_model(config: ModelConfig) -> SegmentationModel:
    """Construct a model with deterministic parameter initialization."""
    with torch.random.fork_rng():
        torch.manual_seed(config.init_seed)
        if config.family == "volumetric":
            net = VolumetricUNet(config)
        else:
            net = SuperImageUNet(config)
    return SegmentationModel(config=config, net=net)


def clip_to_tensor(clip: VideoTensor | np.ndarray) -> torch.Tensor:
    """(H, W, F, C) -> (1, C, F, H, W) float32 tensor."""
    pixels = clip.pixels if isinstance(clip, VideoTensor) else clip
    arr = np.ascontiguousarray(np.transpose(pixels, (3, 2, 0, 1)))
    return torch.from_numpy(arr).float().unsqueeze(0)


def output_to_array(out: torch.Tensor) -> np.ndarray:
    """(1, K, F, H, W) -> (H, W, F, K)."""
    arr = out.detach().squeeze(0).cpu().numpy()
    return np.transpose(arr, (2, 3, 1, 0))


def forward(model: SegmentationModel, clip: VideoTensor) -> np.ndarray:
    """Evaluation-mode forward pass; returns (H, W, F, out_channels)."""
    if (clip.height, clip.width) != (model.config.height, model.config.width):
        raise InvalidConfigError(
            f"clip {clip.height}x{clip.width} does not match model input "
            f"{model.config.height}x{model.config.width}")
    if clip.num_frames != model.config.num_frames:
        raise InvalidConfigError(
            f"clip F={clip.num_frames} does not match model F="
            f"{model.config.num_frames}")
    model.net.eval()
    with torch.no_grad():
        out = model.net(clip_to_tensor(clip))
    result = output_to_array(out)
    if not np.isfinite(result).all():
        raise FloatingPointError("model produced non-finite outputs")
    return result


def _is_head_param(name: str) -> bool:
    return name.startswith("head.")


def swap_head(model: SegmentationModel, new_head: str,
              head_seed: int | None = None) -> SegmentationModel:
    """Return a model with the requested head, preserving trunk parameters
    bit-exactly; head parameters are freshly initialized."""
    new_config = model.config.with_head(new_head)
    if head_seed is not None:
        new_config = ModelConfig(**{**asdict(new_config), "init_seed": head_seed})
    new_model = build_model(new_config)
    trunk = {k: v for k, v in model.net.state_dict().items()
             if not _is_head_param(k)}
    new_model.net.load_state_dict(trunk, strict=False)
    return new_model


def save_checkpoint(model: SegmentationModel, path, stage: str,
                    extra: dict | None = None) -> None:
    """Named-tensor archive with the config manifest and a stage tag
    (pretrained | finetuned | ...)."""
    tensors = {name: t.detach().cpu().numpy()
               for name, t in model.net.state_dict().items()}
    meta = {"config": asdict(model.config), "stage": stage,
            "extra": extra or {}}
    lvio.write_archive(path, tensors, meta=meta)


def load_checkpoint(path) -> tuple[SegmentationModel, dict]:
    """Load a checkpoint; tensors are matched by name, so models with
    added/removed parameters still load their intersection."""
    tensors, meta, _ = lvio.read_archive(path)
    cfg = dict(meta["config"])
    cfg["encoder_channels"] = tuple(cfg["encoder_channels"])
    model = build_model(ModelConfig(**cfg))
    state = model.net.state_dict()
    loadable = {k: torch.from_numpy(np.array(v)) for k, v in tensors.items()
                if k in state and tuple(state[k].shape) == tuple(np.shape(v))}
    model.net.load_state_dict(loadable, strict=False)
    return model, meta
