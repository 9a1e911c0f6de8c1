"""Architecture registry.

Conditional generator/discriminator for 32x32 synthesis plus the matcher and
evaluation classifiers (ConvNet3, ResNet10/18, AlexNet, VGG11). Every
classifier exposes final logits together with a designated intermediate
feature tap from the same forward pass.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import torch
import torch.nn as nn

from .exceptions import ConstructionError, UnsupportedArchitectureError

IMAGE_SIZE = 32


class ForwardOutputs(NamedTuple):
    logits: torch.Tensor  # (B, K)
    features: torch.Tensor  # (B, ...) from the tap layer


@dataclass
class GeneratorSpec:
    noise_dim: int = 100
    label_dim: int = 10  # width of the learned label embedding
    num_classes: int = 10
    output_shape: tuple = (1, IMAGE_SIZE, IMAGE_SIZE)

    def validate(self) -> "GeneratorSpec":
        if self.noise_dim < 1:
            raise ConstructionError("noise_dim must be >= 1")
        if self.label_dim < 1:
            raise ConstructionError("label_dim must be >= 1")
        if self.num_classes < 2:
            raise ConstructionError("num_classes must be >= 2")
        c, h, w = self.output_shape
        if c < 1 or (h, w) != (IMAGE_SIZE, IMAGE_SIZE):
            raise ConstructionError(
                f"output_shape must be (C, {IMAGE_SIZE}, {IMAGE_SIZE}), got {self.output_shape}"
            )
        return self

    def to_dict(self) -> dict:
        return {
            "noise_dim": self.noise_dim,
            "label_dim": self.label_dim,
            "num_classes": self.num_classes,
            "output_shape": list(self.output_shape),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GeneratorSpec":
        return cls(
            noise_dim=int(d["noise_dim"]),
            label_dim=int(d["label_dim"]),
            num_classes=int(d["num_classes"]),
            output_shape=tuple(d["output_shape"]),
        )


@dataclass
class MatcherSpec:
    arch_id: str
    num_classes: int = 10
    input_channels: int = 1
    tap_id: str = None  # None -> architecture default

    def resolved_tap(self) -> str:
        cls = _matcher_class(self.arch_id)
        tap = self.tap_id if self.tap_id is not None else cls.DEFAULT_TAP
        if tap not in cls.TAPS:
            raise ConstructionError(
                f"{self.arch_id} has no tap {tap!r}; available: {cls.TAPS}"
            )
        return tap


def _check_image_input(x: torch.Tensor, channels: int) -> None:
    if x.ndim != 4 or x.shape[0] == 0:
        raise ValueError(f"expected non-empty (B, C, H, W) input, got {tuple(x.shape)}")
    if x.shape[1] != channels:
        raise ValueError(f"expected {channels} input channels, got {x.shape[1]}")


class Generator(nn.Module):
    """Conditional DCGAN-style generator: [z (+) embed(y)] -> 32x32 image in [-1, 1]."""

    def __init__(self, spec: GeneratorSpec):
        super().__init__()
        spec.validate()
        self.spec = spec
        channels = spec.output_shape[0]
        self.label_embed = nn.Embedding(spec.num_classes, spec.label_dim)
        self.project = nn.Sequential(
            nn.Linear(spec.noise_dim + spec.label_dim, 256 * 4 * 4),
            nn.BatchNorm1d(256 * 4 * 4),
            nn.ReLU(inplace=True),
        )
        self.deconv = nn.Sequential(
            nn.ConvTranspose2d(256, 128, 4, stride=2, padding=1),  # 4 -> 8
            nn.BatchNorm2d(128),
            nn.ReLU(inplace=True),
            nn.ConvTranspose2d(128, 64, 4, stride=2, padding=1),  # 8 -> 16
            nn.BatchNorm2d(64),
            nn.ReLU(inplace=True),
            nn.ConvTranspose2d(64, channels, 4, stride=2, padding=1),  # 16 -> 32
            nn.Tanh(),
        )

    def forward(self, z: torch.Tensor, y: torch.Tensor) -> torch.Tensor:
        if z.ndim != 2 or z.shape[1] != self.spec.noise_dim:
            raise ValueError(f"expected noise of shape (B, {self.spec.noise_dim})")
        h = torch.cat([z, self.label_embed(y)], dim=1)
        h = self.project(h).view(-1, 256, 4, 4)
        return self.deconv(h)


class Discriminator(nn.Module):
    """Conditional discriminator; labels enter as channel-broadcast embedding planes."""

    def __init__(self, num_classes: int, input_channels: int):
        super().__init__()
        self.num_classes = num_classes
        self.input_channels = input_channels
        self.label_embed = nn.Embedding(num_classes, num_classes)
        self.conv = nn.Sequential(
            nn.Conv2d(input_channels + num_classes, 64, 4, stride=2, padding=1),  # 16
            nn.LeakyReLU(0.2, inplace=True),
            nn.Conv2d(64, 128, 4, stride=2, padding=1),  # 8
            nn.BatchNorm2d(128),
            nn.LeakyReLU(0.2, inplace=True),
            nn.Conv2d(128, 256, 4, stride=2, padding=1),  # 4
            nn.BatchNorm2d(256),
            nn.LeakyReLU(0.2, inplace=True),
            nn.Conv2d(256, 1, 4, stride=1, padding=0),  # 1
            nn.Sigmoid(),
        )

    def forward(self, x: torch.Tensor, y: torch.Tensor) -> torch.Tensor:
        _check_image_input(x, self.input_channels)
        planes = self.label_embed(y).view(-1, self.num_classes, 1, 1)
        planes = planes.expand(-1, -1, x.shape[2], x.shape[3])
        return self.conv(torch.cat([x, planes], dim=1)).view(-1)


class ConvNet3(nn.Module):
    """3 blocks of [3x3 conv(128) -> BN -> ReLU -> 2x2 avg pool] + linear head."""

    TAPS = ("block1", "block2", "block3")
    DEFAULT_TAP = "block2"

    def __init__(self, num_classes: int, input_channels: int, tap_id: str = None):
        super().__init__()
        self.input_channels = input_channels
        self.tap_id = tap_id or self.DEFAULT_TAP
        width = 128

        def block(cin):
            return nn.Sequential(
                nn.Conv2d(cin, width, 3, padding=1),
                nn.BatchNorm2d(width),
                nn.ReLU(inplace=True),
                nn.AvgPool2d(2),
            )

        self.block1 = block(input_channels)  # 32 -> 16
        self.block2 = block(width)  # 16 -> 8
        self.block3 = block(width)  # 8 -> 4
        self.head = nn.Linear(width * 4 * 4, num_classes)

    def forward_with_features(self, x: torch.Tensor) -> ForwardOutputs:
        _check_image_input(x, self.input_channels)
        feat = None
        h = x
        for name in self.TAPS:
            h = getattr(self, name)(h)
            if name == self.tap_id:
                feat = h
        return ForwardOutputs(self.head(h.flatten(1)), feat)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.forward_with_features(x).logits


class _BasicBlock(nn.Module):
    def __init__(self, cin, cout, stride=1):
        super().__init__()
        self.conv1 = nn.Conv2d(cin, cout, 3, stride=stride, padding=1, bias=False)
        self.bn1 = nn.BatchNorm2d(cout)
        self.conv2 = nn.Conv2d(cout, cout, 3, padding=1, bias=False)
        self.bn2 = nn.BatchNorm2d(cout)
        self.relu = nn.ReLU(inplace=True)
        if stride != 1 or cin != cout:
            self.shortcut = nn.Sequential(
                nn.Conv2d(cin, cout, 1, stride=stride, bias=False),
                nn.BatchNorm2d(cout),
            )
        else:
            self.shortcut = nn.Identity()

    def forward(self, x):
        h = self.relu(self.bn1(self.conv1(x)))
        h = self.bn2(self.conv2(h))
        return self.relu(h + self.shortcut(x))


class ResNet(nn.Module):
    """CIFAR-style residual network (3x3 stem, four stages, global avg pool)."""

    TAPS = ("stem", "stage1", "stage2", "stage3", "stage4")
    DEFAULT_TAP = "stage2"

    def __init__(self, blocks_per_stage, num_classes, input_channels, tap_id=None):
        super().__init__()
        self.input_channels = input_channels
        self.tap_id = tap_id or self.DEFAULT_TAP
        self.stem = nn.Sequential(
            nn.Conv2d(input_channels, 64, 3, padding=1, bias=False),
            nn.BatchNorm2d(64),
            nn.ReLU(inplace=True),
        )
        widths = (64, 128, 256, 512)
        strides = (1, 2, 2, 2)
        cin = 64
        for i, (width, n, stride) in enumerate(zip(widths, blocks_per_stage, strides), 1):
            layers = []
            for j in range(n):
                layers.append(_BasicBlock(cin, width, stride if j == 0 else 1))
                cin = width
            setattr(self, f"stage{i}", nn.Sequential(*layers))
        self.pool = nn.AdaptiveAvgPool2d(1)
        self.head = nn.Linear(512, num_classes)

    def forward_with_features(self, x: torch.Tensor) -> ForwardOutputs:
        _check_image_input(x, self.input_channels)
        feat = None
        h = x
        for name in self.TAPS:
            h = getattr(self, name)(h)
            if name == self.tap_id:
                feat = h
        return ForwardOutputs(self.head(self.pool(h).flatten(1)), feat)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.forward_with_features(x).logits


class ResNet10(ResNet):
    def __init__(self, num_classes, input_channels, tap_id=None):
        super().__init__((1, 1, 1, 1), num_classes, input_channels, tap_id)


class ResNet18(ResNet):
    def __init__(self, num_classes, input_channels, tap_id=None):
        super().__init__((2, 2, 2, 2), num_classes, input_channels, tap_id)


class AlexNet(nn.Module):
    """AlexNet variant sized for 32x32 inputs."""

    TAPS = ("conv1", "conv2", "conv3", "conv4", "conv5")
    DEFAULT_TAP = "conv3"

    def __init__(self, num_classes: int, input_channels: int, tap_id: str = None):
        super().__init__()
        self.input_channels = input_channels
        self.tap_id = tap_id or self.DEFAULT_TAP
        self.conv1 = nn.Sequential(
            nn.Conv2d(input_channels, 128, 5, padding=2),
            nn.ReLU(inplace=True),
            nn.MaxPool2d(2),  # 16
        )
        self.conv2 = nn.Sequential(
            nn.Conv2d(128, 192, 5, padding=2),
            nn.ReLU(inplace=True),
            nn.MaxPool2d(2),  # 8
        )
        self.conv3 = nn.Sequential(nn.Conv2d(192, 256, 3, padding=1), nn.ReLU(inplace=True))
        self.conv4 = nn.Sequential(nn.Conv2d(256, 192, 3, padding=1), nn.ReLU(inplace=True))
        self.conv5 = nn.Sequential(
            nn.Conv2d(192, 192, 3, padding=1),
            nn.ReLU(inplace=True),
            nn.MaxPool2d(2),  # 4
        )
        self.head = nn.Linear(192 * 4 * 4, num_classes)

    def forward_with_features(self, x: torch.Tensor) -> ForwardOutputs:
        _check_image_input(x, self.input_channels)
        feat = None
        h = x
        for name in self.TAPS:
            h = getattr(self, name)(h)
            if name == self.tap_id:
                feat = h
        return ForwardOutputs(self.head(h.flatten(1)), feat)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.forward_with_features(x).logits


class VGG11(nn.Module):
    """VGG-11 with batch norm, classifier sized for 32x32 inputs."""

    TAPS = ("stage1", "stage2", "stage3", "stage4", "stage5")
    DEFAULT_TAP = "stage3"
    _CFG = ((64,), (128,), (256, 256), (512, 512), (512, 512))

    def __init__(self, num_classes: int, input_channels: int, tap_id: str = None):
        super().__init__()
        self.input_channels = input_channels
        self.tap_id = tap_id or self.DEFAULT_TAP
        cin = input_channels
        for i, widths in enumerate(self._CFG, 1):
            layers = []
            for width in widths:
                layers += [
                    nn.Conv2d(cin, width, 3, padding=1),
                    nn.BatchNorm2d(width),
                    nn.ReLU(inplace=True),
                ]
                cin = width
            layers.append(nn.MaxPool2d(2))
            setattr(self, f"stage{i}", nn.Sequential(*layers))
        self.head = nn.Linear(512, num_classes)  # 1x1 spatial after stage5

    def forward_with_features(self, x: torch.Tensor) -> ForwardOutputs:
        _check_image_input(x, self.input_channels)
        feat = None
        h = x
        for name in self.TAPS:
            h = getattr(self, name)(h)
            if name == self.tap_id:
                feat = h
        return ForwardOutputs(self.head(h.flatten(1)), feat)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.forward_with_features(x).logits


MATCHER_ARCHS = {
    "convnet3": ConvNet3,
    "resnet10": ResNet10,
    "resnet18": ResNet18,
    "alexnet": AlexNet,
    "vgg11": VGG11,
}


def _matcher_class(arch_id: str):
    try:
        return MATCHER_ARCHS[arch_id]
    except KeyError:
        raise UnsupportedArchitectureError(
            f"unknown architecture {arch_id!r}; registered: {sorted(MATCHER_ARCHS)}"
        ) from None


def build_generator(spec: GeneratorSpec, seed: int) -> Generator:
    """Construct a generator with deterministic parameter init under ``seed``."""
    spec.validate()
    with torch.random.fork_rng():
        torch.manual_seed(seed)
        return Generator(spec)


def build_discriminator(num_classes: int, input_channels: int, seed: int = None) -> Discriminator:
    if seed is None:
        return Discriminator(num_classes, input_channels)
    with torch.random.fork_rng():
        torch.manual_seed(seed)
        return Discriminator(num_classes, input_channels)


def build_matcher(spec: MatcherSpec, seed: int) -> nn.Module:
    """Construct a freshly initialized (never pretrained) matcher network."""
    cls = _matcher_class(spec.arch_id)
    tap = spec.resolved_tap()
    with torch.random.fork_rng():
        torch.manual_seed(seed)
        return cls(spec.num_classes, spec.input_channels, tap_id=tap)


def forward_with_features(net: nn.Module, pixels: torch.Tensor) -> ForwardOutputs:
    """One forward pass returning both logits and the tap-layer features."""
    return net.forward_with_features(pixels)


def matcher_tap_shape(spec: MatcherSpec) -> tuple:
    """Report the tap output shape (excluding batch dim) for 32x32 inputs."""
    net = build_matcher(spec, seed=0)
    net.eval()
    with torch.no_grad():
        probe = torch.zeros(1, spec.input_channels, IMAGE_SIZE, IMAGE_SIZE)
        out = net.forward_with_features(probe)
    return tuple(out.features.shape[1:])


def describe_architecture(arch_id: str) -> dict:
    """Introspection: default tap id and the full tap list for one architecture."""
    cls = _matcher_class(arch_id)
    return {"arch_id": arch_id, "default_tap": cls.DEFAULT_TAP, "taps": list(cls.TAPS)}
