"""Model zoo and training settings.

Two 3D architectures are wired in: the torchvision video ResNet-18
(r3d_18, optionally initialized from its Kinetics-400 weights) and a
compact 3D MobileNetV2 built here from inverted residual blocks. Both
take (batch, 3, n_layers, height, width) float input and emit 3-class
logits. Weight resolution happens up front so an impossible
architecture/pretrained combination fails before any epoch runs.
"""

from __future__ import annotations

import dataclasses

import torch
from torch import nn

N_CLASSES = 3

ARCHITECTURES = ("resnet3d_18", "mobilenet_v2_3d")


class ModelError(Exception):
    """The requested architecture/pretrained combination cannot be built."""


@dataclasses.dataclass
class TrainSettings:
    architecture: str = "resnet3d_18"
    pretrained: bool = False
    epochs: int = 30
    learning_rate: float = 0.0001
    augment_threshold: float = 0.5
    train_batch: int = 16
    val_batch: int = 16
    seed: int = 0
    weights_path: str | None = None
    target_train_accuracy: float | None = None


def default_settings(architecture: str, pretrained: bool) -> TrainSettings:
    """Per-architecture training defaults, including the deviations used
    with the pre-trained MobileNetV2 (higher learning rate, lighter
    augmentation, larger validation batch)."""
    settings = TrainSettings(architecture=architecture, pretrained=pretrained)
    if architecture == "mobilenet_v2_3d" and pretrained:
        settings.learning_rate = 0.001
        settings.augment_threshold = 0.2
        settings.val_batch = 20
    return settings


def _conv_bn(in_ch: int, out_ch: int, stride) -> nn.Sequential:
    return nn.Sequential(
        nn.Conv3d(in_ch, out_ch, kernel_size=3, stride=stride, padding=1,
                  bias=False),
        nn.BatchNorm3d(out_ch),
        nn.ReLU6(inplace=True))


class _InvertedResidual(nn.Module):
    def __init__(self, in_ch: int, out_ch: int, stride, expand: int):
        super().__init__()
        hidden = in_ch * expand
        self.use_skip = stride == (1, 1, 1) and in_ch == out_ch
        layers = []
        if expand != 1:
            layers += [nn.Conv3d(in_ch, hidden, kernel_size=1, bias=False),
                       nn.BatchNorm3d(hidden),
                       nn.ReLU6(inplace=True)]
        layers += [
            nn.Conv3d(hidden, hidden, kernel_size=3, stride=stride, padding=1,
                      groups=hidden, bias=False),
            nn.BatchNorm3d(hidden),
            nn.ReLU6(inplace=True),
            nn.Conv3d(hidden, out_ch, kernel_size=1, bias=False),
            nn.BatchNorm3d(out_ch),
        ]
        self.block = nn.Sequential(*layers)

    def forward(self, x):
        out = self.block(x)
        return x + out if self.use_skip else out


class MobileNetV2_3D(nn.Module):
    """Scaled-down 3D MobileNetV2: inverted residual bottlenecks with
    depthwise 3D convolutions. Strides touch the z-axis only in the
    deeper stages so shallow stacks keep their layer structure."""

    # (expand, out_channels, repeats, stride of first block)
    _STAGES = (
        (1, 16, 1, (1, 1, 1)),
        (6, 24, 2, (1, 2, 2)),
        (6, 32, 2, (1, 2, 2)),
        (6, 64, 2, (2, 2, 2)),
        (6, 96, 1, (1, 1, 1)),
        (6, 160, 1, (2, 2, 2)),
    )

    def __init__(self, n_classes: int = N_CLASSES):
        super().__init__()
        features = [_conv_bn(3, 32, stride=(1, 2, 2))]
        in_ch = 32
        for expand, out_ch, repeats, stride in self._STAGES:
            for i in range(repeats):
                features.append(_InvertedResidual(
                    in_ch, out_ch, stride if i == 0 else (1, 1, 1), expand))
                in_ch = out_ch
        features += [nn.Conv3d(in_ch, 640, kernel_size=1, bias=False),
                     nn.BatchNorm3d(640),
                     nn.ReLU6(inplace=True)]
        self.features = nn.Sequential(*features)
        self.pool = nn.AdaptiveAvgPool3d(1)
        self.classifier = nn.Linear(640, n_classes)

    def forward(self, x):
        x = self.pool(self.features(x)).flatten(1)
        return self.classifier(x)


def _build_resnet3d(pretrained: bool, weights_path):
    from torchvision.models.video import r3d_18

    if pretrained and weights_path is None:
        from torchvision.models.video import R3D_18_Weights
        try:
            model = r3d_18(weights=R3D_18_Weights.KINETICS400_V1)
        except Exception as exc:
            raise ModelError(
                "pretrained weights for resnet3d_18 could not be fetched "
                f"({exc}); pass an explicit weights file instead") from exc
    else:
        model = r3d_18(weights=None)
    model.fc = nn.Linear(model.fc.in_features, N_CLASSES)
    return model


def build_model(settings: TrainSettings) -> nn.Module:
    """Construct the network, resolving weights before training starts."""
    arch = settings.architecture
    if arch not in ARCHITECTURES:
        raise ModelError(f"unknown architecture {arch!r} "
                         f"(choose from {', '.join(ARCHITECTURES)})")
    if arch == "resnet3d_18":
        model = _build_resnet3d(settings.pretrained, settings.weights_path)
    else:
        if settings.pretrained and settings.weights_path is None:
            raise ModelError(
                "no published pretrained weights exist for mobilenet_v2_3d; "
                "pass an explicit weights file")
        model = MobileNetV2_3D()
    if settings.pretrained and settings.weights_path is not None:
        try:
            state = torch.load(settings.weights_path, map_location="cpu",
                               weights_only=True)
            model.load_state_dict(state)
        except Exception as exc:
            raise ModelError(
                f"cannot load weights from {settings.weights_path}: {exc}") from exc
    return model
