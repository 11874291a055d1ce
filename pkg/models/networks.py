# insilico-labeling/models/networks.py
# Network constructors: multi-head ResNet generator, per-organelle PatchGAN discriminators,
# UNet++ (and plain U-Net), and the modality-conditioned dynamic first convolution.
#
# Every generator maps (B, 1, H, W) in [-1, 1] to (B, 4, H, W) in (-1, 1), channels in
# canonical organelle order, and exposes `first_conv` and `heads`.

import logging
from contextlib import contextmanager
from dataclasses import dataclass
from typing import List, Literal, Optional, Sequence, Tuple, Union

import torch
import torch.nn as nn
import torch.nn.functional as F
from pydantic import BaseModel, ConfigDict, Field, field_validator

from shared.errors import LabelValidationError, ShapeError
from shared.organelle_types import MODALITY_ORDER, Modality, N_ORGANELLES

logger = logging.getLogger(__name__)

Tier = Literal["full", "test"]


# --- Specs ---

class GeneratorSpec(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    base_width: int = Field(64, ge=1)
    n_resblocks: int = Field(9, ge=1)
    n_heads: int = N_ORGANELLES
    patch_size: int = Field(512, ge=4)

    @field_validator("n_heads")
    @classmethod
    def _four_heads(cls, v):
        if v != N_ORGANELLES:
            raise ValueError(f"n_heads must be {N_ORGANELLES}, got {v}")
        return v

    @classmethod
    def for_tier(cls, tier: Tier) -> "GeneratorSpec":
        if tier == "test":
            return cls(base_width=8, n_resblocks=2, patch_size=64)
        return cls()


class DiscriminatorSpec(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    base_width: int = Field(64, ge=1)
    n_layers: int = Field(3, ge=1)

    @classmethod
    def for_tier(cls, tier: Tier) -> "DiscriminatorSpec":
        if tier == "test":
            return cls(base_width=8, n_layers=3)
        return cls()


class UnetPPSpec(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    depth: int = Field(4, ge=1)
    base_width: int = Field(32, ge=1)
    deep_supervision: bool = False

    @field_validator("deep_supervision")
    @classmethod
    def _no_deep_supervision(cls, v):
        if v:
            raise ValueError("deep supervision is not supported")
        return v

    @classmethod
    def for_tier(cls, tier: Tier) -> "UnetPPSpec":
        if tier == "test":
            return cls(depth=2, base_width=8)
        return cls()


@contextmanager
def _seeded(seed: Optional[int]):
    """Runs parameter construction under a fixed CPU seed without touching the global stream."""
    if seed is None:
        yield
        return
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        yield


def count_parameters(module: nn.Module) -> int:
    return sum(p.numel() for p in module.parameters())


# --- Multi-head Generators ---

class FourHeadGenerator(nn.Module):
    """Common contract: pad -> first_conv -> trunk -> four heads."""

    first_conv: nn.Conv2d
    heads: nn.ModuleList

    def check_input(self, x: torch.Tensor):
        if x.dim() != 4 or x.shape[1] != 1:
            raise ShapeError(f"expected input of shape (B, 1, H, W), got {tuple(x.shape)}")

    def input_pad(self, x: torch.Tensor) -> torch.Tensor:
        return x

    def forward_features(self, h: torch.Tensor) -> torch.Tensor:
        raise NotImplementedError

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        self.check_input(x)
        return self.forward_features(self.first_conv(self.input_pad(x)))

    def head_parameters(self, index: int) -> List[nn.Parameter]:
        """Parameters exclusive to the decoder head of organelle `index`."""
        return list(self.heads[index].parameters())


class ResnetBlock(nn.Module):
    def __init__(self, dim: int):
        super().__init__()
        self.block = nn.Sequential(
            nn.ReflectionPad2d(1),
            nn.Conv2d(dim, dim, kernel_size=3),
            nn.InstanceNorm2d(dim),
            nn.ReLU(True),
            nn.ReflectionPad2d(1),
            nn.Conv2d(dim, dim, kernel_size=3),
            nn.InstanceNorm2d(dim),
        )

    def forward(self, x):
        return x + self.block(x)


def _resnet_decoder_head(width: int) -> nn.Sequential:
    layers = []
    for i in range(2):
        mult = 2 ** (2 - i)
        layers += [
            nn.ConvTranspose2d(width * mult, width * mult // 2, kernel_size=3, stride=2, padding=1, output_padding=1),
            nn.InstanceNorm2d(width * mult // 2),
            nn.ReLU(True),
        ]
    layers += [nn.ReflectionPad2d(3), nn.Conv2d(width, 1, kernel_size=7), nn.Tanh()]
    return nn.Sequential(*layers)


class MultiHeadResnetGenerator(FourHeadGenerator):
    """
    ResNet generator with a shared encoder and residual trunk and four decoder heads.

    Stem: 7x7 conv then two stride-2 downsamplers. Each head: two stride-2 transposed
    convolutions, 7x7 output conv, tanh.
    """

    def __init__(self, spec: GeneratorSpec):
        super().__init__()
        self.spec = spec
        w = spec.base_width
        self.first_conv = nn.Conv2d(1, w, kernel_size=7)
        encoder = [nn.InstanceNorm2d(w), nn.ReLU(True)]
        for i in range(2):
            mult = 2 ** i
            encoder += [
                nn.Conv2d(w * mult, w * mult * 2, kernel_size=3, stride=2, padding=1),
                nn.InstanceNorm2d(w * mult * 2),
                nn.ReLU(True),
            ]
        self.encoder = nn.Sequential(*encoder)
        self.trunk = nn.Sequential(*[ResnetBlock(w * 4) for _ in range(spec.n_resblocks)])
        self.heads = nn.ModuleList([_resnet_decoder_head(w) for _ in range(spec.n_heads)])

    def check_input(self, x):
        super().check_input(x)
        h, w = x.shape[-2:]
        if h % 4 or w % 4:
            raise ShapeError(f"generator input H and W must be divisible by 4, got {h}x{w}")

    def input_pad(self, x):
        return F.pad(x, (3, 3, 3, 3), mode="reflect")

    def forward_features(self, h):
        shared = self.trunk(self.encoder(h))
        return torch.cat([head(shared) for head in self.heads], dim=1)


def build_generator(spec: GeneratorSpec, seed: Optional[int] = None) -> MultiHeadResnetGenerator:
    with _seeded(seed):
        model = MultiHeadResnetGenerator(spec)
    logger.debug(f"Built ResNet generator ({spec.n_resblocks} blocks, width {spec.base_width}): {count_parameters(model)} parameters")
    return model


def _conv_block(in_ch: int, out_ch: int) -> nn.Sequential:
    return nn.Sequential(
        nn.Conv2d(in_ch, out_ch, kernel_size=3, padding=1),
        nn.InstanceNorm2d(out_ch),
        nn.ReLU(True),
        nn.Conv2d(out_ch, out_ch, kernel_size=3, padding=1),
        nn.InstanceNorm2d(out_ch),
        nn.ReLU(True),
    )


class UnetPlusPlus(FourHeadGenerator):
    """
    UNet++ with nested dense skip connections; `nested=False` gives the plain U-Net of the
    same depth and width (decoder nodes see only the encoder node of their level).

    Node x[i][j] sits at resolution level i; j counts the convolution units along its skip path.
    """

    def __init__(self, spec: UnetPPSpec, nested: bool = True):
        super().__init__()
        self.spec = spec
        self.nested = nested
        depth, w = spec.depth, spec.base_width
        widths = [w * 2 ** i for i in range(depth + 1)]
        self.first_conv = nn.Conv2d(1, w, kernel_size=3, padding=1)
        self.pool = nn.MaxPool2d(2)
        self.up = nn.Upsample(scale_factor=2, mode="bilinear", align_corners=True)
        self.nodes = nn.ModuleDict()
        self.nodes["x0_0"] = nn.Sequential(
            nn.InstanceNorm2d(w), nn.ReLU(True),
            nn.Conv2d(w, w, kernel_size=3, padding=1), nn.InstanceNorm2d(w), nn.ReLU(True),
        )
        for i in range(1, depth + 1):
            self.nodes[f"x{i}_0"] = _conv_block(widths[i - 1], widths[i])
        for j in range(1, depth + 1):
            for i in range(depth - j + 1):
                if not self._has_node(i, j):
                    continue
                n_skips = j if nested else 1
                self.nodes[f"x{i}_{j}"] = _conv_block(widths[i] * n_skips + widths[i + 1], widths[i])
        self.heads = nn.ModuleList([
            nn.Sequential(nn.Conv2d(w, 1, kernel_size=1), nn.Tanh()) for _ in range(N_ORGANELLES)
        ])

    def _has_node(self, i: int, j: int) -> bool:
        return self.nested or i + j == self.spec.depth

    def check_input(self, x):
        super().check_input(x)
        factor = 2 ** self.spec.depth
        h, w = x.shape[-2:]
        if h % factor or w % factor:
            raise ShapeError(f"UNet++ input H and W must be divisible by {factor}, got {h}x{w}")

    def forward_features(self, h):
        depth = self.spec.depth
        x = {(0, 0): self.nodes["x0_0"](h)}
        for i in range(1, depth + 1):
            x[(i, 0)] = self.nodes[f"x{i}_0"](self.pool(x[(i - 1, 0)]))
        for j in range(1, depth + 1):
            for i in range(depth - j + 1):
                if not self._has_node(i, j):
                    continue
                skips = [x[(i, k)] for k in range(j)] if self.nested else [x[(i, 0)]]
                x[(i, j)] = self.nodes[f"x{i}_{j}"](torch.cat(skips + [self.up(x[(i + 1, j - 1)])], dim=1))
        top = x[(0, depth)]
        return torch.cat([head(top) for head in self.heads], dim=1)


def build_unetpp(spec: UnetPPSpec, seed: Optional[int] = None) -> UnetPlusPlus:
    with _seeded(seed):
        model = UnetPlusPlus(spec, nested=True)
    logger.debug(f"Built UNet++ (depth {spec.depth}, width {spec.base_width}): {count_parameters(model)} parameters")
    return model


def build_unet(spec: UnetPPSpec, seed: Optional[int] = None) -> UnetPlusPlus:
    """Plain U-Net counterpart of build_unetpp."""
    with _seeded(seed):
        return UnetPlusPlus(spec, nested=False)


# --- Discriminators ---

class PatchGANDiscriminator(nn.Module):
    """Conditional PatchGAN over concat(source, organelle plane): (B, 2, H, W) -> (B, 1, h, w) logits."""

    def __init__(self, spec: DiscriminatorSpec):
        super().__init__()
        w = spec.base_width
        layers = [nn.Conv2d(2, w, kernel_size=4, stride=2, padding=1), nn.LeakyReLU(0.2, True)]
        mult = 1
        for n in range(1, spec.n_layers):
            prev, mult = mult, min(2 ** n, 8)
            layers += [
                nn.Conv2d(w * prev, w * mult, kernel_size=4, stride=2, padding=1),
                nn.InstanceNorm2d(w * mult),
                nn.LeakyReLU(0.2, True),
            ]
        prev, mult = mult, min(2 ** spec.n_layers, 8)
        layers += [
            nn.Conv2d(w * prev, w * mult, kernel_size=4, stride=1, padding=1),
            nn.InstanceNorm2d(w * mult),
            nn.LeakyReLU(0.2, True),
            nn.Conv2d(w * mult, 1, kernel_size=4, stride=1, padding=1),
        ]
        self.model = nn.Sequential(*layers)

    def forward(self, pair: torch.Tensor) -> torch.Tensor:
        if pair.dim() != 4 or pair.shape[1] != 2:
            raise ShapeError(f"discriminator expects (B, 2, H, W) input, got {tuple(pair.shape)}")
        return self.model(pair)


def build_discriminator(spec: DiscriminatorSpec, seed: Optional[int] = None) -> PatchGANDiscriminator:
    with _seeded(seed):
        return PatchGANDiscriminator(spec)


def build_discriminator_bank(spec: DiscriminatorSpec, seed: Optional[int] = None) -> nn.ModuleList:
    """One independent discriminator per organelle, in canonical order."""
    with _seeded(seed):
        return nn.ModuleList([PatchGANDiscriminator(spec) for _ in range(N_ORGANELLES)])


# --- Modality Conditioning ---

@dataclass(frozen=True)
class ModalityCode:
    """One-hot modality code ordered (BF, PC, DIC)."""
    vector: Tuple[float, float, float]

    def __post_init__(self):
        check_one_hot(torch.as_tensor([self.vector], dtype=torch.float64))

    @classmethod
    def for_modality(cls, modality: Union[Modality, str]) -> "ModalityCode":
        index = Modality(modality).code_index
        return cls(vector=tuple(1.0 if i == index else 0.0 for i in range(len(MODALITY_ORDER))))

    @property
    def modality(self) -> Modality:
        return MODALITY_ORDER[self.vector.index(1.0)]

    def as_tensor(self, batch: int = 1, dtype=torch.float32) -> torch.Tensor:
        return torch.tensor([self.vector] * batch, dtype=dtype)


def check_one_hot(codes: torch.Tensor):
    if codes.dim() != 2 or codes.shape[1] != len(MODALITY_ORDER):
        raise LabelValidationError(f"modality codes must have shape (B, {len(MODALITY_ORDER)}), got {tuple(codes.shape)}")
    is_binary = torch.all((codes == 0) | (codes == 1))
    if not bool(is_binary) or not bool(torch.all(codes.sum(dim=1) == 1)):
        raise LabelValidationError(f"modality code is not one-hot: {codes.tolist()}")


def modality_codes(modalities: Sequence[Union[Modality, str]], dtype=torch.float32) -> torch.Tensor:
    return torch.cat([ModalityCode.for_modality(m).as_tensor(dtype=dtype) for m in modalities], dim=0)


class DynamicConvController(nn.Module):
    """
    Affine map from a modality code to the full parameter set (kernel and bias) of a
    convolution shaped like `template`.

    Column j of the weight is initialised to a default-initialised convolution, so code j
    starts from an ordinary static first layer.
    """

    def __init__(self, template: nn.Conv2d, n_codes: int = len(MODALITY_ORDER)):
        super().__init__()
        self.weight_shape = tuple(template.weight.shape)
        self.n_weight = template.weight.numel()
        self.n_bias = template.bias.numel() if template.bias is not None else 0
        self.n_params = self.n_weight + self.n_bias
        self.fc = nn.Linear(n_codes, self.n_params)
        with torch.no_grad():
            for j in range(n_codes):
                fresh = nn.Conv2d(
                    template.in_channels, template.out_channels, template.kernel_size,
                    bias=template.bias is not None,
                )
                column = [fresh.weight.flatten()]
                if fresh.bias is not None:
                    column.append(fresh.bias.flatten())
                self.fc.weight[:, j] = torch.cat(column)
            self.fc.bias.zero_()

    def forward(self, codes: torch.Tensor) -> Tuple[torch.Tensor, Optional[torch.Tensor]]:
        params = self.fc(codes)
        weight = params[:, :self.n_weight].reshape(codes.shape[0], *self.weight_shape)
        bias = params[:, self.n_weight:] if self.n_bias else None
        return weight, bias


class DynamicFirstConv(nn.Module):
    """Per-sample convolution with generated parameters, via one grouped convolution over the batch."""

    def __init__(self, template: nn.Conv2d):
        super().__init__()
        self.in_channels = template.in_channels
        self.out_channels = template.out_channels
        self.stride = template.stride
        self.padding = template.padding
        self.dilation = template.dilation

    def forward(self, x: torch.Tensor, weight: torch.Tensor, bias: Optional[torch.Tensor]) -> torch.Tensor:
        batch = x.shape[0]
        grouped = x.reshape(1, batch * self.in_channels, *x.shape[2:])
        kernels = weight.reshape(batch * self.out_channels, *weight.shape[2:])
        flat_bias = bias.reshape(-1) if bias is not None else None
        out = F.conv2d(grouped, kernels, flat_bias, stride=self.stride, padding=self.padding,
                       dilation=self.dilation, groups=batch)
        return out.reshape(batch, self.out_channels, *out.shape[2:])


class ModalityConditionedGenerator(nn.Module):
    """Wraps a four-head generator so its first convolution is generated from each sample's modality code."""

    def __init__(self, backbone: FourHeadGenerator, controller: DynamicConvController,
                 code: Optional[ModalityCode] = None):
        super().__init__()
        template = backbone.first_conv
        expected = template.weight.numel() + (template.bias.numel() if template.bias is not None else 0)
        if controller.n_params != expected:
            raise ShapeError(f"controller emits {controller.n_params} parameters, first conv needs {expected}")
        self.dynamic_conv = DynamicFirstConv(template)
        backbone.first_conv = nn.Identity()
        self.backbone = backbone
        self.controller = controller
        self.default_code = code

    @property
    def heads(self) -> nn.ModuleList:
        return self.backbone.heads

    def head_parameters(self, index: int) -> List[nn.Parameter]:
        return self.backbone.head_parameters(index)

    def first_layer(self, x: torch.Tensor, codes: torch.Tensor) -> torch.Tensor:
        weight, bias = self.controller(codes)
        return self.dynamic_conv(self.backbone.input_pad(x), weight, bias)

    def forward(self, x: torch.Tensor, codes: Optional[torch.Tensor] = None) -> torch.Tensor:
        self.backbone.check_input(x)
        if codes is None:
            if self.default_code is None:
                raise LabelValidationError("no modality code given and no default code configured")
            codes = self.default_code.as_tensor(x.shape[0], dtype=x.dtype)
        codes = codes.to(dtype=x.dtype, device=x.device)
        check_one_hot(codes)
        return self.backbone.forward_features(self.first_layer(x, codes))


def make_dynamic(model: FourHeadGenerator, controller: Optional[DynamicConvController] = None,
                 code: Optional[ModalityCode] = None, seed: Optional[int] = None) -> ModalityConditionedGenerator:
    """Replaces `model.first_conv` with parameters generated by `controller` from a modality code."""
    if controller is None:
        with _seeded(seed):
            controller = DynamicConvController(model.first_conv)
    return ModalityConditionedGenerator(model, controller, code)


def is_conditioned(model: nn.Module) -> bool:
    return isinstance(model, ModalityConditionedGenerator)
