# -*- coding: utf-8 -*-
"""
ADJSCC and BDJSCC encoder/decoder built from a declarative layer stack.

An :class:`ArchSpec` lists the encoder FL modules (direction ``down``)
followed by the decoder FL modules (direction ``up``). With attention enabled
every FL module except the last one on each side is followed by an AF module
that receives the feedback SNR. The last encoder filter count ``c`` sets the
bandwidth ratio.
"""
import hashlib
import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple, Union

from torch import Tensor, nn

from adjscc.attention import AttentionFeature
from adjscc.channel import SNR, pack_complex, power_normalize, unpack_complex
from adjscc.exceptions import ArchitectureError, ShapeError
from adjscc.layers import Activation, Direction, FLModule, LayerSpec

PAPER_CIFAR = "paper-cifar"
TINY = "tiny"

# Filter count and AF hidden width per preset; a width of None means m = c.
PRESETS: Dict[str, Tuple[int, Optional[int]]] = {
    PAPER_CIFAR: (256, 16),
    TINY: (32, None),
}


@dataclass(frozen=True)
class ArchSpec:
    fl_layers: Tuple[LayerSpec, ...]
    use_attention: bool = True
    af_hidden_width: Optional[int] = None
    image_channels: int = 3
    preset: Optional[str] = field(default=None, compare=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "fl_layers", tuple(self.fl_layers))
        directions = [layer.direction for layer in self.fl_layers]
        n_down = directions.count(Direction.DOWN)
        if n_down == 0 or n_down == len(directions):
            raise ArchitectureError("need at least one encoder and one decoder layer")
        if directions != sorted(directions, key=lambda d: d is Direction.UP):
            raise ArchitectureError("encoder layers must precede decoder layers")
        down = math.prod(layer.stride for layer in self.encoder_layers)
        up = math.prod(layer.stride for layer in self.decoder_layers)
        if down != up:
            raise ArchitectureError(
                f"encoder stride product {down} differs from decoder product {up}"
            )
        sigmoids = [
            i
            for i, layer in enumerate(self.fl_layers)
            if layer.activation is Activation.SIGMOID
        ]
        if sigmoids != [len(self.fl_layers) - 1]:
            raise ArchitectureError(
                "exactly one sigmoid activation is allowed, on the final decoder layer"
            )
        if self.decoder_layers[-1].filters != self.image_channels:
            raise ArchitectureError(
                f"final decoder layer must emit {self.image_channels} channels"
            )
        if self.af_hidden_width is not None and self.af_hidden_width < 1:
            raise ArchitectureError("af_hidden_width must be positive")

    @property
    def encoder_layers(self) -> Tuple[LayerSpec, ...]:
        return tuple(x for x in self.fl_layers if x.direction is Direction.DOWN)

    @property
    def decoder_layers(self) -> Tuple[LayerSpec, ...]:
        return tuple(x for x in self.fl_layers if x.direction is Direction.UP)

    @property
    def output_channels(self) -> int:
        return self.encoder_layers[-1].filters

    @property
    def total_stride(self) -> int:
        return math.prod(layer.stride for layer in self.encoder_layers)

    def latent_shape(self, height: int, width: int) -> Tuple[int, int, int]:
        s = self.total_stride
        if height % s or width % s:
            raise ShapeError(
                f"image size {height}x{width} must be a multiple of {s}"
            )
        return self.output_channels, height // s, width // s

    def channel_symbols(self, height: int, width: int) -> int:
        c, h, w = self.latent_shape(height, width)
        if (c * h * w) % 2:
            raise ShapeError(
                f"latent {c}x{h}x{w} has an odd number of reals, cannot form symbols"
            )
        return c * h * w // 2

    def to_dict(self) -> Dict[str, Any]:
        return {
            "fl_layers": [
                {
                    "kernel_size": layer.kernel_size,
                    "filters": layer.filters,
                    "stride": layer.stride,
                    "direction": layer.direction.value,
                    "activation": layer.activation.value,
                }
                for layer in self.fl_layers
            ],
            "use_attention": self.use_attention,
            "af_hidden_width": self.af_hidden_width,
            "image_channels": self.image_channels,
            "preset": self.preset,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "ArchSpec":
        try:
            layers = tuple(LayerSpec(**layer) for layer in data["fl_layers"])
            return cls(
                fl_layers=layers,
                use_attention=bool(data["use_attention"]),
                af_hidden_width=data.get("af_hidden_width"),
                image_channels=int(data.get("image_channels", 3)),
                preset=data.get("preset"),
            )
        except (KeyError, TypeError, ValueError) as e:
            raise ArchitectureError(f"malformed architecture description: {e}") from e

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    def digest(self) -> str:
        """Hash of the structural description (the preset label is ignored)."""
        data = self.to_dict()
        del data["preset"]
        text = json.dumps(data, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode("utf-8")).hexdigest()


def build_arch(
    preset: str = TINY,
    output_channels: int = 16,
    use_attention: bool = True,
    af_hidden_width: Optional[int] = None,
    image_channels: int = 3,
) -> ArchSpec:
    """
    Five encoder and five decoder FL modules with total stride 4: encoder
    ``9x9xK|2, 5x5xK|2, 5x5xK|1, 5x5xK|1, 5x5xc|1`` (the last one without
    activation), decoder ``5x5xK|1`` three times, ``5x5xK|2``, ``9x9xC|2``
    with a sigmoid.
    """
    try:
        width, preset_hidden = PRESETS[preset]
    except KeyError:
        raise ArchitectureError(
            f"unknown architecture preset {preset!r}, "
            f"expected one of {', '.join(sorted(PRESETS))}"
        ) from None
    down, up = Direction.DOWN, Direction.UP
    layers = (
        LayerSpec(9, width, 2, down),
        LayerSpec(5, width, 2, down),
        LayerSpec(5, width, 1, down),
        LayerSpec(5, width, 1, down),
        LayerSpec(5, output_channels, 1, down, Activation.NONE),
        LayerSpec(5, width, 1, up),
        LayerSpec(5, width, 1, up),
        LayerSpec(5, width, 1, up),
        LayerSpec(5, width, 2, up),
        LayerSpec(9, image_channels, 2, up, Activation.SIGMOID),
    )
    return ArchSpec(
        fl_layers=layers,
        use_attention=use_attention,
        af_hidden_width=af_hidden_width or preset_hidden,
        image_channels=image_channels,
        preset=preset,
    )


class _Stack(nn.Module):
    def __init__(
        self,
        layers: Sequence[LayerSpec],
        in_channels: int,
        use_attention: bool,
        af_hidden_width: Optional[int],
    ):
        super().__init__()
        self.fl = nn.ModuleList()
        self.af = nn.ModuleList()
        for i, layer in enumerate(layers):
            self.fl.append(FLModule(in_channels, layer))
            in_channels = layer.filters
            if use_attention and i < len(layers) - 1:
                self.af.append(AttentionFeature(layer.filters, af_hidden_width))

    def run(
        self,
        x: Tensor,
        snr_db: SNR,
        taps: Optional[List[Tensor]] = None,
    ) -> Tensor:
        for i, fl in enumerate(self.fl):
            x = fl(x)
            if i < len(self.af):
                x = self.af[i](x, snr_db)
                if taps is not None:
                    taps.append(x)
        return x

    @property
    def attention_modules(self) -> List[AttentionFeature]:
        return [module for module in self.af if isinstance(module, AttentionFeature)]


class Encoder(_Stack):
    def __init__(self, arch: ArchSpec):
        super().__init__(
            arch.encoder_layers,
            arch.image_channels,
            arch.use_attention,
            arch.af_hidden_width,
        )
        self.arch = arch

    def latent(self, x: Tensor, snr_db: SNR) -> Tensor:
        self.arch.latent_shape(x.shape[-2], x.shape[-1])
        return self.run(x, snr_db)

    def features(self, x: Tensor, snr_db: SNR) -> List[Tensor]:
        """Recalibrated feature maps after every AF module, in order."""
        taps: List[Tensor] = []
        self.arch.latent_shape(x.shape[-2], x.shape[-1])
        self.run(x, snr_db, taps)
        return taps

    def forward(self, x: Tensor, snr_db: SNR) -> Tensor:
        self.arch.channel_symbols(x.shape[-2], x.shape[-1])
        latent = self.latent(x, snr_db)
        return power_normalize(pack_complex(latent.flatten(start_dim=1)))


class Decoder(_Stack):
    def __init__(self, arch: ArchSpec):
        last_encoder = arch.encoder_layers[-1]
        super().__init__(
            arch.decoder_layers,
            last_encoder.filters,
            arch.use_attention,
            arch.af_hidden_width,
        )
        self.arch = arch

    def forward(
        self, z_hat: Tensor, snr_db: SNR, image_size: Tuple[int, int]
    ) -> Tensor:
        if z_hat.dim() != 2:
            raise ShapeError(
                f"expected a batch of symbol vectors (N, k), got {tuple(z_hat.shape)}"
            )
        c, h, w = self.arch.latent_shape(*image_size)
        k = self.arch.channel_symbols(*image_size)
        if z_hat.shape[-1] != k:
            raise ShapeError(
                f"inconsistent k: got {z_hat.shape[-1]} symbols, "
                f"{image_size[0]}x{image_size[1]} images need {k}"
            )
        latent = unpack_complex(z_hat).reshape(z_hat.shape[0], c, h, w)
        return self.run(latent, snr_db)


ChannelFn = Callable[[Tensor, SNR], Tensor]


class JSCCModel(nn.Module):
    """
    Encoder and decoder of one ADJSCC (``use_attention``) or BDJSCC model.
    """

    def __init__(self, arch: ArchSpec):
        super().__init__()
        self.arch = arch
        self.encoder = Encoder(arch)
        self.decoder = Decoder(arch)

    @property
    def use_attention(self) -> bool:
        return self.arch.use_attention

    def encode(self, x: Tensor, snr_db: SNR) -> Tensor:
        return self.encoder(x, snr_db)

    def decode(
        self, z_hat: Tensor, snr_db: SNR, image_size: Tuple[int, int]
    ) -> Tensor:
        return self.decoder(z_hat, snr_db, image_size)

    def forward(
        self,
        x: Tensor,
        snr_db: SNR,
        channel: ChannelFn,
        snr_fb_db: Optional[SNR] = None,
    ) -> Tensor:
        """
        Encode, transmit at ``snr_db`` and decode. The AF modules see
        ``snr_fb_db`` when given (channel mismatch), otherwise the true SNR.
        """
        feedback = snr_db if snr_fb_db is None else snr_fb_db
        z = self.encode(x, feedback)
        z_hat = channel(z, snr_db)
        return self.decode(z_hat, feedback, (x.shape[-2], x.shape[-1]))

    def attention_modules(self, side: str = "encoder") -> List[AttentionFeature]:
        if side == "encoder":
            return self.encoder.attention_modules
        if side == "decoder":
            return self.decoder.attention_modules
        raise ValueError(f"side must be 'encoder' or 'decoder', got {side!r}")


def bandwidth_ratio(n: int, k: int) -> Fraction:
    if n <= 0 or k <= 0:
        raise ValueError("source and channel dimensions must be positive")
    return Fraction(k, n)


def parse_ratio(value: Union[str, float, int, Fraction]) -> Fraction:
    if isinstance(value, Fraction):
        return value
    if isinstance(value, str):
        return Fraction(value.strip())
    return Fraction(value).limit_denominator(10**6)


def channels_for_ratio(
    ratio: Union[Fraction, str, float],
    height: int,
    width: int,
    channels: int,
    total_stride: int,
) -> int:
    """
    Encoder output channels ``c`` giving ``k / n = ratio``; inverse of
    ``k = (H / s) (W / s) c / 2``.
    """
    r = parse_ratio(ratio)
    c = 2 * r * height * width * channels * total_stride**2 / Fraction(height * width)
    if c.denominator != 1 or c <= 0:
        raise ArchitectureError(
            f"ratio unreachable with this architecture: {r} needs c = {float(c):g}"
        )
    return int(c)


def count_parameters(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters())
