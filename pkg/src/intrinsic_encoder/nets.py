"""Network builders: one shared intrinsic encoder plus per-domain generators and discriminators.

The encoder maps images of any size to latent maps of the same height and
width (stride-1 convolutions and residual blocks only, no pooling or
resampling). Generators re-render a latent map into one appearance domain
through a symmetric down/up-sampling stack; discriminators are fully
convolutional and emit a per-patch realness probability map.
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict

import torch
from torch import nn

from .errors import ConfigError, ShapeError

# Shared architecture constants.
INIT_STD = 0.02        # zero-mean Gaussian std for conv weights
NORM_EPS = 1e-5        # instance-norm variance epsilon
DISC_KERNEL = 4        # discriminator conv kernel size
DISC_PADDING = 1


@dataclass(frozen=True)
class EncoderConfig:
    in_channels: int = 3
    base_channels: int = 64
    num_residual_blocks: int = 4
    out_channels: int = 3

    def validate(self) -> None:
        for name in ("in_channels", "base_channels", "num_residual_blocks", "out_channels"):
            if getattr(self, name) < 1:
                raise ConfigError(f"encoder {name} must be >= 1, got {getattr(self, name)}")


@dataclass(frozen=True)
class GeneratorConfig:
    in_channels: int = 3
    base_channels: int = 64
    num_residual_blocks: int = 9
    out_channels: int = 3

    def validate(self) -> None:
        for name in ("in_channels", "base_channels", "num_residual_blocks", "out_channels"):
            if getattr(self, name) < 1:
                raise ConfigError(f"generator {name} must be >= 1, got {getattr(self, name)}")


@dataclass(frozen=True)
class DiscriminatorConfig:
    in_channels: int = 3
    channel_schedule: tuple[int, ...] = (64, 128, 256, 512, 1)
    leaky_slope: float = 0.2

    def validate(self) -> None:
        if self.in_channels < 1:
            raise ConfigError(f"discriminator in_channels must be >= 1, got {self.in_channels}")
        if len(self.channel_schedule) < 2:
            raise ConfigError("discriminator channel_schedule needs at least two stages")
        if any(c < 1 for c in self.channel_schedule):
            raise ConfigError(f"discriminator channels must be >= 1, got {self.channel_schedule}")
        if self.channel_schedule[-1] != 1:
            raise ConfigError(
                f"discriminator channel_schedule must end in 1, got {self.channel_schedule}"
            )
        if not 0.0 < self.leaky_slope < 1.0:
            raise ConfigError(f"leaky_slope must be in (0, 1), got {self.leaky_slope}")

    def strides(self) -> tuple[int, ...]:
        # Stride 2 everywhere except the last two stages; the default
        # 5-stage schedule yields the classic 2,2,2,1,1 patch stack.
        n = len(self.channel_schedule)
        return tuple(2 if i < n - 2 else 1 for i in range(n))


@dataclass(frozen=True)
class BundleConfig:
    """Configs for the three network families built together."""

    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)
    discriminator: DiscriminatorConfig = field(default_factory=DiscriminatorConfig)

    def validate(self) -> None:
        self.encoder.validate()
        self.generator.validate()
        self.discriminator.validate()
        if self.generator.in_channels != self.encoder.out_channels:
            raise ConfigError(
                "generator in_channels must equal encoder out_channels "
                f"({self.generator.in_channels} != {self.encoder.out_channels})"
            )
        if self.generator.out_channels != self.encoder.in_channels:
            raise ConfigError(
                "generator out_channels must equal encoder in_channels "
                f"({self.generator.out_channels} != {self.encoder.in_channels})"
            )
        if self.discriminator.in_channels != self.encoder.in_channels:
            raise ConfigError(
                "discriminator in_channels must equal encoder in_channels "
                f"({self.discriminator.in_channels} != {self.encoder.in_channels})"
            )

    def to_dict(self) -> dict:
        return {
            "encoder": asdict(self.encoder),
            "generator": asdict(self.generator),
            "discriminator": asdict(self.discriminator),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "BundleConfig":
        gen = dict(d["generator"])
        disc = dict(d["discriminator"])
        disc["channel_schedule"] = tuple(disc["channel_schedule"])
        return cls(
            encoder=EncoderConfig(**d["encoder"]),
            generator=GeneratorConfig(**gen),
            discriminator=DiscriminatorConfig(**disc),
        )


@dataclass
class IntrinsicRepresentation:
    """Latent map with the same spatial size as the image it came from."""

    values: torch.Tensor                 # (batch, out_channels, H, W), inside (-1, 1)
    source_domain: str | None = None

    @property
    def shape(self) -> torch.Size:
        return self.values.shape


def conv_output_size(size: int, kernel: int, stride: int, padding: int) -> int:
    return (size + 2 * padding - kernel) // stride + 1


def _check_batch(x: torch.Tensor, channels: int, who: str) -> None:
    if x.dim() != 4:
        raise ShapeError(f"{who} expects a rank-4 (batch, channels, H, W) input, got rank {x.dim()}")
    if x.shape[1] != channels:
        raise ShapeError(f"{who} expects {channels} input channels, got {x.shape[1]}")


class ResidualBlock(nn.Module):
    """conv-norm-relu-conv-norm with an additive skip; size and channel preserving."""

    def __init__(self, channels: int):
        super().__init__()
        self.body = nn.Sequential(
            nn.Conv2d(channels, channels, 3, padding=1, padding_mode="reflect"),
            nn.InstanceNorm2d(channels, eps=NORM_EPS, affine=True),
            nn.ReLU(inplace=True),
            nn.Conv2d(channels, channels, 3, padding=1, padding_mode="reflect"),
            nn.InstanceNorm2d(channels, eps=NORM_EPS, affine=True),
        )

    def forward(self, x):
        return x + self.body(x)


class Encoder(nn.Module):
    """Condition-invariant encoder: stride-1 stack, output in (-1, 1) via tanh."""

    def __init__(self, cfg: EncoderConfig):
        cfg.validate()
        super().__init__()
        self.cfg = cfg
        c = cfg.base_channels
        stages: list[nn.Module] = [
            nn.Conv2d(cfg.in_channels, c, 7, padding=3, padding_mode="reflect"),
            nn.InstanceNorm2d(c, eps=NORM_EPS, affine=True),
            nn.ReLU(inplace=True),
        ]
        stages += [ResidualBlock(c) for _ in range(cfg.num_residual_blocks)]
        stages += [
            nn.Conv2d(c, cfg.out_channels, 7, padding=3, padding_mode="reflect"),
            nn.Tanh(),
        ]
        self.layers = nn.Sequential(*stages)

    def forward(self, x):
        _check_batch(x, self.cfg.in_channels, "encoder")
        return self.layers(x)


class Generator(nn.Module):
    """Latent-to-image renderer: two stride-2 downs, residual trunk, two x2 ups, tanh."""

    def __init__(self, cfg: GeneratorConfig):
        cfg.validate()
        super().__init__()
        self.cfg = cfg
        c = cfg.base_channels
        stages: list[nn.Module] = [
            nn.Conv2d(cfg.in_channels, c, 7, padding=3, padding_mode="reflect"),
            nn.InstanceNorm2d(c, eps=NORM_EPS, affine=True),
            nn.ReLU(inplace=True),
            nn.Conv2d(c, 2 * c, 3, stride=2, padding=1),
            nn.InstanceNorm2d(2 * c, eps=NORM_EPS, affine=True),
            nn.ReLU(inplace=True),
            nn.Conv2d(2 * c, 4 * c, 3, stride=2, padding=1),
            nn.InstanceNorm2d(4 * c, eps=NORM_EPS, affine=True),
            nn.ReLU(inplace=True),
        ]
        stages += [ResidualBlock(4 * c) for _ in range(cfg.num_residual_blocks)]
        stages += [
            nn.ConvTranspose2d(4 * c, 2 * c, 3, stride=2, padding=1, output_padding=1),
            nn.InstanceNorm2d(2 * c, eps=NORM_EPS, affine=True),
            nn.ReLU(inplace=True),
            nn.ConvTranspose2d(2 * c, c, 3, stride=2, padding=1, output_padding=1),
            nn.InstanceNorm2d(c, eps=NORM_EPS, affine=True),
            nn.ReLU(inplace=True),
            nn.Conv2d(c, cfg.out_channels, 7, padding=3, padding_mode="reflect"),
            nn.Tanh(),
        ]
        self.layers = nn.Sequential(*stages)

    def forward(self, x):
        _check_batch(x, self.cfg.in_channels, "generator")
        h, w = x.shape[2], x.shape[3]
        if h % 4 != 0 or w % 4 != 0:
            raise ShapeError(
                f"generator input spatial dims must be divisible by 4, got {h}x{w}"
            )
        return self.layers(x)


class Discriminator(nn.Module):
    """Fully convolutional patch scorer; probabilities in (0, 1) at every location."""

    def __init__(self, cfg: DiscriminatorConfig):
        cfg.validate()
        super().__init__()
        self.cfg = cfg
        stages: list[nn.Module] = []
        channels = (cfg.in_channels,) + cfg.channel_schedule
        strides = cfg.strides()
        last = len(cfg.channel_schedule) - 1
        for i, stride in enumerate(strides):
            stages.append(
                nn.Conv2d(channels[i], channels[i + 1], DISC_KERNEL, stride=stride,
                          padding=DISC_PADDING)
            )
            if i == last:
                stages.append(nn.Sigmoid())
            else:
                if i > 0:  # no normalization on the first stage
                    stages.append(nn.InstanceNorm2d(channels[i + 1], eps=NORM_EPS, affine=True))
                stages.append(nn.LeakyReLU(cfg.leaky_slope, inplace=True))
        self.layers = nn.Sequential(*stages)

    def score_map_size(self, height: int, width: int) -> tuple[int, int]:
        """Spatial size of the output map; raises if the input is too small."""
        h, w = height, width
        for stride in self.cfg.strides():
            h = conv_output_size(h, DISC_KERNEL, stride, DISC_PADDING)
            w = conv_output_size(w, DISC_KERNEL, stride, DISC_PADDING)
            if h < 1 or w < 1:
                raise ShapeError(
                    f"input {height}x{width} is below the discriminator's minimal size"
                )
        return h, w

    def forward(self, x):
        _check_batch(x, self.cfg.in_channels, "discriminator")
        self.score_map_size(x.shape[2], x.shape[3])
        return self.layers(x)


def build_encoder(cfg: EncoderConfig = EncoderConfig()) -> Encoder:
    return Encoder(cfg)


def build_generator(cfg: GeneratorConfig = GeneratorConfig()) -> Generator:
    return Generator(cfg)


def build_discriminator(cfg: DiscriminatorConfig = DiscriminatorConfig()) -> Discriminator:
    return Discriminator(cfg)


class ModelBundle(nn.Module):
    """One shared encoder plus generators/discriminators keyed by domain id."""

    def __init__(self, encoder: Encoder, generators: dict[str, Generator],
                 discriminators: dict[str, Discriminator]):
        super().__init__()
        if set(generators) != set(discriminators):
            raise ConfigError(
                "generators and discriminators must be keyed by identical domain ids: "
                f"{sorted(generators)} vs {sorted(discriminators)}"
            )
        if not generators:
            raise ConfigError("a model bundle needs at least one domain")
        self.encoder = encoder
        self.generators = nn.ModuleDict({d: generators[d] for d in sorted(generators)})
        self.discriminators = nn.ModuleDict({d: discriminators[d] for d in sorted(discriminators)})

    @property
    def domain_ids(self) -> tuple[str, ...]:
        return tuple(self.generators.keys())

    def generator(self, domain: str) -> Generator:
        if domain not in self.generators:
            raise ConfigError(f"unknown domain {domain!r}, have {list(self.domain_ids)}")
        return self.generators[domain]

    def discriminator(self, domain: str) -> Discriminator:
        if domain not in self.discriminators:
            raise ConfigError(f"unknown domain {domain!r}, have {list(self.domain_ids)}")
        return self.discriminators[domain]

    def encoder_generator_parameters(self):
        """Parameters updated in the descent phase (encoder and all generators)."""
        yield from self.encoder.parameters()
        for g in self.generators.values():
            yield from g.parameters()

    def discriminator_parameters(self):
        """Parameters updated in the ascent phase (all discriminators)."""
        for d in self.discriminators.values():
            yield from d.parameters()


def init_parameters(module: nn.Module, generator: torch.Generator | None = None) -> None:
    """Gaussian(0, 0.02) conv weights, zero biases, identity norm affines."""
    for m in module.modules():
        if isinstance(m, (nn.Conv2d, nn.ConvTranspose2d)):
            with torch.no_grad():
                m.weight.normal_(0.0, INIT_STD, generator=generator)
                if m.bias is not None:
                    m.bias.zero_()
        elif isinstance(m, nn.InstanceNorm2d) and m.affine:
            with torch.no_grad():
                m.weight.fill_(1.0)
                m.bias.zero_()


def create_model_bundle(domain_ids, cfg: BundleConfig = BundleConfig(),
                        seed: int = 0) -> ModelBundle:
    """Build and initialize the full bundle; deterministic in the seed."""
    cfg.validate()
    domains = sorted(domain_ids)
    if len(domains) != len(set(domains)):
        raise ConfigError(f"duplicate domain ids: {sorted(domain_ids)}")
    bundle = ModelBundle(
        encoder=Encoder(cfg.encoder),
        generators={d: Generator(cfg.generator) for d in domains},
        discriminators={d: Discriminator(cfg.discriminator) for d in domains},
    )
    gen = torch.Generator().manual_seed(seed)
    init_parameters(bundle.encoder, gen)
    for d in domains:
        init_parameters(bundle.generators[d], gen)
    for d in domains:
        init_parameters(bundle.discriminators[d], gen)
    return bundle


def encode(encoder: Encoder, batch: torch.Tensor,
           source_domain: str | None = None) -> IntrinsicRepresentation:
    """Run the encoder on an image batch in [-1, 1]."""
    return IntrinsicRepresentation(values=encoder(batch), source_domain=source_domain)


def generate(generator: Generator, rep) -> torch.Tensor:
    """Render a latent map (or its wrapper) back into an image batch in (-1, 1)."""
    values = rep.values if isinstance(rep, IntrinsicRepresentation) else rep
    return generator(values)


def discriminate(discriminator: Discriminator, batch: torch.Tensor) -> torch.Tensor:
    """Per-patch realness probabilities in (0, 1)."""
    return discriminator(batch)
