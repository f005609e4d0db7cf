"""Architecture contracts: shapes, ranges, audit, determinism, gradients."""

import numpy as np
import pytest
import torch
from torch import nn

from helpers import (
    TINY_BUNDLE,
    TINY_DISCRIMINATOR,
    TINY_ENCODER,
    TINY_GENERATOR,
    assert_gradients_close,
    central_difference_gradients,
    conv_shape_oracle,
    tiny_bundle,
)
from intrinsic_encoder.errors import ConfigError, ShapeError
from intrinsic_encoder.nets import (
    BundleConfig,
    Discriminator,
    DiscriminatorConfig,
    Encoder,
    EncoderConfig,
    Generator,
    GeneratorConfig,
    ModelBundle,
    ResidualBlock,
    build_discriminator,
    build_encoder,
    build_generator,
    create_model_bundle,
    discriminate,
    encode,
    generate,
    init_parameters,
)


def default_discriminator_stages():
    # kernel 4, strides 2,2,2,1,1, padding 1 for the default 5-stage schedule
    return [(4, 2, 1), (4, 2, 1), (4, 2, 1), (4, 1, 1), (4, 1, 1)]


class TestEncoderArchitecture:
    def test_residual_block_count_and_no_resampling(self):
        enc = build_encoder(EncoderConfig(base_channels=64, num_residual_blocks=4))
        blocks = [m for m in enc.layers if isinstance(m, ResidualBlock)]
        assert len(blocks) == 4
        for m in enc.modules():
            assert not isinstance(m, (nn.MaxPool2d, nn.AvgPool2d, nn.AdaptiveAvgPool2d))
            assert not isinstance(m, nn.ConvTranspose2d)
            if isinstance(m, nn.Conv2d):
                assert m.stride == (1, 1)

    def test_layer_sequence(self):
        enc = build_encoder(EncoderConfig(base_channels=8, num_residual_blocks=2))
        kinds = [type(m) for m in enc.layers]
        assert kinds[0] is nn.Conv2d and enc.layers[0].kernel_size == (7, 7)
        assert kinds[1] is nn.InstanceNorm2d and kinds[2] is nn.ReLU
        assert kinds[3] is ResidualBlock and kinds[4] is ResidualBlock
        assert kinds[-2] is nn.Conv2d and enc.layers[-2].kernel_size == (7, 7)
        assert kinds[-1] is nn.Tanh

    @pytest.mark.parametrize("shape", [(1, 3, 100, 100), (1, 3, 37, 53), (2, 3, 100, 100)])
    def test_spatial_preservation(self, shape):
        enc = build_encoder(TINY_ENCODER)
        out = enc(torch.zeros(shape))
        assert out.shape == (shape[0], TINY_ENCODER.out_channels, shape[2], shape[3])

    def test_output_strictly_inside_unit_interval(self):
        enc = build_encoder(TINY_ENCODER)
        init_parameters(enc, torch.Generator().manual_seed(1))
        out = enc(torch.zeros(1, 3, 12, 12))
        assert bool((out > -1).all()) and bool((out < 1).all())

    def test_invalid_config_rejected(self):
        with pytest.raises(ConfigError):
            build_encoder(EncoderConfig(num_residual_blocks=0))
        with pytest.raises(ConfigError):
            build_encoder(EncoderConfig(base_channels=0))

    def test_channel_mismatch(self):
        enc = build_encoder(TINY_ENCODER)
        with pytest.raises(ShapeError):
            enc(torch.zeros(1, 4, 8, 8))
        with pytest.raises(ShapeError):
            enc(torch.zeros(3, 8, 8))

    def test_residual_block_identity_when_branch_is_zero(self):
        block = ResidualBlock(4)
        for m in block.modules():
            if isinstance(m, nn.Conv2d):
                nn.init.zeros_(m.weight)
                nn.init.zeros_(m.bias)
        x = torch.randn(2, 4, 6, 6)
        assert torch.equal(block(x), x)


class TestGenerator:
    def test_symmetric_resampling_stages(self):
        gen = build_generator(GeneratorConfig())
        downs = [m for m in gen.modules() if isinstance(m, nn.Conv2d) and m.stride == (2, 2)]
        ups = [m for m in gen.modules() if isinstance(m, nn.ConvTranspose2d)]
        blocks = [m for m in gen.layers if isinstance(m, ResidualBlock)]
        assert len(downs) == 2 and len(ups) == 2
        assert len(blocks) == 9
        assert all(m.stride == (2, 2) for m in ups)

    @pytest.mark.parametrize("hw", [(100, 100), (32, 32)])
    def test_shape_preserved_when_divisible_by_four(self, hw):
        gen = build_generator(TINY_GENERATOR)
        out = gen(torch.zeros(1, 3, *hw))
        assert out.shape == (1, 3, *hw)

    def test_indivisible_input_rejected(self):
        gen = build_generator(TINY_GENERATOR)
        with pytest.raises(ShapeError):
            gen(torch.zeros(1, 3, 30, 30))

    def test_output_range_and_determinism(self):
        gen = build_generator(TINY_GENERATOR)
        init_parameters(gen, torch.Generator().manual_seed(2))
        x = torch.rand(1, 3, 16, 16) * 2 - 1
        out1, out2 = gen(x), gen(x)
        assert bool((out1 > -1).all()) and bool((out1 < 1).all())
        assert torch.equal(out1, out2)


class TestDiscriminator:
    def test_score_map_size_matches_shape_oracle(self):
        disc = build_discriminator(DiscriminatorConfig())
        expect = conv_shape_oracle(100, default_discriminator_stages())
        assert expect == 10  # frozen from the oracle
        out = disc(torch.rand(1, 3, 100, 100) * 2 - 1)
        assert out.shape == (1, 1, expect, expect)

    def test_two_input_sizes_accepted(self):
        disc = build_discriminator(DiscriminatorConfig())
        a = disc(torch.zeros(1, 3, 100, 100))
        b = disc(torch.zeros(1, 3, 64, 72))
        assert a.shape[2:] != b.shape[2:]
        oracle_h = conv_shape_oracle(64, default_discriminator_stages())
        oracle_w = conv_shape_oracle(72, default_discriminator_stages())
        assert b.shape == (1, 1, oracle_h, oracle_w)

    def test_scores_are_probabilities(self):
        disc = build_discriminator(TINY_DISCRIMINATOR)
        init_parameters(disc, torch.Generator().manual_seed(3))
        out = disc(torch.rand(2, 3, 16, 16) * 2 - 1)
        assert bool((out > 0).all()) and bool((out < 1).all())

    def test_minimal_input_size(self):
        disc = build_discriminator(DiscriminatorConfig())
        # smallest size the oracle admits for the default stack is 24
        sizes = [n for n in range(2, 40)
                 if conv_shape_oracle(n, default_discriminator_stages()) >= 1]
        assert min(sizes) == 24
        assert disc(torch.zeros(1, 3, 24, 24)).shape[2] == 1
        with pytest.raises(ShapeError):
            disc(torch.zeros(1, 3, 23, 23))

    def test_no_norm_on_first_stage(self):
        disc = build_discriminator(DiscriminatorConfig())
        stages = list(disc.layers)
        assert isinstance(stages[0], nn.Conv2d)
        assert isinstance(stages[1], nn.LeakyReLU) and stages[1].negative_slope == 0.2
        norms = [m for m in stages if isinstance(m, nn.InstanceNorm2d)]
        assert len(norms) == 3  # stages 2-4 only
        assert isinstance(stages[-1], nn.Sigmoid)

    def test_schedule_must_end_in_one(self):
        with pytest.raises(ConfigError):
            build_discriminator(DiscriminatorConfig(channel_schedule=(64, 128)))


class TestModelBundle:
    def test_single_encoder_shared_across_domains(self):
        bundle = create_model_bundle(["winter", "spring", "summer"], TINY_BUNDLE)
        assert bundle.domain_ids == ("spring", "summer", "winter")
        encoders = [m for m in bundle.modules() if isinstance(m, Encoder)]
        assert len(encoders) == 1
        assert len(bundle.generators) == len(bundle.discriminators) == 3

    def test_mismatched_domain_keys_rejected(self):
        enc = build_encoder(TINY_ENCODER)
        gens = {"a": build_generator(TINY_GENERATOR)}
        discs = {"b": build_discriminator(TINY_DISCRIMINATOR)}
        with pytest.raises(ConfigError):
            ModelBundle(enc, gens, discs)

    def test_seeded_init_is_reproducible(self):
        b1 = create_model_bundle(["a", "b"], TINY_BUNDLE, seed=7)
        b2 = create_model_bundle(["a", "b"], TINY_BUNDLE, seed=7)
        for (k1, v1), (k2, v2) in zip(b1.state_dict().items(), b2.state_dict().items()):
            assert k1 == k2 and torch.equal(v1, v2)

    def test_init_statistics(self):
        enc = build_encoder(EncoderConfig(base_channels=64, num_residual_blocks=2))
        init_parameters(enc, torch.Generator().manual_seed(0))
        w = enc.layers[0].weight.detach()
        assert abs(float(w.std()) - 0.02) < 0.005
        norm = [m for m in enc.modules() if isinstance(m, nn.InstanceNorm2d)][0]
        assert torch.equal(norm.weight.detach(), torch.ones_like(norm.weight))

    def test_incompatible_channel_configs_rejected(self):
        bad = BundleConfig(
            encoder=EncoderConfig(out_channels=5),
            generator=GeneratorConfig(in_channels=3),
        )
        with pytest.raises(ConfigError):
            create_model_bundle(["a", "b"], bad)


class TestOps:
    def test_encode_contract(self):
        bundle = tiny_bundle(dtype=torch.float32)
        x = torch.rand(2, 3, 100, 100) * 2 - 1
        rep = encode(bundle.encoder, x, source_domain="a")
        assert rep.values.shape == (2, 3, 100, 100)
        assert rep.source_domain == "a"
        assert bool((rep.values > -1).all()) and bool((rep.values < 1).all())
        rep2 = encode(bundle.encoder, x)
        assert torch.equal(rep.values, rep2.values)

    def test_generate_accepts_wrapper_and_tensor(self):
        bundle = tiny_bundle(dtype=torch.float32)
        rep = encode(bundle.encoder, torch.zeros(1, 3, 16, 16))
        out_wrapped = generate(bundle.generator("a"), rep)
        out_raw = generate(bundle.generator("a"), rep.values)
        assert torch.equal(out_wrapped, out_raw)
        assert out_wrapped.shape == (1, 3, 16, 16)

    def test_discriminate_range(self):
        bundle = tiny_bundle(dtype=torch.float32)
        scores = discriminate(bundle.discriminator("b"), torch.rand(1, 3, 16, 16))
        assert bool((scores > 0).all()) and bool((scores < 1).all())
        oracle = conv_shape_oracle(16, [(4, 2, 1), (4, 1, 1), (4, 1, 1)])
        assert scores.shape[2] == oracle


class TestGradients:
    """Analytic gradients of a sum probe vs central finite differences."""

    def _check(self, net, x):
        params = [p for p in net.parameters()]
        net(x).sum().backward()
        analytic = [p.grad.clone() for p in params]
        numeric = central_difference_gradients(lambda: float(net(x).sum()), params)
        assert_gradients_close(analytic, numeric)

    def test_encoder(self):
        torch.manual_seed(0)
        net = build_encoder(TINY_ENCODER).double()
        init_parameters(net, torch.Generator().manual_seed(10))
        self._check(net, torch.rand(1, 3, 8, 8, dtype=torch.float64) * 2 - 1)

    def test_generator(self):
        net = build_generator(TINY_GENERATOR).double()
        init_parameters(net, torch.Generator().manual_seed(11))
        self._check(net, torch.rand(1, 3, 8, 8, dtype=torch.float64) * 2 - 1)

    def test_discriminator(self):
        net = build_discriminator(TINY_DISCRIMINATOR).double()
        init_parameters(net, torch.Generator().manual_seed(12))
        self._check(net, torch.rand(1, 3, 8, 8, dtype=torch.float64) * 2 - 1)
