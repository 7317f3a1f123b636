"""Unit tests for networks module."""
import inspect

import pytest
import torch

from conditioning import build_condition
from config import GenrePerturbationParams, build_config
from losses import Side, adversarial_backward_from_logits
from networks import (
    BackwardGenerator,
    ContentDiscriminator,
    PainterNetworks,
    StyleDiscriminator,
    backward_generate,
    conditioning_parameter_count,
    contains_transposed_convolution,
    count_parameters,
    discriminate_content,
    discriminate_style,
    forward_generate,
    init_weights,
)
from painter_core import Mode, ShapeError, seeded_rng


@pytest.fixture
def networks(tiny_config, schema):
    return PainterNetworks.build(tiny_config, schema, seeded_rng(0))


def _condition(schema, artist="picasso"):
    return build_condition(artist, "early", "cubism", Mode.TEST, schema, GenrePerturbationParams())


class TestForwardGenerator:
    """Tests for the conditional generator G."""

    def test_shape_preserved(self, networks, schema):
        x = torch.rand(2, 3, 16, 16) * 2 - 1
        y = forward_generate(networks.forward_generator, x, _condition(schema))
        assert y.shape == x.shape

    @pytest.mark.parametrize("size", [8, 12, 24])
    def test_any_multiple_of_downsample_factor(self, networks, schema, size):
        x = torch.zeros(1, 3, size, size)
        assert forward_generate(networks.forward_generator, x, _condition(schema)).shape == x.shape

    def test_bounded_output(self, networks, schema):
        x = torch.randn(2, 3, 16, 16, generator=seeded_rng(1)) * 50
        y = forward_generate(networks.forward_generator, x, _condition(schema))
        assert y.min() >= -1 and y.max() <= 1

    def test_deterministic_in_eval_mode(self, networks, schema):
        g = networks.forward_generator.eval()
        x = torch.rand(1, 3, 16, 16, generator=seeded_rng(2))
        assert torch.equal(g(x, _condition(schema).concatenated), g(x, _condition(schema).concatenated))

    def test_artist_changes_output(self, networks, schema):
        g = networks.forward_generator.eval()
        x = torch.rand(1, 3, 16, 16, generator=seeded_rng(3)) * 2 - 1
        a = g(x, _condition(schema, "picasso"))
        b = g(x, _condition(schema, "monet"))
        assert not torch.equal(a, b)

    def test_rejects_indivisible_input(self, networks, schema):
        with pytest.raises(ShapeError):
            forward_generate(networks.forward_generator, torch.zeros(1, 3, 10, 10), _condition(schema))

    def test_rejects_wrong_condition_length(self, networks):
        with pytest.raises(ShapeError):
            networks.forward_generator(torch.zeros(1, 3, 16, 16), torch.zeros(5))

    def test_batched_conditions(self, networks, schema):
        conditions = torch.stack([_condition(schema, "picasso").concatenated, _condition(schema, "monet").concatenated])
        y = networks.forward_generator(torch.zeros(2, 3, 16, 16), conditions)
        assert y.shape == (2, 3, 16, 16)


class TestBackwardGenerator:
    """Tests for the unconditional generator F."""

    def test_shape_and_bounds(self, networks):
        y = torch.randn(1, 3, 16, 16, generator=seeded_rng(4)) * 10
        x = backward_generate(networks.backward_generator, y)
        assert x.shape == y.shape
        assert x.min() >= -1 and x.max() <= 1

    def test_cycle_shape(self, networks, schema):
        x = torch.zeros(2, 3, 16, 16)
        x_hat = networks.backward_generator(networks.forward_generator(x, _condition(schema)))
        assert x_hat.shape == x.shape

    def test_takes_no_condition(self):
        params = list(inspect.signature(BackwardGenerator.forward).parameters)
        assert params == ["self", "y"]


class TestStructure:
    """Structural asymmetry and layer-type inspection."""

    def test_backward_generator_has_no_conditioning_parameters(self, networks):
        assert conditioning_parameter_count(networks.backward_generator) == 0
        assert conditioning_parameter_count(networks.forward_generator) > 0

    def test_no_transposed_convolutions(self, networks):
        assert not contains_transposed_convolution(networks.forward_generator)
        assert not contains_transposed_convolution(networks.backward_generator)

    def test_detects_transposed_convolution(self):
        assert contains_transposed_convolution(torch.nn.Sequential(torch.nn.ConvTranspose2d(3, 3, 2)))

    def test_content_discriminator_has_no_attribute_heads(self, networks):
        names = [name for name, _ in networks.content_discriminator.named_modules()]
        assert not any("head" in name for name in names)

    def test_adain_channels_match_parser(self, networks, tiny_config):
        g = networks.forward_generator
        assert len(g.adain_channels) == 2 * tiny_config.n_adain_blocks
        assert g.parser.output_dim == 2 * sum(g.adain_channels)

    def test_parameter_partition(self, networks):
        g_ids = {id(p) for p in networks.generator_parameters()}
        d_ids = {id(p) for p in networks.discriminator_parameters()}
        assert not g_ids & d_ids
        assert len(g_ids) + len(d_ids) == len(list(networks.parameters()))

    def test_seeded_build_is_reproducible(self, tiny_config, schema):
        a = PainterNetworks.build(tiny_config, schema, seeded_rng(5))
        b = PainterNetworks.build(tiny_config, schema, seeded_rng(5))
        for pa, pb in zip(a.parameters(), b.parameters()):
            assert torch.equal(pa, pb)

    def test_float64_build(self, tiny_config, schema):
        config = tiny_config.with_overrides(dtype="float64")
        nets = PainterNetworks.build(config, schema, seeded_rng(0))
        assert all(p.dtype == torch.float64 for p in nets.parameters())
        assert count_parameters(nets) > 0


class TestStyleDiscriminator:
    """Tests for the multi-task discriminator D_y."""

    def test_output_shapes(self, networks, schema):
        out = discriminate_style(networks.style_discriminator, torch.zeros(4, 3, 16, 16))
        assert out.realness.shape == (4,)
        assert out.artist.shape == (4, 4)
        assert out.period.shape == (4, 2)
        assert out.genre.shape == (4, 3)
        assert torch.isfinite(out.realness).all()

    def test_size_not_multiple_of_trunk_stride(self, tiny_config, schema):
        config = tiny_config.with_overrides(image_size=68, disc_downsample=3)
        nets = PainterNetworks.build(config, schema, seeded_rng(12))
        img = torch.zeros(1, 3, 68, 68)
        assert discriminate_style(nets.style_discriminator, img).artist.shape == (1, 4)
        assert discriminate_content(nets.content_discriminator, img).shape == (1,)
        assert forward_generate(nets.forward_generator, img, _condition(schema)).shape == img.shape

    def test_zero_trunk_gives_zero_logits(self, networks):
        d = networks.style_discriminator
        with torch.no_grad():
            for p in d.trunk.parameters():
                p.zero_()
        out = d(torch.rand(2, 3, 16, 16))
        for logits in out.logits:
            assert torch.count_nonzero(logits) == 0

    def test_artist_cross_entropy_gradient(self, schema, gradient_checker):
        config = build_config({"image_size": 16, "disc_base": 2, "disc_downsample": 2, "dtype": "float64"})
        d = StyleDiscriminator(config, schema).double()
        init_weights(d, seeded_rng(6), std=0.3)
        img = torch.rand(3, 3, 16, 16, generator=seeded_rng(7), dtype=torch.float64) * 2 - 1
        labels = torch.tensor([[0, 0, 0], [1, 1, 1], [2, 0, 2]])

        def loss():
            return torch.nn.functional.cross_entropy(d(img).artist, labels[:, 0])

        errors = gradient_checker(loss, list(d.trunk.parameters()), n_samples=20)
        assert max(errors) < 1e-3


class TestContentDiscriminator:
    """Tests for D_x."""

    def test_scores(self, networks):
        scores = discriminate_content(networks.content_discriminator, torch.rand(4, 3, 16, 16))
        assert scores.shape == (4,)
        assert torch.isfinite(scores).all()

    def test_deterministic(self, networks):
        d = networks.content_discriminator.eval()
        img = torch.rand(2, 3, 16, 16, generator=seeded_rng(8))
        assert torch.equal(d(img), d(img))

    def test_scores_change_after_one_step(self, tiny_config):
        d = ContentDiscriminator(tiny_config)
        init_weights(d, seeded_rng(9))
        real = torch.rand(2, 3, 16, 16, generator=seeded_rng(10)) * 2 - 1
        fake = torch.rand(2, 3, 16, 16, generator=seeded_rng(11)) * 2 - 1
        before = d(real).detach().clone()
        optimizer = torch.optim.Adam(d.parameters(), lr=1e-2)
        loss = adversarial_backward_from_logits(d(real), d(fake), Side.DISCRIMINATOR)
        loss.backward()
        optimizer.step()
        assert not torch.equal(before, d(real).detach())
