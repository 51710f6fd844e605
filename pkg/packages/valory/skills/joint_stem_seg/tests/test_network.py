# -*- coding: utf-8 -*-
# ------------------------------------------------------------------------------
#
#   Copyright 2026 Valory AG
#
#   Licensed under the Apache License, Version 2.0 (the "License");
#   you may not use this file except in compliance with the License.
#   You may obtain a copy of the License at
#
#       http://www.apache.org/licenses/LICENSE-2.0
#
#   Unless required by applicable law or agreed to in writing, software
#   distributed under the License is distributed on an "AS IS" BASIS,
#   WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
#   See the License for the specific language governing permissions and
#   limitations under the License.
#
# ------------------------------------------------------------------------------

"""This module contains the tests of the network parameters, layers and forward pass."""

from dataclasses import replace

import numpy as np
import pytest

from packages.valory.skills.joint_stem_seg.autodiff.tensor import Mode, ShapeError, Tensor
from packages.valory.skills.joint_stem_seg.models import DenseBlockConfig, NetworkConfig
from packages.valory.skills.joint_stem_seg.network.layers import (
    ForwardContext,
    bottom_stage,
    decoder_stage,
    dense_block,
    encoder_stage,
)
from packages.valory.skills.joint_stem_seg.network.model import (
    check_input_shape,
    count_parameters,
    forward,
    shared_encoder_saving,
)
from packages.valory.skills.joint_stem_seg.network.params import (
    fan_in,
    he_init,
    parameter_layout,
)


def image(rng: np.random.Generator, size: int = 16, channels: int = 4) -> Tensor:
    """A random 64-bit input batch of one image."""
    return Tensor(rng.standard_normal((1, channels, size, size)), dtype=np.float64)


class TestParameterLayout:
    """Tests for the parameter layout and initialization."""

    def test_names_are_a_function_of_the_config(
        self, tiny_network_config: NetworkConfig
    ) -> None:
        """Two layouts of one configuration agree in names, shapes and order."""
        first = parameter_layout(tiny_network_config)
        second = parameter_layout(tiny_network_config)
        assert list(first.shapes.items()) == list(second.shapes.items())

    def test_expected_names(self, tiny_network_config: NetworkConfig) -> None:
        """Encoder, bottom and both heads own their tensors."""
        shapes = parameter_layout(tiny_network_config).shapes
        width = tiny_network_config.dense_block.width
        growth = tiny_network_config.dense_block.output_channels
        assert shapes["encoder.0.dense.0.bottleneck.kernel"] == (width, 4, 1, 1)
        assert shapes["encoder.0.dense.0.conv.kernel"] == (2, width, 3, 3)
        assert shapes["encoder.0.down.kernel"] == (width, width, 5, 5)
        assert shapes["encoder.bottom.compress.kernel"][0] == width
        assert shapes["plant.1.up.kernel"] == (width, width, 2, 2)
        assert shapes["plant.classifier.kernel"] == (4, growth, 1, 1)
        assert shapes["stem.classifier.kernel"] == (3, growth, 1, 1)

    def test_single_head_layout(self, tiny_network_config: NetworkConfig) -> None:
        """A plant-only network owns no stem tensors."""
        shapes = parameter_layout(tiny_network_config.with_heads("plant")).shapes
        assert not [name for name in shapes if name.startswith("stem.")]

    def test_level_blocks(self) -> None:
        """Per-level blocks change the shapes of their level only."""
        small = DenseBlockConfig(num_layers=1, growth_rate=2)
        large = DenseBlockConfig(num_layers=2, growth_rate=3)
        cfg = NetworkConfig(levels=1, level_blocks=(small, large))
        shapes = parameter_layout(cfg).shapes
        assert shapes["encoder.0.dense.0.conv.kernel"][0] == 2
        assert shapes["encoder.bottom.dense.1.conv.kernel"][0] == 3
        assert "encoder.0.dense.1.conv.kernel" not in shapes

    def test_same_seed_same_params(self, tiny_network_config: NetworkConfig) -> None:
        """Initialization is reproducible."""
        first = he_init(tiny_network_config, np.random.default_rng(5))
        second = he_init(tiny_network_config, np.random.default_rng(5))
        for (name, a), (other, b) in zip(first, second):
            assert name == other
            np.testing.assert_array_equal(a.data, b.data)

    def test_initial_values(self, tiny_network_config: NetworkConfig) -> None:
        """Biases and betas start at zero, gammas at one."""
        params = he_init(tiny_network_config, np.random.default_rng(0))
        for name, tensor in params:
            if name.endswith((".bias", ".beta")):
                assert not tensor.data.any()
            elif name.endswith(".gamma"):
                assert (tensor.data == 1.0).all()
        assert all(state.num_batches_tracked == 0 for state in params.bn_states.values())

    def test_he_spread(self) -> None:
        """A large kernel has the He standard deviation sqrt(2 / fan_in)."""
        params = he_init(NetworkConfig(), np.random.default_rng(0))
        kernel = params["encoder.0.down.kernel"]
        expected = np.sqrt(2.0 / fan_in("encoder.0.down.kernel", kernel.shape))
        assert kernel.data.std() == pytest.approx(expected, rel=0.05)
        assert abs(kernel.data.mean()) < 0.1 * expected

    @pytest.mark.parametrize(
        "name, shape, expected",
        [
            ("encoder.0.down.kernel", (16, 16, 5, 5), 400),
            ("plant.0.up.kernel", (16, 16, 2, 2), 16),
            ("stem.classifier.kernel", (3, 16, 1, 1), 16),
        ],
    )
    def test_fan_in(self, name: str, shape: tuple, expected: int) -> None:
        """Convolutions read C·k·k inputs, upsampling reads C."""
        assert fan_in(name, shape) == expected

    def test_dtype(self, tiny_network_config: NetworkConfig) -> None:
        """Initialization and conversion honor the requested precision."""
        params = he_init(tiny_network_config, np.random.default_rng(0), np.float64)
        assert params.dtype == np.float64
        assert params.astype(np.float32).dtype == np.float32

    def test_copy_is_independent(self, tiny_network_config: NetworkConfig) -> None:
        """Mutating a copy leaves the original alone."""
        params = he_init(tiny_network_config, np.random.default_rng(0))
        clone = params.copy()
        clone["plant.classifier.bias"].data += 1.0
        next(iter(clone.bn_states.values())).num_batches_tracked = 9
        assert not params["plant.classifier.bias"].data.any()
        assert next(iter(params.bn_states.values())).num_batches_tracked == 0


class TestLayers:
    """Tests for dense blocks and the encoder and decoder stages."""

    @staticmethod
    def _context(cfg: NetworkConfig) -> ForwardContext:
        """A training context with 64-bit parameters."""
        params = he_init(cfg, np.random.default_rng(0), np.float64)
        return ForwardContext(params, Mode.TRAIN, np.random.default_rng(1))

    @pytest.mark.parametrize("num_layers, growth_rate", [(2, 4), (1, 2), (3, 1)])
    def test_dense_block_channels(
        self, rng: np.random.Generator, num_layers: int, growth_rate: int
    ) -> None:
        """A block emits N·G maps at the input resolution."""
        block = DenseBlockConfig(num_layers=num_layers, growth_rate=growth_rate)
        ctx = self._context(NetworkConfig(levels=1, dense_block=block))
        out = dense_block(ctx, "encoder.0.dense", image(rng), block)
        assert out.shape == (1, num_layers * growth_rate, 16, 16)

    def test_encoder_stage(
        self, rng: np.random.Generator, tiny_network_config: NetworkConfig
    ) -> None:
        """The skip keeps the resolution and the down path halves it."""
        ctx = self._context(tiny_network_config)
        skip, down = encoder_stage(ctx, 0, image(rng))
        width = tiny_network_config.dense_block.width
        assert skip.shape == (1, width, 16, 16)
        assert down.shape == (1, width, 8, 8)
        _, deeper = encoder_stage(ctx, 1, down)
        assert deeper.shape[2:] == (4, 4)

    def test_encoder_rejects_odd_extent(
        self, rng: np.random.Generator, tiny_network_config: NetworkConfig
    ) -> None:
        """Odd extents cannot be halved."""
        ctx = self._context(tiny_network_config)
        odd = Tensor(rng.standard_normal((1, 4, 15, 16)), dtype=np.float64)
        with pytest.raises(ShapeError, match="even spatial extents"):
            encoder_stage(ctx, 0, odd)

    def test_decoder_stage(self, rng: np.random.Generator) -> None:
        """The decoder doubles the resolution back to the skip's."""
        cfg = NetworkConfig(levels=1, dense_block=DenseBlockConfig(1, 2, 4))
        ctx = self._context(cfg)
        skip, down = encoder_stage(ctx, 0, image(rng))
        code = bottom_stage(ctx, down)
        out = decoder_stage(ctx, "stem", 0, code, skip)
        assert out.shape == (1, 2, 16, 16)

    def test_decoder_rejects_mismatched_skip(self, rng: np.random.Generator) -> None:
        """The upsampled map must match the skip resolution."""
        cfg = NetworkConfig(levels=1, dense_block=DenseBlockConfig(1, 2, 4))
        ctx = self._context(cfg)
        _, down = encoder_stage(ctx, 0, image(rng))
        code = bottom_stage(ctx, down)
        skip = Tensor(np.zeros((1, 4, 12, 12)), dtype=np.float64)
        with pytest.raises(ShapeError, match="does not match skip"):
            decoder_stage(ctx, "plant", 0, code, skip)


class TestForward:
    """Tests for the forward pass."""

    def test_output_shapes(
        self, rng: np.random.Generator, tiny_network_config: NetworkConfig
    ) -> None:
        """Both heads produce per-pixel distributions at the input resolution."""
        params = he_init(tiny_network_config, np.random.default_rng(0), np.float64)
        out = forward(image(rng), params, Mode.TRAIN, np.random.default_rng(1))
        assert out.plant_probs.shape == (1, 4, 16, 16)
        assert out.stem_probs.shape == (1, 3, 16, 16)
        np.testing.assert_allclose(out.plant_probs.data.sum(axis=1), 1.0)
        np.testing.assert_allclose(out.stem_probs.data.sum(axis=1), 1.0)

    def test_rgb_input(self, rng: np.random.Generator) -> None:
        """A three-channel network accepts RGB images."""
        cfg = NetworkConfig(input_channels=3, levels=1, dense_block=DenseBlockConfig(1, 2))
        params = he_init(cfg, np.random.default_rng(0), np.float64)
        out = forward(image(rng, 8, 3), params, Mode.TRAIN, np.random.default_rng(1))
        assert out.plant_probs.shape == (1, 4, 8, 8)

    def test_single_head(
        self, rng: np.random.Generator, tiny_network_config: NetworkConfig
    ) -> None:
        """An absent head yields None."""
        params = he_init(tiny_network_config.with_heads("stem"), np.random.default_rng(0), np.float64)
        out = forward(image(rng), params, Mode.TRAIN, np.random.default_rng(1))
        assert out.plant_probs is None
        assert out.stem_probs.shape == (1, 3, 16, 16)

    @pytest.mark.parametrize("size", [(10, 16), (16, 18), (6, 6)])
    def test_indivisible_input(
        self, tiny_network_config: NetworkConfig, size: tuple
    ) -> None:
        """Heights and widths must be multiples of 2^levels."""
        with pytest.raises(ShapeError, match="must be multiples of 4"):
            check_input_shape((1, 4, *size), tiny_network_config)

    def test_wrong_channel_count(self, tiny_network_config: NetworkConfig) -> None:
        """The channel count is part of the configuration."""
        with pytest.raises(ShapeError, match="4 input channels"):
            check_input_shape((1, 3, 16, 16), tiny_network_config)

    def test_eval_is_deterministic(
        self, rng: np.random.Generator, tiny_network_config: NetworkConfig
    ) -> None:
        """Two eval passes give identical outputs."""
        params = he_init(tiny_network_config, np.random.default_rng(0), np.float64)
        x = image(rng)
        forward(x, params, Mode.TRAIN, np.random.default_rng(1))
        first = forward(x, params, Mode.EVAL)
        second = forward(x, params, Mode.EVAL)
        np.testing.assert_array_equal(first.plant_probs.data, second.plant_probs.data)
        np.testing.assert_array_equal(first.stem_probs.data, second.stem_probs.data)

    @pytest.mark.parametrize("bn_before_activation", [False, True])
    def test_decoders_are_independent(
        self,
        rng: np.random.Generator,
        tiny_network_config: NetworkConfig,
        bn_before_activation: bool,
    ) -> None:
        """Changing a plant decoder weight leaves the stem head untouched; the encoder feeds both."""
        cfg = replace(
            tiny_network_config,
            dropout_p=0.0,
            bn_before_activation=bn_before_activation,
        )
        params = he_init(cfg, np.random.default_rng(0), np.float64)
        x = image(rng)
        base = forward(x, params, Mode.TRAIN)

        params["plant.0.dense.0.conv.kernel"].data += 0.5
        decoder_change = forward(x, params, Mode.TRAIN)
        np.testing.assert_array_equal(base.stem_probs.data, decoder_change.stem_probs.data)
        assert not np.allclose(base.plant_probs.data, decoder_change.plant_probs.data)

        params["encoder.0.dense.0.conv.kernel"].data += 0.5
        encoder_change = forward(x, params, Mode.TRAIN)
        assert not np.allclose(base.stem_probs.data, encoder_change.stem_probs.data)

    def test_parameter_count(self, tiny_network_config: NetworkConfig) -> None:
        """The count covers every learnable tensor."""
        params = he_init(tiny_network_config, np.random.default_rng(0))
        assert count_parameters(params) == parameter_layout(tiny_network_config).size

    def test_shared_encoder_saving(self) -> None:
        """The joint model is smaller than two single-task models but larger than one."""
        budget = shared_encoder_saving(NetworkConfig())
        assert max(budget.plant_only, budget.stem_only) < budget.joint < budget.separate
        assert 0.0 < budget.saving < 0.5
        assert budget.ratio == pytest.approx(1.0 - budget.saving)
