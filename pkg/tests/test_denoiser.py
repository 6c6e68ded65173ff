import math

import numpy as np
import pytest
import torch

from helpers import quantized_plane, random_plane
from rdsr.denoiser import (
    DenoiserConfig,
    build_denoiser,
    check_weights_finite,
    predict,
    sinusoid_embedding,
    time_embedding,
)

TINY = DenoiserConfig(base_channels=4, depth=1, time_embed_dim=8, image_channels=1)


class TestConfig:
    @pytest.mark.parametrize(
        "kwargs",
        [
            dict(base_channels=0),
            dict(depth=0),
            dict(time_embed_dim=7),
            dict(time_embed_dim=0),
            dict(image_channels=2),
        ],
    )
    def test_rejects_invalid(self, kwargs):
        with pytest.raises(ValueError):
            DenoiserConfig(**kwargs)

    def test_level_channels_cap_at_four_x(self):
        cfg = DenoiserConfig(base_channels=8, depth=4)
        assert cfg.level_channels == (8, 16, 32, 32, 32)

    def test_channel_counts(self):
        cfg = DenoiserConfig(image_channels=3)
        assert cfg.in_channels == 6
        assert cfg.out_channels == 3


class TestTimeEmbedding:
    def test_matches_direct_formula(self):
        dim = 12
        t = 3
        emb = time_embedding(t, dim)
        for k in range(dim // 2):
            w = 10000.0 ** (-2.0 * k / dim)
            assert emb[2 * k] == pytest.approx(math.sin(t * w), abs=1e-12)
            assert emb[2 * k + 1] == pytest.approx(math.cos(t * w), abs=1e-12)

    def test_batched_matches_scalar(self):
        dim = 16
        batch = sinusoid_embedding(torch.tensor([1.0, 4.0], dtype=torch.float64), dim)
        np.testing.assert_allclose(batch[0].numpy(), time_embedding(1, dim), atol=1e-15)
        np.testing.assert_allclose(batch[1].numpy(), time_embedding(4, dim), atol=1e-15)

    def test_distinct_timesteps_differ(self):
        a, b = time_embedding(1, 32), time_embedding(2, 32)
        assert np.max(np.abs(a - b)) > 0.1

    def test_odd_dim_rejected(self):
        with pytest.raises(ValueError, match="even"):
            sinusoid_embedding(torch.tensor([1.0]), 9)


class TestInitialization:
    def test_same_seed_identical_parameters(self):
        a = build_denoiser(TINY, seed=7)
        b = build_denoiser(TINY, seed=7)
        for (na, pa), (nb, pb) in zip(a.named_parameters(), b.named_parameters()):
            assert na == nb
            assert torch.equal(pa, pb)

    def test_different_seed_differs(self):
        a = build_denoiser(TINY, seed=7)
        b = build_denoiser(TINY, seed=8)
        diffs = [
            not torch.equal(pa, pb)
            for (_, pa), (_, pb) in zip(a.named_parameters(), b.named_parameters())
        ]
        assert any(diffs)

    def test_head_is_exactly_zero(self):
        model = build_denoiser(DenoiserConfig(base_channels=8, depth=2), seed=0)
        assert torch.all(model.head.weight == 0)
        assert torch.all(model.head.bias == 0)

    def test_hidden_weight_std_near_fan_in_target(self):
        model = build_denoiser(DenoiserConfig(base_channels=32, depth=2), seed=3)
        checked = 0
        for module in model.modules():
            if isinstance(module, torch.nn.Conv2d) and module is not model.head:
                w = module.weight
                if w.numel() < 10_000:
                    continue
                fan_in = module.in_channels * module.kernel_size[0] * module.kernel_size[1]
                target = math.sqrt(2.0 / fan_in)
                measured = float(w.detach().std())
                assert abs(measured - target) < 0.2 * target
                checked += 1
        assert checked >= 3

    def test_parameter_count_consistent(self):
        model = build_denoiser(TINY, seed=0)
        assert model.parameter_count == sum(p.numel() for p in model.parameters())
        assert model.parameter_count > 0


class TestPredict:
    def test_zero_init_returns_conditioning_exactly(self):
        rng = np.random.default_rng(21)
        model = build_denoiser(TINY, seed=0)
        y_t = quantized_plane(rng, 8, 8, 1)
        lr_up = quantized_plane(rng, 8, 8, 1)
        out = predict(model, y_t, 2, lr_up)
        np.testing.assert_array_equal(out.data, lr_up.data)

    @pytest.mark.parametrize("hw", [(8, 8), (8, 16), (24, 8)])
    def test_output_shape_matches_input(self, hw):
        rng = np.random.default_rng(22)
        model = build_denoiser(DenoiserConfig(base_channels=4, depth=2, time_embed_dim=8), seed=1)
        y_t = random_plane(rng, *hw)
        out = predict(model, y_t, 1, y_t)
        assert out.shape == y_t.shape

    def test_rejects_shape_mismatch(self):
        rng = np.random.default_rng(23)
        model = build_denoiser(TINY, seed=0)
        with pytest.raises(ValueError, match="shape"):
            predict(model, random_plane(rng, 8, 8, 1), 1, random_plane(rng, 8, 6, 1))

    def test_rejects_wrong_channels(self):
        rng = np.random.default_rng(24)
        model = build_denoiser(TINY, seed=0)
        img = random_plane(rng, 8, 8, 3)
        with pytest.raises(ValueError, match="channel"):
            predict(model, img, 1, img)

    def test_rejects_indivisible_size(self):
        rng = np.random.default_rng(25)
        model = build_denoiser(DenoiserConfig(base_channels=4, depth=2, time_embed_dim=8, image_channels=1), seed=0)
        img = random_plane(rng, 10, 8, 1)
        with pytest.raises(ValueError, match="divisible"):
            predict(model, img, 1, img)

    def test_rejects_nonpositive_t(self):
        rng = np.random.default_rng(26)
        model = build_denoiser(TINY, seed=0)
        img = random_plane(rng, 8, 8, 1)
        with pytest.raises(ValueError, match="timestep"):
            predict(model, img, 0, img)

    def test_timestep_changes_output_once_trained_weights_exist(self):
        rng = np.random.default_rng(27)
        model = build_denoiser(TINY, seed=0)
        with torch.no_grad():  # non-zero head so the time signal reaches the output
            model.head.weight.normal_(0.0, 0.1, generator=torch.Generator().manual_seed(1))
        img = random_plane(rng, 8, 8, 1)
        a = predict(model, img, 1, img)
        b = predict(model, img, 4, img)
        assert np.max(np.abs(a.data - b.data)) > 0


class TestWeightChecks:
    def test_nan_weight_detected(self):
        model = build_denoiser(TINY, seed=0)
        with torch.no_grad():
            model.stem.weight[0, 0, 0, 0] = float("nan")
        with pytest.raises(RuntimeError, match="stem"):
            check_weights_finite(model)

    def test_predict_refuses_nan_weights(self):
        rng = np.random.default_rng(28)
        model = build_denoiser(TINY, seed=0)
        with torch.no_grad():
            model.stem.weight[0, 0, 0, 0] = float("inf")
        img = random_plane(rng, 8, 8, 1)
        with pytest.raises(RuntimeError, match="finite"):
            predict(model, img, 1, img)


class TestGradients:
    def test_analytic_matches_central_differences(self):
        torch.manual_seed(0)
        model = build_denoiser(TINY, seed=5).double()
        gen = torch.Generator().manual_seed(11)
        with torch.no_grad():  # head must be non-zero or upstream gradients vanish
            for p in model.parameters():
                p.add_(torch.empty_like(p).normal_(0.0, 0.05, generator=gen))
        rng = np.random.default_rng(29)
        y_t = torch.from_numpy(rng.uniform(0, 1, (1, 1, 8, 8)))
        lr_up = torch.from_numpy(rng.uniform(0, 1, (1, 1, 8, 8)))
        target = torch.from_numpy(rng.uniform(0, 1, (1, 1, 8, 8)))
        ts = torch.tensor([2.0], dtype=torch.float64)

        def loss_value() -> float:
            out = model(y_t, ts, lr_up)
            return float(torch.mean((out - target) ** 2))

        model.zero_grad()
        out = model(y_t, ts, lr_up)
        torch.mean((out - target) ** 2).backward()

        h = 1e-6
        entry_rng = np.random.default_rng(30)
        for name, p in model.named_parameters():
            flat = p.detach().reshape(-1)
            grad = p.grad.reshape(-1)
            idx = entry_rng.integers(0, flat.numel(), size=min(2, flat.numel()))
            for i in idx:
                with torch.no_grad():
                    orig = float(flat[i])
                    flat[i] = orig + h
                    up = loss_value()
                    flat[i] = orig - h
                    down = loss_value()
                    flat[i] = orig
                numeric = (up - down) / (2 * h)
                analytic = float(grad[i])
                scale = max(abs(analytic), abs(numeric), 1e-8)
                assert abs(numeric - analytic) / scale < 1e-3, name
