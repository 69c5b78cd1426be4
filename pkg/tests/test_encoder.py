import numpy as np
import pytest

from embclust.attention import grad_check
from embclust.encoder import (EncoderConfig, encoder_backward, encoder_forward,
                              init_encoder_params, load_checkpoint,
                              save_checkpoint)
from embclust.errors import FormatError


def make(variant="diff", layers=2, heads=2, dim=8, seed=0):
    cfg = EncoderConfig(layers=layers, heads=heads, dim=dim, variant=variant)
    params = init_encoder_params(cfg, np.random.default_rng(seed))
    return cfg, params


class TestConfig:
    def test_heads_must_divide_dim(self):
        with pytest.raises(ValueError, match="divide"):
            EncoderConfig(layers=1, heads=3, dim=8)

    def test_diff_needs_even_head_width(self):
        with pytest.raises(ValueError, match="even"):
            EncoderConfig(layers=1, heads=3, dim=9, variant="diff")

    def test_vanilla_allows_odd_head_width(self):
        EncoderConfig(layers=1, heads=3, dim=9, variant="vanilla")


class TestForward:
    def test_zero_layers_is_identity(self, rng):
        cfg, params = make(layers=0)
        x = rng.standard_normal((5, 8))
        out, _ = encoder_forward(cfg, params, x)
        assert np.array_equal(out, x)

    def test_zero_input_zero_output_with_zero_biases(self):
        cfg, params = make(layers=1)
        x = np.zeros((4, 8))
        out, _ = encoder_forward(cfg, params, x)
        assert np.allclose(out, 0.0)

    def test_deterministic(self, rng):
        cfg, params = make()
        x = rng.standard_normal((6, 8))
        a, _ = encoder_forward(cfg, params, x)
        b, _ = encoder_forward(cfg, params, x)
        assert np.array_equal(a, b)

    @pytest.mark.parametrize("variant", ["vanilla", "diff", "sdt", "moe-sdt"])
    def test_all_variants_run(self, rng, variant):
        cfg, params = make(variant=variant)
        x = rng.standard_normal((6, 8))
        counts = np.full(6, 3) if variant in ("sdt", "moe-sdt") else None
        out, _ = encoder_forward(cfg, params, x, counts)
        assert out.shape == (6, 8)
        assert np.all(np.isfinite(out))

    def test_sparse_variant_requires_counts(self, rng):
        cfg, params = make(variant="sdt")
        with pytest.raises(ValueError, match="counts"):
            encoder_forward(cfg, params, rng.standard_normal((4, 8)))


class TestBackward:
    @pytest.mark.parametrize("variant", ["vanilla", "diff", "sdt", "moe-sdt"])
    def test_full_stack_gradients(self, rng, variant):
        cfg, params = make(variant=variant, layers=1, heads=2, dim=8)
        n = 4
        x0 = rng.standard_normal((n, 8))
        counts = np.full(n, 2) if variant in ("sdt", "moe-sdt") else None
        probe = rng.standard_normal((n, 8))

        def fn(trial):
            model = {k: trial[k] for k in params}
            out, caches = encoder_forward(cfg, model, trial["_x"], counts)
            loss = float(np.sum(out * probe))
            dx, grads = encoder_backward(cfg, model, probe, caches)
            grads["_x"] = dx
            return loss, grads

        trial = {k: v.copy() for k, v in params.items()}
        trial["_x"] = x0
        report = grad_check(fn, trial, tolerance=1e-4)
        assert report.passed, sorted(report.per_param.items(), key=lambda kv: -kv[1])[:3]


class TestCheckpoint:
    def test_round_trip_structure(self, tmp_path):
        cfg, params = make()
        # quantize so the round trip compares equal
        params = {k: v.astype(np.float32).astype(np.float64) for k, v in params.items()}
        path = tmp_path / "m.dcat"
        save_checkpoint(path, {"encoder": "test", "layers": 2}, params)
        config, back = load_checkpoint(path)
        assert config == {"encoder": "test", "layers": 2}
        assert list(back) == list(params)
        for key in params:
            assert np.array_equal(back[key], params[key])

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "m.dcat"
        cfg, params = make(layers=0)
        save_checkpoint(path, {}, {"w": np.ones(3)})
        data = bytearray(path.read_bytes())
        data[0] ^= 0xFF
        path.write_bytes(bytes(data))
        with pytest.raises(FormatError, match="magic"):
            load_checkpoint(path)

    def test_truncated_tensor(self, tmp_path):
        path = tmp_path / "m.dcat"
        save_checkpoint(path, {}, {"w": np.ones(8)})
        path.write_bytes(path.read_bytes()[:-8])
        with pytest.raises(FormatError, match="truncated"):
            load_checkpoint(path)

    def test_identical_bytes_for_identical_params(self, tmp_path):
        cfg, params = make()
        a = tmp_path / "a.dcat"
        b = tmp_path / "b.dcat"
        save_checkpoint(a, {"v": 1}, params)
        save_checkpoint(b, {"v": 1}, params)
        assert a.read_bytes() == b.read_bytes()
