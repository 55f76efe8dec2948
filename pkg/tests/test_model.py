from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pytest

from efrlfn.model import (
    Model,
    ModelConfig,
    build_model,
    dump_features,
    eca,
    erlfb_forward,
    esa,
    forward,
    param_count,
)
from efrlfn.tensor import ShapeError, Tensor, conv2d, pixel_shuffle

from oracles import assert_grad_matches


def rand(shape, seed=0, lo=-1.0, hi=1.0):
    return np.random.default_rng(seed).uniform(lo, hi, size=shape)


def zero_model(config: ModelConfig) -> Model:
    m = build_model(config)
    for p in m.parameters.values():
        p.data[:] = 0.0
    return m


class TestConfigAndBuild:
    def test_default_param_count_in_design_band(self):
        count = param_count(ModelConfig())
        assert 350_000 <= count <= 390_000

    def test_param_count_matches_built_model(self):
        for cfg in (
            ModelConfig(channels=4, blocks=1),
            ModelConfig(channels=8, blocks=2, attention="esa"),
            ModelConfig(channels=6, blocks=3, scale=4),
        ):
            assert build_model(cfg).param_count() == param_count(cfg)

    def test_param_count_hand_enumerated_small_config(self):
        # C=4, B=1, scale=2, eca, rgb:
        #   extract 3->4 (3x3):        4*3*9 + 4   = 112
        #   3 refine convs 4->4 (3x3): 3*(4*4*9+4) = 444
        #   eca gate 4->4 (1x1):       4*4 + 4     = 20
        #   smooth 4->4 (3x3):         4*4*9 + 4   = 148
        #   recon 4->12 (3x3):         12*4*9 + 12 = 444
        assert param_count(ModelConfig(channels=4, blocks=1)) == 112 + 444 + 20 + 148 + 444

    def test_param_count_monotone_in_width_and_depth(self):
        for c in (4, 8, 16):
            assert param_count(ModelConfig(channels=c)) < param_count(ModelConfig(channels=c + 1))
        for b in (1, 3, 6):
            assert param_count(ModelConfig(blocks=b)) < param_count(ModelConfig(blocks=b + 1))

    def test_build_is_deterministic(self):
        cfg = ModelConfig(channels=6, blocks=2, seed=123)
        a = build_model(cfg)
        b = build_model(cfg)
        for name in a.parameters:
            np.testing.assert_array_equal(a.parameters[name].data, b.parameters[name].data)

    def test_build_differs_across_seeds(self):
        a = build_model(ModelConfig(channels=6, blocks=2, seed=1))
        b = build_model(ModelConfig(channels=6, blocks=2, seed=2))
        assert not np.array_equal(
            a.parameters["extract.weight"].data, b.parameters["extract.weight"].data
        )

    def test_minimal_instance_runs(self):
        m = build_model(ModelConfig(channels=4, blocks=1))
        out = forward(m, Tensor(rand((1, 3, 8, 8), seed=3, lo=0.0, hi=1.0)))
        assert out.shape == (1, 3, 16, 16)
        assert np.all(np.isfinite(out.data))

    def test_invalid_config_names_field(self):
        with pytest.raises(ValueError, match="scale"):
            ModelConfig(scale=3).validate()
        with pytest.raises(ValueError, match="channels"):
            ModelConfig(channels=0).validate()
        with pytest.raises(ValueError, match="attention"):
            ModelConfig(attention="cbam").validate()

    def test_all_six_ablation_configs_constructible(self):
        for act in ("tanh", "shifted_sigmoid", "relu"):
            for att in ("eca", "esa"):
                cfg = ModelConfig(channels=8, blocks=2, activation=act, attention=att)
                m = build_model(cfg)
                out = forward(m, Tensor(rand((1, 3, 8, 8), seed=4, lo=0.0, hi=1.0)))
                assert out.shape == (1, 3, 16, 16)

    def test_schema_cardinality_same_across_activations(self):
        counts = {
            act: param_count(ModelConfig(channels=8, blocks=2, activation=act))
            for act in ("tanh", "shifted_sigmoid", "relu")
        }
        assert len(set(counts.values())) == 1


class TestEca:
    def test_identity_weights_closed_form(self):
        c = 3
        features = Tensor(np.ones((1, c, 4, 4)))
        weight = Tensor(np.eye(c).reshape(c, c, 1, 1))
        bias = Tensor(np.zeros(c))
        out = eca(features, weight, bias)
        np.testing.assert_allclose(out.data, 1.0 / (1.0 + np.exp(-1.0)), atol=1e-9)

    def test_zero_features_zero_output(self):
        c = 4
        out = eca(
            Tensor(np.zeros((2, c, 3, 3))),
            Tensor(rand((c, c, 1, 1), seed=5)),
            Tensor(np.zeros(c)),
        )
        np.testing.assert_array_equal(out.data, 0.0)

    def test_gate_in_open_unit_interval(self):
        c = 5
        features = Tensor(rand((1, c, 6, 6), seed=6))
        weight = Tensor(rand((c, c, 1, 1), seed=7))
        bias = Tensor(rand((c,), seed=8))
        gated = eca(features, weight, bias)
        ratio = gated.data / np.where(features.data == 0, 1.0, features.data)
        ratio = ratio[features.data != 0]
        assert np.all(ratio > 0.0) and np.all(ratio < 1.0)

    def test_channel_mismatch_rejected(self):
        with pytest.raises(ShapeError):
            eca(Tensor(np.zeros((1, 3, 2, 2))), Tensor(np.zeros((4, 4, 1, 1))), Tensor(np.zeros(4)))

    def test_gradient(self):
        c = 3
        f = Tensor(rand((1, c, 2, 2), seed=9), requires_grad=True)
        w = Tensor(rand((c, c, 1, 1), seed=10), requires_grad=True)
        b = Tensor(rand((c,), seed=11), requires_grad=True)

        def loss():
            out = eca(f, w, b)
            return (out * out).mean()

        assert_grad_matches(loss, {"f": f, "w": w, "b": b})


class TestEsa:
    def _weights(self, c, seed=12):
        f = max(1, c // 4)
        rng = np.random.default_rng(seed)
        return {
            "reduce.weight": Tensor(rng.normal(size=(f, c, 1, 1)), requires_grad=True),
            "reduce.bias": Tensor(np.zeros(f), requires_grad=True),
            "down.weight": Tensor(rng.normal(size=(f, f, 3, 3)), requires_grad=True),
            "down.bias": Tensor(np.zeros(f), requires_grad=True),
            "group.weight": Tensor(rng.normal(size=(f, f, 3, 3)), requires_grad=True),
            "group.bias": Tensor(np.zeros(f), requires_grad=True),
            "expand.weight": Tensor(rng.normal(size=(c, f, 1, 1)), requires_grad=True),
            "expand.bias": Tensor(np.zeros(c), requires_grad=True),
        }

    @pytest.mark.parametrize("hw", [(8, 8), (8, 13), (15, 9), (32, 24)])
    def test_shape_contract_from_8(self, hw):
        h, w = hw
        c = 8
        features = Tensor(rand((1, c, h, w), seed=13))
        out = esa(features, self._weights(c))
        assert out.shape == (1, c, h, w)

    def test_gate_in_open_unit_interval(self):
        c = 8
        features = Tensor(np.ones((1, c, 10, 10)))
        out = esa(features, self._weights(c))
        assert np.all(out.data > 0.0) and np.all(out.data < 1.0)

    def test_too_small_rejected(self):
        c = 8
        with pytest.raises(ShapeError, match="stride/pool"):
            esa(Tensor(np.zeros((1, c, 4, 4))), self._weights(c))

    def test_gradient(self):
        c = 4
        weights = self._weights(c, seed=14)
        f = Tensor(rand((1, c, 8, 8), seed=15), requires_grad=True)

        def loss():
            out = esa(f, weights)
            return (out * out).mean()

        assert_grad_matches(loss, {"f": f, **weights})


class TestBlock:
    def test_zero_weights_identity(self):
        for act in ("tanh", "relu", "shifted_sigmoid"):
            for att in ("eca", "esa"):
                cfg = ModelConfig(channels=8, blocks=1, activation=act, attention=att)
                m = zero_model(cfg)
                x = Tensor(rand((1, 8, 8, 8), seed=16))
                bw = {k[len("block1."):]: v for k, v in m.parameters.items() if k.startswith("block1.")}
                out = erlfb_forward(bw, x, act, att)
                np.testing.assert_array_equal(out.data, x.data)

    def test_output_shape_matches_input(self):
        cfg = ModelConfig(channels=6, blocks=1)
        m = build_model(cfg)
        bw = {k[len("block1."):]: v for k, v in m.parameters.items() if k.startswith("block1.")}
        x = Tensor(rand((2, 6, 9, 7), seed=17))
        assert erlfb_forward(bw, x, "tanh", "eca").shape == x.shape

    def test_end_to_end_gradient(self):
        cfg = ModelConfig(channels=3, blocks=1, seed=18)
        m = build_model(cfg)
        bw = {k[len("block1."):]: v for k, v in m.parameters.items() if k.startswith("block1.")}
        x = Tensor(rand((1, 3, 4, 4), seed=19), requires_grad=True)

        def loss():
            out = erlfb_forward(bw, x, "tanh", "eca")
            return (out * out).mean()

        assert_grad_matches(loss, {"x": x, **{f"p{i}": t for i, t in enumerate(bw.values())}})


class TestForward:
    @pytest.mark.parametrize("scale", [2, 4])
    def test_output_dims_scale(self, scale):
        m = build_model(ModelConfig(channels=4, blocks=1, scale=scale))
        out = forward(m, Tensor(rand((2, 3, 6, 5), seed=20, lo=0.0, hi=1.0)))
        assert out.shape == (2, 3, 6 * scale, 5 * scale)

    def test_zero_parameters_zero_output(self):
        m = zero_model(ModelConfig(channels=4, blocks=2))
        out = forward(m, Tensor(rand((1, 3, 5, 5), seed=21, lo=0.0, hi=1.0)))
        np.testing.assert_array_equal(out.data, 0.0)

    def test_zero_blocks_reduce_to_double_extractor_path(self):
        # Zeroing only the block weights turns every block into the identity,
        # so the network must equal pixel_shuffle(recon(2 * extract(x))).
        cfg = ModelConfig(channels=5, blocks=3, seed=22)
        m = build_model(cfg)
        for name, p in m.parameters.items():
            if name.startswith("block"):
                p.data[:] = 0.0
        x = Tensor(rand((1, 3, 6, 6), seed=23, lo=0.0, hi=1.0))
        got = forward(m, x)
        f0 = conv2d(x, m.parameters["extract.weight"], m.parameters["extract.bias"], padding=1)
        rec = conv2d(f0 + f0, m.parameters["recon.weight"], m.parameters["recon.bias"], padding=1)
        want = pixel_shuffle(rec, cfg.scale)
        np.testing.assert_array_equal(got.data, want.data)

    def test_wrong_channel_count_rejected(self):
        m = build_model(ModelConfig(channels=4, blocks=1))
        with pytest.raises(ShapeError, match="3"):
            forward(m, Tensor(rand((1, 4, 6, 6), seed=24)))

    def test_clamped_inference_in_unit_range(self):
        m = build_model(ModelConfig(channels=4, blocks=1, seed=25))
        out = forward(m, Tensor(rand((1, 3, 6, 6), seed=26, lo=0.0, hi=1.0)), clamp=True)
        assert out.data.min() >= 0.0 and out.data.max() <= 1.0

    def test_concurrent_inference_matches_sequential(self):
        m = build_model(ModelConfig(channels=4, blocks=2, seed=27))
        inputs = [Tensor(rand((1, 3, 6, 6), seed=s, lo=0.0, hi=1.0)) for s in range(8)]
        sequential = [forward(m, x).data for x in inputs]
        with ThreadPoolExecutor(max_workers=4) as pool:
            threaded = list(pool.map(lambda x: forward(m, x).data, inputs))
        for a, b in zip(sequential, threaded):
            np.testing.assert_array_equal(a, b)


class TestDumpFeatures:
    def test_requested_blocks_returned(self):
        m = build_model(ModelConfig(channels=4, blocks=6, seed=28))
        lr = Tensor(rand((1, 3, 6, 6), seed=29, lo=0.0, hi=1.0))
        maps = dump_features(m, lr, {1, 3, 6})
        assert sorted(maps) == [1, 3, 6]
        for t in maps.values():
            assert t.shape == (1, 4, 6, 6)

    def test_empty_index_set(self):
        m = build_model(ModelConfig(channels=4, blocks=2))
        assert dump_features(m, Tensor(rand((1, 3, 4, 4), seed=30)), set()) == {}

    def test_out_of_range_rejected(self):
        m = build_model(ModelConfig(channels=4, blocks=2))
        with pytest.raises(ValueError, match="range"):
            dump_features(m, Tensor(rand((1, 3, 4, 4), seed=31)), {3})

    def test_deterministic_across_calls(self):
        m = build_model(ModelConfig(channels=4, blocks=3, seed=32))
        lr = Tensor(rand((1, 3, 5, 5), seed=33, lo=0.0, hi=1.0))
        a = dump_features(m, lr, {2})[2]
        b = dump_features(m, lr, {2})[2]
        np.testing.assert_array_equal(a.data, b.data)

    def test_does_not_perturb_forward(self):
        m = build_model(ModelConfig(channels=4, blocks=3, seed=34))
        lr = Tensor(rand((1, 3, 5, 5), seed=35, lo=0.0, hi=1.0))
        plain = forward(m, lr).data
        captured: dict = {}
        from efrlfn.model import forward as fwd

        out = fwd(m, lr, _capture=captured, _capture_indices=frozenset({1, 2}))
        np.testing.assert_array_equal(plain, out.data)
