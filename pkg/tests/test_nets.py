import os

import numpy as np
import pytest

import graftstereo.autodiff as ad
from graftstereo import (ChannelMismatch, ConfigError, CostVolume, FeatureMap,
                         NetDesc, NetParams, ShapeMismatch, Tensor,
                         adaptor_forward, aggregator_forward, build_cost,
                         feature_forward, grad_check, init_params,
                         load_params, save_params)
from graftstereo.nets import backward, collect_grad, param_nodes

from conftest import rand_tensor

GOLDEN = os.path.join(os.path.dirname(__file__), "data", "feature_golden.tns")


def golden_input():
    v = (np.arange(8 * 16, dtype=np.float32) % 17) / 16.0
    return Tensor(v.reshape(1, 8, 16))


class TestDescriptor:
    def test_ushape_parameter_count(self):
        # every layer is 3x3: count = sum(c_out * c_in * 9 + c_out)
        desc = NetDesc("adaptor", 16, 16, 16, variant="ushape")
        by_walk = sum(co * ci * k * k + co
                      for _, _, ci, co, k, _ in desc.layers())
        assert desc.param_count() == by_walk == 32400

    def test_layout_covers_flat_exactly(self):
        desc = NetDesc("feature", 1, 4, 6)
        spans = []
        for name, ks, bs, kshape in desc.layout():
            assert ks.stop == bs.start
            spans.append((ks.start, bs.stop))
            assert int(np.prod(kshape)) == ks.stop - ks.start
        assert spans[0][0] == 0
        for (_, prev_end), (start, _) in zip(spans, spans[1:]):
            assert start == prev_end
        assert spans[-1][1] == desc.param_count()

    @pytest.mark.parametrize("kind,kw", [
        ("nosuch", {}),
        ("adaptor", {"variant": "mlp"}),
        ("feature", {"in_ch": 0}),
        ("feature", {"width": -1}),
    ])
    def test_bad_descriptor_rejected(self, kind, kw):
        args = {"kind": kind, "in_ch": 1, "width": 4, "out_ch": 4}
        if kind == "adaptor" and "variant" not in kw:
            kw["variant"] = "linear"
        args.update(kw)
        with pytest.raises(ConfigError):
            NetDesc(**args)


class TestInit:
    def test_same_seed_bitwise_equal(self):
        d = NetDesc("feature", 1, 8, 8)
        a = init_params(d, 3)
        b = init_params(d, 3)
        assert a.flat.tobytes() == b.flat.tobytes()

    def test_different_seeds_differ(self):
        d = NetDesc("feature", 1, 8, 8)
        assert init_params(d, 3).flat.tobytes() != init_params(d, 4).flat.tobytes()

    def test_he_fan_in_variance(self):
        # 3x3, 16 -> 16: fan_in = 144, expect var close to 2/144
        p = init_params(NetDesc("adaptor", 16, 16, 16, variant="linear"), 0)
        d2 = NetDesc("adaptor", 16, 16, 16, variant="nonlinear")
        p2 = init_params(d2, 0)
        k = p2.kernel("conv1")
        var = float(k.astype(np.float64).var())
        assert abs(var - 2.0 / 144.0) < 0.2 * (2.0 / 144.0)
        del p

    def test_biases_zero(self):
        p = init_params(NetDesc("feature", 1, 4, 4), 9)
        for name, _, _, _ in p.desc.layout():
            assert (p.bias(name) == 0).all()


class TestSerialization:
    def test_round_trip_with_frozen_flags(self, tmp_path):
        p = init_params(NetDesc("adaptor", 4, 4, 4, variant="nonlinear"), 5)
        p.set_frozen(True, names=["conv1"])
        prefix = str(tmp_path / "net")
        save_params(p, prefix)
        q = load_params(prefix)
        assert q.flat.tobytes() == p.flat.tobytes()
        assert q.frozen == {"conv1": True, "conv2": False}
        assert q.desc == p.desc

    def test_flat_size_mismatch_rejected(self, tmp_path):
        p = init_params(NetDesc("feature", 1, 4, 4), 0)
        prefix = str(tmp_path / "net")
        save_params(p, prefix)
        # overwrite payload with a descriptor claiming another width
        q = init_params(NetDesc("feature", 1, 6, 4), 0)
        save_params(q, str(tmp_path / "other"))
        os.replace(str(tmp_path / "other") + ".tns", prefix + ".tns")
        from graftstereo.errors import FormatError
        with pytest.raises(FormatError):
            load_params(prefix)


class TestFeatureForward:
    def test_zero_image_zero_biases_gives_zeros(self):
        p = init_params(NetDesc("feature", 1, 4, 4), 0)
        out = feature_forward(p, Tensor.zeros((1, 8, 16)))
        assert (out.data.array == 0).all()

    def test_quarter_resolution_shape(self):
        p = init_params(NetDesc("feature", 2, 4, 6), 0)
        out = feature_forward(p, Tensor.zeros((2, 12, 20)))
        assert out.data.shape == (6, 3, 5)

    def test_indivisible_dims_rejected(self):
        p = init_params(NetDesc("feature", 1, 4, 4), 0)
        with pytest.raises(ShapeMismatch):
            feature_forward(p, Tensor.zeros((1, 10, 16)))

    def test_golden_output_reproduced_bitwise(self):
        from graftstereo.io import read_tensor
        p = init_params(NetDesc("feature", 1, 4, 6), 7)
        out = feature_forward(p, golden_input())
        want = read_tensor(GOLDEN)
        assert out.data.array.tobytes() == want.array.tobytes()


class TestAdaptorForward:
    def test_linear_identity_kernel_is_identity(self, rng):
        p = init_params(NetDesc("adaptor", 3, 3, 3, variant="linear"), 0)
        flat = p.flat.copy()
        flat[:] = 0
        k = np.zeros((3, 3, 1, 1), dtype=np.float32)
        for c in range(3):
            k[c, c, 0, 0] = 1.0
        layout = {name: (ks, kshape) for name, ks, _, kshape in p.desc.layout()}
        ks, kshape = layout["proj"]
        flat[ks] = k.reshape(-1)
        p = NetParams(p.desc, flat)
        f = FeatureMap(rand_tensor(rng, 3, 5, 7))
        out = adaptor_forward(p, "linear", f)
        np.testing.assert_array_equal(out.data.array, f.data.array)

    @pytest.mark.parametrize("variant,hw", [("linear", (5, 7)),
                                            ("nonlinear", (5, 7)),
                                            ("ushape", (8, 12))])
    def test_spatial_dims_preserved(self, rng, variant, hw):
        p = init_params(NetDesc("adaptor", 3, 4, 6, variant=variant), 1)
        f = FeatureMap(rand_tensor(rng, 3, *hw))
        assert adaptor_forward(p, variant, f).data.shape == (6, *hw)

    def test_ushape_zero_input_zero_biases(self):
        p = init_params(NetDesc("adaptor", 4, 4, 4, variant="ushape"), 2)
        out = adaptor_forward(p, "ushape", FeatureMap(Tensor.zeros((4, 8, 8))))
        assert (out.data.array == 0).all()

    def test_ushape_skips_change_output(self, rng):
        p = init_params(NetDesc("adaptor", 4, 4, 4, variant="ushape"), 2)
        f = FeatureMap(rand_tensor(rng, 4, 8, 8))
        with_skips = adaptor_forward(p, "ushape", f).data.array
        without = adaptor_forward(p, "ushape", f, use_skips=False).data.array
        assert not np.array_equal(with_skips, without)

    def test_ushape_indivisible_rejected(self, rng):
        p = init_params(NetDesc("adaptor", 4, 4, 4, variant="ushape"), 2)
        with pytest.raises(ShapeMismatch):
            adaptor_forward(p, "ushape", FeatureMap(rand_tensor(rng, 4, 6, 8)))

    def test_variant_mismatch_rejected(self, rng):
        p = init_params(NetDesc("adaptor", 4, 4, 4, variant="linear"), 2)
        with pytest.raises(ConfigError):
            adaptor_forward(p, "ushape", FeatureMap(rand_tensor(rng, 4, 8, 8)))


class TestAggregatorForward:
    def test_zero_volume_zero_params_gives_zeros(self):
        p = init_params(NetDesc("aggregator", 1, 4, 1), 0)
        flat = p.flat.copy()
        flat[:] = 0
        p = NetParams(p.desc, flat)
        cv = CostVolume(Tensor.zeros((1, 3, 4, 4)),
                        np.ones((3, 4, 4), bool), "cosine", 2)
        out = aggregator_forward(p, cv)
        assert len(out) == 1 and (out[0].array == 0).all()

    def test_scalar_cost_accepts_any_feature_width(self, rng):
        agg = init_params(NetDesc("aggregator", 1, 4, 1), 0)
        for c in (4, 16, 64):
            l = FeatureMap(rand_tensor(rng, c, 3, 6))
            r = FeatureMap(rand_tensor(rng, c, 3, 6))
            cv = build_cost(l, r, 2, "cosine")
            assert aggregator_forward(agg, cv)[0].shape == (3, 3, 6)

    def test_concat_width_mismatch_rejected(self, rng):
        agg = init_params(NetDesc("aggregator", 32, 4, 1), 0)
        l = FeatureMap(rand_tensor(rng, 4, 3, 6))
        r = FeatureMap(rand_tensor(rng, 4, 3, 6))
        cv = build_cost(l, r, 2, "concat")      # K = 8
        with pytest.raises(ChannelMismatch):
            aggregator_forward(agg, cv)


class TestBackward:
    def quadratic_builder(self, params):
        """loss = sum of squared conv1 kernel entries (exactly, n = 16)."""
        def builder(flats):
            nodes = {"net": param_nodes(params["net"], flats["net"])}
            k, _ = nodes["net"]["proj"]
            d = ad.reshape(k, (4, 4))
            sl1 = ad.smooth_l1(d, np.zeros((4, 4)), np.ones((4, 4), bool))
            return ad.scale(sl1, 2.0 * 16.0), nodes
        return builder

    def small_net(self):
        # linear 4 -> 4 adaptor: the proj kernel holds 16 entries; scaled
        # under the smooth-L1 knee so the loss stays purely quadratic
        p = init_params(NetDesc("adaptor", 4, 4, 4, variant="linear"), 11)
        return NetParams(p.desc, p.flat * np.float32(0.3))

    def test_quadratic_gradient_exact(self):
        p = self.small_net()
        builder = self.quadratic_builder({"net": p})
        flats = {"net": p.flat.astype(np.float64)}
        loss, nodes = builder(flats)
        ad.backward(loss)
        g = collect_grad(p, nodes["net"], dtype=np.float64)
        kslice = next(ks for name, ks, _, _ in p.desc.layout()
                      if name == "proj")
        np.testing.assert_array_equal(g[kslice], 2.0 * flats["net"][kslice])

    def test_quadratic_grad_check_near_exact(self):
        p = self.small_net()
        rep = grad_check(self.quadratic_builder({"net": p}), {"net": p})
        assert rep["passed"] and rep["max_rel_err"] < 1e-10

    def test_corrupted_gradient_flagged(self):
        p = self.small_net()
        rep = grad_check(self.quadratic_builder({"net": p}), {"net": p},
                         corrupt=("net", 3, 1.1))
        assert not rep["passed"]
        assert rep["worst_param"] == "net:proj.kernel[3]"

    def test_frozen_layer_gradient_zero(self, rng):
        p = init_params(NetDesc("adaptor", 2, 2, 2, variant="nonlinear"), 4)
        p.set_frozen(True, names=["conv1"])
        nodes = param_nodes(p)
        f = ad.const(rng.standard_normal((2, 4, 4)).astype(np.float32))
        from graftstereo.nets import adaptor_graph
        out = adaptor_graph(nodes, "nonlinear", f)
        d = ad.reshape(out, (2 * 4, 4))
        loss = ad.smooth_l1(d, np.zeros((8, 4)), np.ones((8, 4), bool))
        grads = backward(loss, {"net": (p, nodes)})
        layout = {name: ks for name, ks, _, _ in p.desc.layout()}
        assert (grads["net"][layout["conv1"]] == 0).all()
        assert (grads["net"][layout["conv2"]] != 0).any()
