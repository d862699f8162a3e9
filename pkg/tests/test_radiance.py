import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from ga_radiance import radiance
from ga_radiance.params import ModelParams, sub
from ga_radiance.radiance import RadianceConfig, repu


def gelu(x):
    return 0.5 * x * (1 + np.vectorize(math.erf)(x / math.sqrt(2)))


def np_repu(x, p):
    return np.where(x > 0, np.abs(x) ** p, 0.0)


def np_exponent(raw):
    return 1 + np.log1p(np.exp(raw))


def np_power_layer(x, p):
    return np_repu(x @ p["w"].T + p["b"], np_exponent(p["p"])) + x @ p["wl"].T + p["bl"]


def np_params(views):
    return {k: v.detach().numpy() for k, v in views.items()}


def random_views(layout, seed, scale=1.0):
    rng = np.random.default_rng(seed)
    vec = rng.normal(size=layout.size) * scale
    return layout.views(torch.as_tensor(vec))


class TestRays:
    def test_single_ray(self):
        b = radiance.sample_rays([1.0, 2.0, 3.0], 1, 5, 0.1, 2.0)
        np.testing.assert_array_equal(b.directions.numpy(), [[1.0, 0.0, 0.0]])
        pos = b.positions.numpy()[0] - [1.0, 2.0, 3.0]
        assert np.linalg.matrix_rank(pos, tol=1e-12) == 1

    def test_endpoints_without_stratification(self):
        b = radiance.sample_rays(np.zeros(3), 3, 2, 0.5, 4.0)
        np.testing.assert_array_equal(b.t.numpy(), [[0.5, 4.0]] * 3)

    def test_lattice_spread(self):
        d = radiance.sample_rays(np.zeros(3), 64, 2, 0, 1).directions.numpy()
        np.testing.assert_allclose(np.linalg.norm(d, axis=1), 1.0, atol=1e-9)
        assert np.linalg.norm(d.mean(axis=0)) < 0.05
        cos = d @ d.T - 2 * np.eye(64)
        assert cos.max() < 1 - 1e-6

    def test_stratified_depths(self):
        b = radiance.sample_rays(np.zeros(3), 4, 16, 0.2, 3.0, seed=5, stratified=True)
        t = b.t.numpy()
        assert np.all(np.diff(t, axis=1) > 0) and t.min() >= 0.2 and t.max() <= 3.0
        rotated = radiance.sample_rays(np.zeros(3), 4, 2, 0, 1, seed=5).directions.numpy()
        g = rotated @ rotated.T
        np.testing.assert_allclose(g, radiance.fibonacci_directions(4) @ radiance.fibonacci_directions(4).T, atol=1e-12)

    @pytest.mark.parametrize("args", [(0, 4, 0, 1), (2, 1, 0, 1), (2, 4, 1, 1), (2, 4, -1, 1)])
    def test_invalid(self, args):
        with pytest.raises(ValueError):
            radiance.sample_rays(np.zeros(3), *args)


class TestRepu:
    def test_values(self):
        assert float(repu(3.0, 2.0)) == 9.0
        assert float(repu(-1.0, 3.7)) == 0.0
        x = torch.linspace(-2, 2, 41, dtype=torch.float64)
        torch.testing.assert_close(repu(x, 1.0), torch.relu(x))

    @settings(max_examples=30, deadline=None)
    @given(st.floats(1.0, 4.0))
    def test_continuous_at_zero(self, p):
        for eps in (1e-3, 1e-6, 1e-9):
            assert abs(float(repu(eps, p)) - float(repu(-eps, p))) <= eps

    def test_gradients_finite_at_and_below_zero(self):
        x = torch.tensor([-1.0, 0.0, 2.0], dtype=torch.float64, requires_grad=True)
        p = torch.tensor(1.5, dtype=torch.float64, requires_grad=True)
        repu(x, p).sum().backward()
        assert torch.isfinite(x.grad).all() and torch.isfinite(p.grad)
        assert x.grad[0] == 0 and x.grad[1] == 0

    def test_exponent_stays_above_one(self):
        raw = torch.linspace(-30, 30, 7, dtype=torch.float64)
        assert torch.all(radiance.exponent(raw) >= 1.0)

    def test_kink_recording(self):
        with radiance.record_kinks() as log:
            repu(torch.tensor([-1.0, 2.0]), 2.0)
        assert len(log) == 1 and log[0].tolist() == [-1.0, 2.0]
        repu(torch.tensor([1.0]), 2.0)
        assert len(log) == 1


class TestPowerMLP:
    def test_zero_network(self):
        lay = radiance.power_mlp_layout([3, 4, 4, 2])
        p = lay.views(torch.zeros(lay.size, dtype=torch.float64))
        p["out.b"].copy_(torch.tensor([1.5, -2.0]))
        out = radiance.power_mlp_forward(torch.randn(5, 3, dtype=torch.float64), p)
        torch.testing.assert_close(out, torch.tensor([[1.5, -2.0]] * 5, dtype=torch.float64))

    def test_single_repu(self):
        raw = math.log(math.e - 1)  # exponent 2
        p = {"l0.w": torch.ones(1, 1), "l0.b": torch.zeros(1), "l0.wl": torch.zeros(1, 1), "l0.bl": torch.zeros(1),
             "l0.p": torch.tensor(raw, dtype=torch.float64), "out.w": torch.ones(1, 1), "out.b": torch.zeros(1)}
        p = {k: v.double() for k, v in p.items()}
        assert float(radiance.power_mlp_forward(torch.tensor([[2.0]], dtype=torch.float64), p)) == pytest.approx(4.0, abs=1e-12)

    def test_matches_reference_forward(self, rng):
        lay = radiance.power_mlp_layout([5, 7, 6, 3])
        views = random_views(lay, 3)
        x = rng.normal(size=(4, 5))
        h = x
        p = np_params(views)
        for i in range(2):
            h = np_power_layer(h, {k[3:]: v for k, v in p.items() if k.startswith(f"l{i}.")})
        expected = h @ p["out.w"].T + p["out.b"]
        np.testing.assert_allclose(radiance.power_mlp_forward(torch.as_tensor(x), views).numpy(), expected, atol=1e-12)

    def test_shape_mismatch(self):
        lay = radiance.power_mlp_layout([5, 7, 3])
        with pytest.raises(ValueError):
            radiance.power_mlp_forward(torch.zeros(2, 4, dtype=torch.float64), random_views(lay, 0))


class TestFiLM:
    def test_identity_and_override(self, rng):
        h, b = torch.as_tensor(rng.normal(size=(2, 6)))
        torch.testing.assert_close(radiance.film_modulate(h, torch.ones(6, dtype=torch.float64), torch.zeros(6, dtype=torch.float64)), h)
        torch.testing.assert_close(radiance.film_modulate(h, torch.zeros(6, dtype=torch.float64), b), b)

    def test_elementwise(self, rng):
        h, g, b = rng.normal(size=(3, 6))
        out = radiance.film_modulate(*(torch.as_tensor(v) for v in (h, g, b)))
        np.testing.assert_allclose(out.numpy(), g * h + b, atol=1e-15)

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            radiance.film_modulate(torch.zeros(3), torch.zeros(4), torch.zeros(3))


TINY = RadianceConfig(att_width=8, att_layers=8, skip_at=4, feature_dim=6, sig_width=8, sig_layers=4, signal_dim=5, film_hidden=7)


class TestAttenuation:
    def test_zero_weights_give_constant_field(self, rng):
        lay = radiance.attenuation_layout(TINY, 12)
        p = lay.views(torch.zeros(lay.size, dtype=torch.float64))
        p["delta.b"].fill_(0.3)
        out = radiance.attenuation_forward(torch.as_tensor(rng.normal(size=(2, 3, 4, 12))), p, TINY)
        expected = 0.3 ** float(radiance.exponent(torch.tensor(0.0)))
        np.testing.assert_allclose(out.delta.numpy(), expected, atol=1e-15)

    def test_matches_reference_forward(self, rng):
        lay = radiance.attenuation_layout(TINY, 12)
        views = random_views(lay, 7, 0.3)
        p = np_params(views)
        x = rng.normal(size=(3, 4, 12))
        h = x
        for i in range(8):
            if i == 4:
                h = np.concatenate([h, x], axis=-1)
            h = np_power_layer(h, {k[3:]: v for k, v in p.items() if k.startswith(f"l{i}.")})
        delta = np_repu(h @ p["delta.w"].T + p["delta.b"], np_exponent(p["delta.p"]))[..., 0]
        out = radiance.attenuation_forward(torch.as_tensor(x), views, TINY)
        np.testing.assert_allclose(out.delta.numpy(), delta, rtol=1e-12, atol=1e-12)
        np.testing.assert_allclose(out.feature.numpy(), h @ p["feat.w"].T + p["feat.b"], rtol=1e-12, atol=1e-12)

    def test_nonnegative_and_ray_permutation(self, rng):
        lay = radiance.attenuation_layout(TINY, 12)
        for seed in range(5):
            views = random_views(lay, seed, 2.0)
            x = torch.as_tensor(rng.normal(size=(5, 4, 12)))
            out = radiance.attenuation_forward(x, views, TINY)
            assert torch.all(out.delta >= 0)
            perm = torch.as_tensor(rng.permutation(5))
            torch.testing.assert_close(radiance.attenuation_forward(x[perm], views, TINY).delta, out.delta[perm])


class TestSignal:
    def test_zero_params_constant(self, rng):
        lay = radiance.signal_layout(TINY, 9)
        p = lay.views(torch.zeros(lay.size, dtype=torch.float64))
        p["net.out.b"].copy_(torch.arange(5.0))
        out = radiance.signal_forward(torch.as_tensor(rng.normal(size=(2, 3, 4, 6))), torch.as_tensor(rng.normal(size=(2, 3, 9))), p)
        torch.testing.assert_close(out, torch.arange(5.0, dtype=torch.float64).expand(2, 3, 4, 5))

    def test_matches_reference_forward(self, rng):
        lay = radiance.signal_layout(TINY, 9)
        views = random_views(lay, 11, 0.5)
        p = np_params(views)
        f = rng.normal(size=(3, 4, 6))
        ctx = rng.normal(size=(3, 9))
        hid = gelu(ctx @ p["film.w1"].T + p["film.b1"])
        gb = hid @ p["film.w2"].T + p["film.b2"]
        gamma, beta = 1 + gb[:, :6], gb[:, 6:]
        h = np.concatenate([gamma[:, None] * f + beta[:, None], np.repeat(ctx[:, None], 4, axis=1)], axis=-1)
        for i in range(4):
            h = np_power_layer(h, {k[7:]: v for k, v in p.items() if k.startswith(f"net.l{i}.")})
        expected = h @ p["net.out.w"].T + p["net.out.b"]
        out = radiance.signal_forward(torch.as_tensor(f), torch.as_tensor(ctx), views)
        np.testing.assert_allclose(out.numpy(), expected, rtol=1e-12, atol=1e-12)

    def test_film_identity_path(self, rng):
        lay = radiance.signal_layout(TINY, 9)
        views = random_views(lay, 2)
        for k in ("film.w1", "film.b1", "film.w2", "film.b2"):
            views[k].zero_()
        gamma, beta = radiance.film_params(torch.as_tensor(rng.normal(size=(2, 9))), sub(views, "film."))
        torch.testing.assert_close(gamma, torch.ones_like(gamma))
        torch.testing.assert_close(beta, torch.zeros_like(beta))


class TestGradients:
    def test_tiny_attenuation_signal_stack(self, rng):
        from ga_radiance.pipeline.gradcheck import grad_check_fn
        from ga_radiance.params import ParamLayout

        cfg = RadianceConfig(att_width=4, att_layers=2, skip_at=1, feature_dim=3, sig_width=4, sig_layers=2, signal_dim=2, film_hidden=4)
        lay = ParamLayout()
        lay.extend("att.", radiance.attenuation_layout(cfg, 6))
        lay.extend("sig.", radiance.signal_layout(cfg, 5))
        x = torch.as_tensor(rng.normal(size=(2, 3, 6)))
        ctx = torch.as_tensor(rng.normal(size=(2, 5)))

        def loss(p):
            att = radiance.attenuation_forward(x, sub(p, "att."), cfg)
            xi = radiance.signal_forward(att.feature, ctx, sub(p, "sig."))
            return (att.delta ** 2).sum() + (xi ** 2).mean()

        report = grad_check_fn(loss, lay, ModelParams.initialize(lay, 0).vector)
        assert report.passed, report.summary()
