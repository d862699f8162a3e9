import math

import numpy as np
import pytest
import torch

from ga_radiance import render
from ga_radiance.params import ModelParams
from ga_radiance.render import RenderConfig

from oracles import softmax_attention


def const_render_error(n, delta=2.0, length=1.0, c=1.0):
    t = torch.linspace(0, length, n + 1, dtype=torch.float64)[:-1]  # left Riemann nodes
    d = torch.full((1, n), delta, dtype=torch.float64)
    decoded = torch.full((1, n, 1), c, dtype=torch.float64)
    out = render.classic_render(d, t[None], decoded, torch.ones(1, 1, dtype=torch.float64), torch.zeros(1, dtype=torch.float64))
    return float(out) - c * (1 - math.exp(-delta * length))


def performer_error(seed, m, n=32, d=16, scale=0.25):
    rng = np.random.default_rng(seed)
    q, k, v = (rng.normal(size=(n, d)) * s for s in (scale, scale, 1.0))
    exact = softmax_attention(q, k, v)
    approx = render.performer_attention(*(torch.as_tensor(a) for a in (q, k, v)), m=m, seed=seed).numpy()
    return np.linalg.norm(approx - exact) / np.linalg.norm(exact)


class TestTransmittance:
    def test_vacuum(self):
        trans, w = render.transmittance_weights(torch.zeros(5), torch.linspace(0, 1, 5))
        assert torch.all(trans == 1) and torch.all(w == 0)

    def test_single_sample(self):
        trans, w = render.transmittance_weights(torch.tensor([0.5]), torch.tensor([0.0]))
        assert float(trans[0]) == 1.0 and float(w[0]) == 0.5

    def test_literal_weights(self, rng):
        delta = rng.uniform(0, 3, size=6)
        t = np.cumsum(rng.uniform(0.1, 0.5, size=6))
        dt = np.append(np.diff(t), np.diff(t).mean())
        trans = np.exp(-np.concatenate([[0], np.cumsum(delta * dt)[:-1]]))
        got_t, got_w = render.transmittance_weights(torch.as_tensor(delta), torch.as_tensor(t))
        np.testing.assert_allclose(got_t.numpy(), trans, rtol=1e-13)
        np.testing.assert_allclose(got_w.numpy(), trans * delta * dt, rtol=1e-13)

    def test_monotone_and_bounded(self, rng):
        delta = torch.as_tensor(rng.uniform(0, 5, size=(10, 32)))
        trans, _ = render.transmittance_weights(delta, torch.linspace(0, 2, 32))
        assert torch.all(trans <= 1) and torch.all(trans >= 0)
        assert torch.all(trans[:, 1:] <= trans[:, :-1])

    def test_non_monotone_depths(self):
        with pytest.raises(ValueError):
            render.transmittance_weights(torch.ones(3), torch.tensor([0.0, 0.5, 0.4]))

    def test_constant_field_integral(self):
        assert abs(const_render_error(4096)) < 1e-3

    def test_error_halves_with_doubling(self):
        errs = [abs(const_render_error(n)) for n in (512, 1024, 2048)]
        for a, b in zip(errs, errs[1:]):
            assert 0.8 * 2 <= a / b <= 1.2 * 2


class TestClassicRender:
    def test_vacuum_gives_bias(self, rng):
        decoded = torch.as_tensor(rng.normal(size=(3, 8, 2)))
        hb = torch.tensor([0.3, -0.1], dtype=torch.float64)
        out = render.classic_render(torch.zeros(3, 8), torch.linspace(0, 1, 8).expand(3, 8), decoded, torch.eye(2, dtype=torch.float64), hb)
        torch.testing.assert_close(out, hb)

    def test_dominant_sample(self, rng):
        decoded = torch.as_tensor(rng.normal(size=(1, 4, 3)))
        delta = torch.tensor([[1e6, 0, 0, 0]], dtype=torch.float64)
        t = torch.tensor([[0.0, 1e-6, 2e-6, 3e-6]], dtype=torch.float64)
        out = render.classic_render(delta, t, decoded, torch.eye(3, dtype=torch.float64), torch.zeros(3, dtype=torch.float64))
        torch.testing.assert_close(out, decoded[0, 0], rtol=0, atol=1e-12)


class TestPerformer:
    def test_zero_queries_and_keys_average_values(self, rng):
        v = torch.as_tensor(rng.normal(size=(7, 4)))
        z = torch.zeros(7, 4, dtype=torch.float64)
        torch.testing.assert_close(render.performer_attention(z, z, v, m=16), v.mean(0).expand(7, 4))

    def test_single_key(self, rng):
        q, k, v = (torch.as_tensor(rng.normal(size=(1, 4))) for _ in range(3))
        torch.testing.assert_close(render.performer_attention(q, k, v, m=8), v)

    def test_feature_rows_orthogonal_within_blocks(self):
        w = render.performer_features(8, 20, seed=3).numpy()
        block = w[:8] / np.linalg.norm(w[:8], axis=1, keepdims=True)
        np.testing.assert_allclose(block @ block.T, np.eye(8), atol=1e-12)
        assert w.shape == (20, 8)

    def test_positive_features(self, rng):
        x = torch.as_tensor(rng.normal(size=(5, 4)))
        phi = render.positive_features(x, render.performer_features(4, 12, 0), torch.zeros(5, 1, dtype=torch.float64))
        assert torch.all(phi > 0)

    def test_error_at_256_features(self):
        errs = [performer_error(s, 256) for s in range(20)]
        assert np.median(errs) < 0.1

    def test_error_decreases_with_features(self):
        med = [np.median([performer_error(s, m) for s in range(20)]) for m in (16, 64, 256)]
        assert med[0] > med[1] > med[2]

    def test_invalid(self):
        with pytest.raises(ValueError):
            render.performer_features(4, 0, 0)


def mha_params(d, rng=None, identity=False):
    lay = render.ParamLayout()
    render.mha_layout(lay, "", d)
    p = lay.views(ModelParams.initialize(lay, 0).tensor())
    if identity:
        for n in "qkvo":
            p[f"{n}.w"].copy_(torch.eye(d))
    return p


class TestLocalSelfAttention:
    def test_single_token_identity(self, rng):
        x = rng.normal(size=(1, 20))
        x = (x - x.mean()) / x.std()
        out = render.local_self_attention(torch.as_tensor(x), mha_params(20, identity=True), heads=10)
        np.testing.assert_allclose(out.numpy(), x, atol=1e-5)

    def test_identical_tokens(self, rng):
        x = torch.as_tensor(rng.normal(size=(1, 20))).expand(5, 20)
        out = render.local_self_attention(x, mha_params(20), heads=10)
        torch.testing.assert_close(out, out[:1].expand(5, 20))

    def test_heads_must_divide_width(self):
        with pytest.raises(ValueError):
            render.multi_head_attention(torch.zeros(3, 12, dtype=torch.float64), mha_params(12), heads=10)

    def test_matches_per_head_oracle(self, rng):
        x = rng.normal(size=(6, 20))
        p = mha_params(20)
        pn = {k: v.numpy() for k, v in p.items()}
        proj = {n: x @ pn[f"{n}.w"].T + pn[f"{n}.b"] for n in "qkv"}
        heads = [softmax_attention(*(proj[n][:, 2 * h : 2 * h + 2] for n in "qkv")) for h in range(10)]
        expected = np.concatenate(heads, axis=1) @ pn["o.w"].T + pn["o.b"]
        np.testing.assert_allclose(render.multi_head_attention(torch.as_tensor(x), p, 10).numpy(), expected, atol=1e-12)

    def test_performer_path_close_to_softmax(self, rng):
        # FAVOR+ variance grows like exp(|q|^2 + |k|^2); keep per-head norms small
        x = torch.as_tensor(rng.normal(size=(16, 40)) * 0.25)
        p = mha_params(40)
        omega = render.performer_features(4, 256, seed=0)
        exact = render.multi_head_attention(x, p, 10)
        approx = render.multi_head_attention(x, p, 10, omega=omega)
        assert float(torch.linalg.norm(approx - exact) / torch.linalg.norm(exact)) < 0.1


class TestPooling:
    def test_single_ray(self, rng):
        tok = torch.as_tensor(rng.normal(size=(1, 6)))
        pooled, w = render.cls_guided_pool(torch.as_tensor(rng.normal(size=6)), tok)
        torch.testing.assert_close(pooled, tok[0])
        assert float(w[0]) == 1.0

    def test_equal_rays_uniform(self, rng):
        tok = torch.as_tensor(rng.normal(size=(1, 6))).expand(4, 6)
        _, w = render.cls_guided_pool(torch.as_tensor(rng.normal(size=6)), tok)
        torch.testing.assert_close(w, torch.full((4,), 0.25, dtype=torch.float64))

    def test_matches_oracle_and_convex_hull(self, rng):
        cls, tok = rng.normal(size=6), rng.normal(size=(5, 6))
        s = tok @ cls / math.sqrt(6)
        a = np.exp(s - s.max())
        a /= a.sum()
        pooled, w = render.cls_guided_pool(torch.as_tensor(cls), torch.as_tensor(tok))
        np.testing.assert_allclose(w.numpy(), a, atol=1e-12)
        np.testing.assert_allclose(pooled.numpy(), a @ tok, atol=1e-12)
        assert np.all(pooled.numpy() <= tok.max(0) + 1e-12) and np.all(pooled.numpy() >= tok.min(0) - 1e-12)

    def test_width_mismatch(self):
        with pytest.raises(ValueError):
            render.cls_guided_pool(torch.zeros(3), torch.zeros(2, 4))


CFG = RenderConfig(token_dim=20, heads=10, performer=False)


def render_setup(rng, m=4, n=5, ds=3, view=6, glob=7, out=2, cfg=CFG):
    lay = render.attention_render_layout(cfg, ds, view, glob, out)
    p = lay.views(torch.as_tensor(rng.normal(size=lay.size) * 0.5))
    xi = torch.as_tensor(rng.normal(size=(2, m, n, ds)))
    w = torch.as_tensor(rng.uniform(0, 0.3, size=(2, m, n)))
    v = torch.as_tensor(rng.normal(size=(m, view)))
    g = torch.as_tensor(rng.normal(size=(2, glob + 1)))
    return p, xi, w, v, g


def np_layer_norm(x, g, b, eps=1e-5):
    mu = x.mean(-1, keepdims=True)
    var = x.var(-1, keepdims=True)
    return (x - mu) / np.sqrt(var + eps) * g + b


class TestAttentionRender:
    def test_matches_straight_line_reference(self, rng):
        p, xi, w, v, g = render_setup(rng)
        pn = {k: t.numpy() for k, t in p.items()}
        out = render.attention_render(xi, w, v, g, p, CFG).numpy()
        for b in range(2):
            x, wt = xi[b].numpy(), w[b].numpy()
            feats = np.concatenate([x.mean(1), (wt[..., None] * x).sum(1), wt.sum(1, keepdims=True)], axis=1)
            tok = feats @ pn["tok.w"].T + pn["tok.b"] + v.numpy() @ pn["ray_emb.w"].T + pn["ray_emb.b"]
            cls = g[b].numpy() @ pn["cls.w"].T + pn["cls.b"]
            proj = {n: tok @ pn[f"lsa.{n}.w"].T + pn[f"lsa.{n}.b"] for n in "qkv"}
            heads = [softmax_attention(*(proj[n][:, 2 * h : 2 * h + 2] for n in "qkv")) for h in range(10)]
            att = np.concatenate(heads, axis=1) @ pn["lsa.o.w"].T + pn["lsa.o.b"]
            tok = np_layer_norm(tok + att, pn["lsa.ln.g"], pn["lsa.ln.b"])
            s = tok @ cls / math.sqrt(20)
            a = np.exp(s - s.max())
            pooled = (a / a.sum()) @ tok
            expected = np.concatenate([pooled, cls]) @ pn["proj.w"].T + pn["proj.b"]
            np.testing.assert_allclose(out[b], expected, atol=1e-12)

    @pytest.mark.parametrize("performer", [False, True])
    def test_ray_order_invariance(self, rng, performer):
        cfg = RenderConfig(token_dim=20, heads=10, performer=performer, performer_features=16)
        p, xi, w, v, g = render_setup(rng, cfg=cfg)
        perm = torch.as_tensor(rng.permutation(4))
        a = render.attention_render(xi, w, v, g, p, cfg)
        b = render.attention_render(xi[:, perm], w[:, perm], v[perm], g, p, cfg)
        torch.testing.assert_close(a, b, rtol=0, atol=1e-10)

    def test_single_ray_prediction(self, rng):
        p, xi, w, v, g = render_setup(rng, m=1)
        out, weights = render.attention_render(xi, w, v, g, p, CFG, return_weights=True)
        assert torch.all(weights == 1)
        tok = render.local_self_attention(render.ray_tokens(xi, w, v, p), render.sub(p, "lsa."), 10)
        cls = g @ p["cls.w"].T + p["cls.b"]
        expected = torch.cat([tok[:, 0], cls], dim=-1) @ p["proj.w"].T + p["proj.b"]
        torch.testing.assert_close(out, expected)

    def test_zero_cls_symmetric_rays_pool_uniformly(self, rng):
        p, xi, w, v, g = render_setup(rng)
        p["cls.w"].zero_()
        p["cls.b"].zero_()
        xi = xi[:, :1].expand_as(xi)
        w = w[:, :1].expand_as(w)
        v = v[:1].expand_as(v)
        _, weights = render.attention_render(xi, w, v, g, p, CFG, return_weights=True)
        torch.testing.assert_close(weights, torch.full_like(weights, 0.25))

    def test_depth_feature_is_extra_token_column(self, rng):
        cfg = RenderConfig(token_dim=20, heads=10, performer=False, depth_feature=True)
        p, xi, w, v, g = render_setup(rng, cfg=cfg)
        depth = torch.as_tensor(rng.uniform(0, 3, size=(2, 4)))
        base = {k: t[:, :-1] if k == "tok.w" else t for k, t in p.items()}
        expected = render.ray_tokens(xi, w, v, base) + depth[..., None] * p["tok.w"][:, -1]
        torch.testing.assert_close(render.ray_tokens(xi, w, v, p, depth), expected, rtol=0, atol=1e-12)
        render.attention_render(xi, w, v, g, p, cfg, depth=depth)
        with pytest.raises(ValueError):
            render.attention_render(xi, w, v, g, p, cfg)
        with pytest.raises(ValueError):
            render.attention_render(xi, w, v, g, p, CFG, depth=depth)


class TestOpticalDepth:
    def test_matches_exit_transmittance(self, rng):
        delta = torch.as_tensor(rng.uniform(0, 2, size=(3, 7)))
        t = torch.as_tensor(np.sort(rng.uniform(0, 4, size=7)))
        tn = t.numpy()
        dt = np.append(np.diff(tn), np.diff(tn).mean())
        exit_trans = np.prod(np.exp(-delta.numpy() * dt), axis=1)
        np.testing.assert_allclose(render.optical_depth(delta, t).numpy(), -np.log(exit_trans), rtol=1e-12)

    def test_uniform_medium(self):
        t = torch.linspace(0, 1, 11, dtype=torch.float64)[:-1]
        assert float(render.optical_depth(torch.full((10,), 2.0, dtype=torch.float64), t)) == pytest.approx(2.0, rel=1e-12)
