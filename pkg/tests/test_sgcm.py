import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mgcr import tensor as T
from mgcr.fusion import init_params
from mgcr.gradcheck import grad_check, grad_check_params
from mgcr.params import ModelConfig
from mgcr.sgcm import (build_adjacency, embed_with_position, form_vl, fuse_graph_features,
                       gate_residual, reconstruct, refine_graph, sgcm_forward)
from mgcr.tensor import ConfigurationError, ShapeError, Tensor

EPS = 1e-5


# plain numpy oracles, no tape involved

def np_ln(x, g, b):
    mu = x.mean(axis=-1, keepdims=True)
    var = ((x - mu) ** 2).mean(axis=-1, keepdims=True)
    return (x - mu) / np.sqrt(var + EPS) * g + b


def np_bn(x, g, b):
    mu = x.mean(axis=0)
    var = ((x - mu) ** 2).mean(axis=0)
    return (x - mu) / np.sqrt(var + EPS) * g + b


def np_conv(x, w):
    c_out, c_in, k = w.shape
    pad = k // 2
    xp = np.pad(x, ((0, 0), (pad, pad)))
    out = np.zeros((c_out, x.shape[1]))
    for t in range(x.shape[1]):
        out[:, t] = np.einsum("oik,ik->o", w, xp[:, t:t + k])
    return out


def arr(p, name):
    return p[name].data


def toy(**kw):
    base = dict(image_size=64, channels=(8, 8, 16, 16), d=16, heads=2, text_len=8, vocab_size=12,
                ffn_mult=2, seed=4)
    base.update(kw)
    return ModelConfig(**base)


@pytest.fixture
def p():
    return init_params(toy())


def inputs(seed=0, cfg=None):
    cfg = cfg or toy()
    rng = np.random.default_rng(seed)
    return (Tensor(rng.normal(size=(cfg.n_visual, cfg.channels[3]))),
            Tensor(rng.normal(size=(cfg.text_len, cfg.d))))


# ------------------------------------------------------------------ embed


def test_embed_rows_are_row_major(p):
    grid = np.zeros((2, 2, 16))
    for r in range(2):
        for c in range(2):
            grid[r, c, 0] = 10 * r + c
    out = embed_with_position(Tensor(grid), p).data
    w0 = arr(p, "sgcm.embed.weight")[0]
    base = arr(p, "sgcm.embed.bias") + arr(p, "sgcm.pos")
    for i, v in enumerate([0, 1, 10, 11]):
        np.testing.assert_allclose(out[i], base[i] + v * w0, rtol=1e-12)


def test_embed_zero_input_is_position_table(p):
    p["sgcm.embed.bias"].data[:] = 0.0
    out = embed_with_position(Tensor(np.zeros((4, 16))), p).data
    assert np.array_equal(out, arr(p, "sgcm.pos"))


def test_embed_matches_oracle(p):
    x3, _ = inputs(1)
    out = embed_with_position(x3, p).data
    expect = x3.data @ arr(p, "sgcm.embed.weight") + arr(p, "sgcm.embed.bias") + arr(p, "sgcm.pos")
    np.testing.assert_allclose(out, expect, rtol=1e-12)


# ---------------------------------------------------------------- form_vl


def test_form_vl_layout():
    rng = np.random.default_rng(0)
    e, t = rng.normal(size=(4, 16)), rng.normal(size=(16, 16))
    vl = form_vl(Tensor(e), Tensor(t))
    assert vl.tokens.shape == (20, 16) and vl.boundary == 4
    assert np.array_equal(vl.tokens.data[:4], e)
    assert np.array_equal(vl.tokens.data[4:], t)
    with pytest.raises(ShapeError):
        form_vl(Tensor(e), Tensor(np.zeros((16, 8))))


# -------------------------------------------------------------- adjacency


def test_adjacency_matches_oracle(p):
    x3, txt = inputs(2)
    vl = form_vl(embed_with_position(x3, p), txt)
    z = build_adjacency(vl, p).data
    v = vl.tokens.data
    phi = np_ln(v @ arr(p, "sgcm.phi.weight") + arr(p, "sgcm.phi.bias"),
                arr(p, "sgcm.phi_norm.gamma"), arr(p, "sgcm.phi_norm.beta"))
    theta = np_ln(v @ arr(p, "sgcm.theta.weight") + arr(p, "sgcm.theta.bias"),
                  arr(p, "sgcm.theta_norm.gamma"), arr(p, "sgcm.theta_norm.beta"))
    assert z.shape == (12, 12)
    np.testing.assert_allclose(z, phi @ theta.T, rtol=1e-10, atol=1e-12)


def test_constant_theta_gives_zero_columns(p):
    x3, txt = inputs(3)
    p["sgcm.theta.weight"].data[:] = 0.0
    p["sgcm.theta.bias"].data[:] = 0.3
    p["sgcm.theta_norm.beta"].data[:] = 0.7  # LayerNorm of a flat row is beta, so Theta rows are all 0.7
    z = build_adjacency(form_vl(embed_with_position(x3, p), txt), p).data
    assert np.max(np.abs(z)) < 1e-12


# ------------------------------------------------------------- refinement


def test_refine_zero_branch_is_identity(p):
    z = Tensor(np.random.default_rng(0).normal(size=(12, 12)))
    p["sgcm.graph_conv"].data[:] = 0.0
    assert np.array_equal(refine_graph(z, p).data, z.data)


def test_refine_matches_oracle_and_residual_identity(p):
    z = np.random.default_rng(1).normal(size=(12, 12))
    out = refine_graph(Tensor(z), p).data
    branch = np_bn(np_conv(z.T, arr(p, "sgcm.graph_conv")).T,
                   arr(p, "sgcm.graph_bn.gamma"), arr(p, "sgcm.graph_bn.beta"))
    np.testing.assert_allclose(out, branch + z, rtol=1e-10, atol=1e-12)
    np.testing.assert_allclose(out - branch, z, atol=1e-12)


# ----------------------------------------------------------------- fusion


def test_fuse_matches_oracle_and_is_nonnegative(p):
    rng = np.random.default_rng(2)
    v, z, zz = rng.normal(size=(12, 16)), rng.normal(size=(12, 12)), rng.normal(size=(12, 12))
    out = fuse_graph_features(form_vl(Tensor(v[:4]), Tensor(v[4:])), Tensor(z), Tensor(zz), p).data
    f = np.concatenate([z, zz], axis=1)
    fp = np_bn(np_conv(f.T, arr(p, "sgcm.fuse_conv")).T, arr(p, "sgcm.fuse_bn.gamma"), arr(p, "sgcm.fuse_bn.beta"))
    expect = np.maximum(v + fp @ arr(p, "sgcm.proj.weight") + arr(p, "sgcm.proj.bias"), 0.0)
    np.testing.assert_allclose(out, expect, rtol=1e-10, atol=1e-12)
    assert np.all(out >= 0)


def test_fuse_zero_projection_is_relu(p):
    rng = np.random.default_rng(3)
    v = rng.normal(size=(12, 16))
    p["sgcm.proj.weight"].data[:] = 0.0
    p["sgcm.proj.bias"].data[:] = 0.0
    z = Tensor(rng.normal(size=(12, 12)))
    out = fuse_graph_features(form_vl(Tensor(v[:4]), Tensor(v[4:])), z, z, p).data
    assert np.array_equal(out, np.maximum(v, 0.0))


# ---------------------------------------------------------- reconstruction


def naive_cross_attention(q_in, kv_in, p, heads, q_name):
    q = q_in @ arr(p, f"sgcm.rec.{q_name}.weight") + arr(p, f"sgcm.rec.{q_name}.bias")
    k = kv_in @ arr(p, "sgcm.rec.k.weight")
    v = kv_in @ arr(p, "sgcm.rec.v.weight") + arr(p, "sgcm.rec.v.bias")
    dh = q.shape[1] // heads
    outs = []
    for h in range(heads):
        cols = slice(h * dh, (h + 1) * dh)
        s = q[:, cols] @ k[:, cols].T / np.sqrt(dh)
        a = np.exp(s - s.max(axis=1, keepdims=True))
        a = a / a.sum(axis=1, keepdims=True)
        outs.append(a @ v[:, cols])
    return np.concatenate(outs, axis=1) @ arr(p, "sgcm.rec.o.weight") + arr(p, "sgcm.rec.o.bias")


@pytest.mark.parametrize("q_name", ["q_img", "q_text"])
def test_reconstruct_matches_naive_multihead(p, q_name):
    rng = np.random.default_rng(4)
    q, kv = rng.normal(size=(5, 16)), rng.normal(size=(12, 16))
    trace = []
    out = reconstruct(Tensor(q), Tensor(kv), p, 2, q_name, trace).data
    np.testing.assert_allclose(out, naive_cross_attention(q, kv, p, 2, q_name), rtol=1e-10, atol=1e-12)
    assert len(trace) == 2
    for w in trace:
        np.testing.assert_allclose(w.sum(axis=1), 1.0, atol=1e-9)


def test_reconstruct_single_token_ignores_queries(p):
    rng = np.random.default_rng(5)
    tok = rng.normal(size=(1, 16))
    out = reconstruct(Tensor(rng.normal(size=(3, 16))), Tensor(tok), p, 2).data
    v = tok @ arr(p, "sgcm.rec.v.weight") + arr(p, "sgcm.rec.v.bias")
    expect = v @ arr(p, "sgcm.rec.o.weight") + arr(p, "sgcm.rec.o.bias")
    for row in out:
        np.testing.assert_allclose(row, expect[0], rtol=1e-12)


def test_reconstruct_rejects_bad_heads(p):
    with pytest.raises(ConfigurationError):
        reconstruct(Tensor(np.zeros((2, 16))), Tensor(np.zeros((3, 16))), p, 3)


# ------------------------------------------------------------------ gating


def test_gate_examples():
    x = Tensor(np.arange(6.0).reshape(2, 3))
    assert np.array_equal(gate_residual(x, Tensor(np.zeros((2, 3)))).data, x.data + 0.5)
    assert np.all(gate_residual(x, Tensor(np.full((2, 3), -100.0))).data - x.data < 1e-40)
    with pytest.raises(ShapeError):
        gate_residual(x, Tensor(np.zeros((3, 2))))


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-30, 30), min_size=1, max_size=10))
def test_gate_increment_in_open_unit_interval(values):
    r = np.array(values)
    x = np.zeros_like(r)
    inc = gate_residual(Tensor(x), Tensor(r)).data - x
    assert np.all(inc > 0) and np.all(inc < 1)


# ------------------------------------------------------------- end to end


def test_forward_is_deterministic_and_shaped(p):
    x3, txt = inputs(6)
    a, b = sgcm_forward(x3, txt, p), sgcm_forward(x3, txt, p)
    assert a.visual.shape == (4, 16) and a.text.shape == (8, 16)
    assert a.z.shape == a.refined.shape == (12, 12) and a.vl_tokens.shape == (12, 16)
    assert np.array_equal(a.visual.data, b.visual.data) and np.array_equal(a.text.data, b.text.data)
    for key in ("vr", "lr"):
        for w in a.attention[key]:
            np.testing.assert_allclose(w.sum(axis=1), 1.0, atol=1e-9)
    assert np.all((a.visual.data - a.embedded.data > 0) & (a.visual.data - a.embedded.data < 1))


def test_forward_disabled_passes_through():
    cfg = toy(sgcm_vision=False, sgcm_language=False)
    p = init_params(cfg)
    x3, txt = inputs(7, cfg)
    out = sgcm_forward(x3, txt, p)
    assert out.text is txt and out.visual is out.embedded and out.z is None


def _sgcm_scalar(p, x3, txt, probe_v, probe_t):
    out = sgcm_forward(x3, txt, p)
    return T.reduce_sum(T.mul(out.visual, Tensor(probe_v))) + T.reduce_sum(T.mul(out.text, Tensor(probe_t)))


def test_sgcm_gradient_check_inputs(p):
    rng = np.random.default_rng(8)
    x3, txt = inputs(8)
    pv, pt = rng.normal(size=(4, 16)), rng.normal(size=(8, 16))
    assert grad_check(lambda x: _sgcm_scalar(p, x, txt, pv, pt), x3) < 1e-4
    assert grad_check(lambda t: _sgcm_scalar(p, x3, t, pv, pt), txt) < 1e-4


def test_sgcm_gradient_check_parameters(p):
    rng = np.random.default_rng(9)
    x3, txt = inputs(9)
    pv, pt = rng.normal(size=(4, 16)), rng.normal(size=(8, 16))
    names = [k for k in p.tensors if k.startswith("sgcm.")]
    samples = [(k, int(rng.integers(p[k].size))) for k in names for _ in range(3)]
    worst, rows = grad_check_params(lambda: _sgcm_scalar(p, x3, txt, pv, pt), p.tensors, samples)
    assert worst < 1e-4, max(rows, key=lambda r: r[-1])
