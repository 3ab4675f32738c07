import numpy as np
import pytest

from transbeam.autodiff import Tape, Tensor, backward, no_grad, ops, use_tape
from transbeam.errors import ConfigError, DegenerateOutputError, DimensionError
from transbeam.objectives import split, sum_rate, sum_rate_t
from transbeam.transformer import (BRANCH_GAINS, BlockParams, ModelConfig, attention_core,
                                   block_forward, block_forward_t, build_tokens, embed_t,
                                   init_block, mhsa_t, param_shapes, tokens_from_bundle, tokens_t,
                                   zero_block)

from conftest import crandn
from gradcheck import fd_grad


def small_cfg(L=4, **kw):
    kw.setdefault("M", 8)
    kw.setdefault("E", 2)
    return ModelConfig(L=L, **kw)


def test_config_derived_width():
    cfg = ModelConfig(L=8)
    assert (cfg.M, cfg.E, cfg.D_e, cfg.D) == (32, 4, 8, 64)
    assert small_cfg().D == 2 * small_cfg().D_e * small_cfg().E


@pytest.mark.parametrize("kw,field", [({"L": 1}, "L"), ({"L": 4, "M": 2}, "M"),
                                      ({"L": 4, "dropout_p": 1.0}, "dropout_p")])
def test_config_validation(kw, field):
    with pytest.raises(ConfigError) as exc:
        ModelConfig(**kw)
    assert exc.value.field == field


def test_tokens_real_inputs_have_zero_imaginary_rows(rng):
    L = 3
    tb = build_tokens(rng.standard_normal((L, L)), rng.standard_normal((L, L)))
    for seq in (tb.S, tb.T):
        assert np.all(seq[L:2 * L] == 0) and np.all(seq[3 * L:] == 0)


def test_tokens_round_trip_and_counts(rng):
    h, w = crandn(rng, 2, 2), crandn(rng, 2, 2)
    tb = build_tokens(h, w)
    assert tb.S.shape == tb.T.shape == (8, 2)
    h2, w2 = tokens_from_bundle(tb.S)
    assert np.array_equal(h2, h) and np.array_equal(w2, w)


def test_tokens_tensor_form_matches(rng):
    h, w = crandn(rng, 3, 3), crandn(rng, 3, 3)
    tb = build_tokens(h, w.T)
    S, T = tokens_t(Tensor(h.real), Tensor(h.imag), Tensor(w.real), Tensor(w.imag))
    assert np.array_equal(S.data, tb.S) and np.array_equal(T.data, tb.T)


def test_tokens_need_square(rng):
    with pytest.raises(DimensionError):
        build_tokens(crandn(rng, 2, 3), crandn(rng, 2, 3))


def test_embedding_of_zero_tokens_is_bias(rng):
    cfg = small_cfg()
    prm = init_block(cfg, rng)
    prm.tn_s_b.data[:] = rng.standard_normal(cfg.M)
    z = Tensor(np.zeros((4 * cfg.L, cfg.L)))
    with no_grad():
        s_bar, _ = embed_t(z, z, prm)
    assert np.allclose(s_bar.data, prm.tn_s_b.data, atol=0, rtol=0)


def test_embedding_is_rowwise(rng):
    cfg = small_cfg()
    prm = init_block(cfg, rng)
    S = rng.standard_normal((4 * cfg.L, cfg.L))
    perm = rng.permutation(4 * cfg.L)
    with no_grad():
        a, _ = embed_t(Tensor(S), Tensor(S), prm)
        b, _ = embed_t(Tensor(S[perm]), Tensor(S[perm]), prm)
    assert np.array_equal(a.data[perm], b.data)
    assert np.allclose(a.data.mean(-1), 0, atol=1e-12)
    pre = S @ prm.fc_s_w.data + prm.fc_s_b.data
    v = pre.var(-1)
    assert np.allclose(a.data.var(-1), v / (v + 1e-5), rtol=1e-12)


def _core(cfg, prm, s, t):
    with no_grad():
        return attention_core(Tensor(s), Tensor(t), prm, cfg)


def test_attention_rows_are_stochastic(rng):
    cfg = small_cfg()
    prm = init_block(cfg, rng)
    s, t = rng.standard_normal((2, 16, cfg.M))
    _, a_s, a_t = _core(cfg, prm, s, t)
    for a in (a_s, a_t):
        assert np.abs(a.data.sum(-1) - 1).max() <= 1e-12


def test_identical_tokens_give_uniform_attention(rng):
    cfg = small_cfg()
    prm = init_block(cfg, rng)
    s = np.tile(rng.standard_normal(cfg.M), (16, 1))
    _, a_s, _ = _core(cfg, prm, s, s)
    assert np.allclose(a_s.data, 1 / 16, atol=1e-15)


def test_zero_value_projection_gives_constant_output(rng):
    cfg = small_cfg(E=1)
    prm = init_block(cfg, rng)
    prm.zv.data[:] = 0
    prm.xv.data[:] = 0
    prm.sa_b.data[:] = rng.standard_normal(cfg.L)
    s, t = rng.standard_normal((2, 16, cfg.M))
    y, _, _ = _core(cfg, prm, s, t)
    assert np.all(y.data == 0)
    with no_grad():
        yc = mhsa_t(Tensor(s), Tensor(t), prm, cfg)
    assert np.array_equal(yc.data, np.broadcast_to(yc.data[0], yc.shape))


def test_attention_core_permutation_equivariance(rng):
    cfg = small_cfg()
    prm = init_block(cfg, rng)
    s, t = rng.standard_normal((2, 16, cfg.M))
    perm = rng.permutation(16)
    y, _, _ = _core(cfg, prm, s, t)
    yp, _, _ = _core(cfg, prm, s[perm], t[perm])
    assert np.allclose(yp.data, y.data[perm], rtol=0, atol=1e-14)


def test_block_output_power(rng):
    cfg = small_cfg(P=2.5)
    prm = init_block(cfg, rng)
    for _ in range(5):
        _, w = block_forward(crandn(rng, 4, 4), crandn(rng, 4, 4), prm, cfg)
        assert abs(np.linalg.norm(w) ** 2 - 2.5) <= 1e-9


def test_zero_parameters_hand_trace(rng):
    # TN with zero gain/bias maps everything to 0 and GELU(0) = 0, so only the
    # raw token residuals survive: H_out = H + H^T and W_out ~ W + W^T.
    cfg = small_cfg(L=2)
    h, w = crandn(rng, 2, 2), crandn(rng, 2, 2)
    h_out, w_out = block_forward(h, w, zero_block(cfg), cfg)
    assert np.allclose(h_out, h + h.T, atol=1e-15)
    ref = w + w.T
    assert np.allclose(w_out, ref / np.linalg.norm(ref), atol=1e-15)
    cfg2 = small_cfg(L=2, cross_residual=False)
    h_out, w_out = block_forward(h, w, zero_block(cfg2), cfg2)
    assert np.allclose(h_out, h, atol=1e-15)
    assert np.allclose(w_out, w / np.linalg.norm(w), atol=1e-15)


def test_zero_init_branches():
    cfg = small_cfg(zero_init_branches=True, cross_residual=False)
    prm = init_block(cfg, np.random.default_rng(0))
    for name in BRANCH_GAINS:
        assert np.all(getattr(prm, name).data == 0)
    rng = np.random.default_rng(1)
    h, w = crandn(rng, 4, 4), crandn(rng, 4, 4)
    h_out, w_out = block_forward(h, w, prm, cfg)
    assert np.allclose(h_out, h, atol=1e-14)
    assert np.allclose(w_out, w / np.linalg.norm(w), atol=1e-14)


def test_degenerate_output():
    cfg = small_cfg(L=2)
    with pytest.raises(DegenerateOutputError):
        block_forward(np.zeros((2, 2)), np.zeros((2, 2)), zero_block(cfg), cfg)


def test_block_is_deterministic(rng):
    cfg = small_cfg()
    prm = init_block(cfg, rng)
    h, w = crandn(rng, 3, 4, 4), crandn(rng, 3, 4, 4)
    a = block_forward(h, w, prm, cfg)
    b = block_forward(h, w, prm, cfg)
    assert all(np.array_equal(x, y) for x, y in zip(a, b))
    single = block_forward(h[1], w[1], prm, cfg)
    assert np.allclose(single[1], a[1][1], atol=1e-14)


def test_param_shapes_cover_dataclass():
    cfg = small_cfg()
    assert set(param_shapes(cfg)) == set(BlockParams.__dataclass_fields__)


def test_block_gradient_every_parameter(rng):
    cfg = small_cfg(L=4)
    prm = init_block(cfg, rng)
    for t in prm.named().values():
        t.data = t.data + 0.1 * rng.standard_normal(t.shape)
    h, w = crandn(rng, 4, 4) * 0.7, crandn(rng, 4, 4) * 0.3
    hr, hi = split(h)

    def rate(p):
        with no_grad():
            _, _, wr, wi = block_forward_t(Tensor(hr), Tensor(hi), Tensor(w.real), Tensor(w.imag), p, cfg)
            return float(sum_rate_t(hr, hi, wr, wi).data)

    prm.set_trainable(True)
    with use_tape(Tape()):
        _, _, wr, wi = block_forward_t(Tensor(hr), Tensor(hi), Tensor(w.real), Tensor(w.imag), prm, cfg)
        backward(sum_rate_t(hr, hi, wr, wi))
    arrays = {k: v.data.copy() for k, v in prm.named().items()}
    worst = 0.0
    for name, ten in prm.named().items():
        def f(x, name=name):
            trial = dict(arrays, **{name: x})
            return rate(BlockParams.from_arrays(trial, requires_grad=False))
        num = fd_grad(f, arrays[name])
        err = np.linalg.norm(ten.grad - num) / max(np.linalg.norm(num), 1e-12)
        if np.linalg.norm(num) > 1e-9:
            worst = max(worst, err)
        else:
            assert np.linalg.norm(ten.grad) <= 1e-7, name
    assert worst <= 1e-5
