"""Encoder/decoder contracts: power constraint, exploration policy statistics,
RTN decoder output laws, decision rule, and checkpoint round-trips."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from metalink import autodiff as ad, link


def rel_err(a, b):
    return np.abs(a - b).max() / max(np.abs(b).max(), 1e-12)


def fd_gradient(f_vals, x0, eps=1e-6):
    out = np.zeros_like(x0)
    for i in range(x0.size):
        xp = x0.copy(); xp[i] += eps
        xm = x0.copy(); xm[i] -= eps
        out[i] = (f_vals(xp) - f_vals(xm)) / (2 * eps)
    return out


# --- message space -----------------------------------------------------------


def test_one_hot_is_binary_with_single_one():
    ms = link.MessageSpace(3)
    for m in range(1, 9):
        s = ms.one_hot(m)
        assert s.sum() == 1.0 and set(np.unique(s)) <= {0.0, 1.0}
        assert s[m - 1] == 1.0
    with pytest.raises(ValueError):
        ms.one_hot(0)
    with pytest.raises(ValueError):
        ms.one_hot(9)


# --- encoder -----------------------------------------------------------------


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2 ** 31 - 1), m=st.integers(1, 4), es=st.sampled_from([0.5, 1.0, 2.0]))
def test_power_constraint_for_any_weights(seed, m, es):
    rng = np.random.default_rng(seed)
    enc = link.init_encoder(2, 3, rng, es=es)
    # scatter the weights around so the property is not about the init scheme
    enc = link.with_params(enc, enc.params.with_values(3.0 * rng.standard_normal(len(enc.params))))
    x = link.encode(enc, m)
    assert abs(np.sum(np.abs(x) ** 2) / enc.n - es) <= 1e-9


def test_constant_net_maps_all_messages_to_one_codeword():
    rng = np.random.default_rng(1)
    enc = link.init_encoder(2, 2, rng)
    vals = enc.params.values.copy()
    w2 = enc.params.segment("w2")
    off = next(off for name, off, _ in enc.params.segments if name == "w2")
    vals[off:off + w2.size] = 0.0
    boff = next(off for name, off, _ in enc.params.segments if name == "b2")
    vals[boff:boff + 4] = [0.3, -1.0, 0.5, 2.0]
    enc = link.with_params(enc, enc.params.with_values(vals))
    words = [link.encode(enc, m) for m in range(1, 5)]
    for w in words[1:]:
        assert np.array_equal(w, words[0])


def test_encode_deterministic_and_range_checked():
    rng = np.random.default_rng(2)
    enc = link.init_encoder(2, 2, rng)
    assert np.array_equal(link.encode(enc, 3), link.encode(enc, 3))
    with pytest.raises(ValueError):
        link.encode(enc, 5)


# --- exploration policy ---------------------------------------------------------


def test_sample_codeword_sigma_zero_is_encode():
    rng = np.random.default_rng(3)
    enc = link.init_encoder(2, 2, rng, sigma=0.0)
    assert np.array_equal(link.sample_codeword(enc, 1, rng), link.encode(enc, 1))


def test_sample_codeword_rejects_bad_sigma():
    rng = np.random.default_rng(4)
    enc = link.init_encoder(1, 1, rng, sigma=1.0)
    with pytest.raises(ValueError):
        link.sample_codeword(enc, 1, rng)


def test_sample_codeword_moments():
    rng = np.random.default_rng(5)
    sigma = 0.15
    enc = link.init_encoder(1, 2, rng, sigma=sigma)
    N = 100_000
    reals = np.stack([link.complex_to_reals(link.sample_codeword(enc, 2, rng))
                      for _ in range(N)])
    mean_want = np.sqrt(1 - sigma ** 2) * link.complex_to_reals(link.encode(enc, 2))

    # per-dimension variance sigma^2 within 3 s.e. of the variance estimator
    var = reals.var(axis=0, ddof=1)
    se_var = sigma ** 2 * np.sqrt(2.0 / (N - 1))
    assert np.all(np.abs(var - sigma ** 2) < 3 * se_var)

    se_mean = sigma / np.sqrt(N)
    assert np.all(np.abs(reals.mean(axis=0) - mean_want) < 3 * se_mean)


def test_policy_log_prob_at_mean_and_isotropy():
    rng = np.random.default_rng(6)
    sigma = 0.3
    enc = link.init_encoder(2, 2, rng, sigma=sigma)
    mean = np.sqrt(1 - sigma ** 2) * link.encode(enc, 1)
    with ad.no_grad():
        at_mean = link.policy_log_prob(enc, 1, mean).data
    assert at_mean == pytest.approx(-enc.n * np.log(2 * np.pi * sigma ** 2), rel=1e-12)

    delta = np.array([0.05 + 0.02j, -0.01 + 0.03j])
    with ad.no_grad():
        lp_plus = link.policy_log_prob(enc, 1, mean + delta).data
        lp_minus = link.policy_log_prob(enc, 1, mean - delta).data
    assert lp_plus == pytest.approx(lp_minus, rel=1e-12)


def test_policy_log_prob_gradient_matches_fd():
    rng = np.random.default_rng(7)
    enc = link.init_encoder(2, 2, rng, sigma=0.3)
    x = link.sample_codeword(enc, 3, rng)
    pt = ad.leaf(enc.params.values)
    g = ad.grad_tensor(link.policy_log_prob(enc, 3, x, pt), pt).data

    def value(vals):
        with ad.no_grad():
            return link.policy_log_prob(
                link.with_params(enc, enc.params.with_values(vals)), 3, x).data

    fd = fd_gradient(value, enc.params.values.copy())
    assert rel_err(g, fd) < 1e-5


def test_policy_log_prob_rejects_sigma_zero():
    rng = np.random.default_rng(8)
    enc = link.init_encoder(1, 1, rng, sigma=0.0)
    with pytest.raises(ValueError):
        link.policy_log_prob(enc, 1, link.encode(enc, 1))


# --- decoder ---------------------------------------------------------------------


def random_received(rng, n, L, scale=1.0):
    m = n + L - 1
    return scale * (rng.standard_normal(m) + 1j * rng.standard_normal(m))


def test_decode_probs_is_probability_vector():
    rng = np.random.default_rng(9)
    dec = link.init_decoder(3, 2, 2, rng)
    for _ in range(5):
        p = link.decode_probs(dec, random_received(rng, 2, 2))
        assert p.data.sum() == pytest.approx(1.0, abs=1e-9)
        assert np.all(p.data > 0)


def test_zero_final_layer_gives_uniform():
    rng = np.random.default_rng(10)
    dec = link.init_decoder(3, 2, 1, rng)
    vals = dec.params.values.copy()
    for name in ("cls_w2", "cls_b2"):
        off = next(off for seg, off, _ in dec.params.segments if seg == name)
        vals[off:off + dec.params.segment(name).size] = 0.0
    dec = link.with_params(dec, dec.params.with_values(vals))
    p = link.decode_probs(dec, random_received(rng, 2, 1))
    assert np.allclose(p.data, 1.0 / 8, atol=1e-12)


def test_decode_rejects_wrong_length():
    rng = np.random.default_rng(11)
    dec = link.init_decoder(2, 2, 2, rng)
    with pytest.raises(ValueError):
        link.decode_probs(dec, np.zeros(2, dtype=np.complex128))


def test_cross_entropy_gradient_matches_fd():
    rng = np.random.default_rng(12)
    dec = link.init_decoder(2, 2, 2, rng)
    y = random_received(rng, 2, 2)
    pt = ad.leaf(dec.params.values)
    g = ad.grad_tensor(link.cross_entropy(link.decode_probs(dec, y, pt), 2), pt).data

    def value(vals):
        with ad.no_grad():
            return link.block_loss(
                link.with_params(dec, dec.params.with_values(vals)), y, 2).data

    fd = fd_gradient(value, dec.params.values.copy())
    assert rel_err(g, fd) < 1e-5


def test_final_layer_permutation_covariance():
    rng = np.random.default_rng(13)
    dec = link.init_decoder(2, 2, 1, rng)
    y = random_received(rng, 2, 1)
    perm = np.array([2, 0, 3, 1])

    vals = dec.params.values.copy()
    w_off = next(off for seg, off, _ in dec.params.segments if seg == "cls_w2")
    b_off = next(off for seg, off, _ in dec.params.segments if seg == "cls_b2")
    w = dec.params.segment("cls_w2")
    b = dec.params.segment("cls_b2")
    vals[w_off:w_off + w.size] = w[perm].ravel()
    vals[b_off:b_off + b.size] = b[perm]
    permuted = link.with_params(dec, dec.params.with_values(vals))

    for m in range(1, 5):
        with ad.no_grad():
            base = link.block_loss(dec, y, m).data
            relabeled = link.block_loss(permuted, y, int(np.where(perm == m - 1)[0][0]) + 1).data
        assert relabeled == pytest.approx(base, rel=1e-12)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2 ** 31 - 1), scale=st.floats(0.0, 1.0))
def test_forward_passes_finite_for_bounded_inputs(seed, scale):
    rng = np.random.default_rng(seed)
    dec = link.init_decoder(2, 2, 2, rng)
    y = random_received(rng, 2, 2)
    norm = np.linalg.norm(y)
    if norm > 0:
        y = y * (100.0 * scale / norm)   # anywhere inside ||y|| <= 100
    p = link.decode_probs(dec, y)
    assert np.all(np.isfinite(p.data))
    enc = link.init_encoder(2, 2, rng, sigma=0.15)
    assert np.all(np.isfinite(link.encode(enc, 1)))


# --- decisions and losses ---------------------------------------------------------


def test_map_decision_examples():
    assert link.map_decision(np.array([0.1, 0.7, 0.2])) == 2
    assert link.map_decision(np.ones(4) / 4) == 1          # tie -> lowest index
    one_hot = np.zeros(8)
    one_hot[4] = 1.0
    assert link.map_decision(one_hot) == 5
    with pytest.raises(ValueError):
        link.map_decision(np.array([]))


def test_cross_entropy_uniform_values():
    logits8 = ad.constant(np.zeros(256))
    p8 = link.ProbVector(ad.softmax(logits8), logits8)
    assert link.cross_entropy(p8, 17).data == pytest.approx(8 * np.log(2), rel=1e-12)

    logits1 = ad.constant(np.zeros(2))
    p1 = link.ProbVector(ad.softmax(logits1), logits1)
    assert link.cross_entropy(p1, 1).data == pytest.approx(np.log(2), rel=1e-12)
    with pytest.raises(ValueError):
        link.cross_entropy(p1, 3)


def test_cross_entropy_near_zero_for_confident_decoder():
    logits = ad.constant(np.array([40.0, 0.0, 0.0]))
    p = link.ProbVector(ad.softmax(logits), logits)
    assert link.cross_entropy(p, 1).data < 1e-12


# --- serialization -----------------------------------------------------------------


def test_checkpoint_round_trip(tmp_path):
    rng = np.random.default_rng(14)
    enc = link.init_encoder(2, 3, rng)
    dec = link.init_decoder(2, 3, 2, rng)
    path = tmp_path / "ckpt.bin"
    link.save_checkpoint(path, {"encoder": enc.params, "decoder": dec.params})
    loaded = link.load_checkpoint(path)
    assert set(loaded) == {"encoder", "decoder"}
    for name, original in (("encoder", enc.params), ("decoder", dec.params)):
        assert np.array_equal(loaded[name].values, original.values)
        assert loaded[name].segments == original.segments


def test_checkpoint_rejects_foreign_file(tmp_path):
    path = tmp_path / "junk.bin"
    path.write_bytes(b"not a checkpoint")
    with pytest.raises(ValueError):
        link.load_checkpoint(path)
