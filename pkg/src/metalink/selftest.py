"""Quick derived-oracle checks runnable from the CLI.

Each check recomputes an expected value through an independent route (finite
differences, closed forms, Monte-Carlo of a stated law) and compares. Meant
as a fast smoke screen, not a replacement for the test suite.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from . import baselines, channel as ch, link
from . import training as tr


def _fd_grad(f, x0: np.ndarray, eps: float) -> np.ndarray:
    out = np.zeros_like(x0)
    for i in range(x0.size):
        xp = x0.copy(); xp[i] += eps
        xm = x0.copy(); xm[i] -= eps
        out[i] = (f(xp) - f(xm)) / (2 * eps)
    return out


def check_decoder_gradient() -> tuple[bool, str]:
    rng = np.random.default_rng(101)
    dec = link.init_decoder(2, 2, 2, rng)
    y = (rng.standard_normal(3) + 1j * rng.standard_normal(3))
    pt = ad.leaf(dec.params.values)
    g = ad.grad_tensor(link.block_loss(dec, y, 3, pt), pt).data

    def f(vals):
        with ad.no_grad():
            return link.block_loss(link.with_params(dec, dec.params.with_values(vals)), y, 3).data

    fd = _fd_grad(f, dec.params.values.copy(), 1e-6)
    rel = np.abs(g - fd).max() / max(np.abs(fd).max(), 1e-12)
    return rel < 1e-5, f"decoder cross-entropy gradient vs FD: rel err {rel:.2e}"


def check_hvp() -> tuple[bool, str]:
    rng = np.random.default_rng(102)
    dec = link.init_decoder(1, 1, 1, rng)
    y = rng.standard_normal(1) + 1j * rng.standard_normal(1)
    p = dec.params
    v = p.with_values(rng.standard_normal(len(p)))

    def f(pt):
        return link.block_loss(dec, y, 1, pt)

    h = ad.grad_of_grad_dot(f, p, v)
    eps = 1e-5

    def grad_at(vals):
        pt = ad.leaf(vals)
        return ad.grad_tensor(f(pt), pt).data

    fd = (grad_at(p.values + eps * v.values) - grad_at(p.values - eps * v.values)) / (2 * eps)
    rel = np.abs(h.values - fd).max() / max(np.abs(fd).max(), 1e-12)
    return rel < 1e-4, f"Hessian-vector product vs FD of gradient: rel err {rel:.2e}"


def check_meta_gradient() -> tuple[bool, str]:
    rng = np.random.default_rng(103)
    cfg = tr.TrainConfig(k=2, n=2, L=2, T=4, T_U=2, rho=0.9, es_n0_db=10.0, sigma=0.15)
    dec = link.init_decoder(cfg.k, cfg.n, cfg.L, rng)
    tx = tr.NeuralTransmitter(link.init_encoder(cfg.k, cfg.n, rng, sigma=cfg.sigma))
    frame, _ = tr._simulate_frame(tx, tr._initial_channel(cfg, rng), cfg, rng, 1)
    a = tr.meta_gradient(dec, frame, cfg)
    b = tr.meta_gradient_unrolled(dec, frame, cfg)
    rel = np.abs(a.values - b.values).max() / max(np.abs(b.values).max(), 1e-12)
    return rel < 1e-8, f"meta-gradient closed form vs unrolled graph: rel err {rel:.2e}"


def check_channel_stats() -> tuple[bool, str]:
    rng = np.random.default_rng(104)
    L, chains, steps, rho = 3, 4000, 200, 0.5
    taps = ch.draw_stationary_taps(L, rng, size=chains)
    for _ in range(steps):
        prev = taps
        taps = ch.ar_step(taps, rho, rng)
    var = np.mean(np.abs(taps) ** 2, axis=0)
    corr = np.mean(np.real(prev * taps.conj()), axis=0) * L
    se_var = 1.0 / L / np.sqrt(chains)
    se_corr = (1 - rho ** 2) / np.sqrt(chains)
    ok = np.all(np.abs(var - 1.0 / L) < 3 * se_var) and np.all(np.abs(corr - rho) < 4 * se_corr)
    return bool(ok), f"tap variance {var.round(4)} (want {1/L:.4f}), lag-1 corr {corr.round(3)} (want {rho})"


def check_mmse() -> tuple[bool, str]:
    rng = np.random.default_rng(105)
    L, n = 3, 8
    h = ch.draw_stationary_taps(L, rng)
    x = rng.standard_normal(n) + 1j * rng.standard_normal(n)
    y = np.convolve(h, x)
    h_hat = baselines.mmse_estimate([(x, y)], 1e-12, L)
    resid = np.abs(h_hat - h).max()
    return resid < 1e-6, f"noiseless MMSE recovery residual {resid:.2e}"


def check_bpsk_ml() -> tuple[bool, str]:
    rng = np.random.default_rng(106)
    k = n = 8
    es_n0_db = 6.0
    n0 = ch.snr_to_n0(es_n0_db, 1.0)
    codebook = baselines.bpsk_codebook(k, n)
    blocks = 100_000
    msgs = rng.integers(1, 2 ** k + 1, size=blocks)
    X = codebook[msgs - 1]
    Y = X + np.sqrt(n0 / 2) * (rng.standard_normal(X.shape) + 1j * rng.standard_normal(X.shape))
    decided = baselines.ml_decode_batch(np.array([1.0 + 0j]), Y, codebook)
    bler = np.mean(decided != msgs)
    want = baselines.bpsk_analytic_bler(es_n0_db, k)
    se = np.sqrt(want * (1 - want) / blocks)
    return abs(bler - want) < 3 * se + 1e-12, f"BPSK+ML BLER {bler:.5f} vs analytic {want:.5f}"


CHECKS = [
    ("decoder-gradient", check_decoder_gradient),
    ("hessian-vector", check_hvp),
    ("meta-gradient", check_meta_gradient),
    ("channel-stats", check_channel_stats),
    ("mmse-recovery", check_mmse),
    ("bpsk-ml-analytic", check_bpsk_ml),
]


def run_selftest(echo=print) -> bool:
    all_ok = True
    for name, fn in CHECKS:
        ok, detail = fn()
        all_ok &= ok
        echo(f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}")
    return all_ok
