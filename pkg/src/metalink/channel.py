"""Block-fading multipath channel: L-tap convolution, AWGN, AR tap evolution.

Taps stay constant for frames of ``frame_len`` blocks and follow a first-order
autoregression across frame boundaries whose stationary law is circularly
symmetric complex Gaussian with per-tap variance 1/L.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

ComplexVec = np.ndarray


@dataclass(frozen=True)
class ChannelState:
    taps: ComplexVec          # (L,) complex128
    rho: float                # frame-to-frame correlation in [0, 1]
    frame_len: int
    block_index: int
    n0: float                 # complex noise variance per received sample
    es: float                 # symbol energy of the power constraint

    def __post_init__(self):
        taps = np.asarray(self.taps, dtype=np.complex128)
        object.__setattr__(self, "taps", taps)
        if taps.ndim != 1 or taps.shape[0] < 1:
            raise ValueError("taps must be a non-empty vector")
        if not 0.0 <= self.rho <= 1.0:
            raise ValueError(f"rho must lie in [0, 1], got {self.rho}")
        if self.frame_len < 1 or self.block_index < 0:
            raise ValueError("bad frame_len/block_index")
        if self.n0 <= 0 or self.es <= 0:
            raise ValueError("n0 and es must be positive")

    @property
    def num_taps(self) -> int:
        return self.taps.shape[0]


def draw_stationary_taps(L: int, rng: np.random.Generator, size=None) -> ComplexVec:
    """i.i.d. CN(0, 1/L) taps; optional leading ensemble dimensions."""
    if L < 1:
        raise ValueError("L must be >= 1")
    shape = (L,) if size is None else (*np.atleast_1d(size), L)
    scale = np.sqrt(1.0 / (2 * L))
    return scale * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))


def ar_step(taps: ComplexVec, rho: float, rng: np.random.Generator) -> ComplexVec:
    """One frame-boundary update: rho * taps + sqrt(1 - rho^2) * innovation."""
    taps = np.asarray(taps, dtype=np.complex128)
    innovation = draw_stationary_taps(taps.shape[-1], rng, size=taps.shape[:-1] or None)
    return rho * taps + np.sqrt(1.0 - rho * rho) * innovation


def advance(state: ChannelState, rng: np.random.Generator) -> ChannelState:
    """Move to the next block; taps are redrawn only on frame boundaries."""
    idx = state.block_index + 1
    if idx % state.frame_len == 0:
        return replace(state, taps=ar_step(state.taps, state.rho, rng), block_index=idx)
    return replace(state, block_index=idx)


def transmit(state: ChannelState, x: ComplexVec, rng: np.random.Generator) -> ComplexVec:
    """Full linear convolution with the current taps plus CN(0, n0) noise.

    Returns the complete n+L-1 received block (blocks are isolated by a guard
    interval, so the whole convolution tail is observed).
    """
    x = np.asarray(x, dtype=np.complex128)
    if x.ndim != 1 or x.shape[0] < 1:
        raise ValueError("codeword must be a non-empty vector")
    m = x.shape[0] + state.num_taps - 1
    noise = np.sqrt(state.n0 / 2) * (rng.standard_normal(m) + 1j * rng.standard_normal(m))
    return np.convolve(state.taps, x) + noise


def snr_to_n0(es_n0_db: float, es: float) -> float:
    """Noise variance for a given Es/N0 in dB."""
    return es / 10.0 ** (es_n0_db / 10.0)
