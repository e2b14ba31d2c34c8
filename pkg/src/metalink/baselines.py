"""Classical reference schemes: BPSK mapping, pilot-based MMSE channel
estimation under the stationary CN(0, 1/L) tap prior, and exhaustive
maximum-likelihood block decoding."""

from __future__ import annotations

import numpy as np
from scipy.linalg import toeplitz
from scipy.special import erfc


def message_bits(m: int, k: int) -> np.ndarray:
    """k-bit expansion of message m in {1..2^k}, MSB first."""
    if not 1 <= m <= 2 ** k:
        raise ValueError(f"message {m} outside [1, {2 ** k}]")
    return (m - 1) >> np.arange(k - 1, -1, -1) & 1


def bpsk_encode(m: int, k: int, n: int, es: float = 1.0) -> np.ndarray:
    """One bit per complex use on the real rail: bit 0 -> +sqrt(es), 1 -> -sqrt(es)."""
    if k != n:
        raise ValueError(f"BPSK needs one bit per channel use (k={k}, n={n})")
    bits = message_bits(m, k)
    return np.sqrt(es) * (1.0 - 2.0 * bits) + 0.0j


def bpsk_codebook(k: int, n: int, es: float = 1.0) -> np.ndarray:
    """(2^k, n) complex matrix of all BPSK codewords, ordered by message."""
    return np.stack([bpsk_encode(m, k, n, es) for m in range(1, 2 ** k + 1)])


def conv_matrix(x: np.ndarray, L: int) -> np.ndarray:
    """(n+L-1, L) Toeplitz matrix with X @ h = conv(h, x)."""
    x = np.asarray(x, dtype=np.complex128)
    n = x.shape[0]
    col = np.concatenate([x, np.zeros(L - 1, dtype=np.complex128)])
    row = np.concatenate([x[:1], np.zeros(L - 1, dtype=np.complex128)])
    return toeplitz(col, row)


def mmse_estimate(pilot_pairs, n0: float, L: int) -> np.ndarray:
    """Bayesian linear MMSE tap estimate from (codeword, received) pilot pairs.

    h_hat = (sum X^H X + n0 L I)^(-1) sum X^H y under the stationary prior
    h ~ CN(0, I/L).
    """
    pilot_pairs = list(pilot_pairs)
    if not pilot_pairs:
        raise ValueError("need at least one pilot pair")
    A = n0 * L * np.eye(L, dtype=np.complex128)
    b = np.zeros(L, dtype=np.complex128)
    for x, y in pilot_pairs:
        X = conv_matrix(x, L)
        A += X.conj().T @ X
        b += X.conj().T @ np.asarray(y, dtype=np.complex128)
    return np.linalg.solve(A, b)


def ls_estimate(pilot_pairs, L: int) -> np.ndarray:
    """Unregularised least-squares counterpart (pseudo-inverse)."""
    pilot_pairs = list(pilot_pairs)
    if not pilot_pairs:
        raise ValueError("need at least one pilot pair")
    A = np.zeros((L, L), dtype=np.complex128)
    b = np.zeros(L, dtype=np.complex128)
    for x, y in pilot_pairs:
        X = conv_matrix(x, L)
        A += X.conj().T @ X
        b += X.conj().T @ np.asarray(y, dtype=np.complex128)
    return np.linalg.pinv(A) @ b


def ml_decode_batch(h_hat: np.ndarray, Y: np.ndarray, codebook: np.ndarray) -> np.ndarray:
    """ML decisions for many blocks at once; returns 1-based messages.

    argmin_m ||y - conv(h_hat, x_m)||^2, ties to the lowest message.
    """
    codebook = np.asarray(codebook, dtype=np.complex128)
    if codebook.size == 0:
        raise ValueError("empty codebook")
    convs = np.stack([np.convolve(h_hat, c) for c in codebook])   # (2^k, n+L-1)
    Y = np.atleast_2d(np.asarray(Y, dtype=np.complex128))
    if Y.shape[1] != convs.shape[1]:
        raise ValueError(f"received blocks must have length {convs.shape[1]}")
    # ||y - c||^2 = ||y||^2 + ||c||^2 - 2 Re<y, c>; the ||y||^2 term is common
    energy = np.sum(np.abs(convs) ** 2, axis=1)
    scores = energy[None, :] - 2.0 * np.real(Y @ convs.conj().T)
    return np.argmin(scores, axis=1) + 1


def ml_decode(h_hat: np.ndarray, y: np.ndarray, codebook: np.ndarray) -> int:
    return int(ml_decode_batch(h_hat, y[None, :], codebook)[0])


def qfunc(x) -> np.ndarray:
    """Gaussian tail probability Q(x)."""
    return 0.5 * erfc(np.asarray(x) / np.sqrt(2.0))


def bpsk_analytic_bler(es_n0_db: float, k: int) -> float:
    """Block error probability of k-bit BPSK on a unit single-tap channel."""
    q = qfunc(np.sqrt(2.0 * 10.0 ** (es_n0_db / 10.0)))
    return float(1.0 - (1.0 - q) ** k)
