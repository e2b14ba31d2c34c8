"""Trainable encoder and decoder networks around the unknown channel.

Encoder: one-hot message -> dense-ELU-dense -> 2n reals -> power-normalised
codeword, with an optional Gaussian exploration policy around it. Decoder:
a channel-estimator sub-net feeds a fixed correlation (deconvolution) stage
whose output joins the raw block as classifier input; softmax over messages.

Messages are 1-based: m in {1, ..., 2^k}. Complex vectors cross the channel
boundary as interleaved real pairs [re0, im0, re1, im1, ...].
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, replace

import numpy as np

from . import autodiff as ad
from .autodiff import ParamVector, Tensor

GNORM_FLOOR = 1e-6      # floor on the estimated-tap norm in the deconvolution
PNORM_FLOOR = 1e-12     # floor on the pre-normalisation codeword norm


def complex_to_reals(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.complex128)
    out = np.empty(2 * x.shape[0])
    out[0::2] = x.real
    out[1::2] = x.imag
    return out


def reals_to_complex(r: np.ndarray) -> np.ndarray:
    r = np.asarray(r, dtype=np.float64)
    return r[0::2] + 1j * r[1::2]


@dataclass(frozen=True)
class MessageSpace:
    k: int

    @property
    def cardinality(self) -> int:
        return 2 ** self.k

    def one_hot(self, m: int) -> np.ndarray:
        if not 1 <= m <= self.cardinality:
            raise ValueError(f"message {m} outside [1, {self.cardinality}]")
        s = np.zeros(self.cardinality)
        s[m - 1] = 1.0
        return s

    def random_message(self, rng: np.random.Generator) -> int:
        return int(rng.integers(1, self.cardinality + 1))


@dataclass(frozen=True)
class EncoderModel:
    params: ParamVector
    k: int
    n: int
    es: float = 1.0
    sigma: float = 0.0

    @property
    def messages(self) -> MessageSpace:
        return MessageSpace(self.k)


@dataclass(frozen=True)
class DecoderModel:
    params: ParamVector
    k: int
    n: int
    L: int

    @property
    def input_len(self) -> int:
        return self.n + self.L - 1


class ProbVector:
    """Decoder output: probabilities plus the logits they came from."""

    __slots__ = ("probs", "logits")

    def __init__(self, probs: Tensor, logits: Tensor):
        self.probs = probs
        self.logits = logits

    @property
    def data(self) -> np.ndarray:
        return self.probs.data


def _glorot(rng, fan_out, fan_in):
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_out, fan_in))


def init_encoder(k: int, n: int, rng: np.random.Generator,
                 es: float = 1.0, sigma: float = 0.0) -> EncoderModel:
    M = 2 ** k
    params = ParamVector.from_arrays([
        ("w1", _glorot(rng, M, 2 ** k)),
        ("b1", np.zeros(M)),
        ("w2", _glorot(rng, 2 * n, M)),
        ("b2", np.zeros(2 * n)),
    ])
    return EncoderModel(params, k=k, n=n, es=es, sigma=sigma)


def init_decoder(k: int, n: int, L: int, rng: np.random.Generator) -> DecoderModel:
    M = 2 ** k
    d_in = 2 * (n + L - 1)
    params = ParamVector.from_arrays([
        ("rtn_w1", _glorot(rng, M, d_in)),
        ("rtn_b1", np.zeros(M)),
        ("rtn_w2", _glorot(rng, 2 * L, M)),
        ("rtn_b2", np.zeros(2 * L)),
        ("cls_w1", _glorot(rng, M, d_in + 2 * n)),
        ("cls_b1", np.zeros(M)),
        ("cls_w2", _glorot(rng, 2 ** k, M)),
        ("cls_b2", np.zeros(2 ** k)),
    ])
    return DecoderModel(params, k=k, n=n, L=L)


def _dense(w: Tensor, b: Tensor, x: Tensor) -> Tensor:
    return ad.add(ad.matvec(w, x), b)


def encoder_mean(enc: EncoderModel, m: int, params: Tensor | None = None) -> Tensor:
    """Normalised codeword as 2n interleaved reals; differentiable in params."""
    pt = params if params is not None else ad.leaf(enc.params.values)
    seg = ad.segment_tensors(pt, enc.params)
    s = ad.constant(enc.messages.one_hot(m))
    h = ad.elu(_dense(seg["w1"], seg["b1"], s))
    raw = _dense(seg["w2"], seg["b2"], h)
    sumsq = ad.clip_min(ad.sumall(ad.mul(raw, raw)), PNORM_FLOOR ** 2)
    scale = ad.mul(ad.constant(np.sqrt(enc.n * enc.es)), ad.powc(sumsq, -0.5))
    return ad.mul(raw, scale)


def encode(enc: EncoderModel, m: int) -> np.ndarray:
    """Deterministic codeword f(s_m), ||x||^2 / n = es."""
    with ad.no_grad():
        return reals_to_complex(encoder_mean(enc, m).data)


def sample_codeword(enc: EncoderModel, m: int, rng: np.random.Generator) -> np.ndarray:
    """Exploration draw x ~ N(sqrt(1 - sigma^2) f(s_m), sigma^2 I) over 2n reals."""
    if not 0.0 <= enc.sigma < 1.0:
        raise ValueError("sigma must lie in [0, 1)")
    with ad.no_grad():
        mean = np.sqrt(1.0 - enc.sigma ** 2) * encoder_mean(enc, m).data
    return reals_to_complex(mean + enc.sigma * rng.standard_normal(2 * enc.n))


def policy_log_prob(enc: EncoderModel, m: int, x: np.ndarray,
                    params: Tensor | None = None) -> Tensor:
    """log pi(x | m) of the Gaussian exploration policy, differentiable in params."""
    if enc.sigma <= 0.0:
        raise ValueError("policy density is degenerate for sigma = 0")
    xr = complex_to_reals(x)
    if xr.shape[0] != 2 * enc.n:
        raise ValueError(f"codeword has {xr.shape[0] // 2} uses, expected {enc.n}")
    mean = ad.mul(ad.constant(np.sqrt(1.0 - enc.sigma ** 2)), encoder_mean(enc, m, params))
    d = ad.sub(ad.constant(xr), mean)
    quad = ad.mul(ad.constant(-0.5 / enc.sigma ** 2), ad.sumall(ad.mul(d, d)))
    return ad.add(quad, ad.constant(-enc.n * np.log(2 * np.pi * enc.sigma ** 2)))


def decode_logits(dec: DecoderModel, y: np.ndarray, params: Tensor | None = None) -> Tensor:
    """Classifier logits for a received block; differentiable in params.

    The estimator sub-net predicts 2L tap reals (first L real parts, then L
    imaginary parts); a fixed correlation stage with the conjugated,
    norm-floored estimate produces n equalised samples fed to the classifier
    next to the raw block.
    """
    y = np.asarray(y, dtype=np.complex128)
    if y.ndim != 1 or y.shape[0] != dec.input_len:
        raise ValueError(f"received block must have length {dec.input_len}")
    pt = params if params is not None else ad.leaf(dec.params.values)
    seg = ad.segment_tensors(pt, dec.params)
    yr = ad.constant(complex_to_reals(y))

    g = _dense(seg["rtn_w2"], seg["rtn_b2"], ad.elu(_dense(seg["rtn_w1"], seg["rtn_b1"], yr)))
    gnorm_sq = ad.clip_min(ad.sumall(ad.mul(g, g)), GNORM_FLOOR ** 2)
    gn = ad.mul(g, ad.powc(gnorm_sq, -0.5))
    gre = ad.vslice(gn, 0, dec.L)
    gim = ad.vslice(gn, dec.L, 2 * dec.L)

    # z_j = sum_l conj(g_l) y_{j+l}, j < n, as two constant lag matrices
    idx = np.arange(dec.n)[:, None] + np.arange(dec.L)[None, :]
    Yre = ad.constant(y.real[idx])
    Yim = ad.constant(y.imag[idx])
    zre = ad.add(ad.matvec(Yre, gre), ad.matvec(Yim, gim))
    zim = ad.sub(ad.matvec(Yim, gre), ad.matvec(Yre, gim))

    feats = ad.concat([yr, zre, zim])
    return _dense(seg["cls_w2"], seg["cls_b2"], ad.elu(_dense(seg["cls_w1"], seg["cls_b1"], feats)))


def decode_probs(dec: DecoderModel, y: np.ndarray, params: Tensor | None = None) -> ProbVector:
    """Posterior estimate over the 2^k messages for a received block."""
    logits = decode_logits(dec, y, params)
    return ProbVector(ad.softmax(logits), logits)


def cross_entropy(p: ProbVector, m: int) -> Tensor:
    """-log p[m] through the fused stable primitive on the stored logits."""
    num = p.logits.data.shape[0]
    if not 1 <= m <= num:
        raise ValueError(f"message {m} outside [1, {num}]")
    return ad.softmax_xent(p.logits, m - 1)


def block_loss(dec: DecoderModel, y: np.ndarray, m: int, params: Tensor | None = None) -> Tensor:
    """Cross-entropy -log p(m | y) without materialising the probability vector."""
    if not 1 <= m <= 2 ** dec.k:
        raise ValueError(f"message {m} outside [1, {2 ** dec.k}]")
    return ad.softmax_xent(decode_logits(dec, y, params), m - 1)


def map_decision(p) -> int:
    """Most probable message (1-based); ties resolve to the lowest index."""
    values = p.data if isinstance(p, ProbVector) else np.asarray(p, dtype=np.float64)
    if values.size == 0:
        raise ValueError("empty probability vector")
    return int(np.argmax(values)) + 1


# --- checkpoint container -----------------------------------------------------
#
# Binary layout (all little-endian):
#   magic "MLCK", u8 version
#   u32 vector count; per vector:
#     u16 name length, name bytes (utf-8)
#     u32 segment count; per segment:
#       u16 name length, name bytes, u8 ndim, u32 dims...
#     u64 value count, then count float64 values.

_MAGIC = b"MLCK"
_VERSION = 1


def save_checkpoint(path, vectors: dict[str, ParamVector]) -> None:
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<BI", _VERSION, len(vectors)))
        for name, pv in vectors.items():
            raw = name.encode("utf-8")
            fh.write(struct.pack("<H", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<I", len(pv.segments)))
            for seg_name, _, shape in pv.segments:
                seg_raw = seg_name.encode("utf-8")
                fh.write(struct.pack("<H", len(seg_raw)))
                fh.write(seg_raw)
                fh.write(struct.pack("<B", len(shape)))
                fh.write(struct.pack(f"<{len(shape)}I", *shape) if shape else b"")
            fh.write(struct.pack("<Q", len(pv)))
            fh.write(pv.values.astype("<f8").tobytes())


def load_checkpoint(path) -> dict[str, ParamVector]:
    def read(fh, fmt):
        return struct.unpack(fmt, fh.read(struct.calcsize(fmt)))

    with open(path, "rb") as fh:
        if fh.read(4) != _MAGIC:
            raise ValueError(f"{path} is not a checkpoint file")
        version, count = read(fh, "<BI")
        if version != _VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        out = {}
        for _ in range(count):
            (name_len,) = read(fh, "<H")
            name = fh.read(name_len).decode("utf-8")
            (n_seg,) = read(fh, "<I")
            segs, off = [], 0
            for _ in range(n_seg):
                (seg_len,) = read(fh, "<H")
                seg_name = fh.read(seg_len).decode("utf-8")
                (ndim,) = read(fh, "<B")
                shape = read(fh, f"<{ndim}I") if ndim else ()
                segs.append((seg_name, off, tuple(shape)))
                off += int(np.prod(shape, dtype=int))
            (total,) = read(fh, "<Q")
            values = np.frombuffer(fh.read(8 * total), dtype="<f8").astype(np.float64)
            out[name] = ParamVector(values, tuple(segs))
        return out


def with_params(model, params: ParamVector):
    """New model of the same kind with replaced parameters."""
    return replace(model, params=params)
