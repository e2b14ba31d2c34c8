"""Test-phase BLER evaluation: per frame, a fresh stationary channel, P pilot
blocks with distinct random messages and a deterministic encoder, scheme-
specific receiver preparation, then payload decoding. No feedback link exists
here; the training module's guard makes constructing one a runtime error.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import baselines, channel as ch, link
from .config import ExperimentConfig, META_SCHEMES, TRAINED_SCHEMES
from .link import DecoderModel
from .training import Block, adapt_decoder, feedback_disabled, train_decoder_from_scratch


@dataclass(frozen=True)
class BlerRecord:
    scheme: str
    P: int
    rho: float
    train_frames: int
    bler: float
    std: float
    seed: int

    def __post_init__(self):
        if not 0.0 <= self.bler <= 1.0 or self.std < 0.0:
            raise ValueError("bler must lie in [0, 1] and std be non-negative")


@dataclass(frozen=True)
class TrainedLink:
    transmitter: object
    decoder: DecoderModel | None = None


class NeuralAdaptReceiver:
    """Adapts a trained decoder on the frame's pilots, then classifies."""

    def __init__(self, dec: DecoderModel, eta: float, steps: int, frame_len: int):
        self.dec = dec
        self.eta = eta
        self.steps = steps
        self.frame_len = frame_len

    def prepare(self, pilots, rng):
        if self.steps == 0 or self.eta == 0.0:
            return self.dec
        params = adapt_decoder(self.dec, pilots, self.eta,
                               steps=self.steps, frame_len=self.frame_len)
        return link.with_params(self.dec, params)

    def decode_many(self, model, ys):
        with ad.no_grad():
            return np.array([link.map_decision(link.decode_probs(model, y)) for y in ys])


class ScratchReceiver(NeuralAdaptReceiver):
    """Trains a freshly initialised decoder on the frame's pilots."""

    def __init__(self, k: int, n: int, L: int, eta: float, steps: int):
        self.k, self.n, self.L = k, n, L
        self.eta = eta
        self.steps = steps

    def prepare(self, pilots, rng):
        return train_decoder_from_scratch(pilots, self.k, self.n, self.L,
                                          self.eta, self.steps, rng)


class ClassicalReceiver:
    """MMSE channel estimation from the pilots, then exhaustive ML decoding."""

    def __init__(self, codebook: np.ndarray, n0: float, L: int):
        self.codebook = codebook
        self.n0 = n0
        self.L = L

    def prepare(self, pilots, rng):
        return baselines.mmse_estimate(
            [(b.codeword, b.received) for b in pilots], self.n0, self.L)

    def decode_many(self, h_hat, ys):
        return baselines.ml_decode_batch(h_hat, np.stack(ys), self.codebook)


def _payload_split(total: int, frames: int) -> list[int]:
    base, rem = divmod(total, frames)
    return [base + (1 if f < rem else 0) for f in range(frames)]


def run_bler_trial(transmitter, receiver, *, k: int, L: int, n0: float, es: float,
                   pilots: int, payload_blocks: int, test_frames: int, seed,
                   draw_taps=None) -> float:
    """One independent BLER measurement over ``test_frames`` fresh channels.

    ``draw_taps(rng)`` overrides the per-frame stationary channel draw (fixed
    or scripted channels for oracle checks).
    """
    if pilots < 1:
        raise ValueError("the test protocol needs at least one pilot block")
    if pilots > 2 ** k:
        raise ValueError("pilot messages are drawn without replacement from 2^k")
    rng = np.random.default_rng(seed)
    errors = 0
    total = 0
    with feedback_disabled():
        for npayload in _payload_split(payload_blocks, test_frames):
            taps = draw_taps(rng) if draw_taps is not None else ch.draw_stationary_taps(L, rng)
            state = ch.ChannelState(
                taps=taps, rho=0.0,
                frame_len=pilots + npayload + 1, block_index=0, n0=n0, es=es)
            pilot_msgs = rng.choice(2 ** k, size=pilots, replace=False) + 1
            pilot_blocks = []
            for m in pilot_msgs:
                x = transmitter.encode(int(m))
                pilot_blocks.append(Block(int(m), x, ch.transmit(state, x, rng)))
            prepared = receiver.prepare(pilot_blocks, rng)
            if npayload == 0:
                continue
            msgs = rng.integers(1, 2 ** k + 1, size=npayload)
            ys = []
            for m in msgs:
                ys.append(ch.transmit(state, transmitter.encode(int(m)), rng))
            decided = np.asarray(receiver.decode_many(prepared, ys))
            errors += int(np.sum(decided != msgs))
            total += npayload
    return errors / total


def make_receiver(cfg: ExperimentConfig, models: TrainedLink):
    scheme = cfg.scheme
    if scheme == "bpsk_ml_mmse":
        codebook = baselines.bpsk_codebook(cfg.train.k, cfg.train.n, cfg.train.es)
        return ClassicalReceiver(codebook, cfg.train.n0, cfg.train.L)
    if scheme == "bpsk_neural_scratch":
        return ScratchReceiver(cfg.train.k, cfg.train.n, cfg.train.L,
                               cfg.test.eta_nonmeta, cfg.test.scratch_steps)
    if models.decoder is None:
        raise ValueError(f"scheme {scheme!r} needs a trained decoder checkpoint")
    eta = cfg.test.eta_meta if scheme in META_SCHEMES else cfg.test.eta_nonmeta
    return NeuralAdaptReceiver(models.decoder, eta, cfg.test.adapt_steps, cfg.train.T)


def eval_seeds(base_seed: int, runs: int) -> list:
    return np.random.SeedSequence(base_seed).spawn(runs)


def evaluate_bler(cfg: ExperimentConfig, models: TrainedLink, rng=None,
                  pilots: int | None = None, train_frames: int | None = None) -> BlerRecord:
    """Mean BLER and its spread over ``runs`` independently seeded trials."""
    if cfg.scheme in TRAINED_SCHEMES and models.decoder is None:
        raise ValueError(f"scheme {cfg.scheme!r} needs a trained decoder checkpoint")
    P = cfg.test.pilots if pilots is None else pilots
    receiver = make_receiver(cfg, models)
    base = cfg.train.seed if rng is None else int(rng.integers(2 ** 31))
    blers = [
        run_bler_trial(
            models.transmitter, receiver, k=cfg.train.k, L=cfg.train.L,
            n0=cfg.train.n0, es=cfg.train.es, pilots=P,
            payload_blocks=cfg.test.payload_blocks, test_frames=cfg.test.test_frames,
            seed=seed)
        for seed in eval_seeds(base, cfg.test.runs)
    ]
    blers = np.asarray(blers)
    std = float(blers.std(ddof=1)) if len(blers) > 1 else 0.0
    return BlerRecord(
        scheme=cfg.scheme, P=P, rho=cfg.train.rho,
        train_frames=cfg.train.frames if train_frames is None else train_frames,
        bler=float(blers.mean()), std=std, seed=base)
