"""Online hybrid training: policy-gradient encoder updates from fed-back
log-losses, decoder adaptation from pilot blocks, and second-order
meta-updates of the decoder initialisation; plus the joint-training and
from-scratch decoder baselines.

The transmitter never sees received signals: its update consumes only the
messages, the codewords it sent, and the per-block log-losses returned over
the (training-phase-only) feedback link.
"""

from __future__ import annotations

from contextlib import contextmanager
from contextvars import ContextVar
from dataclasses import dataclass, replace
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from . import channel as ch
from . import link
from .autodiff import ParamVector, Tensor, apply_sgd
from .link import DecoderModel, EncoderModel

# --- data carried per frame ---------------------------------------------------


@dataclass(frozen=True)
class Block:
    message: int
    codeword: np.ndarray     # (n,) complex
    received: np.ndarray     # (n+L-1,) complex


@dataclass
class Frame:
    tau: int
    blocks: tuple[Block, ...]
    pilot_idx: tuple[int, ...]
    losses: np.ndarray | None = None

    def __post_init__(self):
        T = len(self.blocks)
        idx = tuple(int(i) for i in self.pilot_idx)
        if len(set(idx)) != len(idx) or any(not 0 <= i < T for i in idx):
            raise ValueError("pilot indices must be distinct and within the frame")
        self.pilot_idx = idx

    @property
    def pilots(self) -> tuple[Block, ...]:
        return tuple(self.blocks[i] for i in self.pilot_idx)


_feedback_allowed = ContextVar("metalink_feedback_allowed", default=True)


@contextmanager
def feedback_disabled():
    """Test phase: constructing a FeedbackPacket inside this context raises."""
    token = _feedback_allowed.set(False)
    try:
        yield
    finally:
        _feedback_allowed.reset(token)


@dataclass(frozen=True)
class FeedbackPacket:
    tau: int
    losses: np.ndarray       # T per-block log-losses

    def __post_init__(self):
        if not _feedback_allowed.get():
            raise RuntimeError("feedback link is disabled in the test phase")
        object.__setattr__(self, "losses", np.asarray(self.losses, dtype=np.float64))


@dataclass(frozen=True)
class TrainConfig:
    k: int
    n: int
    L: int
    T: int
    T_U: int
    rho: float
    es_n0_db: float
    kappa: float = 0.01
    eta: float = 0.1
    sigma: float = 0.15
    frames: int = 0
    adapt_steps: int = 1
    first_order: bool = False
    seed: int = 0
    es: float = 1.0
    normalize_by_pilot_count: bool = False

    def __post_init__(self):
        if self.kappa < 0 or self.eta < 0:
            raise ValueError("step sizes must be non-negative")
        if not 0.0 <= self.sigma < 1.0:
            raise ValueError("sigma must lie in [0, 1)")
        if not 1 <= self.T_U <= self.T:
            raise ValueError("need 1 <= T_U <= T")
        if self.adapt_steps < 0 or self.frames < 0:
            raise ValueError("adapt_steps and frames must be non-negative")

    @property
    def n0(self) -> float:
        return ch.snr_to_n0(self.es_n0_db, self.es)

    @property
    def adapt_divisor(self) -> int:
        return self.T_U if self.normalize_by_pilot_count else self.T


# --- transmitters ---------------------------------------------------------------


@dataclass(frozen=True)
class NeuralTransmitter:
    enc: EncoderModel
    trainable: bool = True

    def sample(self, m: int, rng) -> np.ndarray:
        if self.enc.sigma > 0.0:
            return link.sample_codeword(self.enc, m, rng)
        return link.encode(self.enc, m)

    def encode(self, m: int) -> np.ndarray:
        return link.encode(self.enc, m)


@dataclass(frozen=True)
class BpskTransmitter:
    k: int
    n: int
    es: float = 1.0
    trainable: bool = False

    def sample(self, m: int, rng) -> np.ndarray:
        return self.encode(m)

    def encode(self, m: int) -> np.ndarray:
        from . import baselines
        return baselines.bpsk_encode(m, self.k, self.n, self.es)


# --- decoder-side updates -------------------------------------------------------


def _pilot_loss(dec: DecoderModel, pilots: Sequence[Block], params: Tensor) -> Tensor:
    total = None
    for b in pilots:
        term = link.block_loss(dec, b.received, b.message, params)
        total = term if total is None else ad.add(total, term)
    return total


def adapt_decoder(dec: DecoderModel, pilots: Sequence[Block], eta: float,
                  *, steps: int = 1, frame_len: int) -> ParamVector:
    """Pilot-driven SGD from the decoder's current parameters.

    Each step subtracts (eta / frame_len) times the gradient of the summed
    pilot cross-entropy, re-evaluated at the current iterate. The stored
    parameters are not modified.
    """
    pilots = tuple(pilots)
    if not pilots:
        raise ValueError("empty pilot set")
    params = dec.params
    for _ in range(steps):
        pt = ad.leaf(params.values)
        loss = _pilot_loss(dec, pilots, pt)
        g = ad.grad_tensor(loss, pt)
        params = params.with_values(params.values - (eta / frame_len) * g.data)
    return params


def frame_losses(dec: DecoderModel, frame: Frame, params: ParamVector | None = None) -> np.ndarray:
    """Per-block log-losses of the frame under the given decoder parameters."""
    model = dec if params is None else link.with_params(dec, params)
    with ad.no_grad():
        return np.array([link.block_loss(model, b.received, b.message).data
                         for b in frame.blocks])


def encoder_update(enc: EncoderModel, frame: Frame, feedback: FeedbackPacket,
                   cfg: TrainConfig) -> EncoderModel:
    """Per-frame policy-gradient step from fed-back log-losses.

    Update: params <- params - (kappa / T) * sum_t loss_t * grad log pi(x_t | m_t),
    the score-function descent direction for the expected log-loss. Only
    messages, sent codewords and the feedback losses are read; received blocks
    never reach the transmitter.
    """
    if feedback.tau != frame.tau:
        raise ValueError(f"feedback for frame {feedback.tau}, expected {frame.tau}")
    if len(feedback.losses) != len(frame.blocks):
        raise ValueError("feedback must carry one loss per block")
    if enc.sigma <= 0.0:
        raise ValueError("policy gradient needs sigma > 0")
    pt = ad.leaf(enc.params.values)
    obj = None
    for b, loss in zip(frame.blocks, feedback.losses):
        term = ad.mul(ad.constant(float(loss)),
                      link.policy_log_prob(enc, b.message, b.codeword, pt))
        obj = term if obj is None else ad.add(obj, term)
    g = ad.grad_tensor(obj, pt)
    new = enc.params.with_values(enc.params.values - (cfg.kappa / len(frame.blocks)) * g.data)
    return replace(enc, params=new)


def meta_gradient(dec: DecoderModel, frame: Frame, cfg: TrainConfig,
                  adapted: ParamVector | None = None) -> ParamVector:
    """Gradient of the whole-frame loss after pilot adaptation, w.r.t. the
    decoder initialisation.

    For one adaptation step this is the closed form
        (I - (eta/T) H) g_out = g_out - (eta/T) * H @ g_out,
    with H the Hessian of the summed pilot cross-entropy at the initialisation
    and g_out the plain gradient of the summed frame loss at the adapted
    parameters; ``first_order`` drops the Hessian term. For more steps the
    adaptation is unrolled and differentiated through.
    """
    if cfg.adapt_steps != 1:
        return meta_gradient_unrolled(dec, frame, cfg)
    pilots = frame.pilots
    divisor = cfg.adapt_divisor
    if adapted is None:
        adapted = adapt_decoder(dec, pilots, cfg.eta, steps=1, frame_len=divisor)

    pt = ad.leaf(adapted.values)
    outer = None
    for b in frame.blocks:
        term = link.block_loss(dec, b.received, b.message, pt)
        outer = term if outer is None else ad.add(outer, term)
    g_out = adapted.with_values(ad.grad_tensor(outer, pt).data)
    if cfg.first_order or cfg.eta == 0.0:
        return g_out

    def pilot_objective(theta: Tensor) -> Tensor:
        return _pilot_loss(dec, pilots, theta)

    hv = ad.grad_of_grad_dot(pilot_objective, dec.params, g_out)
    return g_out.with_values(g_out.values - (cfg.eta / divisor) * hv.values)


def meta_gradient_unrolled(dec: DecoderModel, frame: Frame, cfg: TrainConfig) -> ParamVector:
    """Same meta-gradient via one graph through the unrolled adaptation.

    Independent of the closed-form path; also the production route whenever
    adapt_steps != 1.
    """
    divisor = cfg.adapt_divisor
    theta = ad.leaf(dec.params.values)
    params_expr: Tensor = theta
    for _ in range(cfg.adapt_steps):
        inner = _pilot_loss(dec, frame.pilots, params_expr)
        gin = ad.grad_tensor(inner, params_expr)
        if cfg.first_order:
            gin = ad.constant(gin.data)
        params_expr = ad.sub(params_expr, ad.mul(ad.constant(cfg.eta / divisor), gin))
    outer = None
    for b in frame.blocks:
        term = link.block_loss(dec, b.received, b.message, params_expr)
        outer = term if outer is None else ad.add(outer, term)
    g = ad.grad_tensor(outer, theta)
    return dec.params.with_values(g.data)


def meta_update(theta: ParamVector, grad: ParamVector, kappa: float) -> ParamVector:
    return apply_sgd(theta, grad, kappa)


def train_decoder_from_scratch(pilots: Sequence[Block], k: int, n: int, L: int,
                               eta: float, steps: int, rng) -> DecoderModel:
    """Freshly initialised decoder fitted to the pilots by plain SGD on their
    mean cross-entropy."""
    pilots = tuple(pilots)
    if not pilots:
        raise ValueError("empty pilot set")
    dec = link.init_decoder(k, n, L, rng)
    params = adapt_decoder(dec, pilots, eta, steps=steps, frame_len=len(pilots))
    return link.with_params(dec, params)


# --- online loops ----------------------------------------------------------------


def _message_schedule(cfg: TrainConfig, rng) -> np.ndarray:
    # every message once per frame when the frame is exactly one codebook long
    if cfg.T == 2 ** cfg.k:
        return rng.permutation(2 ** cfg.k) + 1
    return rng.integers(1, 2 ** cfg.k + 1, size=cfg.T)


def _simulate_frame(tx, state: ch.ChannelState, cfg: TrainConfig, rng,
                    tau: int) -> tuple[Frame, ch.ChannelState]:
    blocks = []
    for m in _message_schedule(cfg, rng):
        x = tx.sample(int(m), rng)
        y = ch.transmit(state, x, rng)
        state = ch.advance(state, rng)
        blocks.append(Block(int(m), x, y))
    return Frame(tau, tuple(blocks), tuple(range(cfg.T_U))), state


def _initial_channel(cfg: TrainConfig, rng) -> ch.ChannelState:
    return ch.ChannelState(
        taps=ch.draw_stationary_taps(cfg.L, rng),
        rho=cfg.rho,
        frame_len=cfg.T,
        block_index=0,
        n0=cfg.n0,
        es=cfg.es,
    )


def run_meta_training(cfg: TrainConfig, rng=None, transmitter=None, decoder=None,
                      on_frame: Callable | None = None):
    """Joint encoder training and decoder meta-training, online over frames.

    Per frame: transmit T exploration blocks, adapt the decoder on the pilot
    subset, feed back the adapted per-block log-losses, then apply the
    policy-gradient encoder step and the meta-step on the initialisation.
    Returns (transmitter, decoder, history) where history holds
    (tau, mean frame loss) pairs.
    """
    rng = rng if rng is not None else np.random.default_rng(cfg.seed)
    tx = transmitter if transmitter is not None else NeuralTransmitter(
        link.init_encoder(cfg.k, cfg.n, rng, es=cfg.es, sigma=cfg.sigma))
    dec = decoder if decoder is not None else link.init_decoder(cfg.k, cfg.n, cfg.L, rng)
    state = _initial_channel(cfg, rng)
    history = []
    if on_frame is not None:
        on_frame(0, tx, dec)
    for tau in range(1, cfg.frames + 1):
        frame, state = _simulate_frame(tx, state, cfg, rng, tau)
        adapted = adapt_decoder(dec, frame.pilots, cfg.eta,
                                steps=cfg.adapt_steps, frame_len=cfg.adapt_divisor)
        losses = frame_losses(dec, frame, adapted)
        frame.losses = losses
        feedback = FeedbackPacket(tau, losses)
        ghat = meta_gradient(dec, frame, cfg,
                             adapted=adapted if cfg.adapt_steps == 1 else None)
        new_theta = meta_update(dec.params, ghat, cfg.kappa)
        if tx.trainable:
            tx = replace(tx, enc=encoder_update(tx.enc, frame, feedback, cfg))
        dec = link.with_params(dec, new_theta)
        history.append((tau, float(losses.mean())))
        if on_frame is not None:
            on_frame(tau, tx, dec)
    return tx, dec, history


def run_joint_training(cfg: TrainConfig, rng=None, transmitter=None, decoder=None,
                       on_frame: Callable | None = None, train_decoder: bool = True):
    """Joint baseline: one shared decoder trained by direct SGD on every frame,
    no inner adaptation; the encoder sees losses from this shared decoder."""
    rng = rng if rng is not None else np.random.default_rng(cfg.seed)
    tx = transmitter if transmitter is not None else NeuralTransmitter(
        link.init_encoder(cfg.k, cfg.n, rng, es=cfg.es, sigma=cfg.sigma))
    dec = decoder if decoder is not None else link.init_decoder(cfg.k, cfg.n, cfg.L, rng)
    state = _initial_channel(cfg, rng)
    history = []
    if on_frame is not None:
        on_frame(0, tx, dec)
    for tau in range(1, cfg.frames + 1):
        frame, state = _simulate_frame(tx, state, cfg, rng, tau)
        if train_decoder:
            params = adapt_decoder(dec, frame.blocks, cfg.kappa, steps=1, frame_len=cfg.T)
            dec = link.with_params(dec, params)
        losses = frame_losses(dec, frame)
        frame.losses = losses
        feedback = FeedbackPacket(tau, losses)
        if tx.trainable:
            tx = replace(tx, enc=encoder_update(tx.enc, frame, feedback, cfg))
        history.append((tau, float(losses.mean())))
        if on_frame is not None:
            on_frame(tau, tx, dec)
    return tx, dec, history


def write_history_csv(path, history, scheme: str) -> None:
    """Append per-frame mean losses as ``tau,mean_loss,scheme`` rows."""
    import csv
    import os

    new = not os.path.exists(path) or os.path.getsize(path) == 0
    with open(path, "a", newline="") as fh:
        w = csv.writer(fh)
        if new:
            w.writerow(["tau", "mean_loss", "scheme"])
        for tau, loss in history:
            w.writerow([tau, repr(loss), scheme])
