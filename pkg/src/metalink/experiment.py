"""Experiment driver: trains schemes as needed, sweeps the requested axis
(P / frames / rho), and writes ``results.csv`` plus a JSON run manifest.

``results.csv`` carries one row per sweep point per run with the header
``scheme,P,rho,train_frames,run_seed,bler,std``; ``std`` on a per-run row is
the binomial Monte-Carlo standard error of that run's estimate (across-run
spread is left to the plotting tool).
"""

from __future__ import annotations

import csv
import json
import os
import subprocess
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace

import numpy as np

from . import link
from .config import ExperimentConfig, resolved_dict
from .evaluation import BlerRecord, TrainedLink, make_receiver, run_bler_trial
from .training import (
    BpskTransmitter,
    NeuralTransmitter,
    run_joint_training,
    run_meta_training,
)

RESULTS_HEADER = ("scheme", "P", "rho", "train_frames", "run_seed", "bler", "std")


def run_seed_for(base_seed: int, run_index: int) -> int:
    return int(np.random.SeedSequence((base_seed, run_index)).generate_state(1)[0])


def train_scheme(cfg: ExperimentConfig, seed: int, on_frame=None):
    """Train (or just assemble) the scheme's link; returns (TrainedLink, history)."""
    tcfg = replace(cfg.train, seed=seed)
    rng = np.random.default_rng(seed)
    scheme = cfg.scheme
    if scheme == "hybrid_meta":
        tx, dec, hist = run_meta_training(tcfg, rng=rng, on_frame=on_frame)
    elif scheme == "joint_ae":
        tx, dec, hist = run_joint_training(tcfg, rng=rng, on_frame=on_frame)
    elif scheme == "bpsk_neural_meta":
        tx = BpskTransmitter(tcfg.k, tcfg.n, tcfg.es)
        tx, dec, hist = run_meta_training(tcfg, rng=rng, transmitter=tx, on_frame=on_frame)
    elif scheme == "bpsk_neural_joint":
        tx = BpskTransmitter(tcfg.k, tcfg.n, tcfg.es)
        tx, dec, hist = run_joint_training(tcfg, rng=rng, transmitter=tx, on_frame=on_frame)
    elif scheme in ("bpsk_ml_mmse", "bpsk_neural_scratch"):
        return TrainedLink(BpskTransmitter(tcfg.k, tcfg.n, tcfg.es)), []
    else:
        raise ValueError(f"unknown scheme {scheme!r}")
    return TrainedLink(tx, dec), hist


def _record(cfg: ExperimentConfig, run_seed: int, models: TrainedLink,
            pilots: int, rho: float, train_frames: int) -> BlerRecord:
    receiver = make_receiver(cfg, models)
    bler = run_bler_trial(
        models.transmitter, receiver, k=cfg.train.k, L=cfg.train.L,
        n0=cfg.train.n0, es=cfg.train.es, pilots=pilots,
        payload_blocks=cfg.test.payload_blocks, test_frames=cfg.test.test_frames,
        seed=np.random.SeedSequence((run_seed, 1)))
    mc_std = float(np.sqrt(bler * (1.0 - bler) / cfg.test.payload_blocks))
    return BlerRecord(cfg.scheme, pilots, rho, train_frames, bler, mc_std, run_seed)


def run_single(cfg: ExperimentConfig, run_index: int) -> list[BlerRecord]:
    """All sweep points for one independent run (training shared where valid)."""
    seed = run_seed_for(cfg.train.seed, run_index)
    axis = cfg.sweep.axis
    rows: list[BlerRecord] = []
    if axis == "rho":
        for value in cfg.sweep.values:
            vcfg = replace(cfg, train=replace(cfg.train, rho=float(value)))
            models, _ = train_scheme(vcfg, seed)
            rows.append(_record(vcfg, seed, models, cfg.test.pilots, float(value),
                                cfg.train.frames))
        return rows
    if axis == "frames":
        marks = sorted(set(int(v) for v in cfg.sweep.values))
        snapshots: dict[int, TrainedLink] = {}

        def on_frame(tau, tx, dec):
            if tau in marks:
                snapshots[tau] = TrainedLink(tx, dec)

        models, _ = train_scheme(cfg, seed, on_frame=on_frame)
        for value in marks:
            snap = snapshots.get(value, models)
            rows.append(_record(cfg, seed, snap, cfg.test.pilots, cfg.train.rho, value))
        return rows
    models, _ = train_scheme(cfg, seed)
    values = cfg.sweep.values if axis == "P" else (cfg.test.pilots,)
    for value in values:
        rows.append(_record(cfg, seed, models, int(value), cfg.train.rho,
                            cfg.train.frames))
    return rows


def _sort_key(r: BlerRecord):
    return (r.scheme, r.P, r.rho, r.train_frames, r.seed)


def write_results_csv(path, rows: list[BlerRecord]) -> None:
    """Create-or-append; the header is written once and never changes."""
    exists = os.path.exists(path) and os.path.getsize(path) > 0
    with open(path, "a", newline="") as fh:
        w = csv.writer(fh)
        if not exists:
            w.writerow(RESULTS_HEADER)
        for r in sorted(rows, key=_sort_key):
            w.writerow([r.scheme, r.P, repr(r.rho), r.train_frames, r.seed,
                        repr(r.bler), repr(r.std)])


def git_describe() -> str:
    try:
        out = subprocess.run(["git", "describe", "--always", "--dirty"],
                             capture_output=True, text=True, timeout=10)
        return out.stdout.strip() or "unknown"
    except OSError:
        return "unknown"


def write_manifest(path, cfg: ExperimentConfig, seeds: list[int]) -> None:
    manifest = {
        "config": resolved_dict(cfg),
        "run_seeds": seeds,
        "results_header": list(RESULTS_HEADER),
        "git": git_describe(),
    }
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def run_experiment(cfg: ExperimentConfig, out_dir, threads: int = 1) -> list[BlerRecord]:
    """Execute the configured sweep; flushes whatever finished on interrupt."""
    os.makedirs(out_dir, exist_ok=True)
    seeds = [run_seed_for(cfg.train.seed, r) for r in range(cfg.test.runs)]
    write_manifest(os.path.join(out_dir, "manifest.json"), cfg, seeds)
    rows: list[BlerRecord] = []
    try:
        if threads > 1:
            with ProcessPoolExecutor(max_workers=threads) as pool:
                for chunk in pool.map(run_single, [cfg] * cfg.test.runs,
                                      range(cfg.test.runs)):
                    rows.extend(chunk)
        else:
            for r in range(cfg.test.runs):
                rows.extend(run_single(cfg, r))
    finally:
        write_results_csv(os.path.join(out_dir, "results.csv"), rows)
    return sorted(rows, key=_sort_key)


def save_trained(path, models: TrainedLink) -> None:
    vectors = {}
    if isinstance(models.transmitter, NeuralTransmitter):
        vectors["encoder"] = models.transmitter.enc.params
    if models.decoder is not None:
        vectors["decoder"] = models.decoder.params
    link.save_checkpoint(path, vectors)


def load_trained(path, cfg: ExperimentConfig) -> TrainedLink:
    if not os.path.exists(path):
        raise FileNotFoundError(f"missing checkpoint: {path}")
    vectors = link.load_checkpoint(path)
    t = cfg.train
    if "encoder" in vectors:
        enc = link.EncoderModel(vectors["encoder"], k=t.k, n=t.n, es=t.es, sigma=0.0)
        tx = NeuralTransmitter(enc)
    else:
        tx = BpskTransmitter(t.k, t.n, t.es)
    dec = None
    if "decoder" in vectors:
        dec = link.DecoderModel(vectors["decoder"], k=t.k, n=t.n, L=t.L)
    return TrainedLink(tx, dec)
