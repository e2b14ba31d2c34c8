"""Harness contracts: config parsing, the BLER protocol's documented outcomes,
sweep cardinality and determinism, and the test-phase feedback lockout."""

import inspect
from dataclasses import replace

import numpy as np
import pytest

from metalink import baselines as bl
from metalink import channel as ch
from metalink import config as cf
from metalink import evaluation as ev
from metalink import experiment as ex
from metalink import link, training as tr
from metalink.cli import entry


BASE_CFG = """
scheme = hybrid_meta
k = 2
n = 2
L = 2
T = 4
T_U = 2
rho = 0.9
es_n0_db = 10.0
frames = 8
seed = 5
test_pilots = 2
test_frames = 5
payload_blocks = 50
runs = 2
"""


def experiment_cfg(extra="", base=BASE_CFG):
    return cf.build_experiment(cf.parse_config_text(base + extra))


# --- config parsing -------------------------------------------------------------


def test_unknown_key_is_named():
    with pytest.raises(cf.ConfigError, match="mystery_knob"):
        cf.parse_config_text(BASE_CFG + "mystery_knob = 3\n")


def test_duplicate_and_missing_keys():
    with pytest.raises(cf.ConfigError, match="duplicate"):
        cf.parse_config_text(BASE_CFG + "k = 3\n")
    with pytest.raises(cf.ConfigError, match="scheme"):
        cf.parse_config_text("k = 2\n")


def test_bad_values_and_schemes():
    with pytest.raises(cf.ConfigError, match="bad value"):
        cf.parse_config_text(BASE_CFG + "first_order = maybe\n")
    with pytest.raises(cf.ConfigError, match="unknown scheme"):
        experiment_cfg(base=BASE_CFG.replace("hybrid_meta", "psk_weird"))


def test_bpsk_schemes_require_square_rate():
    bad = BASE_CFG.replace("scheme = hybrid_meta", "scheme = bpsk_ml_mmse").replace("n = 2", "n = 3")
    with pytest.raises(cf.ConfigError, match="k == n"):
        cf.build_experiment(cf.parse_config_text(bad))


def test_pilot_bounds_checked():
    with pytest.raises(cf.ConfigError, match="test_pilots"):
        experiment_cfg(base=BASE_CFG.replace("test_pilots = 2", "test_pilots = 5"))
    with pytest.raises(cf.ConfigError, match="sweep"):
        experiment_cfg("sweep_axis = P\n")
    with pytest.raises(cf.ConfigError, match="P sweep"):
        experiment_cfg("sweep_axis = P\nsweep_values = 1,9\n")


def test_comments_and_whitespace_tolerated():
    cfg = experiment_cfg("# trailing comment\n\n  \n")
    assert cfg.scheme == "hybrid_meta"
    assert cfg.train.T == 4


# --- BLER protocol ---------------------------------------------------------------


class OracleReceiver:
    """Replays the transmitted message stream (test-only shared-queue trick)."""

    def __init__(self, queue):
        self.queue = queue

    def prepare(self, pilots, rng):
        del self.queue[:len(pilots)]
        return None

    def decode_many(self, state, ys):
        out = self.queue[:len(ys)]
        del self.queue[:len(ys)]
        return np.array(out)


class RecordingTransmitter:
    def __init__(self, inner, queue):
        self.inner = inner
        self.queue = queue

    def encode(self, m):
        self.queue.append(m)
        return self.inner.encode(m)


class RandomGuessReceiver:
    def __init__(self, k, seed):
        self.k = k
        self.rng = np.random.default_rng(seed)

    def prepare(self, pilots, rng):
        return None

    def decode_many(self, state, ys):
        return self.rng.integers(1, 2 ** self.k + 1, size=len(ys))


def test_oracle_receiver_gives_zero_bler():
    queue = []
    tx = RecordingTransmitter(tr.BpskTransmitter(2, 2), queue)
    bler = ev.run_bler_trial(tx, OracleReceiver(queue), k=2, L=1, n0=0.1, es=1.0,
                             pilots=2, payload_blocks=200, test_frames=10, seed=0)
    assert bler == 0.0


def test_random_guess_bler_matches_uniform_guessing():
    k = n = 8
    tx = tr.BpskTransmitter(k, n)
    blocks = 10_000
    bler = ev.run_bler_trial(tx, RandomGuessReceiver(k, 3), k=k, L=1, n0=0.1, es=1.0,
                             pilots=1, payload_blocks=blocks, test_frames=10, seed=1)
    want = 1.0 - 2.0 ** -8
    se = np.sqrt(want * (1 - want) / blocks)
    assert abs(bler - want) <= 3 * se


class TrueChannelMlReceiver:
    def __init__(self, taps, codebook):
        self.taps = taps
        self.codebook = codebook

    def prepare(self, pilots, rng):
        return self.taps

    def decode_many(self, h, ys):
        return bl.ml_decode_batch(h, np.stack(ys), self.codebook)


def test_bpsk_ml_true_channel_matches_analytic():
    k = n = 8
    es_n0_db = 10.0
    taps = np.array([1.0 + 0j])
    receiver = TrueChannelMlReceiver(taps, bl.bpsk_codebook(k, n))
    blocks = 200_000
    bler = ev.run_bler_trial(
        tr.BpskTransmitter(k, n), receiver, k=k, L=1,
        n0=ch.snr_to_n0(es_n0_db, 1.0), es=1.0, pilots=1,
        payload_blocks=blocks, test_frames=20, seed=2,
        draw_taps=lambda rng: taps)
    want = bl.bpsk_analytic_bler(es_n0_db, k)
    se = np.sqrt(want * (1 - want) / blocks)
    assert abs(bler - want) <= 3 * se + 1e-9


def test_two_disjoint_seed_sets_agree():
    cfg = experiment_cfg()
    rng = np.random.default_rng(11)
    dec = link.init_decoder(2, 2, 2, rng)
    tx = tr.NeuralTransmitter(link.init_encoder(2, 2, rng, sigma=0.0), trainable=False)
    recv = ev.NeuralAdaptReceiver(dec, eta=0.1, steps=1, frame_len=4)
    kw = dict(k=2, L=2, n0=cfg.train.n0, es=1.0, pilots=2,
              payload_blocks=200, test_frames=5)

    def measure(seed):
        return ev.run_bler_trial(tx, recv, seed=seed, **kw)

    # payload blocks within a frame share one fading draw, so the standard
    # error comes from the spread across independent trials, not block counts
    a = np.array([measure(s) for s in range(100, 120)])
    b = np.array([measure(s) for s in range(200, 220)])
    se = np.sqrt(a.var(ddof=1) / a.size + b.var(ddof=1) / b.size)
    assert abs(a.mean() - b.mean()) <= 3 * se + 1e-12


def test_pilotless_evaluation_rejected():
    tx = tr.BpskTransmitter(2, 2)
    with pytest.raises(ValueError):
        ev.run_bler_trial(tx, RandomGuessReceiver(2, 0), k=2, L=1, n0=0.1, es=1.0,
                          pilots=0, payload_blocks=10, test_frames=2, seed=0)


def test_missing_decoder_checkpoint_rejected():
    cfg = experiment_cfg()
    with pytest.raises(ValueError, match="decoder"):
        ev.evaluate_bler(cfg, ev.TrainedLink(tr.BpskTransmitter(2, 2), None))


def test_evaluate_bler_aggregates_runs():
    cfg = experiment_cfg(base=BASE_CFG.replace("hybrid_meta", "bpsk_ml_mmse"))
    record = ev.evaluate_bler(cfg, ev.TrainedLink(tr.BpskTransmitter(2, 2)))
    assert record.scheme == "bpsk_ml_mmse"
    assert 0.0 <= record.bler <= 1.0 and record.std >= 0.0
    again = ev.evaluate_bler(cfg, ev.TrainedLink(tr.BpskTransmitter(2, 2)))
    assert record == again


# --- feedback lockout ---------------------------------------------------------------


def test_evaluation_module_never_names_the_feedback_type():
    source = inspect.getsource(ev)
    assert "FeedbackPacket" not in source


def test_feedback_guard_active_during_evaluation():
    class SneakyReceiver:
        def prepare(self, pilots, rng):
            return tr.FeedbackPacket(1, np.zeros(len(pilots)))

        def decode_many(self, state, ys):
            return np.ones(len(ys), dtype=int)

    with pytest.raises(RuntimeError, match="feedback"):
        ev.run_bler_trial(tr.BpskTransmitter(2, 2), SneakyReceiver(), k=2, L=1,
                          n0=0.1, es=1.0, pilots=1, payload_blocks=10,
                          test_frames=2, seed=0)


# --- experiment sweeps ----------------------------------------------------------------


def small_sweep_cfg(tmp_path, scheme="bpsk_ml_mmse"):
    text = BASE_CFG.replace("hybrid_meta", scheme) + "sweep_axis = P\nsweep_values = 1,2,4\n"
    text = text.replace("payload_blocks = 50", "payload_blocks = 30")
    path = tmp_path / "exp.cfg"
    path.write_text(text)
    return path


def test_sweep_row_cardinality(tmp_path):
    cfg = cf.load_experiment(small_sweep_cfg(tmp_path))
    cfg = replace(cfg, sweep=cf.Sweep("P", (1, 2, 4, 8 // 2)))
    rows = ex.run_experiment(cfg, tmp_path / "out")
    # 4 sweep points x 2 runs
    assert len(rows) == 8
    csv_lines = (tmp_path / "out" / "results.csv").read_text().strip().splitlines()
    assert csv_lines[0] == "scheme,P,rho,train_frames,run_seed,bler,std"
    assert len(csv_lines) == 9


def test_sweep_rerun_is_bit_identical(tmp_path):
    cfg = cf.load_experiment(small_sweep_cfg(tmp_path))
    ex.run_experiment(cfg, tmp_path / "a")
    ex.run_experiment(cfg, tmp_path / "b")
    assert (tmp_path / "a" / "results.csv").read_bytes() == \
        (tmp_path / "b" / "results.csv").read_bytes()


def test_results_csv_append_only_header_stable(tmp_path):
    path = tmp_path / "results.csv"
    row = ev.BlerRecord("bpsk_ml_mmse", 1, 0.5, 0, 0.25, 0.01, 42)
    ex.write_results_csv(path, [row])
    ex.write_results_csv(path, [row])
    lines = path.read_text().strip().splitlines()
    assert lines[0] == "scheme,P,rho,train_frames,run_seed,bler,std"
    assert len(lines) == 3 and lines[1] == lines[2]


def test_frames_sweep_uses_checkpoints(tmp_path):
    text = BASE_CFG + "sweep_axis = frames\nsweep_values = 0,4,8\n"
    text = text.replace("runs = 2", "runs = 1").replace("payload_blocks = 50",
                                                        "payload_blocks = 20")
    cfg = cf.build_experiment(cf.parse_config_text(text))
    rows = ex.run_experiment(cfg, tmp_path / "out")
    assert [r.train_frames for r in rows] == [0, 4, 8]
    assert all(r.scheme == "hybrid_meta" for r in rows)


def test_manifest_records_config_and_seeds(tmp_path):
    import json
    cfg = cf.load_experiment(small_sweep_cfg(tmp_path))
    ex.run_experiment(cfg, tmp_path / "out")
    manifest = json.loads((tmp_path / "out" / "manifest.json").read_text())
    assert manifest["config"]["scheme"] == "bpsk_ml_mmse"
    assert len(manifest["run_seeds"]) == 2
    assert manifest["results_header"] == list(ex.RESULTS_HEADER)


def test_interrupt_flushes_partial_rows(tmp_path, monkeypatch):
    cfg = cf.load_experiment(small_sweep_cfg(tmp_path))
    real = ex.run_single
    calls = {"n": 0}

    def flaky(cfg_, run_index):
        if calls["n"] >= 1:
            raise KeyboardInterrupt
        calls["n"] += 1
        return real(cfg_, run_index)

    monkeypatch.setattr(ex, "run_single", flaky)
    with pytest.raises(KeyboardInterrupt):
        ex.run_experiment(cfg, tmp_path / "out")
    lines = (tmp_path / "out" / "results.csv").read_text().strip().splitlines()
    assert len(lines) == 4          # header + the three points of run 0


def test_concurrent_evaluation_threads_are_isolated():
    # distinct graphs over shared read-only parameters, per the concurrency model
    from concurrent.futures import ThreadPoolExecutor

    rng = np.random.default_rng(31)
    dec = link.init_decoder(2, 2, 1, rng)
    tx = tr.NeuralTransmitter(link.init_encoder(2, 2, rng, sigma=0.0), trainable=False)
    recv = ev.NeuralAdaptReceiver(dec, eta=0.1, steps=1, frame_len=4)
    kw = dict(k=2, L=1, n0=0.1, es=1.0, pilots=2, payload_blocks=120, test_frames=4)

    def task(seed):
        return ev.run_bler_trial(tx, recv, seed=seed, **kw)

    serial = [task(s) for s in range(6)]
    with ThreadPoolExecutor(max_workers=3) as pool:
        threaded = list(pool.map(task, range(6)))
    assert serial == threaded


def test_parallel_matches_serial(tmp_path):
    cfg = cf.load_experiment(small_sweep_cfg(tmp_path))
    ex.run_experiment(cfg, tmp_path / "serial", threads=1)
    ex.run_experiment(cfg, tmp_path / "parallel", threads=2)
    assert (tmp_path / "serial" / "results.csv").read_bytes() == \
        (tmp_path / "parallel" / "results.csv").read_bytes()


# --- checkpoint round trip through the experiment layer ---------------------------------


def test_save_load_trained_round_trip(tmp_path):
    cfg = experiment_cfg()
    rng = np.random.default_rng(12)
    enc = link.init_encoder(2, 2, rng, sigma=0.15)
    dec = link.init_decoder(2, 2, 2, rng)
    models = ev.TrainedLink(tr.NeuralTransmitter(enc), dec)
    path = tmp_path / "checkpoint.bin"
    ex.save_trained(path, models)
    loaded = ex.load_trained(path, cfg)
    assert np.array_equal(loaded.decoder.params.values, dec.params.values)
    assert np.array_equal(loaded.transmitter.enc.params.values, enc.params.values)
    assert loaded.transmitter.enc.sigma == 0.0     # deterministic at test time
    with pytest.raises(FileNotFoundError):
        ex.load_trained(tmp_path / "nope.bin", cfg)


# --- CLI exit codes -----------------------------------------------------------------------


def test_cli_exit_codes(tmp_path):
    bad = tmp_path / "bad.cfg"
    bad.write_text(BASE_CFG + "mystery = 1\n")
    assert entry(["sweep", "--config", str(bad), "--out-dir", str(tmp_path / "o")]) == 2

    good = tmp_path / "good.cfg"
    good.write_text(BASE_CFG)
    # eval of a trained scheme without a checkpoint is a config error
    assert entry(["eval", "--config", str(good), "--out-dir", str(tmp_path / "o2")]) == 2


def test_cli_sweep_runs(tmp_path):
    path = small_sweep_cfg(tmp_path)
    code = entry(["sweep", "--config", str(path), "--out-dir", str(tmp_path / "out")])
    assert code == 0
    assert (tmp_path / "out" / "results.csv").exists()
