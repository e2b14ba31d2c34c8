"""Flat key=value experiment configs with a typed schema.

Unknown keys are hard errors naming the key; '#' starts a comment. Lists are
comma-separated. Booleans accept true/false/1/0.
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict

from .training import TrainConfig

SCHEMES = (
    "hybrid_meta",
    "joint_ae",
    "bpsk_ml_mmse",
    "bpsk_neural_scratch",
    "bpsk_neural_joint",
    "bpsk_neural_meta",
)

TRAINED_SCHEMES = ("hybrid_meta", "joint_ae", "bpsk_neural_joint", "bpsk_neural_meta")
BPSK_SCHEMES = ("bpsk_ml_mmse", "bpsk_neural_scratch", "bpsk_neural_joint", "bpsk_neural_meta")
META_SCHEMES = ("hybrid_meta", "bpsk_neural_meta")

SWEEP_AXES = ("P", "frames", "rho")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class TestConfig:
    pilots: int = 8
    payload_blocks: int = 10000
    test_frames: int = 500
    eta_meta: float = 0.1
    eta_nonmeta: float = 0.001
    adapt_steps: int = 1
    scratch_steps: int = 200
    runs: int = 5


@dataclass(frozen=True)
class Sweep:
    axis: str | None = None
    values: tuple = ()


@dataclass(frozen=True)
class ExperimentConfig:
    scheme: str
    train: TrainConfig
    test: TestConfig
    sweep: Sweep = field(default_factory=Sweep)


def _parse_bool(s: str) -> bool:
    t = s.strip().lower()
    if t in ("true", "1", "yes"):
        return True
    if t in ("false", "0", "no"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _parse_int_list(s: str) -> tuple[int, ...]:
    return tuple(int(v.strip()) for v in s.split(",") if v.strip())


def _parse_float_list(s: str) -> tuple[float, ...]:
    return tuple(float(v.strip()) for v in s.split(",") if v.strip())


_SCHEMA: dict[str, tuple] = {
    # (caster, default); Ellipsis marks a required key
    "scheme": (str, ...),
    "k": (int, ...),
    "n": (int, ...),
    "L": (int, ...),
    "T": (int, ...),
    "T_U": (int, ...),
    "rho": (float, ...),
    "es_n0_db": (float, ...),
    "es": (float, 1.0),
    "kappa": (float, 0.01),
    "eta": (float, 0.1),
    "sigma": (float, 0.15),
    "frames": (int, 0),
    "adapt_steps": (int, 1),
    "first_order": (_parse_bool, False),
    "seed": (int, 0),
    "normalize_by_pilot_count": (_parse_bool, False),
    "test_pilots": (int, 8),
    "test_frames": (int, 500),
    "payload_blocks": (int, 10000),
    "test_eta_meta": (float, 0.1),
    "test_eta_nonmeta": (float, 0.001),
    "test_adapt_steps": (int, 1),
    "scratch_steps": (int, 200),
    "runs": (int, 5),
    "sweep_axis": (str, ""),
    "sweep_values": (str, ""),
}


def parse_config_text(text: str) -> dict:
    raw: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, value = (part.strip() for part in stripped.split("=", 1))
        if key not in _SCHEMA:
            raise ConfigError(f"unknown config key: {key!r}")
        if key in raw:
            raise ConfigError(f"duplicate config key: {key!r}")
        raw[key] = value

    out: dict = {}
    for key, (caster, default) in _SCHEMA.items():
        if key in raw:
            try:
                out[key] = caster(raw[key])
            except ValueError as exc:
                raise ConfigError(f"bad value for {key!r}: {exc}") from exc
        elif default is ...:
            raise ConfigError(f"missing required config key: {key!r}")
        else:
            out[key] = default
    return out


def build_experiment(values: dict) -> ExperimentConfig:
    scheme = values["scheme"]
    if scheme not in SCHEMES:
        raise ConfigError(f"unknown scheme: {scheme!r}; pick one of {SCHEMES}")
    if scheme in BPSK_SCHEMES and values["k"] != values["n"]:
        raise ConfigError(f"scheme {scheme!r} needs k == n for the BPSK mapping")

    try:
        train = TrainConfig(
            k=values["k"], n=values["n"], L=values["L"], T=values["T"], T_U=values["T_U"],
            rho=values["rho"], es_n0_db=values["es_n0_db"], kappa=values["kappa"],
            eta=values["eta"], sigma=values["sigma"], frames=values["frames"],
            adapt_steps=values["adapt_steps"], first_order=values["first_order"],
            seed=values["seed"], es=values["es"],
            normalize_by_pilot_count=values["normalize_by_pilot_count"],
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc

    test = TestConfig(
        pilots=values["test_pilots"], payload_blocks=values["payload_blocks"],
        test_frames=values["test_frames"], eta_meta=values["test_eta_meta"],
        eta_nonmeta=values["test_eta_nonmeta"], adapt_steps=values["test_adapt_steps"],
        scratch_steps=values["scratch_steps"], runs=values["runs"],
    )
    if test.pilots < 1 or test.pilots > 2 ** train.k:
        raise ConfigError(f"test_pilots must lie in [1, {2 ** train.k}]")
    if test.payload_blocks < 1 or test.test_frames < 1 or test.runs < 1:
        raise ConfigError("payload_blocks, test_frames and runs must be positive")

    axis = values["sweep_axis"].strip()
    if axis and axis not in SWEEP_AXES:
        raise ConfigError(f"sweep_axis must be one of {SWEEP_AXES}, got {axis!r}")
    if axis:
        if not values["sweep_values"].strip():
            raise ConfigError("sweep_axis set but sweep_values empty")
        if axis == "rho":
            sweep_values = _parse_float_list(values["sweep_values"])
            if any(not 0.0 <= v <= 1.0 for v in sweep_values):
                raise ConfigError("rho sweep values must lie in [0, 1]")
        else:
            sweep_values = tuple(_parse_int_list(values["sweep_values"]))
            if axis == "P" and any(not 1 <= v <= 2 ** train.k for v in sweep_values):
                raise ConfigError(f"P sweep values must lie in [1, {2 ** train.k}]")
            if axis == "frames" and any(not 0 <= v <= train.frames for v in sweep_values):
                raise ConfigError("frames sweep values must lie in [0, frames]")
        sweep = Sweep(axis, sweep_values)
    else:
        sweep = Sweep()
    return ExperimentConfig(scheme=scheme, train=train, test=test, sweep=sweep)


def load_experiment(path) -> ExperimentConfig:
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return build_experiment(parse_config_text(text))


def resolved_dict(cfg: ExperimentConfig) -> dict:
    return {
        "scheme": cfg.scheme,
        "train": asdict(cfg.train),
        "test": asdict(cfg.test),
        "sweep": {"axis": cfg.sweep.axis, "values": list(cfg.sweep.values)},
    }
