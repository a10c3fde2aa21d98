"""Typed INI configuration for experiments.

One flat key-value file with a section per module; every key has a default
and unknown sections or keys are rejected, so a config file plus a seed
fully pins an experiment.  ``default_config_text()`` prints the whole
schema with defaults (the CLI exposes it as --print-config).
"""

from __future__ import annotations

import configparser
import io
from dataclasses import dataclass, field, fields
from pathlib import Path

from .abrn import A3cConfig
from .media import EncoderConfig, FluctuationParams, QualityModel
from .cbpn import CbpnConfig, CbpnTrainConfig
from .rewards import RewardParams

MODES = ("simulate", "train-cbpn", "train-abrn", "evaluate", "compare", "gen-traces")


class ConfigError(ValueError):
    """Invalid experiment configuration."""


@dataclass
class CorpusConfig:
    n_traces: int = 30
    trace_duration_s: float = 120.0
    n_videos: int = 57
    video_duration_s: float = 120.0
    trace_test_fraction: float = 0.2
    video_test_count: int = 10
    mean_bw_low_kbps: float = 1500.0
    mean_bw_high_kbps: float = 6500.0
    cov_low: float = 0.05
    cov_high: float = 0.45


@dataclass
class CbpnTrainSection:
    window: int = 4
    coverage: float = 0.85
    epochs_baseline: int = 20
    epochs_error: int = 30
    batch_size: int = 32
    lr: float = 1e-3
    sessions_per_video: int = 2
    val_fraction: float = 0.1


@dataclass
class A3cSection:
    workers: int = 1
    discount: float = 0.99
    entropy_weight: float = 0.01
    entropy_floor: float = 0.0
    n_step: int = 5
    updates: int = 3000
    lr: float = 1e-3
    actor_lr_scale: float = 0.1
    grad_clip: float = 40.0
    episode_duration_s: int = 60
    explore_starts: bool = True  # random initial bitrate per training episode


@dataclass
class LinkSection:
    base_owd_s: float = 0.025
    queue_capacity_bytes: float = 0.0  # 0 -> auto: 150% of 1 s at mean bandwidth
    tick_s: float = 0.010
    random_loss: float = 0.0


@dataclass
class ExperimentConfig:
    mode: str = "compare"
    out_dir: str = "results"
    data_dir: str = "data"
    seed: int = 1
    duration_s: int = 60
    policies: str = "gcc,fixed:4000,oracle"
    anchor: str = "gcc"
    policy: str = "gcc"
    ablation: str = "full"
    split: str = "test"  # train | test | all
    cbpn_checkpoint: str = ""
    actor_checkpoint: str = ""
    trace: str = ""  # explicit trace csv (simulate mode)
    video: str = ""  # explicit video csv (simulate mode)
    initial_bitrate_kbps: float = 300.0

    link: LinkSection = field(default_factory=LinkSection)
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    quality: QualityModel = field(default_factory=QualityModel)
    reward: RewardParams = field(default_factory=RewardParams)
    corpus: CorpusConfig = field(default_factory=CorpusConfig)
    cbpn: CbpnTrainSection = field(default_factory=CbpnTrainSection)
    a3c: A3cSection = field(default_factory=A3cSection)

    def validate(self):
        if self.mode not in MODES:
            raise ConfigError(f"unknown mode {self.mode!r}; expected one of {MODES}")
        if self.ablation not in ("full", "s", "c"):
            raise ConfigError(f"unknown ablation {self.ablation!r}")
        if self.split not in ("train", "test", "all"):
            raise ConfigError(f"unknown split {self.split!r}")
        if self.seed < 0:
            raise ConfigError("seed must be >= 0")
        if self.duration_s < 1:
            raise ConfigError("duration_s must be >= 1")

    def cbpn_config(self) -> CbpnConfig:
        return CbpnConfig(
            window=self.cbpn.window,
            si_max=self.quality.si_max,
            ti_max=self.quality.ti_max,
            coverage=self.cbpn.coverage,
        )

    def a3c_config(self) -> A3cConfig:
        return A3cConfig(
            workers=self.a3c.workers,
            discount=self.a3c.discount,
            entropy_weight=self.a3c.entropy_weight,
            entropy_floor=self.a3c.entropy_floor,
            n_step=self.a3c.n_step,
            updates=self.a3c.updates,
            lr=self.a3c.lr,
            actor_lr_scale=self.a3c.actor_lr_scale,
            grad_clip=self.a3c.grad_clip,
            seed=self.seed,
        )


# section name -> (attribute on ExperimentConfig, key -> field path)
_TOP_KEYS = {
    "mode": str,
    "out_dir": str,
    "data_dir": str,
    "seed": int,
    "duration_s": int,
    "policies": str,
    "anchor": str,
    "policy": str,
    "ablation": str,
    "split": str,
    "cbpn_checkpoint": str,
    "actor_checkpoint": str,
    "trace": str,
    "video": str,
    "initial_bitrate_kbps": float,
}

_ENCODER_KEYS = {
    "fps": int,
    "gop_frames": int,
    "vbv_multiplier": float,
    "min_bitrate": float,
    "max_bitrate": float,
    "iframe_weight": float,
    "phi": float,
    "sigma": float,
    "beta_ti": float,
    "rate_lag": bool,
    "ti_max": float,
}

_QUALITY_KEYS = {"theta0_kbps": float, "si_max": float, "ti_max": float}
_REWARD_KEYS = {"alpha": float, "lambda": float, "gamma": float, "delta": float}


def _parse_bool(raw: str) -> bool:
    v = raw.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"expected a boolean, got {raw!r}")


def _coerce(caster, raw: str, where: str):
    try:
        if caster is bool:
            return _parse_bool(raw)
        return caster(raw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: cannot parse {raw!r}") from exc


def _apply_section(obj, keys: dict, parser, section: str):
    if not parser.has_section(section):
        return obj
    updates = {}
    for key, raw in parser.items(section):
        if key not in keys:
            raise ConfigError(f"[{section}] unknown key {key!r}")
        updates[key] = _coerce(keys[key], raw, f"[{section}] {key}")
    return updates


def load_config(path: str | Path | None) -> ExperimentConfig:
    """Parse an INI file into an ExperimentConfig (defaults when path is None)."""
    cfg = ExperimentConfig()
    if path is None:
        return cfg
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        with open(path, "r", encoding="utf-8") as f:
            parser.read_file(f)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except configparser.Error as exc:
        raise ConfigError(f"malformed config {path}: {exc}") from exc

    known = {"experiment", "link", "encoder", "quality", "reward", "corpus", "cbpn", "a3c"}
    unknown = set(parser.sections()) - known
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")

    for key, raw in parser.items("experiment") if parser.has_section("experiment") else []:
        if key not in _TOP_KEYS:
            raise ConfigError(f"[experiment] unknown key {key!r}")
        setattr(cfg, key, _coerce(_TOP_KEYS[key], raw, f"[experiment] {key}"))

    for section, target in (
        ("link", cfg.link),
        ("corpus", cfg.corpus),
        ("cbpn", cfg.cbpn),
        ("a3c", cfg.a3c),
    ):
        if not parser.has_section(section):
            continue
        valid = {f.name: type(getattr(target, f.name)) for f in fields(target)}
        for key, raw in parser.items(section):
            if key not in valid:
                raise ConfigError(f"[{section}] unknown key {key!r}")
            setattr(target, key, _coerce(valid[key], raw, f"[{section}] {key}"))

    enc = _apply_section(None, _ENCODER_KEYS, parser, "encoder")
    if enc:
        fl_keys = {k: enc.pop(k) for k in ("phi", "sigma", "beta_ti") if k in enc}
        fl = FluctuationParams(
            phi=fl_keys.get("phi", cfg.encoder.fluct.phi),
            sigma=fl_keys.get("sigma", cfg.encoder.fluct.sigma),
            beta_ti=fl_keys.get("beta_ti", cfg.encoder.fluct.beta_ti),
        )
        base = {f.name: getattr(cfg.encoder, f.name) for f in fields(EncoderConfig)}
        base.update(enc)
        base["fluct"] = fl
        cfg.encoder = EncoderConfig(**base)

    q = _apply_section(None, _QUALITY_KEYS, parser, "quality")
    if q:
        base = {f.name: getattr(cfg.quality, f.name) for f in fields(QualityModel)}
        base.update(q)
        cfg.quality = QualityModel(**base)

    r = _apply_section(None, _REWARD_KEYS, parser, "reward")
    if r:
        cfg.reward = RewardParams(
            alpha=r.get("alpha", cfg.reward.alpha),
            lam=r.get("lambda", cfg.reward.lam),
            gamma=r.get("gamma", cfg.reward.gamma),
            delta=r.get("delta", cfg.reward.delta),
        )

    cfg.validate()
    return cfg


def default_config_text() -> str:
    """The full schema, every key at its default value."""
    cfg = ExperimentConfig()
    out = io.StringIO()

    def section(name, pairs):
        out.write(f"[{name}]\n")
        for k, v in pairs:
            if isinstance(v, bool):
                v = "true" if v else "false"
            out.write(f"{k} = {v}\n")
        out.write("\n")

    section("experiment", [(k, getattr(cfg, k)) for k in _TOP_KEYS])
    section("link", [(f.name, getattr(cfg.link, f.name)) for f in fields(cfg.link)])
    enc = cfg.encoder
    section(
        "encoder",
        [
            ("fps", enc.fps),
            ("gop_frames", enc.gop_frames),
            ("vbv_multiplier", enc.vbv_multiplier),
            ("min_bitrate", enc.min_bitrate),
            ("max_bitrate", enc.max_bitrate),
            ("iframe_weight", enc.iframe_weight),
            ("phi", enc.fluct.phi),
            ("sigma", enc.fluct.sigma),
            ("beta_ti", enc.fluct.beta_ti),
            ("rate_lag", enc.rate_lag),
            ("ti_max", enc.ti_max),
        ],
    )
    section(
        "quality", [(k, getattr(cfg.quality, k)) for k in _QUALITY_KEYS]
    )
    section(
        "reward",
        [
            ("alpha", cfg.reward.alpha),
            ("lambda", cfg.reward.lam),
            ("gamma", cfg.reward.gamma),
            ("delta", cfg.reward.delta),
        ],
    )
    section("corpus", [(f.name, getattr(cfg.corpus, f.name)) for f in fields(cfg.corpus)])
    section("cbpn", [(f.name, getattr(cfg.cbpn, f.name)) for f in fields(cfg.cbpn)])
    section("a3c", [(f.name, getattr(cfg.a3c, f.name)) for f in fields(cfg.a3c)])
    return out.getvalue()
