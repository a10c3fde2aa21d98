"""Experiment orchestration: corpora, training runs, evaluation, reports.

All artifacts land under the configured output directory:

* ``gen-traces``   -> ``<data_dir>/traces/*.csv``, ``<data_dir>/videos/*.csv``
  (plus I-frame sidecars) and ``split.json`` with the train/test partition.
* ``train-cbpn``   -> ``cbpn.json`` checkpoint, ``cbpn_curve.csv``,
  ``cbpn_metrics.json``.
* ``train-abrn``   -> ``actor.json``, ``critic.json``, ``abrn_curve.csv``.
* ``simulate``     -> one ``sessions/<id>.csv``, ``summary.json``, plot data.
* ``evaluate`` / ``compare`` -> ``report.csv``, ``summary.json``,
  ``sessions/<id>.csv`` per cell, and ``plots/*.csv``.

Cells of a comparison share per-(trace, video) seeds so every policy faces
identical link and encoder randomness (paired comparison), and each report
number is recomputable from the persisted per-session CSVs.
"""

from __future__ import annotations

import json
import math
import zlib
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import abrn as abrn_mod
from . import cbpn as cbpn_mod
from .baselines import FixedPolicy, GccPolicy, OraclePolicy
from .config import ConfigError, ExperimentConfig
from .media import EncoderConfig, QualityModel
from .netsim import LinkConfig, SessionLog, SessionRunner, run_session
from .traces import (
    ComplexityGenSpec,
    ComplexityTrace,
    NetworkTrace,
    TraceGenSpec,
    generate_synthetic_complexity_trace,
    generate_synthetic_network_trace,
    load_complexity_trace,
    load_network_trace,
    save_complexity_trace,
    save_network_trace,
)

REPORT_COLUMNS = (
    "policy,trace,video,seed,mean_quality,mean_send_kbps,stalling_ratio,"
    "mean_frame_delay_s,mean_reward,session_csv"
)


# ---------------------------------------------------------------------------
# Corpus
# ---------------------------------------------------------------------------


@dataclass
class Corpus:
    traces: dict[str, NetworkTrace]
    videos: dict[str, ComplexityTrace]
    split: dict

    def select(self, kind: str, split: str) -> list[str]:
        if split == "all":
            names = self.split[kind]["train"] + self.split[kind]["test"]
        else:
            names = self.split[kind][split]
        return sorted(names)


def gen_corpus(cfg: ExperimentConfig) -> Path:
    """Write synthetic network and video corpora plus the split manifest."""
    root = Path(cfg.data_dir)
    (root / "traces").mkdir(parents=True, exist_ok=True)
    (root / "videos").mkdir(parents=True, exist_ok=True)
    c = cfg.corpus
    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed))
    models = ("markov-step", "ar1", "square-wave")

    trace_names = []
    for i in range(c.n_traces):
        mean = rng.uniform(c.mean_bw_low_kbps, c.mean_bw_high_kbps)
        cov = rng.uniform(c.cov_low, c.cov_high)
        model = models[i % 2] if i % 5 else "square-wave"
        spec = TraceGenSpec(
            duration_s=c.trace_duration_s,
            mean_bw_kbps=mean,
            std_bw_kbps=cov * mean,
            model=model,
            seed=int(rng.integers(0, 2**31 - 1)),
        )
        name = f"trace_{i:03d}"
        save_network_trace(
            generate_synthetic_network_trace(spec), root / "traces" / f"{name}.csv"
        )
        trace_names.append(name)

    video_names = []
    for i in range(c.n_videos):
        spec = ComplexityGenSpec(
            duration_s=c.video_duration_s,
            seed=int(rng.integers(0, 2**31 - 1)),
            fps=cfg.encoder.fps,
            gop_frames=cfg.encoder.gop_frames,
            si_max=cfg.quality.si_max,
            ti_max=cfg.quality.ti_max,
        )
        name = f"video_{i:03d}"
        save_complexity_trace(
            generate_synthetic_complexity_trace(spec), root / "videos" / f"{name}.csv"
        )
        video_names.append(name)

    t_order = list(trace_names)
    v_order = list(video_names)
    rng.shuffle(t_order)
    rng.shuffle(v_order)
    n_test_traces = max(1, int(round(c.trace_test_fraction * len(t_order))))
    n_test_videos = min(max(1, c.video_test_count), len(v_order) - 1)
    split = {
        "traces": {
            "train": sorted(t_order[n_test_traces:]),
            "test": sorted(t_order[:n_test_traces]),
        },
        "videos": {
            "train": sorted(v_order[n_test_videos:]),
            "test": sorted(v_order[:n_test_videos]),
        },
    }
    (root / "split.json").write_text(
        json.dumps(split, sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )
    return root


def load_corpus(data_dir: str | Path) -> Corpus:
    root = Path(data_dir)
    split_path = root / "split.json"
    if not split_path.exists():
        raise ConfigError(f"no corpus at {root}; run gen-traces first")
    split = json.loads(split_path.read_text(encoding="utf-8"))
    traces = {
        p.stem: load_network_trace(p) for p in sorted((root / "traces").glob("*.csv"))
    }
    videos = {
        p.stem: load_complexity_trace(p)
        for p in sorted((root / "videos").glob("*.csv"))
        if not p.name.endswith(".iframes.csv")
    }
    return Corpus(traces=traces, videos=videos, split=split)


def cell_seed(base_seed: int, trace_name: str, video_name: str) -> int:
    """Stable per-cell seed shared by every policy (paired comparison)."""
    return zlib.crc32(f"{base_seed}:{trace_name}:{video_name}".encode()) & 0x7FFFFFFF


# ---------------------------------------------------------------------------
# Policies
# ---------------------------------------------------------------------------


def _require_checkpoint(path: str, what: str) -> Path:
    if not path:
        raise ConfigError(f"{what} checkpoint path not configured")
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"{what} checkpoint {p} does not exist")
    return p


def make_policy_factory(
    name: str, cfg: ExperimentConfig
) -> Callable[[NetworkTrace, int], object]:
    """Resolve a policy spec into a per-session factory.

    Supported names: ``fixed:<kbps>``, ``oracle[:<safety>]``, ``gcc``,
    ``anableps``, ``anableps-c``, ``anableps-s``.
    """
    name = name.strip()
    if name.startswith("fixed:"):
        kbps = float(name.split(":", 1)[1])
        return lambda trace, seed: FixedPolicy(kbps)
    if name == "oracle" or name.startswith("oracle:"):
        safety = float(name.split(":", 1)[1]) if ":" in name else 0.85
        return lambda trace, seed: OraclePolicy(trace, safety)
    if name == "gcc":
        start = cfg.initial_bitrate_kbps
        return lambda trace, seed: GccPolicy(start_kbps=start)
    if name in ("anableps", "anableps-c", "anableps-s"):
        ablation = {"anableps": "full", "anableps-c": "c", "anableps-s": "s"}[name]
        actor = abrn_mod.build_actor_network()
        actor.load(_require_checkpoint(cfg.actor_checkpoint, "actor"))
        model = None
        if ablation != "s":
            model = cbpn_mod.CbpnModel.load(
                _require_checkpoint(cfg.cbpn_checkpoint, "range predictor")
            )
        return lambda trace, seed: abrn_mod.AnablepsPolicy(
            actor, model, ablation=ablation, mode="argmax", seed=seed
        )
    raise ConfigError(f"unknown policy {name!r}")


def _link_config(cfg: ExperimentConfig, trace: NetworkTrace) -> LinkConfig:
    cap = cfg.link.queue_capacity_bytes
    return LinkConfig(
        trace=trace,
        base_owd_s=cfg.link.base_owd_s,
        queue_capacity_bytes=cap if cap > 0 else None,
        tick_s=cfg.link.tick_s,
        random_loss=cfg.link.random_loss,
    )


def run_cell(
    cfg: ExperimentConfig,
    policy_factory,
    trace: NetworkTrace,
    video: ComplexityTrace,
    seed: int,
) -> SessionLog:
    duration = min(
        cfg.duration_s, int(trace.duration_s), int(video.duration_s)
    )
    policy = policy_factory(trace, seed)
    return run_session(
        policy,
        video,
        _link_config(cfg, trace),
        cfg.encoder,
        cfg.quality,
        duration_s=duration,
        seed=seed,
        reward_params=cfg.reward,
        initial_bitrate_kbps=cfg.initial_bitrate_kbps,
    )


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ReportCell:
    policy: str
    trace: str
    video: str
    seed: int
    mean_quality: float
    mean_send_kbps: float
    stalling_ratio: float
    mean_frame_delay_s: float
    mean_reward: float
    session_csv: str

    @classmethod
    def from_log(
        cls, policy: str, trace: str, video: str, seed: int, log: SessionLog, rel: str
    ) -> "ReportCell":
        s = log.summary()
        return cls(
            policy=policy,
            trace=trace,
            video=video,
            seed=seed,
            mean_quality=s["mean_quality"],
            mean_send_kbps=s["mean_send_kbps"],
            stalling_ratio=s["stalling_ratio"],
            mean_frame_delay_s=s["mean_frame_delay_s"],
            mean_reward=s["mean_reward"],
            session_csv=rel,
        )


_METRICS = (
    "mean_quality",
    "mean_send_kbps",
    "stalling_ratio",
    "mean_frame_delay_s",
    "mean_reward",
)


@dataclass
class ComparisonReport:
    cells: list[ReportCell]
    anchor: str

    def policies(self) -> list[str]:
        seen = []
        for c in self.cells:
            if c.policy not in seen:
                seen.append(c.policy)
        return seen

    def policy_mean(self, policy: str, metric: str) -> float:
        vals = [getattr(c, metric) for c in self.cells if c.policy == policy]
        if not vals:
            raise ValueError(f"no cells for policy {policy!r}")
        return float(np.mean(vals))

    def policy_std_across_videos(self, policy: str, metric: str) -> float:
        by_video: dict[str, list[float]] = {}
        for c in self.cells:
            if c.policy == policy:
                by_video.setdefault(c.video, []).append(getattr(c, metric))
        means = [float(np.mean(v)) for v in by_video.values()]
        return float(np.std(means)) if len(means) > 1 else 0.0

    def deltas_vs_anchor(self, policy: str) -> dict[str, float]:
        """Relative differences in percent against the anchor policy."""
        out = {}
        for metric in _METRICS:
            a = self.policy_mean(self.anchor, metric)
            p = self.policy_mean(policy, metric)
            out[metric] = 100.0 * (p - a) / a if abs(a) > 1e-12 else math.nan
        return out

    def to_summary(self) -> dict:
        def clean(d: dict) -> dict:
            return {k: (v if math.isfinite(v) else None) for k, v in d.items()}

        per_policy = {}
        for pol in self.policies():
            per_policy[pol] = {
                "means": clean({m: self.policy_mean(pol, m) for m in _METRICS}),
                "std_across_videos": clean(
                    {m: self.policy_std_across_videos(pol, m) for m in _METRICS}
                ),
                "delta_vs_anchor_pct": clean(self.deltas_vs_anchor(pol)),
            }
        return {
            "anchor": self.anchor,
            "cells": len(self.cells),
            "policies": per_policy,
        }

    def write_csv(self, path: str | Path) -> None:
        rows = [REPORT_COLUMNS]
        for c in self.cells:
            rows.append(
                ",".join(
                    str(v)
                    for v in (
                        c.policy,
                        c.trace,
                        c.video,
                        c.seed,
                        c.mean_quality,
                        c.mean_send_kbps,
                        c.stalling_ratio,
                        c.mean_frame_delay_s,
                        c.mean_reward,
                        c.session_csv,
                    )
                )
            )
        Path(path).write_text("\n".join(rows) + "\n", encoding="utf-8")

    def write_summary_json(self, path: str | Path) -> None:
        Path(path).write_text(
            json.dumps(self.to_summary(), sort_keys=True, indent=2) + "\n",
            encoding="utf-8",
        )


def emit_session_timeseries(
    log: SessionLog, trace: NetworkTrace, path: str | Path
) -> None:
    """Per-second decision/bandwidth/throughput series for line plots."""
    rows = ["second,bandwidth_kbps,decision_kbps,actual_kbps,send_kbps,recv_kbps"]
    for rec in log.seconds:
        bw = float(
            np.mean(
                [
                    trace.bandwidth_at(rec.second + 0.0),
                    trace.bandwidth_at(rec.second + 0.5),
                ]
            )
        )
        rows.append(
            ",".join(
                str(v)
                for v in (
                    rec.second,
                    bw,
                    rec.decision_kbps,
                    rec.actual_kbps,
                    rec.observation.send_kbps,
                    rec.observation.recv_kbps,
                )
            )
        )
    Path(path).write_text("\n".join(rows) + "\n", encoding="utf-8")


def emit_report_plots(report: ComparisonReport, out_dir: str | Path) -> list[Path]:
    """Scatter data: one row per (policy, video), metrics averaged over traces."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    by_pv: dict[tuple[str, str], list[ReportCell]] = {}
    for c in report.cells:
        by_pv.setdefault((c.policy, c.video), []).append(c)
    rows = ["policy,video," + ",".join(_METRICS)]
    for (pol, vid) in sorted(by_pv):
        cells = by_pv[(pol, vid)]
        vals = [float(np.mean([getattr(c, m) for c in cells])) for m in _METRICS]
        rows.append(",".join([pol, vid] + [str(v) for v in vals]))
    path = out / "scatter_policy_video.csv"
    path.write_text("\n".join(rows) + "\n", encoding="utf-8")
    return [path]


# ---------------------------------------------------------------------------
# Mode drivers
# ---------------------------------------------------------------------------


def _session_id(policy: str, trace: str, video: str) -> str:
    safe = lambda s: s.replace(":", "_").replace("/", "_")
    return f"{safe(policy)}__{safe(trace)}__{safe(video)}"


def compare_policies(
    cfg: ExperimentConfig,
    policy_names: Sequence[str],
    trace_names: Sequence[str],
    video_names: Sequence[str],
    corpus: Corpus,
    out_dir: Path,
) -> ComparisonReport:
    """Cross product of policies x traces x videos with paired seeds."""
    if not policy_names or not trace_names or not video_names:
        raise ConfigError("compare needs at least one policy, trace, and video")
    sessions_dir = out_dir / "sessions"
    sessions_dir.mkdir(parents=True, exist_ok=True)
    factories = {name: make_policy_factory(name, cfg) for name in policy_names}
    cells = []
    for pol in policy_names:
        for tname in trace_names:
            for vname in video_names:
                seed = cell_seed(cfg.seed, tname, vname)
                log = run_cell(
                    cfg,
                    factories[pol],
                    corpus.traces[tname],
                    corpus.videos[vname],
                    seed,
                )
                sid = _session_id(pol, tname, vname)
                rel = f"sessions/{sid}.csv"
                log.write_csv(out_dir / rel)
                cells.append(
                    ReportCell.from_log(pol, tname, vname, seed, log, rel)
                )
    anchor = cfg.anchor if cfg.anchor in policy_names else policy_names[0]
    return ComparisonReport(cells=cells, anchor=anchor)


def _policy_list(cfg: ExperimentConfig) -> list[str]:
    return [p.strip() for p in cfg.policies.split(",") if p.strip()]


def cmd_gen_traces(cfg: ExperimentConfig) -> dict:
    root = gen_corpus(cfg)
    return {"data_dir": str(root)}


def frames_to_complexity_csv(
    frames_path: str | Path,
    width: int,
    height: int,
    fps: float,
    out_path: str | Path,
    gop_frames: int | None = None,
) -> Path:
    """Convert a raw 8-bit luminance dump into a complexity-trace CSV."""
    from .traces import complexity_trace_from_frames, load_frame_sequence

    seq = load_frame_sequence(frames_path, width=width, height=height, fps=fps)
    trace = complexity_trace_from_frames(seq, gop_frames=gop_frames)
    save_complexity_trace(trace, out_path)
    return Path(out_path)


def cmd_train_cbpn(cfg: ExperimentConfig) -> dict:
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    corpus = load_corpus(cfg.data_dir)
    videos = [corpus.videos[n] for n in corpus.select("videos", "train")]
    ccfg = cfg.cbpn_config()
    dataset = cbpn_mod.build_cbpn_dataset(
        videos,
        cfg.encoder,
        ccfg,
        seed=cfg.seed,
        sessions_per_video=cfg.cbpn.sessions_per_video,
    )
    train_idx, val_idx = cbpn_mod.split_by_session(
        dataset, cfg.cbpn.val_fraction, seed=cfg.seed
    )
    model, curve_b = cbpn_mod.train_baseline(
        dataset,
        cbpn_mod.CbpnTrainConfig(
            epochs=cfg.cbpn.epochs_baseline,
            batch_size=cfg.cbpn.batch_size,
            lr=cfg.cbpn.lr,
            seed=cfg.seed,
        ),
        ccfg,
        indices=train_idx,
    )
    model, curve_e = cbpn_mod.train_error(
        dataset,
        model,
        cbpn_mod.CbpnTrainConfig(
            epochs=cfg.cbpn.epochs_error,
            batch_size=cfg.cbpn.batch_size,
            lr=cfg.cbpn.lr,
            seed=cfg.seed + 1,
        ),
        indices=train_idx,
    )
    ckpt = out / "cbpn.json"
    model.save(ckpt)
    rows = ["phase,epoch,loss"]
    rows += [f"baseline,{r['epoch']},{r['loss']}" for r in curve_b]
    rows += [f"error,{r['epoch']},{r['loss']}" for r in curve_e]
    (out / "cbpn_curve.csv").write_text("\n".join(rows) + "\n", encoding="utf-8")
    metrics = {
        "train": asdict(cbpn_mod.eval_metrics(model, dataset, train_idx)),
        "val": asdict(cbpn_mod.eval_metrics(model, dataset, val_idx)),
        "samples": len(dataset),
    }
    (out / "cbpn_metrics.json").write_text(
        json.dumps(metrics, sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )
    return {"checkpoint": str(ckpt), "metrics": metrics}


def make_training_env_factory(
    cfg: ExperimentConfig,
    corpus: Corpus,
    cbpn_model,
    mask,
) -> Callable[[int], abrn_mod.SessionEnv]:
    """Envs that sample one (train trace, train video) pair per episode."""
    trace_names = corpus.select("traces", "train")
    video_names = corpus.select("videos", "train")
    traces = [corpus.traces[n] for n in trace_names]
    videos = [corpus.videos[n] for n in video_names]
    duration = cfg.a3c.episode_duration_s

    def factory(seed: int) -> abrn_mod.SessionEnv:
        def make_runner(rng: np.random.Generator) -> SessionRunner:
            trace = traces[int(rng.integers(len(traces)))]
            video = videos[int(rng.integers(len(videos)))]
            if cfg.a3c.explore_starts:
                # exploring starts: cover the bitrate axis during training
                start = float(rng.uniform(cfg.encoder.min_bitrate, cfg.encoder.max_bitrate))
            else:
                start = cfg.initial_bitrate_kbps
            return SessionRunner(
                video=video,
                link=_link_config(cfg, trace),
                enc=cfg.encoder,
                qm=cfg.quality,
                duration_s=min(duration, int(trace.duration_s), int(video.duration_s)),
                seed=int(rng.integers(2**31 - 1)),
                reward_params=cfg.reward,
                initial_bitrate_kbps=start,
            )

        return abrn_mod.SessionEnv(make_runner, cbpn_model, mask, seed)

    return factory


def cmd_train_abrn(cfg: ExperimentConfig) -> dict:
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    corpus = load_corpus(cfg.data_dir)
    mask = abrn_mod.ablation_config(cfg.ablation)
    model = None
    if cfg.ablation != "s":
        model = cbpn_mod.CbpnModel.load(
            _require_checkpoint(cfg.cbpn_checkpoint, "range predictor")
        )
    factory = make_training_env_factory(cfg, corpus, model, mask)
    result = abrn_mod.train_a3c(factory, cfg.a3c_config())
    actor_path = out / "actor.json"
    critic_path = out / "critic.json"
    result.actor.save(actor_path)
    result.critic.save(critic_path)
    rows = ["update,mean_reward,entropy,critic_loss"]
    rows += [
        f"{r['update']},{r['mean_reward']},{r['entropy']},{r['critic_loss']}"
        for r in result.curve
    ]
    (out / "abrn_curve.csv").write_text("\n".join(rows) + "\n", encoding="utf-8")
    return {
        "actor": str(actor_path),
        "critic": str(critic_path),
        "episodes": len(result.episode_rewards),
        "final_mean_reward": result.curve[-1]["mean_reward"] if result.curve else None,
    }


def cmd_simulate(cfg: ExperimentConfig) -> dict:
    out = Path(cfg.out_dir)
    (out / "sessions").mkdir(parents=True, exist_ok=True)
    (out / "plots").mkdir(parents=True, exist_ok=True)
    if cfg.trace and cfg.video:
        trace = load_network_trace(cfg.trace)
        video = load_complexity_trace(cfg.video)
        tname, vname = Path(cfg.trace).stem, Path(cfg.video).stem
    else:
        corpus = load_corpus(cfg.data_dir)
        tname = corpus.select("traces", cfg.split)[0]
        vname = corpus.select("videos", cfg.split)[0]
        trace, video = corpus.traces[tname], corpus.videos[vname]
    factory = make_policy_factory(cfg.policy, cfg)
    seed = cell_seed(cfg.seed, tname, vname)
    log = run_cell(cfg, factory, trace, video, seed)
    sid = _session_id(cfg.policy, tname, vname)
    log.write_csv(out / "sessions" / f"{sid}.csv")
    log.write_summary_json(out / "summary.json")
    emit_session_timeseries(log, trace, out / "plots" / f"timeseries_{sid}.csv")
    return {"session": sid, "summary": log.summary()}


def cmd_compare(cfg: ExperimentConfig, policies: Sequence[str] | None = None) -> dict:
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    corpus = load_corpus(cfg.data_dir)
    names = list(policies) if policies else _policy_list(cfg)
    report = compare_policies(
        cfg,
        names,
        corpus.select("traces", cfg.split),
        corpus.select("videos", cfg.split),
        corpus,
        out,
    )
    report.write_csv(out / "report.csv")
    report.write_summary_json(out / "summary.json")
    emit_report_plots(report, out / "plots")
    return report.to_summary()


def cmd_evaluate(cfg: ExperimentConfig) -> dict:
    return cmd_compare(cfg, policies=[cfg.policy])


def run_experiment(cfg: ExperimentConfig) -> dict:
    """Dispatch one experiment; returns a JSON-safe result description."""
    cfg.validate()
    dispatch = {
        "gen-traces": cmd_gen_traces,
        "train-cbpn": cmd_train_cbpn,
        "train-abrn": cmd_train_abrn,
        "simulate": cmd_simulate,
        "evaluate": cmd_evaluate,
        "compare": cmd_compare,
    }
    return dispatch[cfg.mode](cfg)
