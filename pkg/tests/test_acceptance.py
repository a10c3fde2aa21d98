"""Acceptance suite: one test per criterion, pinned tolerances.

Run with ``pytest -v tests/test_acceptance.py``: the verbose listing gives
one pass/fail line per criterion.  Criteria 8-10 share the session-scoped
corpus and training fixtures from conftest.
"""

import json
import math
from pathlib import Path

import numpy as np
import pytest

from anableps import abrn as abrn_mod
from anableps import cbpn as cbpn_mod
from anableps import neural
from anableps.abrn import (
    ACTION_DELTAS_KBPS,
    A3cConfig,
    AnablepsPolicy,
    SessionEnv,
    _ZERO_STATE,
    ablation_config,
    apply_action,
    assemble_abrn_state,
    build_actor_network,
    build_critic_network,
    policy_forward,
    select_action,
    train_a3c,
)
from anableps.baselines import GccPolicy
from anableps.cbpn import BitrateRange, range_metrics
from anableps.config import ExperimentConfig
from anableps.harness import cell_seed, cmd_simulate, compare_policies, load_corpus
from anableps.media import EncoderConfig, FluctuationParams, QualityModel
from anableps.netsim import LinkConfig, ReceiverObservation, SessionRunner, run_session
from anableps.rewards import reward
from anableps.traces import (
    ComplexityGenSpec,
    ComplexityTrace,
    NetworkTrace,
    TraceGenSpec,
    generate_synthetic_complexity_trace,
    generate_synthetic_network_trace,
)

QM = QualityModel()


def constant_trace(kbps, seconds):
    n = 2 * seconds
    return NetworkTrace(times_s=0.5 * np.arange(n), bandwidth_kbps=np.full(n, float(kbps)))


def flat_video(seconds, si=40.0, ti=20.0):
    n = 4 * seconds
    return ComplexityTrace(times_s=0.25 * np.arange(n), si=np.full(n, si), ti=np.full(n, ti))


def quiet_encoder(**kw):
    base = dict(
        fluct=FluctuationParams(sigma=0.0, beta_ti=0.0), iframe_weight=1.0, rate_lag=False
    )
    base.update(kw)
    return EncoderConfig(**base)


# -- criterion 1: reward formula exactness ----------------------------------


def test_criterion_01_reward_formula_exact():
    assert abs(reward(0.8, 0.8, 0.0, 0.0) - 6.4) < 1e-9
    assert abs(reward(1.0, 0.5, 0.2, 0.3) - 6.35) < 1e-9
    assert reward(0.0, 0.0, 0.0, 0.0) == 0.0


# -- criterion 2: action semantics ------------------------------------------


def test_criterion_02_action_semantics_exhaustive():
    for prev in (300.0, 500.0, 4000.0, 6000.0, 6100.0):
        for p in (0.0, 0.25, 1.0):
            for idx in range(6):
                delta = ACTION_DELTAS_KBPS[idx]
                if delta is None:
                    expected = prev * (1.0 - p)
                else:
                    expected = prev + delta
                expected = min(max(expected, 300.0), 6100.0)
                assert apply_action(prev, idx, p) == expected


# -- criterion 3: metric oracle equivalence ----------------------------------


def _loop_metrics(v, e, actual):
    n = len(v)
    mad = sum(abs(v[i] - actual[i]) for i in range(n)) / n / 6100.0
    mv = sum(v) / n
    ma = sum(actual) / n
    cov = sum((v[i] - mv) * (actual[i] - ma) for i in range(n))
    sv = math.sqrt(sum((x - mv) ** 2 for x in v))
    sa = math.sqrt(sum((x - ma) ** 2 for x in actual))
    pcc = cov / (sv * sa) if sv > 0 and sa > 0 else float("nan")
    cr = sum(1 for i in range(n) if v[i] - e[i] <= actual[i] <= v[i] + e[i]) / n
    return mad, pcc, cr


def test_criterion_03_metric_oracle_equivalence():
    rng = np.random.default_rng(33)
    v = rng.uniform(300, 6100, 1000)
    e = rng.uniform(0, 2000, 1000)
    actual = rng.uniform(300, 6100, 1000)
    m = range_metrics(v, e, actual)
    mad, pcc, cr = _loop_metrics(v.tolist(), e.tolist(), actual.tolist())
    assert abs(m.mad - mad) < 1e-12
    assert abs(m.pcc - pcc) < 1e-12
    assert abs(m.cr - cr) < 1e-12
    worked = range_metrics(np.full(4, 5.0), np.full(4, 1.0), np.array([5.5, 6.5, 4.2, 4.8]))
    assert worked.cr == 0.75


# -- criterion 4: gradient correctness ---------------------------------------


def test_criterion_04_gradient_correctness():
    from test_neural import LAYER_FACTORIES, single_layer_net

    checks = 0
    for kind in sorted(LAYER_FACTORIES):
        for trial in range(20):
            rng = np.random.default_rng(hash((kind, trial, "accept")) % 2**32)
            layer, make_input = LAYER_FACTORIES[kind](rng)
            net = single_layer_net("l", layer, None)
            err = neural.grad_check(net, {"x": make_input(layer)}, eps=1e-5)
            assert err < 1e-4, f"{kind} trial {trial}: {err}"
            checks += 1
    assert checks == 100

    # full range-predictor shape
    model = cbpn_mod.new_cbpn_model(cbpn_mod.CbpnConfig(), seed=40)
    rng = np.random.default_rng(41)
    inputs = {"state": rng.standard_normal((5, 4)), "dif": rng.standard_normal((1, 4))}
    assert neural.grad_check(model.net, inputs, max_coords=300, seed=1) < 1e-4

    # full controller shapes (actor with softmax head, critic with linear head)
    state_inputs = {
        "ve": rng.uniform(0, 1, 2),
        "sr": rng.uniform(0, 1, 2),
        "d": rng.uniform(0, 1, (1, 6)),
        "p": rng.uniform(0, 1, (1, 6)),
        "n": rng.uniform(0, 1, (1, 6)),
        "fh": rng.uniform(0, 1, (2, 6)),
    }
    actor = build_actor_network(seed=42)
    critic = build_critic_network(seed=43)
    assert neural.grad_check(actor, state_inputs, max_coords=250, seed=2) < 1e-4
    assert neural.grad_check(critic, state_inputs, max_coords=250, seed=3) < 1e-4


# -- criterion 5: policy distribution invariants ------------------------------


def test_criterion_05_policy_distribution_invariants():
    actor = build_actor_network(seed=50)
    rng = np.random.default_rng(51)
    n_params = actor.n_params
    worst = 0.0
    for i in range(10_000):
        if i % 10 == 0:
            actor.set_flat(rng.standard_normal(n_params) * rng.uniform(0.05, 1.0))
        state = assemble_abrn_state(
            BitrateRange(float(rng.uniform(1, 6100)), float(rng.uniform(0, 2000))),
            [
                ReceiverObservation(
                    second=k,
                    send_kbps=float(rng.uniform(0, 8000)),
                    recv_kbps=float(rng.uniform(0, 8000)),
                    rtt_s=float(rng.uniform(0, 3)),
                    loss_rate=float(rng.uniform(0, 1)),
                    nack_count=int(rng.integers(0, 200)),
                    frame_delay_s=float(rng.uniform(0, 3)),
                    lost_frame_rate=float(rng.uniform(0, 1)),
                    played_fps=int(rng.integers(0, 26)),
                )
                for k in range(int(rng.integers(0, 7)))
            ],
        )
        probs = policy_forward(actor, state)
        assert np.all(probs > 0.0)
        worst = max(worst, abs(float(probs.sum()) - 1.0))
    assert worst <= 1e-6


# -- criterion 6: simulator physics -------------------------------------------


def test_criterion_06a_underload_is_clean():
    log = run_session(
        lambda ctx: 6000.0,
        flat_video(17),
        LinkConfig(trace=constant_trace(6500, 17)),
        quiet_encoder(),
        QM,
        duration_s=15,
        seed=6,
    )
    s = log.summary()
    assert s["mean_loss"] == 0.0
    assert s["mean_lost_frame_rate"] == 0.0
    assert s["stalling_ratio"] == 0.0


def test_criterion_06b_queue_fill_time():
    cap = 150_000.0
    link = LinkConfig(trace=constant_trace(5000, 14), queue_capacity_bytes=cap)
    log = run_session(
        lambda ctx: 8000.0,
        flat_video(14),
        link,
        quiet_encoder(max_bitrate=8000.0),
        QM,
        duration_s=12,
        seed=6,
    )
    first_drop = next(t for t in log.transmissions if t.dropped)
    theory = cap / ((8000.0 - 5000.0) * 125.0)
    assert abs(first_drop.send_time - theory) <= link.tick_s


def test_criterion_06c_conservation_fuzz_1000_seeds():
    for seed in range(1000):
        rng = np.random.default_rng(seed)
        owd = float(rng.uniform(0.005, 0.08))
        link = LinkConfig(
            trace=constant_trace(float(rng.uniform(700, 7000)), 8),
            base_owd_s=owd,
            queue_capacity_bytes=float(rng.uniform(30_000, 400_000)),
            random_loss=float(rng.choice([0.0, 0.01, 0.05])),
        )
        target = float(rng.uniform(300, 6100))
        log = run_session(
            lambda ctx: target, flat_video(8), link, EncoderConfig(), QM, 6, seed=seed
        )
        sent = sum(t.size_bytes for t in log.transmissions)
        arrived = sum(t.size_bytes for t in log.transmissions if not t.dropped)
        assert arrived <= sent
        for t in log.transmissions:
            if t.arrival_time is not None:
                assert t.arrival_time >= t.send_time + owd - 1e-12
        for f in log.frames:
            if f.complete_time is not None:
                assert f.complete_time - f.capture_time >= owd - 1e-12
        for rec in log.seconds:
            assert rec.observation.rtt_s >= 2 * owd - 1e-12


# -- criterion 7: determinism --------------------------------------------------


def test_criterion_07_byte_identical_runs(tmp_path):
    from anableps.harness import cmd_gen_traces

    cfg = ExperimentConfig()
    cfg.seed = 7
    cfg.data_dir = str(tmp_path / "data")
    cfg.corpus.n_traces = 3
    cfg.corpus.n_videos = 3
    cfg.corpus.trace_duration_s = 40.0
    cfg.corpus.video_duration_s = 40.0
    cfg.corpus.video_test_count = 1
    cfg.duration_s = 12
    cfg.mode = "simulate"
    cfg.policy = "gcc"
    cmd_gen_traces(cfg)

    cfg.out_dir = str(tmp_path / "run1")
    cmd_simulate(cfg)
    cfg.out_dir = str(tmp_path / "run2")
    cmd_simulate(cfg)

    for rel in ("summary.json",):
        a = (tmp_path / "run1" / rel).read_bytes()
        b = (tmp_path / "run2" / rel).read_bytes()
        assert a == b
    s1 = sorted((tmp_path / "run1" / "sessions").glob("*.csv"))
    s2 = sorted((tmp_path / "run2" / "sessions").glob("*.csv"))
    assert [p.name for p in s1] == [p.name for p in s2]
    for p1, p2 in zip(s1, s2):
        assert p1.read_bytes() == p2.read_bytes()


# -- criterion 8: range-predictor training -------------------------------------


def test_criterion_08_cbpn_training(trained_cbpn):
    model = trained_cbpn["model"]
    dataset = trained_cbpn["dataset"]
    val_idx = trained_cbpn["val_idx"]

    metrics = cbpn_mod.eval_metrics(model, dataset, val_idx)
    assert 0.80 <= metrics.cr <= 0.90, f"held-out CR {metrics.cr}"

    v, _ = cbpn_mod.predict_batch(model, dataset, val_idx)
    y = dataset.actuals_kbps[val_idx]
    mad_model = float(np.mean(np.abs(v - y)))
    last_target = dataset.states[val_idx][:, 0, -1] * 6100.0
    mad_last = float(np.mean(np.abs(last_target - y)))
    assert mad_model <= 0.70 * mad_last, (
        f"MAD {mad_model:.1f} vs last-target {mad_last:.1f}: "
        f"reduction {1 - mad_model / mad_last:.3f} < 0.30"
    )

    assert np.array_equal(trained_cbpn["baseline_before"], model.baseline_params())


# -- criterion 9: controller training smoke ------------------------------------


class _BanditEnv:
    def __init__(self, seed):
        self.t = 0

    def reset(self):
        self.t = 0
        return _ZERO_STATE

    def step(self, action):
        self.t += 1
        return _ZERO_STATE, (1.0 if action == 5 else 0.0), self.t >= 10


def test_criterion_09a_bandit_sanity():
    res = train_a3c(_BanditEnv, A3cConfig(workers=1, updates=500, lr=2e-2, actor_lr_scale=1.0, seed=4))
    probs = policy_forward(res.actor, _ZERO_STATE)
    assert probs[5] >= 0.9, f"p(rewarded action) = {probs[5]:.3f}"


def _tiny_suite():
    traces = [
        generate_synthetic_network_trace(TraceGenSpec(60.0, 3500.0, 1200.0, "markov-step", seed=11)),
        generate_synthetic_network_trace(TraceGenSpec(60.0, 2500.0, 800.0, "ar1", seed=12)),
    ]
    videos = [
        generate_synthetic_complexity_trace(ComplexityGenSpec(60.0, seed=13)),
        generate_synthetic_complexity_trace(ComplexityGenSpec(60.0, seed=14)),
    ]
    return traces, videos


def _tiny_env_factory(traces, videos, explore_starts=True):
    enc, qm = EncoderConfig(), QualityModel()

    def factory(seed: int) -> SessionEnv:
        def make_runner(rng):
            trace = traces[int(rng.integers(len(traces)))]
            video = videos[int(rng.integers(len(videos)))]
            start = float(rng.uniform(300, 6100)) if explore_starts else 300.0
            return SessionRunner(
                video, LinkConfig(trace=trace), enc, qm, 60,
                seed=int(rng.integers(2**31 - 1)), initial_bitrate_kbps=start,
            )

        return SessionEnv(make_runner, None, ablation_config("s"), seed)

    return factory


def _mean_episodic_reward(actor, traces, videos, mode, episodes_per_pair=3):
    """Paired evaluation episodes; ``actor`` None means uniform random."""
    rewards = []
    rng = np.random.default_rng(999)
    for ti, trace in enumerate(traces):
        for vi, video in enumerate(videos):
            for ep in range(episodes_per_pair):
                runner = SessionRunner(
                    video, LinkConfig(trace=trace), EncoderConfig(), QualityModel(),
                    60, seed=100 * ti + 10 * vi + ep, initial_bitrate_kbps=300.0,
                )
                env_rng = np.random.default_rng(7000 + 100 * ti + 10 * vi + ep)
                frontend = abrn_mod.AbrnFrontend(None, ablation_config("s"))
                total = 0.0
                while not runner.done():
                    ctx = runner.context()
                    if actor is None:
                        action = int(env_rng.integers(6))
                    else:
                        probs = policy_forward(actor, frontend.state_for(ctx))
                        action = select_action(probs, mode, env_rng)
                    target = apply_action(
                        ctx.prev_target_kbps, action, frontend.latest_loss(ctx)
                    )
                    total += runner.step(target).reward
                rewards.append(total)
    return float(np.mean(rewards))


def test_criterion_09b_tiny_suite_beats_random():
    traces, videos = _tiny_suite()
    random_mean = _mean_episodic_reward(None, traces, videos, mode=None)
    res = train_a3c(
        _tiny_env_factory(traces, videos),
        A3cConfig(workers=1, updates=4000, entropy_weight=0.02, lr=1e-3, seed=1),
    )
    trained_mean = _mean_episodic_reward(res.actor, traces, videos, mode="argmax")
    required = random_mean + 0.3 * abs(random_mean)
    assert trained_mean >= required, (
        f"trained {trained_mean:.1f} < 1.3x random {random_mean:.1f}"
    )

    # the policy sharpens as entropy decays: smoothed entropy falls
    entropies = [r["entropy"] for r in res.curve]
    k = max(1, len(entropies) // 5)
    assert float(np.mean(entropies[:k])) > float(np.mean(entropies[-k:]))


# -- criterion 10: directional end-to-end reproduction --------------------------


def test_criterion_10_full_system_vs_gcc(acceptance_cfg, acceptance_corpus, trained_cbpn, trained_actors):
    corpus = acceptance_corpus
    test_traces = corpus.select("traces", "test")
    test_videos = corpus.select("videos", "test")
    assert len(test_traces) == 6 and len(test_videos) == 10

    means = {}
    for name, ablation in (
        ("anableps", "full"),
        ("anableps-c", "c"),
        ("anableps-s", "s"),
        ("gcc", None),
    ):
        cfg = ExperimentConfig()
        cfg.seed = acceptance_cfg.seed
        cfg.data_dir = acceptance_cfg.data_dir
        cfg.out_dir = f"{acceptance_cfg.out_dir}/cmp_{name}"
        cfg.duration_s = 60
        cfg.split = "test"
        cfg.anchor = name
        cfg.policies = name
        if ablation is not None:
            cfg.actor_checkpoint = trained_actors[ablation]
            cfg.cbpn_checkpoint = trained_cbpn["checkpoint"]
        report = compare_policies(
            cfg, [name], test_traces, test_videos, corpus, Path(cfg.out_dir)
        )
        means[name] = {
            m: report.policy_mean(name, m)
            for m in (
                "mean_quality",
                "mean_send_kbps",
                "stalling_ratio",
                "mean_frame_delay_s",
                "mean_reward",
            )
        }

    full, gcc = means["anableps"], means["gcc"]
    assert full["stalling_ratio"] < gcc["stalling_ratio"], (full, gcc)
    assert full["mean_send_kbps"] < gcc["mean_send_kbps"], (full, gcc)
    assert full["mean_frame_delay_s"] < gcc["mean_frame_delay_s"], (full, gcc)
    assert full["mean_quality"] >= 0.95 * gcc["mean_quality"], (full, gcc)

    r_full = means["anableps"]["mean_reward"]
    r_c = means["anableps-c"]["mean_reward"]
    r_s = means["anableps-s"]["mean_reward"]
    assert r_full >= r_c - 0.02 * abs(r_c), f"full {r_full} < c {r_c}"
    assert r_c >= r_s - 0.02 * abs(r_s), f"c {r_c} < s {r_s}"


# -- criterion 11: GCC behavior --------------------------------------------------


def test_criterion_11_gcc_step_response_and_growth():
    # step 6000 -> 2000 at t=80: the target falls below 2600 within 3 steps
    n = 120
    bw = np.where(0.5 * np.arange(2 * n) < 80.0, 6000.0, 2000.0)
    trace = NetworkTrace(times_s=0.5 * np.arange(2 * n), bandwidth_kbps=bw)
    log = run_session(
        GccPolicy(), flat_video(n), LinkConfig(trace=trace), EncoderConfig(), QM,
        duration_s=100, seed=3,
    )
    decisions = [r.decision_kbps for r in log.seconds]
    assert min(decisions[80:84]) < 2600.0, decisions[78:86]

    # clean constant link: monotone growth to the 6100 cap
    trace2 = constant_trace(6500, 100)
    log2 = run_session(
        GccPolicy(), flat_video(100), LinkConfig(trace=trace2), quiet_encoder(), QM,
        duration_s=90, seed=3,
    )
    d2 = [r.decision_kbps for r in log2.seconds]
    assert all(b >= a - 1e-9 for a, b in zip(d2, d2[1:]))
    assert max(d2) >= 6100.0
