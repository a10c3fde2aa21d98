import numpy as np
import pytest

from anableps.abrn import (
    ACTION_DELTAS_KBPS,
    N_ACTIONS,
    A3cConfig,
    AblationMask,
    AbrnNetConfig,
    ablation_config,
    apply_action,
    assemble_abrn_state,
    build_actor_network,
    build_critic_network,
    policy_forward,
    select_action,
    train_a3c,
    value_forward,
    _ZERO_STATE,
)
from anableps.cbpn import BitrateRange
from anableps.netsim import ReceiverObservation
from anableps.rewards import RewardParams, reward


def obs(second, s=1000.0, r=1000.0, d=0.05, p=0.0, n=0, f=0.06, h=0.0, fps=25):
    return ReceiverObservation(
        second=second, send_kbps=s, recv_kbps=r, rtt_s=d, loss_rate=p,
        nack_count=n, frame_delay_s=f, lost_frame_rate=h, played_fps=fps,
    )


class TestAssembleState:
    def test_warmup_zero_padded(self):
        st = assemble_abrn_state(BitrateRange(3050.0, 610.0), [])
        assert st.warmup
        assert np.all(st.d == 0.0) and np.all(st.fh == 0.0)
        assert st.sr.tolist() == [0.0, 0.0]
        assert st.ve.tolist() == [0.5, 0.1]

    def test_rtt_clamped(self):
        st = assemble_abrn_state(
            BitrateRange(1000.0, 0.0), [obs(0, d=3.0)]
        )
        assert st.d[0, -1] == 1.0

    def test_full_scale_send(self):
        st = assemble_abrn_state(BitrateRange(1000.0, 0.0), [obs(0, s=6100.0)])
        assert st.sr[0] == 1.0

    def test_nack_normalization(self):
        st = assemble_abrn_state(
            BitrateRange(1000.0, 0.0), [obs(0, n=25), obs(1, n=200)]
        )
        assert st.n[0, -2] == pytest.approx(0.5)
        assert st.n[0, -1] == 1.0

    def test_history_order_oldest_first(self):
        sequence = [obs(i, p=i / 10.0) for i in range(8)]
        st = assemble_abrn_state(BitrateRange(1000.0, 0.0), sequence)
        assert st.p[0].tolist() == pytest.approx([0.2, 0.3, 0.4, 0.5, 0.6, 0.7])
        assert not st.warmup

    def test_masks(self):
        r = BitrateRange(3050.0, 610.0)
        s_mask = assemble_abrn_state(r, [], ablation_config("s"))
        assert s_mask.ve.tolist() == [0.0, 0.0]
        c_mask = assemble_abrn_state(r, [], ablation_config("c"))
        assert c_mask.ve.tolist() == [0.5, 0.0]
        full = assemble_abrn_state(r, [], ablation_config("full"))
        assert full.ve.tolist() == [0.5, 0.1]

    def test_unknown_ablation(self):
        with pytest.raises(ValueError):
            ablation_config("x")


class TestApplyAction:
    def test_backoff_formula(self):
        assert apply_action(4000.0, 0, 0.25) == 3000.0

    def test_upper_clamp(self):
        assert apply_action(6000.0, 5, 0.0) == 6100.0

    def test_lower_clamp(self):
        assert apply_action(500.0, 1, 0.0) == 300.0

    def test_exhaustive_table(self):
        # independent re-statement of the clamp / backoff rules
        for prev in (300.0, 500.0, 4000.0, 6000.0, 6100.0):
            for p in (0.0, 0.25, 1.0):
                for idx, delta in enumerate(ACTION_DELTAS_KBPS):
                    got = apply_action(prev, idx, p)
                    raw = prev * (1.0 - p) if delta is None else prev + delta
                    assert got == min(max(raw, 300.0), 6100.0)

    def test_invalid_index(self):
        with pytest.raises(ValueError):
            apply_action(1000.0, 6, 0.0)


class TestReward:
    def test_steady_quality(self):
        assert reward(0.8, 0.8, 0.0, 0.0) == pytest.approx(6.4, abs=1e-9)

    def test_mixed_case(self):
        # 8*1.0 - 0.5*0.5 - 4*0.2 - 2*0.3
        assert reward(1.0, 0.5, 0.2, 0.3) == pytest.approx(6.35, abs=1e-9)

    def test_zero(self):
        assert reward(0.0, 0.0, 0.0, 0.0) == 0.0

    def test_frame_delay_clamped(self):
        assert reward(0.0, 0.0, 0.0, 5.0) == pytest.approx(-4.0)

    def test_bounded(self):
        params = RewardParams()
        bound = params.alpha + params.gamma + 2 * params.delta + params.lam
        rng = np.random.default_rng(0)
        for _ in range(300):
            r = reward(
                rng.uniform(0, 1), rng.uniform(0, 1),
                rng.uniform(0, 1), rng.uniform(0, 2),
            )
            assert abs(r) <= bound + 1e-12


class TestPolicyForward:
    def test_zeroed_head_uniform(self):
        actor = build_actor_network(seed=0)
        logits = dict(actor.layers())["logits"]
        logits.params["W"][...] = 0.0
        logits.params["b"][...] = 0.0
        probs = policy_forward(actor, _ZERO_STATE)
        assert np.allclose(probs, 1.0 / N_ACTIONS)

    def test_distribution_valid_for_random_params(self):
        actor = build_actor_network(seed=1)
        rng = np.random.default_rng(2)
        st = assemble_abrn_state(
            BitrateRange(2000.0, 300.0),
            [obs(i, p=rng.uniform(0, 1)) for i in range(6)],
        )
        for _ in range(50):
            actor.set_flat(rng.standard_normal(actor.n_params) * 0.2)
            probs = policy_forward(actor, st)
            assert np.all(probs > 0)
            assert abs(probs.sum() - 1.0) < 1e-6

    def test_sensitive_to_lost_frame_history(self):
        actor = build_actor_network(seed=3)
        base = assemble_abrn_state(
            BitrateRange(2000.0, 300.0), [obs(i) for i in range(6)]
        )
        bumped = assemble_abrn_state(
            BitrateRange(2000.0, 300.0),
            [obs(i, h=0.5 if i == 5 else 0.0) for i in range(6)],
        )
        delta = policy_forward(actor, bumped) - policy_forward(actor, base)
        assert np.max(np.abs(delta)) > 1e-9

    def test_critic_scalar(self):
        critic = build_critic_network(seed=4)
        v = value_forward(critic, _ZERO_STATE)
        assert isinstance(v, float)


class TestSelectAction:
    def test_one_hot(self):
        probs = np.zeros(6)
        probs[2] = 1.0
        rng = np.random.default_rng(0)
        assert select_action(probs, "sample", rng) == 2
        assert select_action(probs, "argmax") == 2

    def test_argmax_tie_lowest_index(self):
        assert select_action(np.full(6, 1.0 / 6.0), "argmax") == 0

    def test_sampling_frequencies(self):
        probs = np.array([0.5, 0.5, 0.0, 0.0, 0.0, 0.0])
        rng = np.random.default_rng(123)
        draws = np.array([select_action(probs, "sample", rng) for _ in range(100_000)])
        freq0 = np.mean(draws == 0)
        assert abs(freq0 - 0.5) < 0.01
        assert np.all(draws <= 1)

    def test_invalid_distribution(self):
        with pytest.raises(ValueError):
            select_action(np.array([0.5, 0.6]), "argmax")

    def test_sample_requires_rng(self):
        with pytest.raises(ValueError):
            select_action(np.full(6, 1.0 / 6.0), "sample")


class BanditEnv:
    """Ten-step episodes; only the last action index pays out."""

    def __init__(self, seed):
        self.t = 0

    def reset(self):
        self.t = 0
        return _ZERO_STATE

    def step(self, action):
        self.t += 1
        return _ZERO_STATE, (1.0 if action == 5 else 0.0), self.t >= 10


class TestTrainA3c:
    def test_bandit_concentrates(self):
        res = train_a3c(
            BanditEnv, A3cConfig(workers=1, updates=300, lr=2e-2, actor_lr_scale=1.0, seed=4)
        )
        probs = policy_forward(res.actor, _ZERO_STATE)
        assert probs[5] > 0.6
        assert len(res.curve) == 300
        assert set(res.curve[0]) == {"update", "mean_reward", "entropy", "critic_loss"}

    def test_single_worker_deterministic(self):
        cfg = A3cConfig(workers=1, updates=40, seed=9)
        a = train_a3c(BanditEnv, cfg)
        b = train_a3c(BanditEnv, cfg)
        assert np.array_equal(a.actor.get_flat(), b.actor.get_flat())
        assert a.episode_rewards == b.episode_rewards

    def test_multi_worker_runs(self):
        res = train_a3c(BanditEnv, A3cConfig(workers=3, updates=60, seed=2))
        assert len(res.episode_rewards) > 0


def test_actor_checkpoint_roundtrip(tmp_path):
    actor = build_actor_network(seed=5)
    rng = np.random.default_rng(6)
    actor.set_flat(rng.standard_normal(actor.n_params) * 0.1)
    actor.save(tmp_path / "actor.json")
    other = build_actor_network(seed=7)
    other.load(tmp_path / "actor.json")
    st = assemble_abrn_state(BitrateRange(2000.0, 100.0), [obs(0)])
    assert np.array_equal(policy_forward(actor, st), policy_forward(other, st))


def test_action_set_shape():
    assert N_ACTIONS == 6
    assert ACTION_DELTAS_KBPS[0] is None
    assert ACTION_DELTAS_KBPS[1:] == (-400.0, 0.0, 200.0, 400.0, 600.0)
