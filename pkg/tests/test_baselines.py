import numpy as np
import pytest

from anableps.baselines import (
    FixedPolicy,
    GccPolicy,
    GccState,
    OraclePolicy,
    gcc_step,
)
from anableps.netsim import DecisionContext, ReceiverObservation
from anableps.traces import ComplexityTrace, NetworkTrace


def obs(second, s=4000.0, r=4000.0, d=0.05, p=0.0, n=0, f=0.06, h=0.0):
    return ReceiverObservation(
        second=second, send_kbps=s, recv_kbps=r, rtt_s=d, loss_rate=p,
        nack_count=n, frame_delay_s=f, lost_frame_rate=h, played_fps=25,
    )


def ctx(second, observations=(), prev=1000.0, trace=None):
    video = ComplexityTrace(times_s=[0.0], si=[10.0], ti=[10.0])
    return DecisionContext(
        second=second,
        prev_target_kbps=prev,
        targets=tuple(),
        actuals=tuple(),
        observations=tuple(observations),
        video=video,
        iframe_seconds=(False,) * 200,
    )


class TestGccStep:
    def test_loss_backoff(self):
        state = GccState(delay_rate_kbps=6100.0, loss_rate_kbps=4000.0)
        state, target = gcc_step(state, obs(0, p=0.20))
        assert state.loss_rate_kbps == pytest.approx(4000.0 * 0.9)
        assert target == pytest.approx(3600.0)

    def test_probe_up_when_clean(self):
        state = GccState(delay_rate_kbps=4000.0, loss_rate_kbps=4000.0)
        for i in range(6):  # flat RTT history
            state, target = gcc_step(state, obs(i, d=0.05))
        # both branches grew 5% per step from 4000
        assert target == pytest.approx(4000.0 * 1.05**6, rel=1e-9)
        state = GccState(delay_rate_kbps=4000.0, loss_rate_kbps=4000.0)
        state, target = gcc_step(state, obs(0, p=0.0, d=0.05))
        assert target == pytest.approx(4200.0)

    def test_loss_dead_zone_holds(self):
        state = GccState(delay_rate_kbps=6100.0, loss_rate_kbps=4000.0)
        state, _ = gcc_step(state, obs(0, p=0.05))
        assert state.loss_rate_kbps == pytest.approx(4000.0)

    def test_overuse_resets_to_received_rate(self):
        state = GccState(delay_rate_kbps=5000.0, loss_rate_kbps=6100.0)
        rtts = [0.05, 0.10, 0.16, 0.23, 0.31, 0.40]  # strong queue growth
        for i, d in enumerate(rtts):
            state, target = gcc_step(state, obs(i, d=d, r=2000.0))
        assert state.detector == "decrease"
        assert target <= 0.85 * 2000.0 + 1e-9

    def test_non_increasing_under_sustained_loss(self):
        state = GccState(delay_rate_kbps=6100.0, loss_rate_kbps=6100.0)
        prev = 6100.0
        for i in range(20):
            state, target = gcc_step(state, obs(i, p=0.15, d=0.05, r=3000.0))
            assert target <= prev + 1e-9
            prev = target

    def test_rates_stay_in_range(self):
        state = GccState(delay_rate_kbps=300.0, loss_rate_kbps=300.0)
        for i in range(100):
            state, target = gcc_step(state, obs(i, p=0.0, d=0.05))
            assert 300.0 <= target <= 6100.0
            assert 300.0 <= state.loss_rate_kbps <= 6100.0
            assert 300.0 <= state.delay_rate_kbps <= 6100.0
        assert target == 6100.0  # monotone growth capped


class TestGccPolicy:
    def test_consumes_each_observation_once(self):
        policy = GccPolicy(start_kbps=1000.0)
        history = [obs(0, p=0.0)]
        t1 = policy.decide(ctx(1, history))
        t2 = policy.decide(ctx(1, history))
        assert t1 == t2  # same observation not re-applied

    def test_warmup_returns_start(self):
        policy = GccPolicy(start_kbps=777.0)
        assert policy.decide(ctx(0)) == 777.0


class TestFixedPolicy:
    def test_constant(self):
        p = FixedPolicy(6000.0)
        assert p.decide(ctx(0)) == 6000.0
        assert p.decide(ctx(50)) == 6000.0

    def test_bounds(self):
        assert FixedPolicy(300.0).decide(ctx(0)) == 300.0
        with pytest.raises(ValueError):
            FixedPolicy(7000.0)
        with pytest.raises(ValueError):
            FixedPolicy(100.0)


class TestOraclePolicy:
    def constant_trace(self, kbps, seconds=30):
        n = 2 * seconds
        return NetworkTrace(
            times_s=0.5 * np.arange(n), bandwidth_kbps=np.full(n, float(kbps))
        )

    def test_constant_link(self):
        p = OraclePolicy(self.constant_trace(6500.0), safety=0.85)
        assert p.decide(ctx(3)) == pytest.approx(6500.0 * 0.85)

    def test_full_safety(self):
        p = OraclePolicy(self.constant_trace(5000.0), safety=1.0)
        assert p.decide(ctx(0)) == 5000.0

    def test_step_trace_lookahead(self):
        # drop to 2000 at t=10: the decision for second 9 sees the
        # window [9, 10] whose endpoint carries the new rate
        times = 0.5 * np.arange(60)
        bw = np.where(times < 10.0, 6500.0, 2000.0)
        p = OraclePolicy(NetworkTrace(times_s=times, bandwidth_kbps=bw), safety=0.85)
        assert p.decide(ctx(8)) == pytest.approx(6500.0 * 0.85)
        assert p.decide(ctx(9)) == pytest.approx(2000.0 * 0.85)
        assert p.decide(ctx(10)) == pytest.approx(2000.0 * 0.85)

    def test_clamped_to_range(self):
        p = OraclePolicy(self.constant_trace(200.0), safety=0.85)
        assert p.decide(ctx(0)) == 300.0

    def test_bad_safety(self):
        with pytest.raises(ValueError):
            OraclePolicy(self.constant_trace(5000.0), safety=0.0)
