import math

import numpy as np
import pytest

from anableps.media import (
    EncoderConfig,
    EncoderState,
    EncodingError,
    FluctuationParams,
    Packet,
    QualityModel,
    encode_slot,
    normalized_complexity,
    packetize,
    quality_score,
)


def quiet_config(**kw):
    base = dict(
        fluct=FluctuationParams(phi=0.6, sigma=0.0, beta_ti=0.0),
        iframe_weight=1.0,
        rate_lag=False,
    )
    base.update(kw)
    return EncoderConfig(**base)


def flags(fps=25, iframe_at=None):
    f = [False] * fps
    if iframe_at is not None:
        f[iframe_at] = True
    return f


class TestEncodeSlot:
    def test_noise_free_slot(self):
        cfg = quiet_config()
        rng = np.random.default_rng(0)
        slot, state = encode_slot(
            4000.0, [(40.0, 40.0)], flags(), EncoderState(), cfg, rng
        )
        assert slot.actual_kbps == pytest.approx(4000.0)
        assert len(slot.frames) == 25
        assert all(f.size_bytes == 20000 for f in slot.frames)

    def test_iframe_weighting(self):
        # 24 P frames and one 6x I frame must split 500000 bytes:
        # p = 500000 / 30 = 16666.67, I = 100000, each within a byte
        cfg = quiet_config(iframe_weight=6.0)
        rng = np.random.default_rng(0)
        slot, _ = encode_slot(
            4000.0, [(40.0, 40.0)], flags(iframe_at=0), EncoderState(), cfg, rng
        )
        sizes = [f.size_bytes for f in slot.frames]
        assert abs(sum(sizes) - 500000) <= 1
        assert abs(sizes[0] - 100000) <= 1
        assert all(abs(s - 500000 / 30) <= 1 for s in sizes[1:])
        assert slot.frames[0].is_iframe and not slot.frames[1].is_iframe

    @pytest.mark.parametrize("seed", range(20))
    def test_vbv_bounds(self, seed):
        cfg = EncoderConfig()
        rng = np.random.default_rng(seed)
        state = EncoderState()
        target_rng = np.random.default_rng(1000 + seed)
        prev_target = None
        for sec in range(30):
            target = float(target_rng.uniform(300, 6100))
            ti = float(target_rng.uniform(0, 80))
            slot, state = encode_slot(
                target, [(40.0, ti)], flags(), state, cfg, rng, slot_index=sec
            )
            b_eff = (
                0.5 * (target + prev_target) if prev_target is not None else target
            )
            ratio = slot.actual_kbps / b_eff
            assert 0.5 - 1e-9 <= ratio <= cfg.vbv_multiplier + 1e-9
            prev_target = target

    def test_target_out_of_range(self):
        cfg = quiet_config()
        with pytest.raises(EncodingError):
            encode_slot(
                8000.0, [], flags(), EncoderState(), cfg, np.random.default_rng(0)
            )

    def test_rate_lag_averages_targets(self):
        cfg = quiet_config(rate_lag=True)
        rng = np.random.default_rng(0)
        _, state = encode_slot(3000.0, [], flags(), EncoderState(), cfg, rng)
        slot, _ = encode_slot(5000.0, [], flags(), state, cfg, rng, slot_index=1)
        assert slot.actual_kbps == pytest.approx(4000.0)

    def test_determinism(self):
        cfg = EncoderConfig()
        a, _ = encode_slot(
            4000.0, [(50.0, 30.0)], flags(iframe_at=3), EncoderState(),
            cfg, np.random.default_rng(42),
        )
        b, _ = encode_slot(
            4000.0, [(50.0, 30.0)], flags(iframe_at=3), EncoderState(),
            cfg, np.random.default_rng(42),
        )
        assert a == b

    def test_byte_total_matches_actual(self):
        cfg = EncoderConfig()
        rng = np.random.default_rng(5)
        state = EncoderState()
        for sec in range(50):
            slot, state = encode_slot(
                3000.0, [(20.0, 60.0)], flags(), state, cfg, rng, slot_index=sec
            )
            assert abs(slot.total_bytes - slot.actual_kbps * 125.0) <= 0.5 + 1e-9

    def test_fluctuation_roughly_centered(self):
        # 10^4 slots with defaults: mean(actual/target) within [0.9, 1.3]
        cfg = EncoderConfig()
        rng = np.random.default_rng(7)
        state = EncoderState()
        ratios = []
        for sec in range(10_000):
            slot, state = encode_slot(
                4000.0, [(40.0, 40.0)], flags(), state, cfg, rng, slot_index=sec
            )
            ratios.append(slot.actual_kbps / 4000.0)
        assert 0.9 <= float(np.mean(ratios)) <= 1.3


class TestQualityScore:
    def test_zero_played(self):
        assert quality_score(0.0, (0.5, 0.5), QualityModel()) == 0.0

    def test_ceiling_is_one(self):
        assert quality_score(6100.0, (0.0, 0.0), QualityModel()) == pytest.approx(1.0)

    def test_worked_example(self):
        # theta = 500 * (1 + 0.5) = 750; direct evaluation of the formula
        expected = math.log(1 + 1000 / 750) / math.log(1 + 6100 / 750)
        m = quality_score(1000.0, (0.5, 0.5), QualityModel(theta0_kbps=500.0))
        assert m == pytest.approx(expected, abs=1e-4)
        assert m == pytest.approx(0.383058, abs=1e-4)

    def test_monotone_in_played(self):
        qm = QualityModel()
        played = np.linspace(0, 6100, 50)
        scores = [quality_score(p, (0.3, 0.6), qm) for p in played]
        assert all(b >= a for a, b in zip(scores, scores[1:]))

    def test_antimonotone_in_complexity(self):
        qm = QualityModel()
        levels = np.linspace(0, 1, 20)
        scores = [quality_score(2000.0, (c, c), qm) for c in levels]
        assert all(b <= a + 1e-12 for a, b in zip(scores, scores[1:]))


class TestPacketize:
    def test_single_packet(self):
        pkts = packetize(1200, 0.0, frame_id=0)
        assert [p.size_bytes for p in pkts] == [1200]

    def test_remainder_packet(self):
        pkts = packetize(2500, 0.0, frame_id=0)
        assert [p.size_bytes for p in pkts] == [1200, 1200, 100]
        assert [p.index_in_frame for p in pkts] == [0, 1, 2]
        assert all(p.packets_in_frame == 3 for p in pkts)

    def test_one_byte(self):
        assert [p.size_bytes for p in packetize(1, 0.0, frame_id=0)] == [1]

    def test_zero_size_rejected(self):
        with pytest.raises(ValueError):
            packetize(0, 0.0, frame_id=0)

    def test_bit_conservation_random_sizes(self):
        rng = np.random.default_rng(3)
        for _ in range(10_000):
            size = int(rng.integers(1, 60_000))
            pkts = packetize(size, 0.0, frame_id=1)
            assert sum(p.size_bytes for p in pkts) == size
            assert len(pkts) == math.ceil(size / 1200)


def test_normalized_complexity_clamps():
    qm = QualityModel(si_max=120.0, ti_max=80.0)
    si, ti = normalized_complexity([240.0], [40.0], qm)
    assert si == 1.0 and ti == 0.5
    assert normalized_complexity([], [], qm) == (0.0, 0.0)
