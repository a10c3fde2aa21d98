"""Parametric VBR encoder model, packetizer, and a normalized quality proxy.

The encoder stands in for a real low-delay codec: per one-second slot it
turns a target bitrate into an actual bitrate through a multiplicative
fluctuation (AR(1) in log space whose variance grows with temporal
complexity), a rate-control lag of one slot, and a VBV cap of twice the
effective target.  Within the slot, I frames receive ``iframe_weight`` times
the bytes of a P frame, which is what produces the bursty packet schedule.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .constants import BITRATE_MAX_KBPS, BITRATE_MIN_KBPS, BITRATE_SCALE_KBPS

MTU_BYTES = 1200
SLOT_SECONDS = 1.0


class EncodingError(ValueError):
    """Target outside the configured encoder range."""


@dataclass(frozen=True)
class FluctuationParams:
    """AR(1) log-multiplier driving the target-to-actual bitrate gap.

    The persistence coefficient is high because overshoot episodes in live
    VBR output last multiple seconds; with weak persistence the next-slot
    bitrate would be essentially unpredictable from sender-side history.
    """

    phi: float = 0.8
    sigma: float = 0.15
    beta_ti: float = 0.5

    def validate(self):
        if not (0.0 <= self.phi < 1.0):
            raise ValueError("phi must be in [0, 1)")
        if self.sigma < 0.0:
            raise ValueError("sigma must be >= 0")


@dataclass(frozen=True)
class EncoderConfig:
    fps: int = 25
    gop_frames: int = 125
    vbv_multiplier: float = 2.0
    min_bitrate: float = BITRATE_MIN_KBPS
    max_bitrate: float = BITRATE_MAX_KBPS
    iframe_weight: float = 6.0
    fluct: FluctuationParams = field(default_factory=FluctuationParams)
    rate_lag: bool = True
    ti_max: float = 80.0  # normalizer feeding the TI coupling

    def validate(self):
        if not (0.0 < self.min_bitrate < self.max_bitrate):
            raise ValueError("need 0 < min_bitrate < max_bitrate")
        if self.iframe_weight < 1.0:
            raise ValueError("iframe_weight must be >= 1")
        if self.fps < 1 or self.gop_frames < 1:
            raise ValueError("fps and gop_frames must be >= 1")
        self.fluct.validate()


@dataclass(frozen=True)
class EncoderState:
    """Carries rate-control memory across slots of one session."""

    prev_target: float | None = None
    log_fluct: float = 0.0


@dataclass(frozen=True)
class EncodedFrame:
    capture_time: float
    size_bytes: int
    is_iframe: bool


@dataclass(frozen=True)
class EncodedSlot:
    slot_index: int
    target_kbps: float
    actual_kbps: float
    frames: tuple[EncodedFrame, ...]

    @property
    def total_bytes(self) -> int:
        return sum(f.size_bytes for f in self.frames)


@dataclass(frozen=True)
class QualityModel:
    """Log-law quality proxy in [0, 1] with complexity-scaled knee."""

    theta0_kbps: float = 500.0
    si_max: float = 120.0
    ti_max: float = 80.0

    def validate(self):
        if self.theta0_kbps <= 0:
            raise ValueError("theta0 must be > 0")


@dataclass(frozen=True)
class Packet:
    frame_id: int
    index_in_frame: int
    packets_in_frame: int
    size_bytes: int
    capture_time: float
    is_iframe: bool = False


def _split_bytes(total: int, weights: Sequence[float]) -> list[int]:
    """Integer byte split proportional to weights; sums exactly to total.

    Cumulative rounding keeps every part within 1 byte of its real share.
    """
    wsum = float(sum(weights))
    sizes = []
    acc = 0.0
    prev_round = 0
    for w in weights:
        acc += total * (w / wsum)
        r = int(round(acc))
        sizes.append(r - prev_round)
        prev_round = r
    sizes[-1] += total - prev_round
    return sizes


def encode_slot(
    target_kbps: float,
    complexity: Sequence[tuple[float, float]],
    iframe_flags: Sequence[bool],
    state: EncoderState,
    cfg: EncoderConfig,
    rng: np.random.Generator,
    slot_index: int = 0,
) -> tuple[EncodedSlot, EncoderState]:
    """Encode one 1 s slot; returns the slot and the advanced encoder state.

    ``complexity`` holds raw (si, ti) samples covering the slot;
    ``iframe_flags`` has one flag per frame.  Exactly one normal draw is
    consumed per call so seeded streams stay aligned across configs.
    """
    cfg.validate()
    if not (cfg.min_bitrate <= target_kbps <= cfg.max_bitrate):
        raise EncodingError(
            f"target {target_kbps} outside [{cfg.min_bitrate}, {cfg.max_bitrate}]"
        )
    if len(iframe_flags) != cfg.fps:
        raise EncodingError(f"need {cfg.fps} I-frame flags, got {len(iframe_flags)}")

    if complexity:
        ti_raw = float(np.mean([c[1] for c in complexity]))
    else:
        ti_raw = 0.0
    ti_n = min(max(ti_raw / cfg.ti_max, 0.0), 1.0)

    if cfg.rate_lag and state.prev_target is not None:
        b_eff = 0.5 * (target_kbps + state.prev_target)
    else:
        b_eff = target_kbps

    z = cfg.fluct.phi * state.log_fluct + rng.standard_normal() * (
        cfg.fluct.sigma * (1.0 + ti_n)
    )
    g = math.exp(z) * (1.0 + cfg.fluct.beta_ti * (ti_n - 0.5))
    actual = min(max(b_eff * g, 0.5 * b_eff), cfg.vbv_multiplier * b_eff)

    total_bytes = int(round(actual * 125.0 * SLOT_SECONDS))
    weights = [cfg.iframe_weight if f else 1.0 for f in iframe_flags]
    sizes = _split_bytes(total_bytes, weights)
    frames = tuple(
        EncodedFrame(
            capture_time=slot_index * SLOT_SECONDS + k / cfg.fps,
            size_bytes=sizes[k],
            is_iframe=bool(iframe_flags[k]),
        )
        for k in range(cfg.fps)
    )
    slot = EncodedSlot(
        slot_index=slot_index,
        target_kbps=float(target_kbps),
        actual_kbps=float(actual),
        frames=frames,
    )
    return slot, EncoderState(prev_target=float(target_kbps), log_fluct=z)


def quality_score(
    played_kbps: float,
    complexity_n: tuple[float, float],
    qm: QualityModel,
) -> float:
    """Normalized quality of one played second.

    ``complexity_n`` is the slot-mean (si, ti) already normalized to [0, 1].
    Returns 0 when nothing played; 1 at the 6100 kbps ceiling on flat content.
    """
    qm.validate()
    if played_kbps <= 0.0:
        return 0.0
    si_n, ti_n = complexity_n
    theta = qm.theta0_kbps * (1.0 + (si_n + ti_n) / 2.0)
    m = math.log1p(played_kbps / theta) / math.log1p(BITRATE_SCALE_KBPS / theta)
    return min(max(m, 0.0), 1.0)


def packetize(
    size_bytes: int,
    capture_time: float,
    frame_id: int,
    mtu: int = MTU_BYTES,
    is_iframe: bool = False,
) -> list[Packet]:
    """Slice a frame into MTU-sized packets; the last one takes the remainder."""
    if size_bytes <= 0:
        raise ValueError("frame size must be > 0")
    n = (size_bytes + mtu - 1) // mtu
    packets = []
    remaining = size_bytes
    for i in range(n):
        sz = min(mtu, remaining)
        packets.append(
            Packet(
                frame_id=frame_id,
                index_in_frame=i,
                packets_in_frame=n,
                size_bytes=sz,
                capture_time=capture_time,
                is_iframe=is_iframe,
            )
        )
        remaining -= sz
    return packets


def normalized_complexity(
    si: np.ndarray | Sequence[float],
    ti: np.ndarray | Sequence[float],
    qm: QualityModel,
) -> tuple[float, float]:
    """Slot-mean (si, ti) scaled by the model normalizers and clamped to [0, 1]."""
    si_n = float(np.mean(si)) / qm.si_max if len(si) else 0.0
    ti_n = float(np.mean(ti)) / qm.ti_max if len(ti) else 0.0
    return (min(max(si_n, 0.0), 1.0), min(max(ti_n, 0.0), 1.0))
