"""Non-learned reference policies: GCC-style, fixed bitrate, lookahead oracle.

The GCC-style controller keeps two independent estimates.  The loss branch
backs off multiplicatively above 10% loss and probes up 5% below 2%.  The
delay branch fits a least-squares slope to the recent RTT samples; a slope
above an adaptive threshold signals queue growth (overuse) and resets the
rate to 85% of the measured receive rate, otherwise the rate probes up 5%.
The decision is the minimum of the two branches, clamped into the encoder
range.  Constants follow the widely documented behavior of the algorithm.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .constants import BITRATE_MAX_KBPS, BITRATE_MIN_KBPS
from .netsim import DecisionContext, ReceiverObservation
from .traces import NetworkTrace

GCC_LOSS_HIGH = 0.10
GCC_LOSS_LOW = 0.02
GCC_INCREASE = 1.05
GCC_DECREASE = 0.85
GCC_RTT_WINDOW = 6
GCC_THRESHOLD_INIT = 0.002  # RTT slope, s/s
GCC_THRESHOLD_GAIN = 0.05
GCC_THRESHOLD_MIN = 0.0005
GCC_THRESHOLD_MAX = 0.05


def _clamp_rate(kbps: float) -> float:
    return float(min(max(kbps, BITRATE_MIN_KBPS), BITRATE_MAX_KBPS))


@dataclass
class GccState:
    delay_rate_kbps: float = BITRATE_MIN_KBPS
    loss_rate_kbps: float = BITRATE_MIN_KBPS
    rtts: deque = field(default_factory=lambda: deque(maxlen=GCC_RTT_WINDOW))
    threshold: float = GCC_THRESHOLD_INIT
    detector: str = "hold"  # increase | hold | decrease


def _rtt_slope(rtts: deque) -> float:
    """Least-squares slope of RTT against time (one sample per second)."""
    n = len(rtts)
    if n < 2:
        return 0.0
    x = np.arange(n, dtype=np.float64)
    y = np.asarray(rtts, dtype=np.float64)
    x -= x.mean()
    denom = float(x @ x)
    return float(x @ (y - y.mean())) / denom if denom > 0 else 0.0


def gcc_step(state: GccState, obs: ReceiverObservation) -> tuple[GccState, float]:
    """Consume one observation; returns (new state, target kbps)."""
    state.rtts.append(obs.rtt_s)

    p = obs.loss_rate
    if p > GCC_LOSS_HIGH:
        state.loss_rate_kbps *= 1.0 - 0.5 * p
    elif p < GCC_LOSS_LOW:
        state.loss_rate_kbps *= GCC_INCREASE
    state.loss_rate_kbps = _clamp_rate(state.loss_rate_kbps)

    slope = _rtt_slope(state.rtts)
    overuse = slope > state.threshold
    if overuse:
        state.delay_rate_kbps = GCC_DECREASE * obs.recv_kbps
        state.detector = "decrease"
    else:
        state.delay_rate_kbps *= GCC_INCREASE
        state.detector = "increase"
    state.delay_rate_kbps = _clamp_rate(state.delay_rate_kbps)

    state.threshold += GCC_THRESHOLD_GAIN * (abs(slope) - state.threshold)
    state.threshold = min(max(state.threshold, GCC_THRESHOLD_MIN), GCC_THRESHOLD_MAX)

    target = _clamp_rate(min(state.loss_rate_kbps, state.delay_rate_kbps))
    return state, target


class GccPolicy:
    """Session-confined wrapper feeding each new observation into gcc_step."""

    def __init__(self, start_kbps: float = BITRATE_MIN_KBPS):
        self.state = GccState(
            delay_rate_kbps=_clamp_rate(start_kbps),
            loss_rate_kbps=_clamp_rate(start_kbps),
        )
        self._consumed = 0
        self._target = _clamp_rate(start_kbps)

    def decide(self, ctx: DecisionContext) -> float:
        for obs in ctx.observations[self._consumed :]:
            self.state, self._target = gcc_step(self.state, obs)
            self._consumed += 1
        return self._target


class FixedPolicy:
    def __init__(self, bitrate_kbps: float):
        if not (BITRATE_MIN_KBPS <= bitrate_kbps <= BITRATE_MAX_KBPS):
            raise ValueError(
                f"fixed bitrate {bitrate_kbps} outside "
                f"[{BITRATE_MIN_KBPS}, {BITRATE_MAX_KBPS}]"
            )
        self.bitrate_kbps = float(bitrate_kbps)

    def decide(self, ctx: DecisionContext) -> float:
        return self.bitrate_kbps


class OraclePolicy:
    """Upper-bound reference: knows the trace, sends a safety fraction of the
    minimum bandwidth over the upcoming second (window endpoints inclusive)."""

    def __init__(self, trace: NetworkTrace, safety: float = 0.85):
        if not (0.0 < safety <= 1.0):
            raise ValueError("safety fraction must be in (0, 1]")
        self.trace = trace
        self.safety = safety

    def decide(self, ctx: DecisionContext) -> float:
        t = self.trace.times_s
        mask = (t >= ctx.second - 1e-9) & (t <= ctx.second + 1.0 + 1e-9)
        window = self.trace.bandwidth_kbps[mask]
        low = float(window.min()) if len(window) else float(
            self.trace.bandwidth_kbps[-1]
        )
        return _clamp_rate(self.safety * low)
