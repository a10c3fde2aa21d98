"""Per-second QoE reward shared by the simulator and the controller."""

from __future__ import annotations

from dataclasses import dataclass

FRAME_DELAY_CLAMP_S = 2.0


@dataclass(frozen=True)
class RewardParams:
    alpha: float = 8.0
    lam: float = 0.5
    gamma: float = 4.0
    delta: float = 2.0

    def validate(self):
        if min(self.alpha, self.lam, self.gamma, self.delta) < 0:
            raise ValueError("reward weights must be >= 0")


def reward(
    m_t: float,
    m_prev: float,
    h_t: float,
    f_t: float,
    params: RewardParams = RewardParams(),
) -> float:
    """Quality minus smoothness, lost-frame, and frame-delay penalties.

    ``f_t`` is the mean frame delay in seconds, clamped at 2 s before
    weighting so the reward stays bounded.
    """
    params.validate()
    f = min(max(f_t, 0.0), FRAME_DELAY_CLAMP_S)
    return (
        params.alpha * m_t
        - params.lam * abs(m_t - m_prev)
        - params.gamma * h_t
        - params.delta * f
    )
