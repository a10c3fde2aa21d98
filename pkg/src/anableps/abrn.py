"""Actor-critic bitrate controller over relative actions.

The actor maps the normalized state (predicted bitrate range, current
sending/receiving rate, and six-second histories of RTT, loss, NACKs,
frame delay, and lost-frame rate) to a distribution over six actions:
one multiplicative backoff driven by the latest loss rate plus five
deltas relative to the previous decision.  Training uses advantage
actor-critic with n-step returns; workers own private environments and
local network clones and apply gradients to the shared parameters through
one serialized apply point, round-robin, so a single-worker run is
bit-reproducible.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Protocol, Sequence

import numpy as np

from .cbpn import (
    BitrateRange,
    CbpnConfig,
    CbpnModel,
    InsufficientHistoryError,
    assemble_cbpn_state,
    predict_range,
)
from .constants import BITRATE_MAX_KBPS, BITRATE_MIN_KBPS, BITRATE_SCALE_KBPS
from .netsim import DecisionContext, ReceiverObservation, SessionRunner
from .neural import AdamConfig, AdamState, Conv1d, Dense, Flatten, GRU, Network, Softmax, adam_step
from .rewards import RewardParams, reward  # re-exported controller surface

__all__ = [
    "ACTION_DELTAS_KBPS",
    "N_ACTIONS",
    "AbrnNetConfig",
    "AbrnState",
    "AblationMask",
    "A3cConfig",
    "A3cResult",
    "AnablepsPolicy",
    "RewardParams",
    "ablation_config",
    "apply_action",
    "assemble_abrn_state",
    "build_actor_network",
    "build_critic_network",
    "policy_forward",
    "reward",
    "select_action",
    "train_a3c",
    "value_forward",
]

# index 0 is the loss-driven backoff "X"; the rest are deltas in kbps
ACTION_DELTAS_KBPS: tuple[float | None, ...] = (None, -400.0, 0.0, 200.0, 400.0, 600.0)
N_ACTIONS = len(ACTION_DELTAS_KBPS)

HISTORY_SECONDS = 6
RTT_CLAMP_S = 2.0
NACK_NORM = 50.0


@dataclass(frozen=True)
class AbrnNetConfig:
    history: int = HISTORY_SECONDS
    conv_filters: int = 128
    conv_kernel: int = 3
    gru_hidden: int = 128
    scalar_units: int = 16
    hidden: int = 128

    def validate(self):
        if self.history < 2 or self.conv_kernel > self.history:
            raise ValueError("history must fit the conv kernel")


@dataclass(frozen=True)
class AblationMask:
    """State masking for the controller variants.

    ``s`` disables the range predictor entirely (v and e zeroed);
    ``c`` keeps the baseline value but zeroes the error offset.
    """

    zero_v: bool = False
    zero_e: bool = False


def ablation_config(kind: str) -> AblationMask:
    if kind == "full":
        return AblationMask(False, False)
    if kind == "s":
        return AblationMask(True, True)
    if kind == "c":
        return AblationMask(False, True)
    raise ValueError(f"unknown ablation kind {kind!r}; expected full|s|c")


@dataclass(frozen=True)
class AbrnState:
    """Normalized controller observation; history vectors oldest-first."""

    ve: np.ndarray  # (2,)
    sr: np.ndarray  # (2,)
    d: np.ndarray  # (1, history)
    p: np.ndarray  # (1, history)
    n: np.ndarray  # (1, history)
    fh: np.ndarray  # (2, history) frame delay over lost-frame rate
    warmup: bool = False

    def net_inputs(self) -> dict[str, np.ndarray]:
        return {
            "ve": self.ve,
            "sr": self.sr,
            "d": self.d,
            "p": self.p,
            "n": self.n,
            "fh": self.fh,
        }


def assemble_abrn_state(
    range_pred: BitrateRange,
    observations: Sequence[ReceiverObservation],
    mask: AblationMask = AblationMask(),
    history: int = HISTORY_SECONDS,
) -> AbrnState:
    """Normalize the latest observations into the controller state.

    Missing leading history during session warm-up is zero-padded and
    flagged.  Bitrates divide by 6100; RTT and frame delay clamp to [0, 2] s
    then halve; NACK counts divide by 50 and clamp at 1.
    """
    obs = list(observations)[-history:]
    pad = history - len(obs)
    v = 0.0 if mask.zero_v else range_pred.v_kbps / BITRATE_SCALE_KBPS
    e = 0.0 if mask.zero_e else range_pred.e_kbps / BITRATE_SCALE_KBPS
    if obs:
        s = obs[-1].send_kbps / BITRATE_SCALE_KBPS
        r = obs[-1].recv_kbps / BITRATE_SCALE_KBPS
    else:
        s = r = 0.0

    def series(getter, transform):
        vals = [0.0] * pad + [transform(getter(o)) for o in obs]
        return np.asarray(vals, dtype=np.float64)

    clamp_delay = lambda x: min(max(x, 0.0), RTT_CLAMP_S) / RTT_CLAMP_S
    d = series(lambda o: o.rtt_s, clamp_delay)
    p = series(lambda o: o.loss_rate, lambda x: x)
    n = series(lambda o: o.nack_count, lambda x: min(x / NACK_NORM, 1.0))
    f = series(lambda o: o.frame_delay_s, clamp_delay)
    h = series(lambda o: o.lost_frame_rate, lambda x: x)
    return AbrnState(
        ve=np.array([v, e]),
        sr=np.array([s, r]),
        d=d[None, :],
        p=p[None, :],
        n=n[None, :],
        fh=np.stack([f, h]),
        warmup=pad > 0,
    )


def apply_action(prev_kbps: float, action_index: int, p_latest: float) -> float:
    """Next target bitrate: loss-driven backoff for X, clamped delta otherwise."""
    if not (0 <= action_index < N_ACTIONS):
        raise ValueError(f"action index {action_index} out of range")
    delta = ACTION_DELTAS_KBPS[action_index]
    if delta is None:
        nxt = prev_kbps * (1.0 - p_latest)
    else:
        nxt = prev_kbps + delta
    return float(min(max(nxt, BITRATE_MIN_KBPS), BITRATE_MAX_KBPS))


# ---------------------------------------------------------------------------
# Networks
# ---------------------------------------------------------------------------


def _build_trunk(cfg: AbrnNetConfig, rng: np.random.Generator, net: Network) -> int:
    for name in ("ve", "sr", "d", "p", "n", "fh"):
        net.add_input(name)
    net.add("fc_ve", Dense(2, cfg.scalar_units, "relu", rng=rng), "ve")
    net.add("fc_sr", Dense(2, cfg.scalar_units, "relu", rng=rng), "sr")
    conv_out = cfg.history - cfg.conv_kernel + 1
    for name in ("d", "p", "n"):
        net.add(
            f"conv_{name}",
            Conv1d(1, cfg.conv_filters, cfg.conv_kernel, padding="valid", rng=rng),
            name,
        )
        net.add(f"flat_{name}", Flatten(), f"conv_{name}")
    net.add("gru_fh", GRU(2, cfg.gru_hidden, rng=rng), "fh")
    net.add_concat(
        "merge",
        ["fc_ve", "fc_sr", "flat_d", "flat_p", "flat_n", "gru_fh"],
    )
    merged = 2 * cfg.scalar_units + 3 * cfg.conv_filters * conv_out + cfg.gru_hidden
    net.add("hidden", Dense(merged, cfg.hidden, "relu", rng=rng), "merge")
    return cfg.hidden


def build_actor_network(cfg: AbrnNetConfig = AbrnNetConfig(), seed: int = 0) -> Network:
    cfg.validate()
    rng = np.random.default_rng(seed)
    net = Network()
    hidden = _build_trunk(cfg, rng, net)
    net.add("logits", Dense(hidden, N_ACTIONS, "linear", rng=rng), "hidden")
    net.add("policy", Softmax(), "logits")
    net.set_outputs(["policy"])
    return net


def build_critic_network(cfg: AbrnNetConfig = AbrnNetConfig(), seed: int = 0) -> Network:
    cfg.validate()
    rng = np.random.default_rng(seed)
    net = Network()
    hidden = _build_trunk(cfg, rng, net)
    net.add("value", Dense(hidden, 1, "linear", rng=rng), "hidden")
    net.set_outputs(["value"])
    return net


def policy_forward(actor: Network, state: AbrnState) -> np.ndarray:
    outs, _ = actor.forward(state.net_inputs())
    return outs["policy"]


def value_forward(critic: Network, state: AbrnState) -> float:
    outs, _ = critic.forward(state.net_inputs())
    return float(outs["value"][0])


def select_action(
    probs: np.ndarray,
    mode: str = "sample",
    rng: np.random.Generator | None = None,
) -> int:
    """Draw from the distribution (seeded) or take the argmax (ties: lowest)."""
    probs = np.asarray(probs, dtype=np.float64)
    if probs.ndim != 1 or np.any(probs < 0) or abs(probs.sum() - 1.0) > 1e-6:
        raise ValueError("not a probability distribution")
    if mode == "argmax":
        return int(np.argmax(probs))
    if mode == "sample":
        if rng is None:
            raise ValueError("sampling requires a seeded generator")
        u = rng.random()
        return int(min(np.searchsorted(np.cumsum(probs), u), len(probs) - 1))
    raise ValueError(f"unknown mode {mode!r}")


# ---------------------------------------------------------------------------
# Runtime policy (range predictor in front of the actor)
# ---------------------------------------------------------------------------


class AbrnFrontend:
    """Builds controller states from a live session context."""

    def __init__(
        self,
        cbpn_model: CbpnModel | None,
        mask: AblationMask = AblationMask(),
        history: int = HISTORY_SECONDS,
    ):
        self.cbpn_model = cbpn_model
        self.mask = mask
        self.history = history

    def bitrate_range(self, ctx: DecisionContext) -> BitrateRange:
        """Predicted range for the upcoming slot; falls back to the previous
        target with zero offset while history is too short (or the range
        predictor is ablated away)."""
        if self.cbpn_model is not None and not self.mask.zero_v:
            cfg = self.cbpn_model.cfg
            k = int(round(ctx.second / ctx.video.period_s))
            try:
                state = assemble_cbpn_state(
                    ctx.targets,
                    ctx.actuals,
                    ctx.video.si[:k],
                    ctx.video.ti[:k],
                    [ctx.iframe_seconds[s] for s in range(ctx.second)],
                    ctx.iframe_next,
                    cfg,
                )
                return predict_range(self.cbpn_model, state)
            except InsufficientHistoryError:
                pass
        return BitrateRange(v_kbps=ctx.prev_target_kbps, e_kbps=0.0)

    def state_for(self, ctx: DecisionContext) -> AbrnState:
        return assemble_abrn_state(
            self.bitrate_range(ctx), ctx.observations, self.mask, self.history
        )

    @staticmethod
    def latest_loss(ctx: DecisionContext) -> float:
        return ctx.observations[-1].loss_rate if ctx.observations else 0.0


class AnablepsPolicy:
    """Deployable controller: range predictor + actor network."""

    def __init__(
        self,
        actor: Network,
        cbpn_model: CbpnModel | None = None,
        ablation: str = "full",
        mode: str = "argmax",
        seed: int = 0,
    ):
        self.actor = actor
        self.mask = ablation_config(ablation)
        self.frontend = AbrnFrontend(cbpn_model, self.mask)
        self.mode = mode
        self.rng = np.random.default_rng(seed)

    def decide(self, ctx: DecisionContext) -> float:
        state = self.frontend.state_for(ctx)
        probs = policy_forward(self.actor, state)
        action = select_action(probs, self.mode, self.rng)
        return apply_action(ctx.prev_target_kbps, action, self.frontend.latest_loss(ctx))


# ---------------------------------------------------------------------------
# Training environments
# ---------------------------------------------------------------------------


class Env(Protocol):
    def reset(self) -> AbrnState: ...

    def step(self, action_index: int) -> tuple[AbrnState, float, bool]: ...


class SessionEnv:
    """One episode = one (video, trace) session through the simulator."""

    def __init__(
        self,
        make_runner: Callable[[np.random.Generator], SessionRunner],
        cbpn_model: CbpnModel | None,
        mask: AblationMask,
        seed: int,
        history: int = HISTORY_SECONDS,
    ):
        self._make_runner = make_runner
        self._frontend = AbrnFrontend(cbpn_model, mask, history)
        self._rng = np.random.default_rng(seed)
        self._runner: SessionRunner | None = None

    def reset(self) -> AbrnState:
        self._runner = self._make_runner(self._rng)
        return self._frontend.state_for(self._runner.context())

    def step(self, action_index: int) -> tuple[AbrnState, float, bool]:
        runner = self._runner
        if runner is None:
            raise RuntimeError("call reset() before step()")
        ctx = runner.context()
        target = apply_action(
            ctx.prev_target_kbps, action_index, self._frontend.latest_loss(ctx)
        )
        record = runner.step(target)
        done = runner.done()
        state = self._frontend.state_for(runner.context()) if not done else _ZERO_STATE
        return state, record.reward, done


_ZERO_STATE = AbrnState(
    ve=np.zeros(2),
    sr=np.zeros(2),
    d=np.zeros((1, HISTORY_SECONDS)),
    p=np.zeros((1, HISTORY_SECONDS)),
    n=np.zeros((1, HISTORY_SECONDS)),
    fh=np.zeros((2, HISTORY_SECONDS)),
    warmup=True,
)


# ---------------------------------------------------------------------------
# A3C training
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class A3cConfig:
    workers: int = 4
    discount: float = 0.99
    entropy_weight: float = 0.01  # decays linearly toward entropy_floor
    entropy_floor: float = 0.0
    n_step: int = 5
    updates: int = 1000
    lr: float = 1e-3  # critic step size; the actor moves slower
    actor_lr_scale: float = 0.1
    grad_clip: float = 40.0  # global-norm clip; returns span hundreds
    seed: int = 0
    reward_smoothing: int = 20  # episodes averaged for the training curve

    def validate(self):
        if not (0.0 < self.discount < 1.0):
            raise ValueError("discount must be in (0, 1)")
        if self.workers < 1 or self.n_step < 1 or self.updates < 1:
            raise ValueError("workers, n_step, and updates must be >= 1")
        if self.grad_clip <= 0 or self.actor_lr_scale <= 0:
            raise ValueError("grad_clip and actor_lr_scale must be > 0")


@dataclass
class A3cResult:
    actor: Network
    critic: Network
    curve: list[dict]  # update, mean_reward, entropy, critic_loss
    episode_rewards: list[float]


def _clip_by_norm(grads: np.ndarray, clip: float) -> np.ndarray:
    norm = float(np.linalg.norm(grads))
    if norm > clip:
        return grads * (clip / norm)
    return grads


class _Worker:
    def __init__(self, env: Env, actor: Network, critic: Network, seed):
        self.env = env
        self.local_actor = actor.clone()
        self.local_critic = critic.clone()
        self.rng = np.random.default_rng(seed)
        self.state: AbrnState | None = None
        self.episode_reward = 0.0

    def refresh(self, actor: Network, critic: Network) -> None:
        self.local_actor.load_state_dict(actor.state_dict())
        self.local_critic.load_state_dict(critic.state_dict())

    def rollout(self, n_step: int) -> tuple[list, AbrnState | None, list[float]]:
        """Collect up to n_step transitions; returns (segment, bootstrap_state,
        finished episode rewards)."""
        finished: list[float] = []
        if self.state is None:
            self.state = self.env.reset()
            self.episode_reward = 0.0
        segment = []
        for _ in range(n_step):
            probs = policy_forward(self.local_actor, self.state)
            action = select_action(probs, "sample", self.rng)
            next_state, r, done = self.env.step(action)
            segment.append((self.state, action, r))
            self.episode_reward += r
            if done:
                finished.append(self.episode_reward)
                self.state = None
                return segment, None, finished
            self.state = next_state
        return segment, self.state, finished


def train_a3c(env_factory: Callable[[int], Env], cfg: A3cConfig) -> A3cResult:
    """Round-robin advantage actor-critic over private environments.

    Each scheduled worker rolls out an n-step segment with its local clones,
    computes bootstrapped returns and advantages, pushes one gradient batch
    into the shared parameters (policy gradient plus decaying entropy bonus
    for the actor, squared error for the critic), and refreshes its clones.
    """
    cfg.validate()
    actor = build_actor_network(seed=cfg.seed)
    critic = build_critic_network(seed=cfg.seed + 1)
    adam_actor = AdamConfig(lr=cfg.lr * cfg.actor_lr_scale)
    adam_critic = AdamConfig(lr=cfg.lr)
    actor_state = AdamState.zeros(actor.n_params)
    critic_state = AdamState.zeros(critic.n_params)

    ss = np.random.SeedSequence(cfg.seed)
    children = ss.spawn(2 * cfg.workers)
    workers = [
        _Worker(
            env_factory(int(children[2 * i].generate_state(1)[0])),
            actor,
            critic,
            children[2 * i + 1],
        )
        for i in range(cfg.workers)
    ]

    episode_rewards: list[float] = []
    curve: list[dict] = []
    for update in range(1, cfg.updates + 1):
        worker = workers[(update - 1) % cfg.workers]
        segment, bootstrap, finished = worker.rollout(cfg.n_step)
        episode_rewards.extend(finished)

        if bootstrap is None:
            ret = 0.0
        else:
            ret = value_forward(worker.local_critic, bootstrap)
        returns = []
        for _, _, r in reversed(segment):
            ret = r + cfg.discount * ret
            returns.append(ret)
        returns.reverse()

        decay = max(0.0, 1.0 - (update - 1) / cfg.updates)
        beta = max(cfg.entropy_floor, cfg.entropy_weight * decay)
        worker.local_actor.zero_grads()
        worker.local_critic.zero_grads()
        entropies = []
        critic_losses = []
        n = len(segment)
        for (state, action, _), ret_i in zip(segment, returns):
            inputs = state.net_inputs()
            v_out, v_cache = worker.local_critic.forward(inputs)
            v = float(v_out["value"][0])
            adv = ret_i - v
            p_out, p_cache = worker.local_actor.forward(inputs)
            probs = p_out["policy"]
            entropies.append(float(-np.sum(probs * np.log(probs + 1e-12))))
            dprobs = np.zeros(N_ACTIONS)
            dprobs[action] = -adv / max(probs[action], 1e-12)
            dprobs += beta * (np.log(probs + 1e-12) + 1.0)
            worker.local_actor.backward(p_cache, {"policy": dprobs / n})
            critic_losses.append((v - ret_i) ** 2)
            worker.local_critic.backward(
                v_cache, {"value": np.array([2.0 * (v - ret_i) / n])}
            )

        # serialized apply point: local grads -> shared params
        new_flat, actor_state = adam_step(
            actor.get_flat(),
            _clip_by_norm(worker.local_actor.grads_flat(), cfg.grad_clip),
            adam_actor,
            actor_state,
            update,
        )
        actor.set_flat(new_flat)
        new_flat, critic_state = adam_step(
            critic.get_flat(),
            _clip_by_norm(worker.local_critic.grads_flat(), cfg.grad_clip),
            adam_critic,
            critic_state,
            update,
        )
        critic.set_flat(new_flat)
        worker.refresh(actor, critic)

        recent = episode_rewards[-cfg.reward_smoothing :]
        curve.append(
            {
                "update": update,
                "mean_reward": float(np.mean(recent)) if recent else math.nan,
                "entropy": float(np.mean(entropies)),
                "critic_loss": float(np.mean(critic_losses)),
            }
        )
    return A3cResult(
        actor=actor, critic=critic, curve=curve, episode_rewards=episode_rewards
    )
