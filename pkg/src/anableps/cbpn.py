"""Compressed bitrate prediction: range [v-e, v+e] for the next slot.

The predictor sees only sender-side information from completed slots: past
target bitrates, target-minus-actual gaps, SI/TI samples of the past two
seconds, and the I-frame schedule (past slots plus the known upcoming one).
A baseline head regresses the next actual bitrate; a separate error head,
trained with the baseline frozen, learns a pinball-loss offset targeting a
configurable coverage of the residuals.

State matrix layout is 5 rows x ``window`` time steps, rows in the order
(bitrate, iframe, si, ti, dif), oldest column first.  The iframe row covers
the past ``window - 1`` seconds plus the upcoming second in its newest
column.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .constants import BITRATE_MAX_KBPS, BITRATE_MIN_KBPS, BITRATE_SCALE_KBPS
from .media import EncoderConfig, EncoderState, encode_slot
from .neural import AdamConfig, AdamState, Conv1d, Dense, Flatten, GRU, Network, adam_step
from .traces import ComplexityTrace, iframe_flags_for_second

STATE_ROWS = 5
_V_FLOOR_KBPS = 1.0

BASELINE_NODES = ("conv_base", "gru_base", "base_hidden", "v_out")
ERROR_NODES = ("conv_err", "err_hidden", "e_out")


class InsufficientHistoryError(ValueError):
    """Not enough completed slots to assemble a predictor state."""


@dataclass(frozen=True)
class BitrateRange:
    """Predicted range [v - e, v + e] in kbps."""

    v_kbps: float
    e_kbps: float

    def __post_init__(self):
        if not (self.v_kbps > 0.0):
            raise ValueError("baseline value must be > 0")
        if self.e_kbps < 0.0:
            raise ValueError("error offset must be >= 0")

    @property
    def low_kbps(self) -> float:
        return self.v_kbps - self.e_kbps

    @property
    def high_kbps(self) -> float:
        return self.v_kbps + self.e_kbps

    def covers(self, actual_kbps: float) -> bool:
        return abs(actual_kbps - self.v_kbps) <= self.e_kbps


@dataclass(frozen=True)
class CbpnConfig:
    window: int = 4
    si_max: float = 120.0
    ti_max: float = 80.0
    conv_filters: int = 32
    conv_kernel: int = 5
    gru_hidden: int = 32
    hidden: int = 32
    err_conv_filters: int = 32
    err_conv_kernel: int = 3
    coverage: float = 0.85

    def validate(self):
        if self.window < 1:
            raise ValueError("window must be >= 1")
        if not (0.0 < self.coverage < 1.0):
            raise ValueError("coverage target must be in (0, 1)")

    @property
    def warmup_seconds(self) -> int:
        """Completed slots needed before a state can be assembled."""
        return max(self.window, math.ceil((2 * self.window - 1) / 4))


@dataclass(frozen=True)
class CbpnState:
    """Normalized predictor input; rows oldest-first along the time axis."""

    bitrates: np.ndarray
    iframes: np.ndarray
    si: np.ndarray
    ti: np.ndarray
    dif: np.ndarray

    @property
    def matrix(self) -> np.ndarray:
        return np.stack([self.bitrates, self.iframes, self.si, self.ti, self.dif])

    def net_inputs(self) -> dict[str, np.ndarray]:
        return {"state": self.matrix, "dif": self.dif[None, :]}


def assemble_cbpn_state(
    targets: Sequence[float],
    actuals: Sequence[float],
    si_history: Sequence[float],
    ti_history: Sequence[float],
    iframe_seconds: Sequence[bool],
    next_iframe: bool,
    cfg: CbpnConfig,
) -> CbpnState:
    """Build the state for the upcoming slot from completed-slot history.

    ``targets``/``actuals`` are per-second values, oldest first;
    ``si_history``/``ti_history`` are the 4 Hz samples observed so far;
    ``iframe_seconds`` are per-second flags for the most recent completed
    seconds.  SI/TI rows take every other 4 Hz sample, newest-aligned, so
    ``window`` samples span the past ``window / 2`` seconds.
    """
    cfg.validate()
    w = cfg.window
    if len(targets) < w or len(actuals) < w:
        raise InsufficientHistoryError(
            f"need {w} completed slots, have {min(len(targets), len(actuals))}"
        )
    need_samples = 2 * w - 1
    if len(si_history) < need_samples or len(ti_history) < need_samples:
        raise InsufficientHistoryError(
            f"need {need_samples} complexity samples, have "
            f"{min(len(si_history), len(ti_history))}"
        )
    t = np.asarray(targets[-w:], dtype=np.float64)
    a = np.asarray(actuals[-w:], dtype=np.float64)
    si = np.asarray(si_history[-need_samples:], dtype=np.float64)[::2]
    ti = np.asarray(ti_history[-need_samples:], dtype=np.float64)[::2]
    flags = [bool(f) for f in iframe_seconds][-(w - 1) :] if w > 1 else []
    while len(flags) < w - 1:
        flags.insert(0, False)
    flags.append(bool(next_iframe))
    return CbpnState(
        bitrates=t / BITRATE_SCALE_KBPS,
        iframes=np.asarray(flags, dtype=np.float64),
        si=si / cfg.si_max,
        ti=ti / cfg.ti_max,
        dif=(t - a) / BITRATE_SCALE_KBPS,
    )


# ---------------------------------------------------------------------------
# Model
# ---------------------------------------------------------------------------


def build_cbpn_network(cfg: CbpnConfig, seed: int) -> Network:
    """Two-headed range predictor.

    The baseline branch runs a conv (same padding, so the nominal kernel
    width works on short windows) and a GRU over the state matrix, merges
    them, and regresses v through a linear head.  The error branch adds a
    conv over the dif row and maps the combined features through a softplus
    head, so e is non-negative by construction.
    """
    cfg.validate()
    rng = np.random.default_rng(seed)
    w = cfg.window
    net = Network()
    net.add_input("state")
    net.add_input("dif")
    net.add(
        "conv_base",
        Conv1d(STATE_ROWS, cfg.conv_filters, cfg.conv_kernel, padding="same", rng=rng),
        "state",
    )
    net.add("flat_base", Flatten(), "conv_base")
    net.add("gru_base", GRU(STATE_ROWS, cfg.gru_hidden, rng=rng), "state")
    net.add_concat("merge", ["flat_base", "gru_base"])
    merged = cfg.conv_filters * w + cfg.gru_hidden
    net.add("base_hidden", Dense(merged, cfg.hidden, "relu", rng=rng), "merge")
    net.add("v_out", Dense(cfg.hidden, 1, "linear", rng=rng), "base_hidden")
    net.add(
        "conv_err",
        Conv1d(1, cfg.err_conv_filters, cfg.err_conv_kernel, padding="same", rng=rng),
        "dif",
    )
    net.add("flat_err", Flatten(), "conv_err")
    net.add_concat("err_merge", ["merge", "flat_err"])
    net.add(
        "err_hidden",
        Dense(merged + cfg.err_conv_filters * w, cfg.hidden, "relu", rng=rng),
        "err_merge",
    )
    e_out = Dense(cfg.hidden, 1, "softplus", rng=rng)
    e_out.params["b"][...] = -2.0  # offsets start near a tenth of full scale
    net.add("e_out", e_out, "err_hidden")
    net.set_outputs(["v_out", "e_out"])
    return net


@dataclass
class CbpnModel:
    net: Network
    cfg: CbpnConfig

    def baseline_params(self) -> np.ndarray:
        return _subset_flat(self.net, BASELINE_NODES, grads=False)

    def save(self, path: str | Path) -> None:
        payload = {
            "format": "anableps-cbpn",
            "version": 1,
            "config": asdict(self.cfg),
            "params": self.net.params_payload(),
        }
        Path(path).write_text(json.dumps(payload, sort_keys=True), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "CbpnModel":
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
        if payload.get("format") != "anableps-cbpn":
            raise ValueError(f"{path}: not a range-predictor checkpoint")
        cfg = CbpnConfig(**payload["config"])
        model = new_cbpn_model(cfg, seed=0)
        model.net.load_params_payload(payload["params"])
        return model


def new_cbpn_model(cfg: CbpnConfig, seed: int) -> CbpnModel:
    return CbpnModel(net=build_cbpn_network(cfg, seed), cfg=cfg)


def predict_range(model: CbpnModel, state: CbpnState) -> BitrateRange:
    outs, _ = model.net.forward(state.net_inputs())
    v = float(outs["v_out"][0]) * BITRATE_SCALE_KBPS
    e = float(outs["e_out"][0]) * BITRATE_SCALE_KBPS
    return BitrateRange(v_kbps=max(v, _V_FLOOR_KBPS), e_kbps=e)


# ---------------------------------------------------------------------------
# Dataset
# ---------------------------------------------------------------------------


@dataclass
class CbpnDataset:
    states: np.ndarray  # (n, 5, window)
    actuals_kbps: np.ndarray  # (n,)
    session_ids: np.ndarray  # (n,)

    def __len__(self) -> int:
        return len(self.actuals_kbps)

    def inputs(self, i: int) -> dict[str, np.ndarray]:
        m = self.states[i]
        return {"state": m, "dif": m[4][None, :]}


def random_walk_targets(
    n: int, rng: np.random.Generator, step_kbps: float = 800.0
) -> np.ndarray:
    """Random target walk within the encoder range, mimicking live decisions."""
    t = np.empty(n)
    cur = rng.uniform(BITRATE_MIN_KBPS, BITRATE_MAX_KBPS)
    for i in range(n):
        t[i] = cur
        cur = float(
            np.clip(
                cur + rng.uniform(-step_kbps, step_kbps),
                BITRATE_MIN_KBPS,
                BITRATE_MAX_KBPS,
            )
        )
    return t


def build_cbpn_dataset(
    videos: Sequence[ComplexityTrace],
    enc: EncoderConfig,
    cfg: CbpnConfig,
    seed: int,
    sessions_per_video: int = 2,
    session_len_s: int | None = None,
) -> CbpnDataset:
    """Encoder-only rollouts with random-walk targets.

    No network is involved: the label for each state is the actual bitrate
    the encoder produced for the upcoming slot.
    """
    states, labels, sids = [], [], []
    ss = np.random.SeedSequence(seed)
    session_id = 0
    for video in videos:
        for child in ss.spawn(sessions_per_video):
            rng = np.random.default_rng(child)
            n_sec = int(video.duration_s) if session_len_s is None else session_len_s
            n_sec = min(n_sec, int(video.duration_s))
            targets = random_walk_targets(n_sec, rng)
            enc_state = EncoderState()
            t_hist: list[float] = []
            a_hist: list[float] = []
            warm = cfg.warmup_seconds
            for sec in range(n_sec):
                flags = iframe_flags_for_second(video, enc.fps, enc.gop_frames, sec)
                if sec >= warm:
                    k = int(round(sec / video.period_s))
                    state = assemble_cbpn_state(
                        t_hist,
                        a_hist,
                        video.si[:k],
                        video.ti[:k],
                        [video.iframe_in_second(s) for s in range(sec)],
                        any(flags),
                        cfg,
                    )
                else:
                    state = None
                si, ti = video.samples_in(float(sec), float(sec + 1))
                slot, enc_state = encode_slot(
                    float(targets[sec]),
                    list(zip(si.tolist(), ti.tolist())),
                    flags,
                    enc_state,
                    enc,
                    rng,
                    slot_index=sec,
                )
                t_hist.append(slot.target_kbps)
                a_hist.append(slot.actual_kbps)
                if state is not None:
                    states.append(state.matrix)
                    labels.append(slot.actual_kbps)
                    sids.append(session_id)
            session_id += 1
    if not states:
        raise ValueError("no samples produced; sessions shorter than warmup?")
    return CbpnDataset(
        states=np.stack(states),
        actuals_kbps=np.asarray(labels),
        session_ids=np.asarray(sids, dtype=np.int64),
    )


def save_cbpn_dataset(dataset: CbpnDataset, path: str | Path) -> None:
    """Persist a dataset as a compressed npz (states, labels, session ids)."""
    np.savez_compressed(
        str(path),
        states=dataset.states,
        actuals_kbps=dataset.actuals_kbps,
        session_ids=dataset.session_ids,
    )


def load_cbpn_dataset(path: str | Path) -> CbpnDataset:
    with np.load(str(path)) as data:
        return CbpnDataset(
            states=data["states"],
            actuals_kbps=data["actuals_kbps"],
            session_ids=data["session_ids"],
        )


def split_by_session(
    dataset: CbpnDataset, val_fraction: float, seed: int
) -> tuple[np.ndarray, np.ndarray]:
    """Train/validation index split keeping whole sessions together."""
    sessions = np.unique(dataset.session_ids)
    rng = np.random.default_rng(seed)
    rng.shuffle(sessions)
    n_val = max(1, int(round(val_fraction * len(sessions))))
    val_set = set(sessions[:n_val].tolist())
    mask = np.array([sid in val_set for sid in dataset.session_ids])
    return np.where(~mask)[0], np.where(mask)[0]


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CbpnTrainConfig:
    epochs: int = 25
    batch_size: int = 32
    lr: float = 1e-3
    seed: int = 0


def _subset_names(net: Network, nodes: Sequence[str]) -> list[tuple[str, str]]:
    out = []
    for name, layer in net.layers():
        if name in nodes:
            for pname in sorted(layer.params):
                out.append((name, pname))
    return out


def _subset_flat(net: Network, nodes: Sequence[str], grads: bool) -> np.ndarray:
    layers = dict(net.layers())
    parts = []
    for name, pname in _subset_names(net, nodes):
        src = layers[name].grads if grads else layers[name].params
        parts.append(src[pname].ravel())
    return np.concatenate(parts)


def _set_subset_flat(net: Network, nodes: Sequence[str], vec: np.ndarray) -> None:
    layers = dict(net.layers())
    offset = 0
    for name, pname in _subset_names(net, nodes):
        p = layers[name].params[pname]
        p[...] = vec[offset : offset + p.size].reshape(p.shape)
        offset += p.size


def _train_head(
    model: CbpnModel,
    dataset: CbpnDataset,
    indices: np.ndarray,
    hyper: CbpnTrainConfig,
    nodes: Sequence[str],
    wanted: tuple[str, ...],
    grad_fn,
) -> list[dict]:
    """Minibatch Adam over one parameter subset; returns the loss curve."""
    net = model.net
    adam_cfg = AdamConfig(lr=hyper.lr)
    flat = _subset_flat(net, nodes, grads=False)
    state = AdamState.zeros(flat.size)
    rng = np.random.default_rng(hyper.seed)
    y_norm = dataset.actuals_kbps / BITRATE_SCALE_KBPS
    curve = []
    step = 0
    order = np.array(indices, dtype=np.int64)
    for epoch in range(hyper.epochs):
        rng.shuffle(order)
        losses = []
        for start in range(0, len(order), hyper.batch_size):
            batch = order[start : start + hyper.batch_size]
            net.zero_grads()
            batch_loss = 0.0
            for i in batch:
                outs, cache = net.forward(dataset.inputs(int(i)), wanted=wanted)
                loss, out_grads = grad_fn(outs, float(y_norm[i]))
                out_grads = {
                    k: np.asarray(v) / len(batch) for k, v in out_grads.items()
                }
                net.backward(cache, out_grads)
                batch_loss += loss
            losses.append(batch_loss / len(batch))
            step += 1
            flat = _subset_flat(net, nodes, grads=False)
            grads = _subset_flat(net, nodes, grads=True)
            flat, state = adam_step(flat, grads, adam_cfg, state, step)
            _set_subset_flat(net, nodes, flat)
        curve.append({"epoch": epoch, "loss": float(np.mean(losses))})
    return curve


def train_baseline(
    dataset: CbpnDataset,
    hyper: CbpnTrainConfig = CbpnTrainConfig(),
    cfg: CbpnConfig = CbpnConfig(),
    model: CbpnModel | None = None,
    indices: np.ndarray | None = None,
) -> tuple[CbpnModel, list[dict]]:
    """Fit the baseline head with mean-squared error on the normalized scale."""
    if len(dataset) < 1:
        raise ValueError("empty dataset")
    if model is None:
        model = new_cbpn_model(cfg, seed=hyper.seed)
    idx = np.arange(len(dataset)) if indices is None else indices

    def grad_fn(outs, y):
        v = float(outs["v_out"][0])
        return (v - y) ** 2, {"v_out": np.array([2.0 * (v - y)])}

    curve = _train_head(model, dataset, idx, hyper, BASELINE_NODES, ("v_out",), grad_fn)
    return model, curve


def train_error(
    dataset: CbpnDataset,
    model: CbpnModel,
    hyper: CbpnTrainConfig = CbpnTrainConfig(),
    coverage: float | None = None,
    indices: np.ndarray | None = None,
) -> tuple[CbpnModel, list[dict]]:
    """Fit the error head with pinball loss at the coverage quantile.

    Baseline parameters receive no updates and are bit-identical afterwards;
    gradients only flow into the error branch.
    """
    if model is None:
        raise ValueError("train the baseline first")
    c = model.cfg.coverage if coverage is None else coverage
    idx = np.arange(len(dataset)) if indices is None else indices
    v_floor = _V_FLOOR_KBPS / BITRATE_SCALE_KBPS

    def grad_fn(outs, y):
        # residuals of the deployed predictor, which floors v
        v = max(float(outs["v_out"][0]), v_floor)
        e = float(outs["e_out"][0])
        rho = abs(y - v)
        loss = max(c * (rho - e), (1.0 - c) * (e - rho))
        if rho > e:
            de = -c
        elif rho < e:
            de = 1.0 - c
        else:
            de = 0.0
        return loss, {"e_out": np.array([de])}

    curve = _train_head(
        model, dataset, idx, hyper, ERROR_NODES, ("v_out", "e_out"), grad_fn
    )
    return model, curve


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CbpnMetrics:
    mad: float  # normalized by the 6100 kbps scale
    pcc: float  # nan when either series has zero variance
    cr: float


def predict_batch(
    model: CbpnModel, dataset: CbpnDataset, indices: np.ndarray | None = None
) -> tuple[np.ndarray, np.ndarray]:
    idx = np.arange(len(dataset)) if indices is None else indices
    v = np.empty(len(idx))
    e = np.empty(len(idx))
    for j, i in enumerate(idx):
        r = predict_range(model, _state_from_matrix(dataset.states[int(i)]))
        v[j], e[j] = r.v_kbps, r.e_kbps
    return v, e


def _state_from_matrix(m: np.ndarray) -> CbpnState:
    return CbpnState(bitrates=m[0], iframes=m[1], si=m[2], ti=m[3], dif=m[4])


def range_metrics(
    v: np.ndarray, e: np.ndarray, actual: np.ndarray
) -> CbpnMetrics:
    """MAD / PCC / cover-ratio of predictions against actual bitrates."""
    v = np.asarray(v, dtype=np.float64)
    e = np.asarray(e, dtype=np.float64)
    actual = np.asarray(actual, dtype=np.float64)
    if len(v) == 0:
        raise ValueError("empty evaluation set")
    mad = float(np.mean(np.abs(v - actual))) / BITRATE_SCALE_KBPS
    dv = v - v.mean()
    da = actual - actual.mean()
    sv = math.sqrt(float(dv @ dv))
    sa = math.sqrt(float(da @ da))
    pcc = float(dv @ da) / (sv * sa) if sv > 0.0 and sa > 0.0 else math.nan
    cr = float(np.mean(np.abs(actual - v) <= e))
    return CbpnMetrics(mad=mad, pcc=pcc, cr=cr)


def eval_metrics(
    model: CbpnModel, dataset: CbpnDataset, indices: np.ndarray | None = None
) -> CbpnMetrics:
    idx = np.arange(len(dataset)) if indices is None else indices
    v, e = predict_batch(model, dataset, idx)
    return range_metrics(v, e, dataset.actuals_kbps[idx])
