"""Deterministic sender -> bottleneck -> receiver simulation.

One session advances in 1 s decision slots.  Each slot the policy picks a
target bitrate, the encoder emits 25 frames, the packets are paced uniformly
across the second (never before their frame's capture time), and a drop-tail
FIFO bottleneck drains them at the trace bandwidth.  The receiver reassembles
frames, NACKs sequence gaps once per RTT (retransmission limit 3, 2 s frame
deadline), and per-second observations are aggregated from the event log.

Queue drain times are computed exactly (bandwidth is constant within each
0.5 s trace sample), while receiver decisions (gap detection, NACK emission,
deadline checks) happen at tick granularity.  Everything is a pure function
of (policy, traces, configs, seed).
"""

from __future__ import annotations

import heapq
import json
import math
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .constants import STALL_FPS_THRESHOLD
from .media import (
    EncodedSlot,
    EncoderConfig,
    EncoderState,
    Packet,
    QualityModel,
    encode_slot,
    normalized_complexity,
    packetize,
    quality_score,
)
from .rewards import FRAME_DELAY_CLAMP_S, RewardParams, reward
from .traces import ComplexityTrace, NetworkTrace, iframe_flags_for_second

_EPS = 1e-9

NACK_RETX_LIMIT = 3
FRAME_DEADLINE_S = 2.0
SRTT_GAIN = 0.125

SESSION_CSV_COLUMNS = (
    "second,decision_kbps,actual_kbps,send_kbps,recv_kbps,rtt_s,loss,nack,"
    "frame_delay_s,lost_frame_rate,played_fps,quality,reward"
)


class SessionError(ValueError):
    """Configuration mismatch between traces, encoder, and duration."""


@dataclass(frozen=True)
class LinkConfig:
    trace: NetworkTrace
    base_owd_s: float = 0.025
    queue_capacity_bytes: float | None = None  # None: 150% of 1 s at mean bw
    tick_s: float = 0.010
    random_loss: float = 0.0

    def validate(self):
        if self.base_owd_s < 0:
            raise SessionError("base_owd must be >= 0")
        if self.queue_capacity_bytes is not None and self.queue_capacity_bytes <= 0:
            raise SessionError("queue_capacity must be > 0")
        if not (0.0 <= self.random_loss < 1.0):
            raise SessionError("random_loss must be in [0, 1)")
        if self.tick_s <= 0:
            raise SessionError("tick must be > 0")

    def capacity_bytes(self) -> float:
        if self.queue_capacity_bytes is not None:
            return float(self.queue_capacity_bytes)
        return 1.5 * self.trace.mean_kbps() * 125.0


@dataclass(frozen=True)
class ReceiverObservation:
    """Per-second receiver-side feedback."""

    second: int
    send_kbps: float
    recv_kbps: float
    rtt_s: float
    loss_rate: float
    nack_count: int
    frame_delay_s: float
    lost_frame_rate: float
    played_fps: int


@dataclass(frozen=True)
class TransmissionRecord:
    seq: int
    frame_id: int
    size_bytes: int
    kind: str  # "first" | "retx"
    send_time: float
    arrival_time: float | None
    drop_reason: str | None  # None | "queue" | "random"

    @property
    def dropped(self) -> bool:
        return self.arrival_time is None


@dataclass(frozen=True)
class NackRecord:
    seq: int
    emit_time: float
    arrive_time: float


@dataclass
class FrameRecord:
    frame_id: int
    capture_time: float
    size_bytes: int
    is_iframe: bool
    n_packets: int
    complete_time: float | None = None
    lost_time: float | None = None


@dataclass(frozen=True)
class SecondRecord:
    second: int
    decision_kbps: float
    actual_kbps: float
    observation: ReceiverObservation
    quality: float
    reward: float


class SessionLog:
    """Event log of one session, bucketed by second for fast aggregation."""

    def __init__(self):
        self.seconds: list[SecondRecord] = []
        self.transmissions: list[TransmissionRecord] = []
        self.nacks: list[NackRecord] = []
        self.frames: list[FrameRecord] = []
        self._tx_by_send: dict[int, list[TransmissionRecord]] = {}
        self._tx_by_arrival: dict[int, list[TransmissionRecord]] = {}
        self._nacks_by_emit: dict[int, list[NackRecord]] = {}
        self._frames_by_capture: dict[int, list[FrameRecord]] = {}
        self._frames_by_complete: dict[int, list[FrameRecord]] = {}
        self._frames_by_lost: dict[int, list[FrameRecord]] = {}

    @staticmethod
    def _bucket(t: float) -> int:
        return int(math.floor(t + _EPS))

    def add_transmission(self, rec: TransmissionRecord) -> None:
        self.transmissions.append(rec)
        self._tx_by_send.setdefault(self._bucket(rec.send_time), []).append(rec)
        if rec.arrival_time is not None:
            self._tx_by_arrival.setdefault(
                self._bucket(rec.arrival_time), []
            ).append(rec)

    def add_nack(self, rec: NackRecord) -> None:
        self.nacks.append(rec)
        self._nacks_by_emit.setdefault(self._bucket(rec.emit_time), []).append(rec)

    def add_frame(self, rec: FrameRecord) -> None:
        self.frames.append(rec)
        self._frames_by_capture.setdefault(
            self._bucket(rec.capture_time), []
        ).append(rec)

    def mark_frame_complete(self, frame_id: int, t: float) -> None:
        rec = self.frames[frame_id]
        rec.complete_time = t
        self._frames_by_complete.setdefault(self._bucket(t), []).append(rec)

    def mark_frame_lost(self, frame_id: int, t: float) -> None:
        rec = self.frames[frame_id]
        rec.lost_time = t
        self._frames_by_lost.setdefault(self._bucket(t), []).append(rec)

    def add_second(self, rec: SecondRecord) -> None:
        self.seconds.append(rec)

    # -- exports -----------------------------------------------------------

    def played_fps_series(self) -> list[int]:
        return [rec.observation.played_fps for rec in self.seconds]

    def rows(self) -> list[str]:
        rows = [SESSION_CSV_COLUMNS]
        for rec in self.seconds:
            o = rec.observation
            rows.append(
                ",".join(
                    str(v)
                    for v in (
                        rec.second,
                        rec.decision_kbps,
                        rec.actual_kbps,
                        o.send_kbps,
                        o.recv_kbps,
                        o.rtt_s,
                        o.loss_rate,
                        o.nack_count,
                        o.frame_delay_s,
                        o.lost_frame_rate,
                        o.played_fps,
                        rec.quality,
                        rec.reward,
                    )
                )
            )
        return rows

    def write_csv(self, path: str | Path) -> None:
        Path(path).write_text("\n".join(self.rows()) + "\n", encoding="utf-8")

    def summary(self) -> dict:
        def mean(values):
            vals = list(values)
            return float(np.mean(vals)) if vals else 0.0

        secs = self.seconds
        return {
            "seconds": len(secs),
            "mean_decision_kbps": mean(r.decision_kbps for r in secs),
            "mean_actual_kbps": mean(r.actual_kbps for r in secs),
            "mean_send_kbps": mean(r.observation.send_kbps for r in secs),
            "mean_recv_kbps": mean(r.observation.recv_kbps for r in secs),
            "mean_rtt_s": mean(r.observation.rtt_s for r in secs),
            "mean_loss": mean(r.observation.loss_rate for r in secs),
            "total_nacks": int(sum(r.observation.nack_count for r in secs)),
            "mean_frame_delay_s": mean(r.observation.frame_delay_s for r in secs),
            "mean_lost_frame_rate": mean(r.observation.lost_frame_rate for r in secs),
            "mean_played_fps": mean(r.observation.played_fps for r in secs),
            "mean_quality": mean(r.quality for r in secs),
            "mean_reward": mean(r.reward for r in secs),
            "stalling_ratio": stalling_ratio(self.played_fps_series())
            if secs
            else 0.0,
            "bytes_sent": int(sum(t.size_bytes for t in self.transmissions)),
            "bytes_arrived": int(
                sum(t.size_bytes for t in self.transmissions if not t.dropped)
            ),
        }

    def write_summary_json(self, path: str | Path) -> None:
        Path(path).write_text(
            json.dumps(self.summary(), sort_keys=True, indent=2) + "\n",
            encoding="utf-8",
        )


def stalling_ratio(played_fps_per_second: Sequence[float]) -> float:
    """Fraction of seconds whose played frame rate fell below 12 fps."""
    if not len(played_fps_per_second):
        raise ValueError("need at least one second of playback")
    low = sum(1 for f in played_fps_per_second if f < STALL_FPS_THRESHOLD)
    return low / len(played_fps_per_second)


def receiver_stats(
    log: SessionLog,
    second: int,
    *,
    base_owd_s: float,
    prev_rtt_s: float | None = None,
) -> ReceiverObservation:
    """Aggregate one window [second, second+1) of the event log.

    Sending rate counts every byte handed to the link (retransmissions and
    queue drops included); loss rate counts first transmissions only.  The
    lost-frame rate divides losses declared during the window by frames
    captured in it, and the frame delay falls back to the 2 s clamp ceiling
    when nothing completed (a fully stalled second).
    """
    sent = log._tx_by_send.get(second, ())
    arrived = log._tx_by_arrival.get(second, ())
    nacks = log._nacks_by_emit.get(second, ())
    captured = log._frames_by_capture.get(second, ())
    completed = log._frames_by_complete.get(second, ())
    lost = log._frames_by_lost.get(second, ())

    send_kbps = sum(t.size_bytes for t in sent) * 8.0 / 1000.0
    recv_kbps = sum(t.size_bytes for t in arrived) * 8.0 / 1000.0

    firsts = [t for t in sent if t.kind == "first"]
    p = (sum(1 for t in firsts if t.dropped) / len(firsts)) if firsts else 0.0

    rtts = [t.arrival_time - t.send_time + base_owd_s for t in arrived]
    if rtts:
        d = float(np.mean(rtts))
    else:
        d = prev_rtt_s if prev_rtt_s is not None else 2.0 * base_owd_s

    delays = [f.complete_time - f.capture_time for f in completed]
    f_mean = float(np.mean(delays)) if delays else FRAME_DELAY_CLAMP_S

    h = min(1.0, len(lost) / len(captured)) if captured else 0.0

    return ReceiverObservation(
        second=second,
        send_kbps=send_kbps,
        recv_kbps=recv_kbps,
        rtt_s=d,
        loss_rate=p,
        nack_count=len(nacks),
        frame_delay_s=f_mean,
        lost_frame_rate=h,
        played_fps=len(completed),
    )


# ---------------------------------------------------------------------------
# Link and receiver machinery
# ---------------------------------------------------------------------------


class _Link:
    """Drop-tail FIFO bottleneck with exact drain times."""

    def __init__(
        self,
        trace: NetworkTrace,
        base_owd_s: float,
        capacity_bytes: float,
        random_loss: float,
        rng: np.random.Generator,
    ):
        self._trace = trace
        self._owd = base_owd_s
        self._capacity = capacity_bytes
        self._loss = random_loss
        self._rng = rng
        self._busy_until = 0.0
        self._inflight: deque[tuple[float, int]] = deque()
        self._occupancy = 0

    def _drain(self, t: float) -> None:
        q = self._inflight
        while q and q[0][0] <= t + _EPS:
            self._occupancy -= q.popleft()[1]

    def _finish_time(self, start: float, size_bytes: int) -> float:
        trace = self._trace
        g = trace.granularity_s
        t0 = float(trace.times_s[0])
        n = len(trace.bandwidth_kbps)
        k = int(math.floor((start - t0) / g + _EPS))
        k = min(max(k, 0), n - 1)
        t = start
        remaining = float(size_bytes)
        while True:
            rate = trace.bandwidth_kbps[k] * 125.0  # bytes/s
            if k >= n - 1:
                return t + remaining / rate  # hold last value past trace end
            seg_end = t0 + (k + 1) * g
            can = rate * (seg_end - t)
            if remaining <= can + _EPS:
                return t + remaining / rate
            remaining -= can
            t = seg_end
            k += 1

    def offer(self, size_bytes: int, t: float) -> tuple[float | None, str | None]:
        """Enqueue at time t; returns (arrival_time, None) or (None, reason)."""
        if self._loss > 0.0 and self._rng.random() < self._loss:
            return None, "random"
        self._drain(t)
        if self._occupancy + size_bytes > self._capacity + _EPS:
            return None, "queue"
        start = max(t, self._busy_until)
        finish = self._finish_time(start, size_bytes)
        self._busy_until = finish
        self._inflight.append((finish, size_bytes))
        self._occupancy += size_bytes
        return finish + self._owd, None

    @property
    def occupancy_bytes(self) -> int:
        return self._occupancy


@dataclass
class _MissingState:
    frame_id: int
    nacks_sent: int = 0
    last_nack_time: float = -math.inf


@dataclass
class _FrameAssembly:
    record: FrameRecord
    got: set = field(default_factory=set)
    done: bool = False  # complete or lost


class _Receiver:
    """Frame reassembly, gap-triggered NACKs, and loss declaration."""

    def __init__(self, base_owd_s: float):
        self._owd = base_owd_s
        self.srtt = 2.0 * base_owd_s
        self.highest_seq = -1
        self._next_gap_scan = 0
        self._arrived: set[int] = set()
        self._missing: dict[int, _MissingState] = {}
        self._nack_heap: list[tuple[float, int]] = []  # (eligible_time, seq)
        self._frames: dict[int, _FrameAssembly] = {}
        self._pending_frames: deque[int] = deque()  # capture order

    def register_frame(self, rec: FrameRecord) -> None:
        self._frames[rec.frame_id] = _FrameAssembly(record=rec)
        self._pending_frames.append(rec.frame_id)

    def on_arrival(
        self, seq: int, pkt: Packet, send_time: float, arrival_time: float, log: SessionLog
    ) -> None:
        rtt = arrival_time - send_time + self._owd
        self.srtt += SRTT_GAIN * (rtt - self.srtt)
        if seq in self._arrived:
            return  # duplicate retransmission
        self._arrived.add(seq)
        self._missing.pop(seq, None)
        self.highest_seq = max(self.highest_seq, seq)
        asm = self._frames.get(pkt.frame_id)
        if asm is None or asm.done:
            return  # late packet of a finished or lost frame
        asm.got.add(pkt.index_in_frame)
        if len(asm.got) == asm.record.n_packets:
            asm.done = True
            log.mark_frame_complete(pkt.frame_id, arrival_time)

    def _declare_lost(self, frame_id: int, now: float, log: SessionLog) -> None:
        asm = self._frames.get(frame_id)
        if asm is None or asm.done:
            return
        asm.done = True
        log.mark_frame_lost(frame_id, now)
        stale = [s for s, st in self._missing.items() if st.frame_id == frame_id]
        for s in stale:
            del self._missing[s]

    def tick(
        self,
        now: float,
        seq_frame: list[int],
        log: SessionLog,
    ) -> list[int]:
        """Run receiver logic at a tick boundary; returns seqs to retransmit."""
        # gap detection: anything below the highest delivered seq is missing
        while self._next_gap_scan <= self.highest_seq:
            seq = self._next_gap_scan
            self._next_gap_scan += 1
            if seq in self._arrived:
                continue
            frame_id = seq_frame[seq]
            asm = self._frames.get(frame_id)
            if asm is not None and not asm.done:
                self._missing[seq] = _MissingState(frame_id=frame_id)
                heapq.heappush(self._nack_heap, (now, seq))

        retx: list[int] = []
        wait = max(self.srtt, 2.0 * self._owd)
        while self._nack_heap and self._nack_heap[0][0] <= now + _EPS:
            _, seq = heapq.heappop(self._nack_heap)
            st = self._missing.get(seq)
            if st is None:
                continue  # recovered in the meantime
            asm = self._frames[st.frame_id]
            if asm.done:
                del self._missing[seq]
                continue
            if st.nacks_sent >= NACK_RETX_LIMIT:
                self._declare_lost(st.frame_id, now, log)
                continue
            st.nacks_sent += 1
            st.last_nack_time = now
            log.add_nack(NackRecord(seq=seq, emit_time=now, arrive_time=now + self._owd))
            retx.append(seq)
            heapq.heappush(self._nack_heap, (now + wait, seq))

        # 2 s playout deadline, oldest frames first
        while self._pending_frames:
            fid = self._pending_frames[0]
            asm = self._frames[fid]
            if asm.done:
                self._pending_frames.popleft()
                continue
            if now - asm.record.capture_time > FRAME_DEADLINE_S + _EPS:
                self._declare_lost(fid, now, log)
                self._pending_frames.popleft()
                continue
            break
        return retx


# ---------------------------------------------------------------------------
# Session runner
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DecisionContext:
    """Everything a bitrate policy may consult when deciding slot ``second``."""

    second: int
    prev_target_kbps: float
    targets: tuple[float, ...]
    actuals: tuple[float, ...]
    observations: tuple[ReceiverObservation, ...]
    video: ComplexityTrace
    iframe_seconds: tuple[bool, ...]

    @property
    def iframe_next(self) -> bool:
        return self.iframe_seconds[self.second]


class SessionRunner:
    """Advances one session second by second; drives encoder, link, receiver."""

    def __init__(
        self,
        video: ComplexityTrace,
        link: LinkConfig,
        enc: EncoderConfig,
        qm: QualityModel,
        duration_s: int,
        seed: int,
        reward_params: RewardParams = RewardParams(),
        initial_bitrate_kbps: float | None = None,
    ):
        link.validate()
        enc.validate()
        qm.validate()
        reward_params.validate()
        if duration_s < 1:
            raise SessionError("duration must be >= 1 s")
        if abs(float(link.trace.times_s[0])) > _EPS:
            raise SessionError("network trace must start at t=0")
        if duration_s > link.trace.duration_s + _EPS:
            raise SessionError(
                f"duration {duration_s}s exceeds trace length {link.trace.duration_s}s"
            )
        if duration_s > video.duration_s + _EPS:
            raise SessionError(
                f"duration {duration_s}s exceeds video length {video.duration_s}s"
            )
        if video.fps is not None and int(video.fps) != enc.fps:
            raise SessionError(
                f"video fps {video.fps} does not match encoder fps {enc.fps}"
            )
        self.video = video
        self.link_cfg = link
        self.enc_cfg = enc
        self.qm = qm
        self.duration_s = int(duration_s)
        self.reward_params = reward_params
        self.initial_bitrate = (
            float(initial_bitrate_kbps)
            if initial_bitrate_kbps is not None
            else enc.min_bitrate
        )

        ss = np.random.SeedSequence(seed)
        enc_seed, loss_seed = ss.spawn(2)
        self._enc_rng = np.random.default_rng(enc_seed)
        self._link = _Link(
            trace=link.trace,
            base_owd_s=link.base_owd_s,
            capacity_bytes=link.capacity_bytes(),
            random_loss=link.random_loss,
            rng=np.random.default_rng(loss_seed),
        )
        self._receiver = _Receiver(base_owd_s=link.base_owd_s)
        self.log = SessionLog()

        self._iframe_flags = self._build_iframe_schedule()
        self.iframe_seconds = tuple(any(flags) for flags in self._iframe_flags)

        self._enc_state = EncoderState()
        self._second = 0
        self._frame_count = 0
        self._seq_count = 0
        self._packets: list[Packet] = []  # by seq
        self._seq_frame: list[int] = []  # by seq
        self._send_events: list[tuple[float, int, int, str]] = []  # heap
        self._event_count = 0
        self._arrivals: list[tuple[float, int, int, float]] = []  # heap
        self.targets: list[float] = []
        self.actuals: list[float] = []
        self.observations: list[ReceiverObservation] = []

    def _build_iframe_schedule(self) -> list[list[bool]]:
        fps, gop = self.enc_cfg.fps, self.enc_cfg.gop_frames
        return [
            iframe_flags_for_second(self.video, fps, gop, sec)
            for sec in range(self.duration_s)
        ]

    @property
    def second(self) -> int:
        return self._second

    @property
    def prev_target(self) -> float:
        return self.targets[-1] if self.targets else self.initial_bitrate

    def context(self) -> DecisionContext:
        return DecisionContext(
            second=self._second,
            prev_target_kbps=self.prev_target,
            targets=tuple(self.targets),
            actuals=tuple(self.actuals),
            observations=tuple(self.observations),
            video=self.video,
            iframe_seconds=self.iframe_seconds,
        )

    def done(self) -> bool:
        return self._second >= self.duration_s

    # -- one second --------------------------------------------------------

    def step(self, target_kbps: float) -> SecondRecord:
        if self.done():
            raise SessionError("session already finished")
        sec = self._second
        slot = self._encode_and_schedule(sec, float(target_kbps))
        self._run_ticks(sec)
        record = self._close_second(sec, slot)
        self._second += 1
        return record

    def _encode_and_schedule(self, sec: int, target_kbps: float) -> EncodedSlot:
        si, ti = self.video.samples_in(float(sec), float(sec + 1))
        complexity = list(zip(si.tolist(), ti.tolist()))
        slot, self._enc_state = encode_slot(
            target_kbps,
            complexity,
            self._iframe_flags[sec],
            self._enc_state,
            self.enc_cfg,
            self._enc_rng,
            slot_index=sec,
        )
        self.targets.append(slot.target_kbps)
        self.actuals.append(slot.actual_kbps)

        packets: list[tuple[Packet, int]] = []
        for ef in slot.frames:
            fid = self._frame_count
            self._frame_count += 1
            pkts = packetize(
                ef.size_bytes, ef.capture_time, fid, is_iframe=ef.is_iframe
            )
            rec = FrameRecord(
                frame_id=fid,
                capture_time=ef.capture_time,
                size_bytes=ef.size_bytes,
                is_iframe=ef.is_iframe,
                n_packets=len(pkts),
            )
            self.log.add_frame(rec)
            self._receiver.register_frame(rec)
            for p in pkts:
                packets.append((p, fid))

        n = len(packets)
        for j, (pkt, fid) in enumerate(packets):
            seq = self._seq_count
            self._seq_count += 1
            self._packets.append(pkt)
            self._seq_frame.append(fid)
            send_t = max(sec + j / n, pkt.capture_time)
            self._push_send(send_t, seq, kind="first")
        return slot

    def _push_send(self, t: float, seq: int, kind: str) -> None:
        heapq.heappush(self._send_events, (t, self._event_count, seq, kind))
        self._event_count += 1

    def _transmit(self, t: float, seq: int, kind: str) -> None:
        pkt = self._packets[seq]
        arrival, reason = self._link.offer(pkt.size_bytes, t)
        rec = TransmissionRecord(
            seq=seq,
            frame_id=pkt.frame_id,
            size_bytes=pkt.size_bytes,
            kind=kind,
            send_time=t,
            arrival_time=arrival,
            drop_reason=reason,
        )
        self.log.add_transmission(rec)
        if arrival is not None:
            heapq.heappush(self._arrivals, (arrival, seq, self._event_count, t))
            self._event_count += 1
        elif kind == "first":
            # a dropped first transmission becomes visible to the receiver
            # only through the sequence gap once later packets land
            pass

    def _run_ticks(self, sec: int) -> None:
        tick = self.link_cfg.tick_s
        n_ticks = max(1, int(round(1.0 / tick)))
        for i in range(n_ticks):
            tick_end = sec + (i + 1) * tick
            while self._send_events and self._send_events[0][0] < tick_end - _EPS:
                t, _, seq, kind = heapq.heappop(self._send_events)
                self._transmit(t, seq, kind)
            while self._arrivals and self._arrivals[0][0] <= tick_end + _EPS:
                arrival, seq, _, send_t = heapq.heappop(self._arrivals)
                self._receiver.on_arrival(
                    seq, self._packets[seq], send_t, arrival, self.log
                )
            retx = self._receiver.tick(tick_end, self._seq_frame, self.log)
            for seq in retx:
                self._push_send(tick_end + self.link_cfg.base_owd_s, seq, "retx")

    def _close_second(self, sec: int, slot: EncodedSlot) -> SecondRecord:
        prev_d = self.observations[-1].rtt_s if self.observations else None
        obs = receiver_stats(
            self.log, sec, base_owd_s=self.link_cfg.base_owd_s, prev_rtt_s=prev_d
        )
        self.observations.append(obs)

        completed = self.log._frames_by_complete.get(sec, ())
        played_kbps = sum(f.size_bytes for f in completed) * 8.0 / 1000.0
        si, ti = self.video.samples_in(float(sec), float(sec + 1))
        m = quality_score(played_kbps, normalized_complexity(si, ti, self.qm), self.qm)
        m_prev = self.log.seconds[-1].quality if self.log.seconds else m
        r = reward(
            m, m_prev, obs.lost_frame_rate, obs.frame_delay_s, self.reward_params
        )
        record = SecondRecord(
            second=sec,
            decision_kbps=slot.target_kbps,
            actual_kbps=slot.actual_kbps,
            observation=obs,
            quality=m,
            reward=r,
        )
        self.log.add_second(record)
        return record


PolicyFn = Callable[[DecisionContext], float]


def run_session(
    policy: PolicyFn,
    video: ComplexityTrace,
    link: LinkConfig,
    enc: EncoderConfig,
    qm: QualityModel,
    duration_s: int,
    seed: int,
    reward_params: RewardParams = RewardParams(),
    initial_bitrate_kbps: float | None = None,
) -> SessionLog:
    """Run one closed-loop session under ``policy`` and return its log."""
    runner = SessionRunner(
        video=video,
        link=link,
        enc=enc,
        qm=qm,
        duration_s=duration_s,
        seed=seed,
        reward_params=reward_params,
        initial_bitrate_kbps=initial_bitrate_kbps,
    )
    decide = policy.decide if hasattr(policy, "decide") else policy
    while not runner.done():
        runner.step(decide(runner.context()))
    return runner.log
