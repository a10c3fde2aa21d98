"""Network-bandwidth and content-complexity traces: ingestion, synthesis, SI/TI.

Network traces are CSV files (header ``time_s,bandwidth_kbps``) resampled onto
a fixed 0.5 s grid.  Complexity traces are CSV files (header ``time_s,si,ti``)
sampled at 4 Hz, optionally accompanied by a sidecar
``<stem>.iframes.csv`` that carries the I-frame schedule::

    [meta]
    fps,25
    gop_frames,125
    [iframes]
    iframe_times_s
    0.0
    5.0

SI/TI of raw luminance video follow the usual convention: SI is the standard
deviation of the Sobel gradient magnitude, TI the standard deviation of the
frame difference, both computed on frames downsampled to 192x108 and 4 FPS.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .constants import COMPLEXITY_PERIOD_S, NET_TRACE_GRANULARITY_S

_TIME_TOL = 1e-9

SITI_TARGET_HEIGHT = 108
SITI_TARGET_WIDTH = 192
SITI_TARGET_FPS = 4.0


class TraceError(ValueError):
    """Malformed or invalid trace data."""


@dataclass
class NetworkTrace:
    """Available bandwidth over time on the 0.5 s grid.

    ``bandwidth_kbps[i]`` holds from ``times_s[i]`` until the next sample
    (piecewise-constant hold; the final value extends past the last sample).
    """

    times_s: np.ndarray
    bandwidth_kbps: np.ndarray
    granularity_s: float = NET_TRACE_GRANULARITY_S

    def __post_init__(self):
        self.times_s = np.asarray(self.times_s, dtype=np.float64)
        self.bandwidth_kbps = np.asarray(self.bandwidth_kbps, dtype=np.float64)
        if self.times_s.ndim != 1 or self.times_s.shape != self.bandwidth_kbps.shape:
            raise TraceError("times and bandwidth must be 1-D arrays of equal length")
        if len(self.times_s) < 2:
            raise TraceError("a network trace needs at least 2 samples")
        spacing = np.diff(self.times_s)
        if np.any(np.abs(spacing - self.granularity_s) > _TIME_TOL):
            raise TraceError(
                f"timestamps must be spaced exactly {self.granularity_s} s apart"
            )
        if not np.all(np.isfinite(self.bandwidth_kbps)):
            raise TraceError("bandwidth values must be finite")
        if np.any(self.bandwidth_kbps <= 0.0):
            raise TraceError("bandwidth values must be > 0")

    @property
    def duration_s(self) -> float:
        """Covered span, counting the hold interval after the last sample."""
        return float(self.times_s[-1] - self.times_s[0] + self.granularity_s)

    def bandwidth_at(self, t: float) -> float:
        """Bandwidth in effect at absolute time ``t`` (piecewise-constant)."""
        idx = int(math.floor((t - self.times_s[0]) / self.granularity_s + _TIME_TOL))
        idx = min(max(idx, 0), len(self.bandwidth_kbps) - 1)
        return float(self.bandwidth_kbps[idx])

    def mean_kbps(self) -> float:
        return float(np.mean(self.bandwidth_kbps))


@dataclass
class ComplexityTrace:
    """Per-sample SI/TI of one video plus its I-frame schedule."""

    times_s: np.ndarray
    si: np.ndarray
    ti: np.ndarray
    iframe_times_s: tuple[float, ...] = ()
    period_s: float = COMPLEXITY_PERIOD_S
    fps: float | None = None
    gop_frames: int | None = None

    def __post_init__(self):
        self.times_s = np.asarray(self.times_s, dtype=np.float64)
        self.si = np.asarray(self.si, dtype=np.float64)
        self.ti = np.asarray(self.ti, dtype=np.float64)
        if not (len(self.times_s) == len(self.si) == len(self.ti)):
            raise TraceError("time/si/ti columns must have equal length")
        if len(self.times_s) < 1:
            raise TraceError("complexity trace is empty")
        if len(self.times_s) > 1:
            spacing = np.diff(self.times_s)
            if np.any(np.abs(spacing - self.period_s) > _TIME_TOL):
                raise TraceError(
                    f"complexity samples must be spaced exactly {self.period_s} s"
                )
        for name, col in (("si", self.si), ("ti", self.ti)):
            if not np.all(np.isfinite(col)):
                raise TraceError(f"{name} values must be finite")
            if np.any(col < 0.0):
                raise TraceError(f"{name} values must be >= 0")
        self.iframe_times_s = tuple(sorted(float(t) for t in self.iframe_times_s))
        self._validate_iframes()

    def _validate_iframes(self):
        if not self.iframe_times_s:
            return
        if self.fps is None:
            raise TraceError("an I-frame schedule requires fps metadata")
        frame_dt = 1.0 / self.fps
        duration = self.duration_s
        for t in self.iframe_times_s:
            if t < -_TIME_TOL or t > duration + _TIME_TOL:
                raise TraceError(f"I-frame time {t} outside trace duration")
            k = t / frame_dt
            if abs(k - round(k)) > 1e-6:
                raise TraceError(f"I-frame time {t} is not on the frame grid")
        if self.gop_frames is not None and len(self.iframe_times_s) > 1:
            gop_s = self.gop_frames / self.fps
            gaps = np.diff(self.iframe_times_s)
            if np.any(np.abs(gaps - gop_s) > 1e-6):
                raise TraceError("consecutive I frames must be one GoP apart")

    @property
    def duration_s(self) -> float:
        return float(self.times_s[-1] - self.times_s[0] + self.period_s)

    def samples_in(self, t0: float, t1: float) -> tuple[np.ndarray, np.ndarray]:
        """(si, ti) arrays for samples with time in [t0, t1)."""
        mask = (self.times_s >= t0 - _TIME_TOL) & (self.times_s < t1 - _TIME_TOL)
        return self.si[mask], self.ti[mask]

    def iframe_in_second(self, second: int) -> bool:
        for t in self.iframe_times_s:
            if second - _TIME_TOL <= t < second + 1.0 - _TIME_TOL:
                return True
        return False


def iframe_flags_for_second(
    video: ComplexityTrace, fps: int, gop_frames: int, second: int
) -> list[bool]:
    """Per-frame I-frame flags for one slot.

    The video's own schedule wins; without one, frames fall on the GoP grid
    counted from the session start.
    """
    if video.iframe_times_s:
        marks = {round(t * fps) for t in video.iframe_times_s}
        return [(second * fps + k) in marks for k in range(fps)]
    return [((second * fps + k) % gop_frames) == 0 for k in range(fps)]


@dataclass(frozen=True)
class TraceGenSpec:
    """Recipe for one synthetic network trace."""

    duration_s: float
    mean_bw_kbps: float
    std_bw_kbps: float
    model: str  # markov-step | ar1 | square-wave
    seed: int

    _MODELS = ("markov-step", "ar1", "square-wave")

    def validate(self):
        if self.duration_s <= 0:
            raise TraceError("duration must be > 0")
        if not (self.mean_bw_kbps > self.std_bw_kbps >= 0.0):
            raise TraceError("need mean_bw > std_bw >= 0")
        if self.model not in self._MODELS:
            raise TraceError(f"unknown model {self.model!r}; expected {self._MODELS}")


@dataclass
class FrameSequence:
    """Raw 8-bit luminance frames of one clip."""

    width: int
    height: int
    fps: float
    frames: np.ndarray  # (n, height, width) uint8

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.uint8)
        if self.fps <= 0:
            raise TraceError("fps must be > 0")
        if self.frames.ndim != 3 or len(self.frames) == 0:
            raise TraceError("frames must be a non-empty (n, h, w) array")
        if self.frames.shape[1:] != (self.height, self.width):
            raise TraceError("frame dimensions do not match width/height")


# ---------------------------------------------------------------------------
# Network trace files
# ---------------------------------------------------------------------------

def load_network_trace(path: str | Path) -> NetworkTrace:
    """Load a bandwidth CSV, resampling to the 0.5 s grid if needed."""
    times, bws = [], []
    with open(path, "r", encoding="utf-8", newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header is None or [h.strip() for h in header[:2]] != ["time_s", "bandwidth_kbps"]:
            raise TraceError(f"{path}: expected header 'time_s,bandwidth_kbps'")
        for lineno, row in enumerate(reader, start=2):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            try:
                times.append(float(row[0]))
                bws.append(float(row[1]))
            except (ValueError, IndexError) as exc:
                raise TraceError(f"{path}:{lineno}: malformed row {row!r}") from exc
    if len(times) < 2:
        raise TraceError(f"{path}: need at least 2 samples")
    t = np.asarray(times)
    bw = np.asarray(bws)
    if np.any(np.diff(t) <= 0):
        raise TraceError(f"{path}: timestamps must be strictly increasing")
    if np.any(bw <= 0):
        raise TraceError(f"{path}: bandwidth values must be > 0")
    g = NET_TRACE_GRANULARITY_S
    on_grid = np.allclose(np.diff(t), g, atol=_TIME_TOL)
    if not on_grid:
        n = int(math.floor((t[-1] - t[0]) / g + _TIME_TOL)) + 1
        grid = t[0] + g * np.arange(n)
        bw = np.interp(grid, t, bw)
        t = grid
    return NetworkTrace(times_s=t, bandwidth_kbps=bw)


def save_network_trace(trace: NetworkTrace, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as f:
        w = csv.writer(f)
        w.writerow(["time_s", "bandwidth_kbps"])
        for t, bw in zip(trace.times_s, trace.bandwidth_kbps):
            w.writerow([repr(float(t)), repr(float(bw))])


def generate_synthetic_network_trace(spec: TraceGenSpec) -> NetworkTrace:
    """Deterministic synthetic bandwidth series for the given spec.

    markov-step: two-state chain toggling between mean+-std (switch p=0.1
    per sample).  ar1: first-order autoregression with coefficient 0.8 and
    stationary deviation std_bw.  square-wave: deterministic toggle with a
    10 s half-period.  All values are clamped to >= 100 kbps.
    """
    spec.validate()
    g = NET_TRACE_GRANULARITY_S
    n = max(2, int(round(spec.duration_s / g)))
    rng = np.random.default_rng(spec.seed)
    mean, std = spec.mean_bw_kbps, spec.std_bw_kbps

    if spec.model == "square-wave":
        half_period = 10.0
        samples_per_half = max(1, int(round(half_period / g)))
        phase = (np.arange(n) // samples_per_half) % 2
        bw = np.where(phase == 0, mean + std, mean - std).astype(np.float64)
    elif spec.model == "markov-step":
        p_switch = 0.1
        state = 1 if rng.random() < 0.5 else -1
        bw = np.empty(n)
        for i in range(n):
            bw[i] = mean + state * std
            if rng.random() < p_switch:
                state = -state
    else:  # ar1
        phi = 0.8
        innov = std * math.sqrt(1.0 - phi * phi)
        x = std * rng.standard_normal()
        bw = np.empty(n)
        for i in range(n):
            bw[i] = mean + x
            x = phi * x + innov * rng.standard_normal()

    bw = np.maximum(bw, 100.0)
    return NetworkTrace(times_s=g * np.arange(n), bandwidth_kbps=bw)


# ---------------------------------------------------------------------------
# Complexity trace files
# ---------------------------------------------------------------------------

def _iframe_sidecar_path(path: str | Path) -> Path:
    p = Path(path)
    return p.with_suffix(".iframes.csv")


def _parse_iframe_sidecar(path: Path) -> tuple[tuple[float, ...], float | None, int | None]:
    times: list[float] = []
    fps: float | None = None
    gop: int | None = None
    section = None
    with open(path, "r", encoding="utf-8", newline="") as f:
        for lineno, raw in enumerate(f, start=1):
            line = raw.strip()
            if not line:
                continue
            if line in ("[meta]", "[iframes]"):
                section = line
                continue
            if section == "[meta]":
                key, _, value = line.partition(",")
                if key == "fps":
                    fps = float(value)
                elif key == "gop_frames":
                    gop = int(value)
                else:
                    raise TraceError(f"{path}:{lineno}: unknown meta key {key!r}")
            elif section == "[iframes]":
                if line == "iframe_times_s":
                    continue
                try:
                    times.append(float(line))
                except ValueError as exc:
                    raise TraceError(f"{path}:{lineno}: bad I-frame time {line!r}") from exc
            else:
                raise TraceError(f"{path}:{lineno}: content before a section header")
    return tuple(times), fps, gop


def load_complexity_trace(path: str | Path) -> ComplexityTrace:
    """Load an SI/TI CSV plus its optional I-frame sidecar."""
    times, sis, tis = [], [], []
    with open(path, "r", encoding="utf-8", newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header is None or [h.strip() for h in header[:3]] != ["time_s", "si", "ti"]:
            raise TraceError(f"{path}: expected header 'time_s,si,ti'")
        for lineno, row in enumerate(reader, start=2):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            try:
                times.append(float(row[0]))
                sis.append(float(row[1]))
                tis.append(float(row[2]))
            except (ValueError, IndexError) as exc:
                raise TraceError(f"{path}:{lineno}: malformed row {row!r}") from exc
    sidecar = _iframe_sidecar_path(path)
    iframes: tuple[float, ...] = ()
    fps = gop = None
    if sidecar.exists():
        iframes, fps, gop = _parse_iframe_sidecar(sidecar)
    return ComplexityTrace(
        times_s=np.asarray(times),
        si=np.asarray(sis),
        ti=np.asarray(tis),
        iframe_times_s=iframes,
        fps=fps,
        gop_frames=gop,
    )


def save_complexity_trace(trace: ComplexityTrace, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as f:
        w = csv.writer(f)
        w.writerow(["time_s", "si", "ti"])
        for t, s, v in zip(trace.times_s, trace.si, trace.ti):
            w.writerow([repr(float(t)), repr(float(s)), repr(float(v))])
    if trace.iframe_times_s:
        with open(_iframe_sidecar_path(path), "w", encoding="utf-8", newline="") as f:
            f.write("[meta]\n")
            if trace.fps is not None:
                f.write(f"fps,{trace.fps!r}\n")
            if trace.gop_frames is not None:
                f.write(f"gop_frames,{trace.gop_frames}\n")
            f.write("[iframes]\niframe_times_s\n")
            for t in trace.iframe_times_s:
                f.write(f"{t!r}\n")


@dataclass(frozen=True)
class ComplexityGenSpec:
    """Recipe for one synthetic video-complexity trace.

    Content is modeled as a sequence of scenes with independent SI/TI
    levels (spanning nearly the whole normalizer range, so static and
    highly dynamic material both occur) plus small within-scene jitter.
    """

    duration_s: float
    seed: int
    fps: float = 25.0
    gop_frames: int = 125
    si_max: float = 120.0
    ti_max: float = 80.0
    scene_min_s: float = 2.0
    scene_max_s: float = 8.0
    jitter: float = 0.05

    def validate(self):
        if self.duration_s <= 0:
            raise TraceError("duration must be > 0")
        if self.fps <= 0 or self.gop_frames < 1:
            raise TraceError("need fps > 0 and gop_frames >= 1")
        if not (0 < self.scene_min_s <= self.scene_max_s):
            raise TraceError("bad scene length bounds")


def generate_synthetic_complexity_trace(spec: ComplexityGenSpec) -> ComplexityTrace:
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    period = COMPLEXITY_PERIOD_S
    n = max(1, int(round(spec.duration_s / period)))
    si = np.empty(n)
    ti = np.empty(n)
    i = 0
    while i < n:
        scene_len = int(round(rng.uniform(spec.scene_min_s, spec.scene_max_s) / period))
        scene_len = max(1, min(scene_len, n - i))
        si_level = rng.uniform(0.05, 0.95) * spec.si_max
        ti_level = rng.uniform(0.02, 0.98) * spec.ti_max
        si[i : i + scene_len] = si_level * (
            1.0 + spec.jitter * rng.standard_normal(scene_len)
        )
        ti[i : i + scene_len] = ti_level * (
            1.0 + spec.jitter * rng.standard_normal(scene_len)
        )
        i += scene_len
    np.clip(si, 0.0, None, out=si)
    np.clip(ti, 0.0, None, out=ti)
    gop_s = spec.gop_frames / spec.fps
    iframes = tuple(
        np.round(np.arange(0.0, spec.duration_s - 1e-9, gop_s) * spec.fps) / spec.fps
    )
    return ComplexityTrace(
        times_s=period * np.arange(n),
        si=si,
        ti=ti,
        iframe_times_s=iframes,
        fps=spec.fps,
        gop_frames=spec.gop_frames,
    )


# ---------------------------------------------------------------------------
# SI/TI from raw frames
# ---------------------------------------------------------------------------

def load_frame_sequence(path: str | Path, width: int, height: int, fps: float) -> FrameSequence:
    """Read a binary concatenation of 8-bit luminance planes."""
    data = np.fromfile(str(path), dtype=np.uint8)
    plane = width * height
    if plane <= 0 or data.size == 0 or data.size % plane != 0:
        raise TraceError(f"{path}: size {data.size} is not a multiple of {width}x{height}")
    frames = data.reshape(-1, height, width)
    return FrameSequence(width=width, height=height, fps=fps, frames=frames)


def _area_weights(n_src: int, n_dst: int) -> np.ndarray:
    """Row-stochastic (n_dst, n_src) matrix of exact box-overlap weights."""
    edges = np.linspace(0.0, n_src, n_dst + 1)
    w = np.zeros((n_dst, n_src))
    for r in range(n_dst):
        lo, hi = edges[r], edges[r + 1]
        i0 = int(math.floor(lo))
        i1 = min(int(math.ceil(hi)), n_src)
        for i in range(i0, i1):
            w[r, i] = min(hi, i + 1.0) - max(lo, float(i))
        w[r] /= hi - lo
    return w


def _downsample_frame(frame: np.ndarray) -> np.ndarray:
    """Area-average to at most 108x192; smaller axes are kept as-is."""
    out = frame.astype(np.float64)
    h, w = out.shape
    if h > SITI_TARGET_HEIGHT:
        out = _area_weights(h, SITI_TARGET_HEIGHT) @ out
    if w > SITI_TARGET_WIDTH:
        out = out @ _area_weights(w, SITI_TARGET_WIDTH).T
    return out


def sobel_magnitude(frame: np.ndarray) -> np.ndarray:
    """Gradient magnitude over the interior (valid 3x3 window) of a frame."""
    a = np.asarray(frame, dtype=np.float64)
    if a.shape[0] < 3 or a.shape[1] < 3:
        return np.zeros((0, 0))
    gx = (
        -a[:-2, :-2] - 2.0 * a[1:-1, :-2] - a[2:, :-2]
        + a[:-2, 2:] + 2.0 * a[1:-1, 2:] + a[2:, 2:]
    )
    gy = (
        -a[:-2, :-2] - 2.0 * a[:-2, 1:-1] - a[:-2, 2:]
        + a[2:, :-2] + 2.0 * a[2:, 1:-1] + a[2:, 2:]
    )
    return np.hypot(gx, gy)


def compute_si_ti(seq: FrameSequence) -> list[tuple[float, float, float]]:
    """Per-retained-frame (capture_time, si, ti) after spatial and temporal
    downsampling.

    The k-th retained frame is source index floor(k*fps/4), giving
    ceil(n*4/fps) output samples; ti of the first retained frame is 0.
    """
    n = len(seq.frames)
    n_out = int(math.ceil(n * SITI_TARGET_FPS / seq.fps))
    out: list[tuple[float, float, float]] = []
    prev: np.ndarray | None = None
    prev_idx = -1
    small: np.ndarray | None = None
    si = 0.0
    for k in range(n_out):
        idx = int(math.floor(k * seq.fps / SITI_TARGET_FPS))
        if idx != prev_idx:
            prev = small
            small = _downsample_frame(seq.frames[idx])
            prev_idx = idx
            mag = sobel_magnitude(small)
            si = float(np.std(mag)) if mag.size else 0.0
            ti = float(np.std(small - prev)) if prev is not None else 0.0
        else:
            # duplicate retained frame (fps < 4): identical content
            ti = 0.0
        out.append((idx / seq.fps, si, ti))
    return out


def complexity_trace_from_frames(
    seq: FrameSequence,
    gop_frames: int | None = None,
) -> ComplexityTrace:
    """Package compute_si_ti output on the nominal 4 Hz grid."""
    rows = compute_si_ti(seq)
    si = np.array([r[1] for r in rows])
    ti = np.array([r[2] for r in rows])
    times = COMPLEXITY_PERIOD_S * np.arange(len(rows))
    iframes: tuple[float, ...] = ()
    if gop_frames is not None:
        gop_s = gop_frames / seq.fps
        duration = len(seq.frames) / seq.fps
        iframes = tuple(
            np.round(np.arange(0.0, duration - 1e-9, gop_s) * seq.fps) / seq.fps
        )
    return ComplexityTrace(
        times_s=times,
        si=si,
        ti=ti,
        iframe_times_s=iframes,
        fps=seq.fps,
        gop_frames=gop_frames,
    )
