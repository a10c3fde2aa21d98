"""Shared numeric constants for the bitrate-control stack."""

# Encoder target bitrates are truncated into this range (kbps).
BITRATE_MIN_KBPS = 300.0
BITRATE_MAX_KBPS = 6100.0

# Normalization scale used by the neural state vectors (kbps).
BITRATE_SCALE_KBPS = 6100.0

# A second counts as stalled when fewer than this many frames play.
STALL_FPS_THRESHOLD = 12.0

# Network traces live on a fixed half-second grid.
NET_TRACE_GRANULARITY_S = 0.5

# Content-complexity traces are sampled at 4 Hz.
COMPLEXITY_PERIOD_S = 0.25
