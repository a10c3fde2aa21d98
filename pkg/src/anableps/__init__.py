"""Anableps: VBR-aware bitrate control stack with a trace-driven simulator.

Modules
-------
traces     network/complexity trace ingestion, synthesis, SI/TI computation
media      parametric VBR encoder, packetizer, quality proxy
netsim     deterministic bottleneck/receiver simulation and session logs
neural     dense/conv1d/GRU/softmax layers with reverse-mode gradients, Adam
cbpn       bitrate-range predictor (baseline + error heads, MAD/PCC/CR)
abrn       actor-critic bitrate controller and its training loop
baselines  GCC-style heuristic, fixed-bitrate, and lookahead-oracle policies
config     typed INI experiment configuration
harness    corpora, training orchestration, comparisons, plot data
cli        the ``anableps`` command
"""

__version__ = "0.1.0"
