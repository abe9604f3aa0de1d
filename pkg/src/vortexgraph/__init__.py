"""Vortex tracking and latent interaction-graph learning for 2D flow sequences.

Pipeline: synthesize severity-controlled vortical flows -> detect vortices
(Rortex criterion) -> associate tracks and build trajectory tensors -> train a
severity-conditioned, energy-gated relational inference model -> compute
latent-graph entropy markers and their correlation with severity.
"""

__version__ = "0.1.0"
