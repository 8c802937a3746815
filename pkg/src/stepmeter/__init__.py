"""Difficulty estimation for StepMania step charts.

Parses SM simfiles, extracts per-step feature sequences, trains ordinal
regression heads on a small transformer encoder, and evaluates them under
a Monte Carlo cross-validation protocol with category pooling. A FastAPI
service exposes disagreement-ranked chart pairs for blind human judging.
"""

__version__ = "0.1.0"
