"""Desk-scale agricultural vision-and-language navigation harness.

The package ties together a deterministic planar simulator, a spatial
memory pipeline (posed-depth reconstruction, GLB serialization, rendered
frontal/oblique memory images with a persistent bank), a pluggable
decision layer and an episode runner with SR/NE/ISR evaluation.
"""

__version__ = "0.1.0"
