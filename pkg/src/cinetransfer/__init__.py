"""Cinematic transfer core engine.

Animates a user-supplied 3D character with motion extracted from a reference
shot, re-optimizes the camera trajectory so the new character is framed like
the original, composites the render into the extracted environment, and runs
a masked diffusion-style refinement pass over the result.
"""

__version__ = "0.1.0"
