"""Music-to-dance generation: diffusion candidates, genre/coherence retrieval, stitching."""
__version__ = "0.1.0"
