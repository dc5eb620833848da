"""carikit: photo-to-caricature translation at desk scale.

Layer-mixed style-based generators, trainable shape-exaggeration blocks,
two-stage latent inversion, multi-scale exaggeration control, and an
interactive studio served over HTTP.
"""

__version__ = "0.1.0"
