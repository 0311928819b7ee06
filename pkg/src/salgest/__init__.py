"""Speech-driven gesture generation with saliency-weighted audio/pose consistency."""

__version__ = "0.1.0"
