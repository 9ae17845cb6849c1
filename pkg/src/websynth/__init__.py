"""Web-graph QA synthesis and denoised trajectory generation."""

__version__ = "0.1.0"
