"""Multi-view labeling and foreground-masked 3D detection header, at desk scale."""

__version__ = "0.1.0"
