"""panosplat: panoramic video capture to 3D Gaussian scene pipeline."""

__version__ = "0.1.0"
