"""Two-stage missing-modality brain MRI synthesis: 2D slice synthesis, 3D refinement."""

__version__ = "0.1.0"
