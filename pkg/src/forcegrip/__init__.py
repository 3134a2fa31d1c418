"""sEMG-driven gripping-force prediction and force-guided grasp simulation."""

__version__ = "0.1.0"
