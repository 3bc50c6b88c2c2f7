"""b3d: multi-view synthetic data generation, timestep-rescheduled diffusion training, and evaluation."""

__version__ = "0.1.0"
