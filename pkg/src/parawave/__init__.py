"""Gaussian autoregressive WaveNet teacher, parallel Gaussian IAF student, and
closed-form KL distillation on a small numpy autodiff engine."""

__version__ = "0.1.0"
