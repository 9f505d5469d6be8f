"""DiffMAViL desk-scale pretraining: autodiff, model, schedules and FLOPS accounting."""

__version__ = "0.1.0"
