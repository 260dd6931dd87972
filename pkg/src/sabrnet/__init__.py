"""Monte-Carlo SABR implied-vol surfaces, a network surrogate fitted to them,
and a two-precision estimator of the surrogate's true prediction error."""

__version__ = "0.1.0"
