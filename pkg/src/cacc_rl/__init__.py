"""Communication-aware actor-critic control for longitudinal vehicle platoons."""

__version__ = "0.1.0"
