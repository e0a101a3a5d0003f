"""Flow-matching motion sampler with an autoencoder normaliser, on synthetic motion codes."""
__version__ = "0.1.0"
