"""Model, losses, training loop and experiment drivers."""
