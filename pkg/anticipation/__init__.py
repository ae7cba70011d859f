"""Goal-consistent action anticipation: synthetic data, two-branch model, losses and evaluation."""
