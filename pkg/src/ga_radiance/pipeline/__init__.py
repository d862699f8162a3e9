"""Training, evaluation and experiment drivers."""
