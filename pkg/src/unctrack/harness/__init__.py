"""CLI harness: synthetic data, training, evaluation and file formats."""
