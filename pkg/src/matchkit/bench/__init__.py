"""Command-line harness, datasets and ablation experiments."""
