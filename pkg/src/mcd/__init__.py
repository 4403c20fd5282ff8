"""Minuscule cell detection in anterior-segment OCT images.

Pipeline: field of focus (anterior-chamber mask) -> minuscule region
proposals -> spatial-attention patch classifier, with threshold baselines,
evaluation, lambda tuning and a synthetic corpus generator.
"""
__version__ = "0.1.0"
