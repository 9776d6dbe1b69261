"""
Data models: kernel specs, labelled activations, experiment configs and run records.
"""
