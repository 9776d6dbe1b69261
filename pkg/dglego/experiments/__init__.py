"""
Experiment steps, training loops, metric files and the oracle suite.
"""
