"""Numpy networks, optimizers and the stack checkpoint format."""
