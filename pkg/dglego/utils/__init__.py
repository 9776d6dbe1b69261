"""Utility functions for dglego."""
