"""
Gaussian-process machinery: NNGP kernels, posterior inverses, the DGL and the pairwise IB loss.
"""
