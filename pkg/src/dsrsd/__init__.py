"""Dual-stream residual decomposition network with decorrelation regularizers."""
