"""Bit-mapper optimization for spatially coupled LDPC ensembles over parallel BECs."""
