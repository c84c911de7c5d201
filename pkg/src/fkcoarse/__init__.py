"""Random-cluster measures with quenched random couplings and their coarse-graining."""

__version__ = "0.1.0"
