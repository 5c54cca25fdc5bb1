"""Scattering embeddings of graph ensembles."""
