"""Anisotropic mesh-spacing toolkit.

Extracts anisotropic spacing metric fields from nodal solution fields,
transfers them conservatively to coarse background meshes, trains small
feed-forward networks to predict the field for unseen parameters, and
evaluates prediction quality.
"""

__version__ = "0.1.0"
