"""Graph families, canonical addressing and the T_3 spine embedding."""
from brwlab.graphs.families import (
    GluedAddr,
    Glued,
    GraphFamily,
    Hammock,
    HammockAddr,
    HomTree,
    Line,
    Product,
    ball,
    ball_distance,
    glue,
    isotropic_weights,
    neighbors,
    product,
)
from brwlab.graphs.spine import SpineEmbedding, height

__all__ = [
    "GluedAddr",
    "Glued",
    "GraphFamily",
    "Hammock",
    "HammockAddr",
    "HomTree",
    "Line",
    "Product",
    "SpineEmbedding",
    "ball",
    "ball_distance",
    "glue",
    "height",
    "isotropic_weights",
    "neighbors",
    "product",
]
