"""Numerical certification lab for convex duality of BV paths and processes."""

from bvdual.convex import (
    PLQConvexFn,
    SeparableConvexFn,
    SubdiffSet,
    absolute,
    conjugate,
    fenchel_gap,
    grid_legendre,
    huber,
    indicator,
    linear,
    point_indicator,
    quadratic,
    recession,
    separable,
    subdifferential,
)

__all__ = [
    "PLQConvexFn",
    "SeparableConvexFn",
    "SubdiffSet",
    "absolute",
    "conjugate",
    "fenchel_gap",
    "grid_legendre",
    "huber",
    "indicator",
    "linear",
    "point_indicator",
    "quadratic",
    "recession",
    "separable",
    "subdifferential",
]
