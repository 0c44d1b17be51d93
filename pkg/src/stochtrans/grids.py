"""Rectilinear sample grids with trapezoid quadrature weights.

Grids are tensor products of per-axis coordinate arrays. Axes may be
non-uniform (the blowup experiments use log-spaced columns to resolve the
singular strip), so every grid point carries a quadrature weight equal to
the product of its per-axis trapezoid weights.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError


def _trapezoid_weights(coords: np.ndarray) -> np.ndarray:
    if coords.size == 1:
        return np.ones(1)
    w = np.empty_like(coords)
    w[0] = 0.5 * (coords[1] - coords[0])
    w[-1] = 0.5 * (coords[-1] - coords[-2])
    w[1:-1] = 0.5 * (coords[2:] - coords[:-2])
    return w


@dataclass(frozen=True)
class Grid:
    """Tensor-product grid over a box in R^d."""

    axes: tuple = field(default_factory=tuple)  # tuple of 1-d coordinate arrays

    def __post_init__(self):
        axes = tuple(np.asarray(a, dtype=float) for a in self.axes)
        for a in axes:
            if a.ndim != 1 or a.size < 1:
                raise ValidationError("grid axes must be non-empty 1-d arrays")
            if a.size > 1 and np.any(np.diff(a) <= 0):
                raise ValidationError("grid axes must be strictly increasing")
        object.__setattr__(self, "axes", axes)

    @classmethod
    def regular(cls, lo, hi, shape) -> "Grid":
        """Uniform grid on the box [lo, hi] with ``shape`` points per axis."""
        lo = np.atleast_1d(np.asarray(lo, dtype=float))
        hi = np.atleast_1d(np.asarray(hi, dtype=float))
        shape = np.atleast_1d(np.asarray(shape, dtype=int))
        if not (lo.shape == hi.shape == shape.shape):
            raise ValidationError("lo, hi and shape must have matching lengths")
        if np.any(hi <= lo):
            raise ValidationError("grid box must satisfy lo < hi on every axis")
        if np.any(shape < 1):
            raise ValidationError("grid needs at least one point per axis")
        return cls(tuple(np.linspace(l, h, n) for l, h, n in zip(lo, hi, shape)))

    @property
    def dim(self) -> int:
        return len(self.axes)

    @property
    def shape(self) -> tuple:
        return tuple(a.size for a in self.axes)

    @property
    def n_points(self) -> int:
        return int(np.prod(self.shape))

    def points(self) -> np.ndarray:
        """All grid points as an (n_points, dim) array, C-order."""
        mesh = np.meshgrid(*self.axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)

    def weights(self) -> np.ndarray:
        """Trapezoid quadrature weight of each point, flattened in C-order."""
        per_axis = [_trapezoid_weights(a) for a in self.axes]
        w = per_axis[0]
        for extra in per_axis[1:]:
            w = np.multiply.outer(w, extra)
        return w.ravel()

    def integrate(self, values: np.ndarray) -> float:
        """Trapezoid-rule integral of flattened point samples."""
        return float(np.dot(self.weights(), np.ravel(values)))

    def window_mask(self, lo, hi) -> np.ndarray:
        """Flat boolean mask of points inside the closed box [lo, hi]."""
        pts = self.points()
        lo = np.atleast_1d(np.asarray(lo, dtype=float))
        hi = np.atleast_1d(np.asarray(hi, dtype=float))
        return np.all((pts >= lo) & (pts <= hi), axis=1)

    def contains_box(self, lo, hi) -> bool:
        lo = np.atleast_1d(np.asarray(lo, dtype=float))
        hi = np.atleast_1d(np.asarray(hi, dtype=float))
        return all(
            a[0] <= l and h <= a[-1] for a, l, h in zip(self.axes, lo, hi)
        )
