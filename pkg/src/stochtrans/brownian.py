"""Reproducible d-dimensional Brownian paths.

Gaussian variates come from a keyed Philox counter generator through the
inverse normal CDF, so a path is a pure function of ``(seed, stream_id,
dim, horizon, n_steps, level)``: the same tuple reproduces bit-identical
increments no matter how work is distributed across workers.

Paths store their values ``B(t_k)`` alongside the increments. Dyadic
refinement (midpoint displacement) fills in Brownian-bridge midpoints from a
level-separated counter block, so a refined path restricted to the coarse
grid equals the coarse path bitwise.
"""

from dataclasses import dataclass

import numpy as np
from scipy.special import ndtri

from .errors import ValidationError


def _gaussians(seed: int, stream_id: int, level: int, count: int) -> np.ndarray:
    """Standard normals from Philox key (seed, stream) and counter block level."""
    bitgen = np.random.Philox(
        key=np.array([seed, stream_id], dtype=np.uint64),
        counter=np.array([0, 0, level, 0], dtype=np.uint64),
    )
    raw = np.random.Generator(bitgen).integers(
        0, 1 << 53, size=count, dtype=np.uint64
    )
    # center in (0,1) so ndtri never sees an endpoint
    return ndtri((raw.astype(np.float64) + 0.5) * 2.0 ** -53)


@dataclass(frozen=True)
class BrownianPath:
    """One realization of a d-dimensional Brownian motion on a uniform grid."""

    dim: int
    horizon: float
    values: np.ndarray  # (n_steps + 1, dim), values[0] == 0
    seed: int
    stream_id: int
    level: int = 0  # number of dyadic refinements applied

    @property
    def n_steps(self) -> int:
        return self.values.shape[0] - 1

    @property
    def step(self) -> float:
        return self.horizon / self.n_steps

    @property
    def increments(self) -> np.ndarray:
        return np.diff(self.values, axis=0)

    @property
    def times(self) -> np.ndarray:
        return np.linspace(0.0, self.horizon, self.n_steps + 1)


def generate(
    seed: int,
    stream_id: int,
    dim: int,
    horizon: float,
    n_steps: int,
) -> BrownianPath:
    """Generate a Brownian path with variance-h Gaussian increments.

    Raises :class:`ValidationError` for ``n_steps < 1`` or ``horizon <= 0``.
    """
    if n_steps < 1:
        raise ValidationError("n_steps must be at least 1")
    if not horizon > 0.0:
        raise ValidationError("horizon must be positive")
    if dim < 1:
        raise ValidationError("dim must be at least 1")
    h = horizon / n_steps
    z = _gaussians(seed, stream_id, 0, n_steps * dim).reshape(n_steps, dim)
    values = np.empty((n_steps + 1, dim))
    values[0] = 0.0
    np.cumsum(z * np.sqrt(h), axis=0, out=values[1:])
    return BrownianPath(dim, float(horizon), values, int(seed), int(stream_id))


def refine(path: BrownianPath, levels: int = 1) -> BrownianPath:
    """Bisect ``path`` by Brownian-bridge midpoints, ``levels`` times.

    The refined path agrees with the original exactly (bitwise) at the shared
    grid times; each refinement level draws its midpoint noise from its own
    counter block of the same (seed, stream) key.
    """
    if levels < 0:
        raise ValidationError("levels must be non-negative")
    out = path
    for _ in range(levels):
        n = out.n_steps
        half_var = out.horizon / n / 4.0
        z = _gaussians(out.seed, out.stream_id, out.level + 1, n * out.dim)
        z = z.reshape(n, out.dim)
        fine = np.empty((2 * n + 1, out.dim))
        fine[0::2] = out.values
        fine[1::2] = 0.5 * (out.values[:-1] + out.values[1:]) + np.sqrt(half_var) * z
        out = BrownianPath(
            out.dim, out.horizon, fine, out.seed, out.stream_id, out.level + 1
        )
    return out


def generate_batch(
    seed: int,
    stream_ids,
    dim: int,
    horizon: float,
    n_steps: int,
) -> np.ndarray:
    """Increments for many independent paths, one stream id per path.

    Returns an array of shape (n_paths, n_steps, dim). Row ``i`` is bitwise
    identical to ``generate(seed, stream_ids[i], ...).increments``.
    """
    if n_steps < 1:
        raise ValidationError("n_steps must be at least 1")
    if not horizon > 0.0:
        raise ValidationError("horizon must be positive")
    stream_ids = np.asarray(stream_ids, dtype=np.uint64)
    h = horizon / n_steps
    out = np.empty((stream_ids.size, n_steps, dim))
    values = np.empty((n_steps + 1, dim))
    values[0] = 0.0
    for i, sid in enumerate(stream_ids):
        z = _gaussians(seed, int(sid), 0, n_steps * dim)
        # round-trip through path values so rows match generate() bitwise
        np.cumsum(z.reshape(n_steps, dim) * np.sqrt(h), axis=0, out=values[1:])
        out[i] = np.diff(values, axis=0)
    return out


def terminal_samples(
    seed: int,
    stream_id: int,
    t: float,
    n_samples: int,
) -> np.ndarray:
    """Samples of the scalar B_1(t) drawn in one vectorized stream."""
    if not t > 0.0:
        raise ValidationError("t must be positive")
    z = _gaussians(seed, stream_id, 0, n_samples)
    return np.sqrt(t) * z


def sample_B1_density_check(
    t: float,
    n_samples: int,
    seed: int = 0,
    stream_id: int = 0,
) -> tuple:
    """Empirical (mean, variance) of B_1(t); the law is Normal(0, t)."""
    samples = terminal_samples(seed, stream_id, t, n_samples)
    return float(samples.mean()), float(samples.var(ddof=1))
