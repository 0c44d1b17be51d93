"""Monte Carlo statistics of flow regularity.

Estimates the moment quantities that quantify how smoothly the stochastic
flow depends on its starting point: paired-trajectory separation moments,
sup moments of the (inverse) Jacobian over space-time windows, Hoelder
quotients of Jacobian differences, and tail frequencies of the normalized
dyadic-increment supremum used in chaining arguments.

Sampling contract: sample ``i`` always uses stream id ``stream_base + i``,
and reductions run in stream order, so estimates are bitwise reproducible
for any worker count or chunk size. Divergent samples are excluded and
counted; an exclusion rate above 1% fails the run rather than silently
biasing the estimate.
"""

from dataclasses import dataclass, field as dc_field
from typing import Optional

import numpy as np

from . import brownian
from .errors import BudgetError, NumericError, ValidationError
from .fields import DriftField

_MAX_EXCLUDED_FRACTION = 0.01


@dataclass(frozen=True)
class MomentEstimate:
    """Monte Carlo estimate of one regularity moment with a 95% CI."""

    quantity_id: str  # pair_moment | jac_sup_moment | jac_diff_moment | jac_inv_moment
    m: float
    samples: int
    value: float
    ci_halfwidth: float
    excluded: int = 0
    extras: dict = dc_field(default_factory=dict)


@dataclass(frozen=True)
class TailReport:
    """Exceedance frequencies of the normalized dyadic-increment supremum."""

    thresholds: np.ndarray
    frequencies: np.ndarray
    fitted_exponent: float  # slope of -log freq vs log K; NaN if underdetermined
    n_samples: int
    alpha: float
    tau: float
    n_levels: int


def _mean_ci(powers: np.ndarray) -> tuple:
    n = powers.size
    mean = float(powers.mean())
    if n < 2:
        return mean, 0.0
    return mean, float(1.96 * powers.std(ddof=1) / np.sqrt(n))


def _check_exclusions(quantity: str, kept: int, total: int):
    excluded = total - kept
    if excluded > _MAX_EXCLUDED_FRACTION * total:
        raise NumericError(
            f"{quantity}: {excluded}/{total} samples diverged; "
            "estimate would be biased"
        )
    return excluded


def _advance_batch(
    field: DriftField,
    starts: np.ndarray,  # (S, P, d)
    increments,  # (n_steps, S, d) shared by the P points of each sample, or None
    h: float,
    n_steps: int,
    with_jacobian: bool,
    callback,
    bbox_radius: float = 1.0e6,
):
    """Advance S samples x P points; callback(k, states, jacs, alive) per level."""
    states = np.array(starts, dtype=float, copy=True)
    S, P, d = states.shape
    jacs = None
    if with_jacobian:
        jacs = np.broadcast_to(np.eye(d), (S, P, d, d)).copy()
    alive = np.ones((S, P), dtype=bool)
    eye = np.eye(d)
    callback(0, states, jacs, alive)
    for k in range(n_steps):
        t = k * h
        drift = field.eval(t, states)
        if with_jacobian:
            factor = eye + h * field.gradient(t, states)
        new = states + h * drift
        if increments is not None:
            new = new + increments[k][:, None, :]
        with np.errstate(all="ignore"):
            bad = ~np.isfinite(new).all(axis=-1) | (
                np.abs(new).max(axis=-1) > bbox_radius
            )
        alive = alive & ~bad
        states = np.where(alive[..., None], new, states)
        if with_jacobian:
            new_jac = np.einsum("spij,spjk->spik", factor, jacs)
            jacs = np.where(alive[..., None, None], new_jac, jacs)
        callback(k + 1, states, jacs, alive)
    return states, jacs, alive


def _paired_increments(seed, stream_base, n_samples, dim, T, n_steps):
    streams = np.arange(stream_base, stream_base + n_samples, dtype=np.uint64)
    batch = brownian.generate_batch(seed, streams, dim, T, n_steps)
    return np.ascontiguousarray(np.swapaxes(batch, 0, 1))  # (n_steps, S, d)


def pair_moment(
    field: DriftField,
    x,
    y,
    m: float,
    T: float,
    n_samples: int,
    n_steps: int = 256,
    seed: int = 0,
    stream_base: int = 0,
    deterministic: bool = False,
) -> MomentEstimate:
    """E sup_{t<=T} |X_t(x) - X_t(y)|^m over paired runs sharing each path.

    Both trajectories of a pair see identical increments, so ``x == y`` gives
    exactly zero and ``b = 0`` gives exactly |x - y|^m.
    """
    if m < 2:
        raise ValidationError("moment order m must be at least 2")
    x = np.atleast_1d(np.asarray(x, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    n_samples = int(n_samples)
    if deterministic:
        n_samples = 1
    incs = None if deterministic else _paired_increments(
        seed, stream_base, n_samples, field.dim, T, n_steps
    )
    starts = np.broadcast_to(
        np.stack([x, y]), (n_samples, 2, field.dim)
    ).copy()
    sups = np.zeros(n_samples)

    def track(k, states, jacs, alive):
        sep = np.linalg.norm(states[:, 0] - states[:, 1], axis=-1)
        np.maximum(sups, sep, out=sups)

    _, _, alive = _advance_batch(
        field, starts, incs, T / n_steps, n_steps, False, track
    )
    ok = alive.all(axis=1)
    excluded = _check_exclusions("pair_moment", int(ok.sum()), n_samples)
    powers = sups[ok] ** m
    value, ci = _mean_ci(powers)
    sep0 = float(np.linalg.norm(x - y))
    ratio = value / sep0 ** m if sep0 > 0 else np.nan
    return MomentEstimate(
        "pair_moment", m, int(ok.sum()), value, ci, excluded,
        {"separation": sep0, "ratio": ratio},
    )


def _inverse_norms(jacs: np.ndarray) -> np.ndarray:
    """Hilbert-Schmidt norms of matrix inverses; inf where singular."""
    d = jacs.shape[-1]
    with np.errstate(all="ignore"):
        if d == 1:
            return 1.0 / np.abs(jacs[..., 0, 0])
        if d == 2:
            # for 2x2 the adjugate has the same HS norm as the matrix itself
            dets = np.abs(np.linalg.det(jacs))
            return np.linalg.norm(jacs, axis=(-2, -1)) / dets
        inv = np.linalg.inv(jacs)
        return np.linalg.norm(inv, axis=(-2, -1))


def jacobian_sup_moment(
    field: DriftField,
    box,
    m: float,
    T: float,
    n_samples: int,
    grid_shape,
    n_steps: int = 256,
    seed: int = 0,
    stream_base: int = 0,
    deterministic: bool = False,
    which: str = "inverse",
    chunk: int = 64,
) -> MomentEstimate:
    """Moments of sup over a space-time grid of Jacobian norms.

    For ``which="inverse"`` the tracked quantity is the Hilbert-Schmidt norm
    of ``grad X^{-1}`` evaluated on the part of the flow image inside
    ``box`` (the inverse Jacobian at ``X_t(w)`` equals the matrix inverse of
    the variational solution at ``w``); for ``which="forward"`` it is
    ``||grad X_t(w)||`` itself. The sup runs over all step times in [0, T]
    and the start grid spanning ``box``.
    """
    if m < 1:
        raise ValidationError("moment order m must be at least 1")
    if which not in ("inverse", "forward"):
        raise ValidationError("which must be 'inverse' or 'forward'")
    lo, hi = (np.atleast_1d(np.asarray(v, dtype=float)) for v in box)
    from .grids import Grid  # local import to avoid a cycle at module load

    grid = Grid.regular(lo, hi, grid_shape)
    pts = grid.points()
    n_pts = pts.shape[0]
    n_samples = 1 if deterministic else int(n_samples)
    h = T / n_steps

    sups = np.zeros(n_samples)
    ok = np.ones(n_samples, dtype=bool)
    done = 0
    while done < n_samples:
        block = min(chunk, n_samples - done)
        incs = None if deterministic else _paired_increments(
            seed, stream_base + done, block, field.dim, T, n_steps
        )
        starts = np.broadcast_to(pts, (block, n_pts, field.dim)).copy()
        block_sup = np.zeros(block)

        def track(k, states, jacs, alive):
            norms = _inverse_norms(jacs) if which == "inverse" else np.linalg.norm(
                jacs, axis=(-2, -1)
            )
            inside = np.all((states >= lo) & (states <= hi), axis=-1)
            use = alive & inside & np.isfinite(norms)
            masked = np.where(use, norms, 0.0)
            np.maximum(block_sup, masked.max(axis=1), out=block_sup)

        _, _, alive = _advance_batch(
            field, starts, incs, h, n_steps, True, track
        )
        sups[done:done + block] = block_sup
        ok[done:done + block] = alive.all(axis=1)
        done += block

    excluded = _check_exclusions("jacobian_sup_moment", int(ok.sum()), n_samples)
    powers = sups[ok] ** m
    value, ci = _mean_ci(powers)
    qid = "jac_inv_moment" if which == "inverse" else "jac_sup_moment"
    return MomentEstimate(qid, m, int(ok.sum()), value, ci, excluded,
                          {"grid_points": n_pts})


def holder_jacobian_diff(
    field: DriftField,
    x,
    y,
    m: float,
    n_samples: int,
    T: float = 1.0,
    n_steps: int = 256,
    alpha: Optional[float] = None,
    seed: int = 0,
    stream_base: int = 0,
) -> MomentEstimate:
    """E sup_t ||xi_t(x) - xi_t(y)||^m / |x - y|^{alpha m} on the unit cube.

    ``alpha`` defaults to the field's declared Hoelder exponent.
    """
    if m < 2:
        raise ValidationError("moment order m must be at least 2")
    x = np.atleast_1d(np.asarray(x, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    if np.any((x < 0) | (x > 1)) or np.any((y < 0) | (y > 1)):
        raise ValidationError("x and y must lie in the unit cube")
    if alpha is None:
        alpha = field.holder_alpha
    n_samples = int(n_samples)
    incs = _paired_increments(seed, stream_base, n_samples, field.dim, T, n_steps)
    starts = np.broadcast_to(np.stack([x, y]), (n_samples, 2, field.dim)).copy()
    sups = np.zeros(n_samples)

    def track(k, states, jacs, alive):
        diff = np.linalg.norm(jacs[:, 0] - jacs[:, 1], axis=(-2, -1))
        np.maximum(sups, diff, out=sups)

    _, _, alive = _advance_batch(
        field, starts, incs, T / n_steps, n_steps, True, track
    )
    ok = alive.all(axis=1)
    excluded = _check_exclusions("holder_jacobian_diff", int(ok.sum()), n_samples)
    sep0 = float(np.linalg.norm(x - y))
    powers = sups[ok] ** m
    value, ci = _mean_ci(powers)
    if sep0 > 0:
        scale = sep0 ** (alpha * m)
        value, ci = value / scale, ci / scale
    return MomentEstimate(
        "jac_diff_moment", m, int(ok.sum()), value, ci, excluded,
        {"separation": sep0, "alpha": alpha},
    )


def _dyadic_pair_indices(n_levels: int, dim: int):
    """Index pairs on the finest grid realizing all coarser neighbor pairs.

    Neighbor offsets use one representative of each {e, -e} class with
    ||e||_inf = 1, since increment norms are symmetric under swapping the
    pair.
    """
    if dim == 1:
        offsets = [(1,)]
    elif dim == 2:
        offsets = [(1, 0), (0, 1), (1, 1), (1, -1)]
    else:
        raise ValidationError("dyadic tail supports dimensions 1 and 2")
    fine = 2 ** n_levels
    shape = (fine + 1,) * dim
    idx = np.arange(int(np.prod(shape))).reshape(shape)
    pairs = []  # (level, flat_from, flat_to)
    for n in range(1, n_levels + 1):
        stride = 2 ** (n_levels - n)
        sl = tuple(slice(0, fine + 1, stride) for _ in range(dim))
        level_idx = idx[sl]
        for e in offsets:
            src = [slice(None)] * dim
            dst = [slice(None)] * dim
            for ax, comp in enumerate(e):
                size = level_idx.shape[ax]
                if comp == 1:
                    src[ax] = slice(0, size - 1)
                    dst[ax] = slice(1, size)
                elif comp == -1:
                    src[ax] = slice(1, size)
                    dst[ax] = slice(0, size - 1)
            pairs.append(
                (n, level_idx[tuple(src)].ravel(), level_idx[tuple(dst)].ravel())
            )
    return shape, pairs


def dyadic_tail(
    field: DriftField,
    m: float,
    K_list,
    n_samples: int,
    T: float = 1.0,
    n_steps: int = 128,
    n_levels: int = 6,
    alpha: Optional[float] = None,
    seed: int = 0,
    stream_base: int = 0,
    chunk: int = 32,
    budget: int = 200_000_000,
) -> TailReport:
    """Tail frequencies of the chained dyadic-increment supremum.

    Per path the tracked scalar is the sup over all dyadic levels ``n``, all
    neighbor pairs on the level-n grid of the unit cube, and all step times
    of ``||xi_t(z 2^{-n} + e 2^{-n}) - xi_t(z 2^{-n})|| / tau^n`` with
    ``tau = 2^{-alpha/2}``. Frequencies are exceedance fractions over
    ``K_list``; the fitted exponent is the negated log-log slope over the
    strictly positive frequencies.
    """
    if alpha is None:
        alpha = field.holder_alpha
    tau = 2.0 ** (-alpha / 2.0)
    K = np.sort(np.asarray(K_list, dtype=float))
    if K.size < 1 or np.any(K <= 0):
        raise ValidationError("K_list must contain positive thresholds")
    shape, pairs = _dyadic_pair_indices(n_levels, field.dim)
    n_pts = int(np.prod(shape))
    work = n_pts * int(n_samples) * int(n_steps)
    if work > budget:
        raise BudgetError(
            f"dyadic tail needs {work:.2e} point-steps, above budget {budget:.2e}; "
            "reduce n_levels or n_samples"
        )
    fine_axes = tuple(np.linspace(0.0, 1.0, 2 ** n_levels + 1) for _ in range(field.dim))
    from .grids import Grid

    pts = Grid(fine_axes).points()
    inv_tau_pow = {n: tau ** (-n) for n, _, _ in pairs}

    sups = np.zeros(int(n_samples))
    ok = np.ones(int(n_samples), dtype=bool)
    done = 0
    while done < n_samples:
        block = min(chunk, n_samples - done)
        incs = _paired_increments(
            seed, stream_base + done, block, field.dim, T, n_steps
        )
        starts = np.broadcast_to(pts, (block, n_pts, field.dim)).copy()
        block_sup = np.zeros(block)

        def track(k, states, jacs, alive):
            flat = jacs.reshape(jacs.shape[0], n_pts, -1)
            for n, src, dst in pairs:
                diff = np.linalg.norm(flat[:, dst] - flat[:, src], axis=-1)
                np.maximum(
                    block_sup, diff.max(axis=1) * inv_tau_pow[n], out=block_sup
                )

        _, _, alive = _advance_batch(
            field, starts, incs, T / n_steps, n_steps, True, track
        )
        sups[done:done + block] = block_sup
        ok[done:done + block] = alive.all(axis=1)
        done += block

    _check_exclusions("dyadic_tail", int(ok.sum()), int(n_samples))
    kept = sups[ok]
    freqs = np.array([float(np.mean(kept >= k)) for k in K])
    positive = freqs > 0
    if positive.sum() >= 2:
        slope = np.polyfit(np.log(K[positive]), np.log(freqs[positive]), 1)[0]
        exponent = float(-slope)
    else:
        exponent = float("nan")
    return TailReport(K, freqs, exponent, int(ok.sum()), float(alpha), tau,
                      int(n_levels))
