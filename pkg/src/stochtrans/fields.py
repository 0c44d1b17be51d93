"""Drift fields, initial data and the closed-form singular-flow benchmark.

The benchmark drift is ``b(x, y) = (0, b1(x) * b2(y))`` in the plane, where
``b1`` has an unbounded derivative at ``0+`` while staying in ``W^{1,3}``.
For this drift the deterministic characteristic flow is known in closed form
through the increasing function ``g(y) = exp(y^2) * y^2``, which makes it the
reference oracle for the numerical flow engine:

    X(t, x) = x,   Y(t, x, y) = g^{-1}(g(y) * exp(2 * b1(x) * t)).

Also provided: smooth test fields (a cut-off rigid rotation, a Gaussian
bump), the rough product initial datum whose x-factor has derivative
``x^{-1/4}`` near ``0+``, and smooth compactly supported test functions.
"""

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .errors import SaturationError, SingularInputError, ValidationError

_G_INV_RTOL = 1e-12


# ---------------------------------------------------------------------------
# scalar building blocks of the benchmark drift
# ---------------------------------------------------------------------------

def b1(x):
    """Piecewise power drift factor: x^{3/4} on (0,1), x^{-3/4} on [1,oo), else 0."""
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x)
    inner = (x > 0.0) & (x < 1.0)
    outer = x >= 1.0
    out[inner] = x[inner] ** 0.75
    out[outer] = x[outer] ** -0.75
    return out if out.ndim else float(out)


def b1_prime(x):
    """Derivative of ``b1``.

    At the kink points the one-sided limits are used: 3/4 at ``x = 1`` (from
    inside the unit interval) and 0 at ``x = 0`` (from the left; the interior
    limit is unbounded there, and the point has measure zero in every
    integral this enters).
    """
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x)
    inner = (x > 0.0) & (x < 1.0)
    outer = x > 1.0
    out[inner] = 0.75 * x[inner] ** -0.25
    out[outer] = -0.75 * x[outer] ** -1.75
    out[x == 1.0] = 0.75
    return out if out.ndim else float(out)


def b1_lipschitz(x):
    """Globally Lipschitz surrogate of ``b1``: x on (0,1), x^{-3/4} on [1,oo)."""
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x)
    inner = (x > 0.0) & (x < 1.0)
    outer = x >= 1.0
    out[inner] = x[inner]
    out[outer] = x[outer] ** -0.75
    return out if out.ndim else float(out)


def b1_lipschitz_prime(x):
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x)
    out[(x > 0.0) & (x <= 1.0)] = 1.0
    outer = x > 1.0
    out[outer] = -0.75 * x[outer] ** -1.75
    return out if out.ndim else float(out)


def b2(y):
    """Bounded drift factor y / (1 + y^2) on [0, oo), zero on the negatives."""
    y = np.asarray(y, dtype=float)
    out = np.zeros_like(y)
    pos = y >= 0.0
    out[pos] = y[pos] / (1.0 + y[pos] ** 2)
    return out if out.ndim else float(out)


def b2_prime(y):
    """Derivative of ``b2``: (1 - y^2) / (1 + y^2)^2 on [0, oo); range [-1/8, 1]."""
    y = np.asarray(y, dtype=float)
    out = np.zeros_like(y)
    pos = y >= 0.0
    yp = y[pos]
    out[pos] = (1.0 - yp ** 2) / (1.0 + yp ** 2) ** 2
    return out if out.ndim else float(out)


def g(y):
    """Strictly increasing map g(y) = exp(y^2) * y^2 on y >= 0."""
    y = np.asarray(y, dtype=float)
    if np.any(y < 0.0):
        raise ValidationError("g is defined on y >= 0")
    out = np.exp(y ** 2) * y ** 2
    return out if out.ndim else float(out)


def g_prime(y):
    """g'(y) = 2 y (1 + y^2) exp(y^2)."""
    y = np.asarray(y, dtype=float)
    out = 2.0 * y * (1.0 + y ** 2) * np.exp(y ** 2)
    return out if out.ndim else float(out)


def _g_inv_scalar(v: float) -> float:
    if v < 0.0:
        raise ValidationError("g_inv is defined on v >= 0")
    if v == 0.0:
        return 0.0
    # grow a bracket geometrically from [0, 1], then bisect and polish
    lo, hi = 0.0, 1.0
    while g(hi) < v:
        lo, hi = hi, 2.0 * hi
        if hi > 1e8:  # g(27) already overflows float range
            raise SaturationError(f"g_inv argument {v!r} out of invertible range")
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        if g(mid) < v:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-14 * max(1.0, hi):
            break
    y = 0.5 * (lo + hi)
    for _ in range(8):
        resid = g(y) - v
        if abs(resid) <= _G_INV_RTOL * max(1.0, v):
            break
        step = resid / g_prime(y)
        y_new = y - step
        if not (lo <= y_new <= hi):
            y_new = min(max(y_new, lo), hi)
        y = y_new
    return y


def g_inv(v):
    """Monotone inverse of ``g``, to |g(g_inv(v)) - v| <= 1e-12 * max(1, v)."""
    if np.ndim(v) == 0:
        return _g_inv_scalar(float(v))
    v = np.asarray(v, dtype=float)
    out = np.empty_like(v)
    flat_in, flat_out = v.ravel(), out.ravel()
    for i, vi in enumerate(flat_in):
        flat_out[i] = _g_inv_scalar(float(vi))
    return out


def analytic_flow(t, x, y):
    """Closed-form deterministic characteristic flow of the benchmark drift.

    Returns ``(x, g^{-1}(g(y) * exp(2 * b1(x) * t)))``; the second component
    solves dY/dt = b1(x) * b2(Y) from Y(0) = y.

    Raises
    ------
    SaturationError
        If ``g(y) * exp(2 b1(x) t)`` leaves the representable range.
    ValidationError
        If ``t < 0`` or ``y < 0``.
    """
    scalar = np.ndim(t) == 0 and np.ndim(x) == 0 and np.ndim(y) == 0
    t = np.asarray(t, dtype=float)
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if np.any(t < 0.0):
        raise ValidationError("analytic_flow requires t >= 0")
    if np.any(y < 0.0):
        raise ValidationError("analytic_flow requires y >= 0")
    t, x, y = np.broadcast_arrays(t, x, y)
    with np.errstate(over="raise"):
        try:
            factor = g(y) * np.exp(2.0 * b1(x) * t)
        except FloatingPointError as exc:
            raise SaturationError("flow magnitude overflow") from exc
    if not np.all(np.isfinite(factor)):
        raise SaturationError("flow magnitude overflow")
    flowed = g_inv(factor)
    if scalar:
        return float(x), float(flowed)
    return x.copy(), np.asarray(flowed)


def analytic_jacobian_inverse(t, x, y):
    """Inverse of the space Jacobian of :func:`analytic_flow` at start (x, y).

    Layout (first index = start variable, second = flow component)::

        [[1,  -(g'(y))^{-1} g(y) * 2 b1'(x) t],
         [0,   g'(Y) / (g'(y) * exp(2 b1(x) t))]]

    with ``Y`` the flowed second coordinate and the identity
    ``(g'(y))^{-1} g(y) = y / (2 (1 + y^2))`` used for the off-diagonal term.

    Raises
    ------
    SingularInputError
        If ``y == 0``, where g'(0) = 0 makes the Jacobian singular.
    """
    t = np.asarray(t, dtype=float)
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if np.any(y <= 0.0):
        raise SingularInputError("Jacobian inverse undefined at y = 0")
    t, x, y = np.broadcast_arrays(t, x, y)
    _, flowed = analytic_flow(t, x, y)
    expo = np.exp(2.0 * b1(x) * t)
    off_diag = -(y / (2.0 * (1.0 + y ** 2))) * 2.0 * b1_prime(x) * t
    diag = g_prime(flowed) / (g_prime(y) * expo)
    out = np.zeros(t.shape + (2, 2))
    out[..., 0, 0] = 1.0
    out[..., 0, 1] = off_diag
    out[..., 1, 1] = diag
    return out


# ---------------------------------------------------------------------------
# drift fields
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DriftField:
    """Time-dependent vector field with gradient and divergence access.

    ``eval(t, x)`` maps points of shape (..., dim) to vectors of the same
    shape; ``gradient(t, x)`` returns (..., dim, dim) matrices whose row i is
    the spatial gradient of component i; ``divergence(t, x)`` returns the
    trace of the gradient.
    """

    dim: int
    eval: Callable
    gradient: Callable
    divergence: Callable
    regularity_tag: str  # smooth_bounded | sobolev_W1p | counterexample
    name: str
    sup_bound: float = math.inf  # known bound on |b|, inf when unknown
    holder_alpha: float = 1.0  # spatial Hoelder exponent used by chaining stats


def zero_field(dim: int = 2) -> DriftField:
    def ev(t, x):
        x = np.asarray(x, dtype=float)
        return np.zeros_like(x)

    def grad(t, x):
        x = np.asarray(x, dtype=float)
        return np.zeros(x.shape[:-1] + (dim, dim))

    def div(t, x):
        x = np.asarray(x, dtype=float)
        return np.zeros(x.shape[:-1])

    return DriftField(dim, ev, grad, div, "smooth_bounded", "zero", sup_bound=0.0)


def _smoothstep(u):
    """Quintic smoothstep: 0 below 0, 1 above 1, C^2 in between."""
    u = np.clip(u, 0.0, 1.0)
    return u ** 3 * (u * (6.0 * u - 15.0) + 10.0)


def _smoothstep_prime(u):
    inside = (u > 0.0) & (u < 1.0)
    out = np.zeros_like(u)
    ui = u[inside]
    out[inside] = 30.0 * ui ** 2 * (ui - 1.0) ** 2
    return out


def rotation_field(flat_radius: float = 2.0, fade_radius: float = 3.0) -> DriftField:
    """Rigid rotation (-y, x) cut off radially; divergence-free everywhere.

    The cut-off is radial, so the angular field stays exactly solenoidal and
    trajectories inside ``flat_radius`` are circles traversed at unit angular
    speed.
    """
    if not 0.0 < flat_radius < fade_radius:
        raise ValidationError("need 0 < flat_radius < fade_radius")
    width = fade_radius - flat_radius

    def chi_pair(r):
        u = (r - flat_radius) / width
        return 1.0 - _smoothstep(u), -_smoothstep_prime(np.clip(u, 0.0, 1.0)) / width

    def ev(t, x):
        x = np.asarray(x, dtype=float)
        r = np.linalg.norm(x, axis=-1)
        chi, _ = chi_pair(r)
        out = np.empty_like(x)
        out[..., 0] = -x[..., 1] * chi
        out[..., 1] = x[..., 0] * chi
        return out

    def grad(t, x):
        x = np.asarray(x, dtype=float)
        r = np.linalg.norm(x, axis=-1)
        chi, dchi = chi_pair(r)
        # b_i = v_i * chi(r) with v = (-y, x); grad = (grad v_i) chi + v_i chi' x/r
        with np.errstate(invalid="ignore", divide="ignore"):
            ux = np.where(r > 0.0, x[..., 0] / np.where(r > 0, r, 1.0), 0.0)
            uy = np.where(r > 0.0, x[..., 1] / np.where(r > 0, r, 1.0), 0.0)
        out = np.zeros(x.shape[:-1] + (2, 2))
        out[..., 0, 0] = -x[..., 1] * dchi * ux
        out[..., 0, 1] = -chi - x[..., 1] * dchi * uy
        out[..., 1, 0] = chi + x[..., 0] * dchi * ux
        out[..., 1, 1] = x[..., 0] * dchi * uy
        return out

    def div(t, x):
        x = np.asarray(x, dtype=float)
        return np.zeros(x.shape[:-1])

    return DriftField(
        2, ev, grad, div, "smooth_bounded", "rotation", sup_bound=fade_radius
    )


def gaussian_bump_field(
    dim: int = 2,
    amplitude=1.0,
    width: float = 1.0,
    center=None,
) -> DriftField:
    """Vector Gaussian bump b(x) = a * exp(-|x - c|^2 / (2 w^2))."""
    amp = np.broadcast_to(np.asarray(amplitude, dtype=float), (dim,)).copy()
    c = np.zeros(dim) if center is None else np.asarray(center, dtype=float)
    if c.shape != (dim,):
        raise ValidationError("center must have length dim")
    w2 = float(width) ** 2
    if w2 <= 0.0:
        raise ValidationError("width must be positive")

    def envelope(x):
        d = x - c
        return np.exp(-np.sum(d * d, axis=-1) / (2.0 * w2))

    def ev(t, x):
        x = np.asarray(x, dtype=float)
        return amp * envelope(x)[..., None]

    def grad(t, x):
        x = np.asarray(x, dtype=float)
        e = envelope(x)
        d = (x - c) / w2
        return -amp[:, None] * e[..., None, None] * d[..., None, :]

    def div(t, x):
        x = np.asarray(x, dtype=float)
        e = envelope(x)
        d = (x - c) / w2
        return -e * np.sum(amp * d, axis=-1)

    return DriftField(
        dim, ev, grad, div, "smooth_bounded", "gaussian_bump",
        sup_bound=float(np.linalg.norm(amp)),
    )


def counterexample_field() -> DriftField:
    """The singular planar drift (0, b1(x) * b2(y)).

    In W^{1,3} of the plane but with sup b1' = oo at the line x = 0+; its
    divergence b1(x) * b2'(y) stays in [-1/8, 1].
    """

    def ev(t, x):
        x = np.asarray(x, dtype=float)
        out = np.zeros_like(x)
        out[..., 1] = b1(x[..., 0]) * b2(x[..., 1])
        return out

    def grad(t, x):
        x = np.asarray(x, dtype=float)
        out = np.zeros(x.shape[:-1] + (2, 2))
        out[..., 1, 0] = b1_prime(x[..., 0]) * b2(x[..., 1])
        out[..., 1, 1] = b1(x[..., 0]) * b2_prime(x[..., 1])
        return out

    def div(t, x):
        x = np.asarray(x, dtype=float)
        return b1(x[..., 0]) * b2_prime(x[..., 1])

    return DriftField(
        2, ev, grad, div, "counterexample", "counterexample",
        sup_bound=1.0, holder_alpha=1.0 / 3.0,
    )


def constant_field(vector) -> DriftField:
    vec = np.atleast_1d(np.asarray(vector, dtype=float))
    dim = vec.size

    def ev(t, x):
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(vec, x.shape).copy()

    def grad(t, x):
        x = np.asarray(x, dtype=float)
        return np.zeros(x.shape[:-1] + (dim, dim))

    def div(t, x):
        x = np.asarray(x, dtype=float)
        return np.zeros(x.shape[:-1])

    return DriftField(
        dim, ev, grad, div, "smooth_bounded", "constant",
        sup_bound=float(np.linalg.norm(vec)),
    )


# ---------------------------------------------------------------------------
# initial data
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class InitialDatum:
    """Scalar initial datum with gradient access.

    ``support`` is the (lo, hi) box outside which the datum vanishes (or is
    numerically negligible for the Gaussian); None means unbounded.
    """

    dim: int
    eval: Callable
    gradient: Callable
    regularity_tag: str  # smooth | W1r | blowup_seed
    name: str
    support: Optional[tuple] = None


def constant_datum(value: float, dim: int = 2) -> InitialDatum:
    val = float(value)

    def ev(x):
        x = np.asarray(x, dtype=float)
        return np.full(x.shape[:-1], val)

    def grad(x):
        x = np.asarray(x, dtype=float)
        return np.zeros_like(x)

    return InitialDatum(dim, ev, grad, "smooth", "constant")


def gaussian_datum(center=(0.0, 0.0), width: float = 0.6) -> InitialDatum:
    c = np.atleast_1d(np.asarray(center, dtype=float))
    dim = c.size
    w2 = float(width) ** 2

    def ev(x):
        x = np.asarray(x, dtype=float)
        d = x - c
        return np.exp(-np.sum(d * d, axis=-1) / (2.0 * w2))

    def grad(x):
        x = np.asarray(x, dtype=float)
        d = x - c
        return -ev(x)[..., None] * d / w2

    half = 8.5 * float(width)  # e^{-36}: below double roundoff relative to peak
    support = (c - half, c + half)
    return InitialDatum(dim, ev, grad, "smooth", "gaussian", support)


def cos2_bump_datum(center=(0.0, 0.0), halfwidth: float = 1.0) -> InitialDatum:
    """C^1 compactly supported product bump prod_i cos^2(pi (x_i-c_i) / (2 w))."""
    c = np.atleast_1d(np.asarray(center, dtype=float))
    dim = c.size
    w = float(halfwidth)
    if w <= 0.0:
        raise ValidationError("halfwidth must be positive")

    def factors(x):
        theta = np.pi * (x - c) / (2.0 * w)
        inside = np.abs(x - c) < w
        f = np.where(inside, np.cos(theta) ** 2, 0.0)
        fp = np.where(inside, -(np.pi / w) * np.cos(theta) * np.sin(theta), 0.0)
        return f, fp

    def ev(x):
        x = np.asarray(x, dtype=float)
        f, _ = factors(x)
        return np.prod(f, axis=-1)

    def grad(x):
        x = np.asarray(x, dtype=float)
        f, fp = factors(x)
        out = np.empty_like(x)
        for i in range(dim):
            others = np.prod(np.delete(f, i, axis=-1), axis=-1)
            out[..., i] = fp[..., i] * others
        return out

    return InitialDatum(dim, ev, grad, "W1r", "cos2_bump", (c - w, c + w))


def seed_profile(x):
    """x-factor of the blowup seed: (4/3) x^{3/4} on [0,1], C^1 blend to 0 at 2."""
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x)
    core = (x > 0.0) & (x <= 1.0)
    out[core] = (4.0 / 3.0) * x[core] ** 0.75
    blend = (x > 1.0) & (x < 2.0)
    s = x[blend] - 1.0
    # cubic Hermite with value 4/3 and slope 1 at x=1, zero value/slope at x=2
    h00 = 2.0 * s ** 3 - 3.0 * s ** 2 + 1.0
    h10 = s ** 3 - 2.0 * s ** 2 + s
    out[blend] = (4.0 / 3.0) * h00 + h10
    return out if out.ndim else float(out)


def seed_profile_prime(x):
    """Derivative of :func:`seed_profile`; behaves as x^{-1/4} near 0+."""
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x)
    core = (x > 0.0) & (x <= 1.0)
    out[core] = x[core] ** -0.25
    blend = (x > 1.0) & (x < 2.0)
    s = x[blend] - 1.0
    d00 = 6.0 * s ** 2 - 6.0 * s
    d10 = 3.0 * s ** 2 - 4.0 * s + 1.0
    out[blend] = (4.0 / 3.0) * d00 + d10
    return out if out.ndim else float(out)


def seed_transverse(y):
    """y-factor of the blowup seed: sin^2(pi y / 2) on (0, 2)."""
    y = np.asarray(y, dtype=float)
    out = np.zeros_like(y)
    inside = (y > 0.0) & (y < 2.0)
    out[inside] = np.sin(np.pi * y[inside] / 2.0) ** 2
    return out if out.ndim else float(out)


def seed_transverse_prime(y):
    y = np.asarray(y, dtype=float)
    out = np.zeros_like(y)
    inside = (y > 0.0) & (y < 2.0)
    out[inside] = (np.pi / 2.0) * np.sin(np.pi * y[inside])
    return out if out.ndim else float(out)


def blowup_seed_datum() -> InitialDatum:
    """Product datum whose x-derivative behaves as x^{-1/4} near 0+.

    Lies in W^{1,3} of the plane (the cube of the derivative is x^{-3/4},
    integrable) and is compactly supported in [0,2] x [0,2].
    """

    def ev(x):
        x = np.asarray(x, dtype=float)
        return seed_profile(x[..., 0]) * seed_transverse(x[..., 1])

    def grad(x):
        x = np.asarray(x, dtype=float)
        out = np.empty_like(x)
        out[..., 0] = seed_profile_prime(x[..., 0]) * seed_transverse(x[..., 1])
        out[..., 1] = seed_profile(x[..., 0]) * seed_transverse_prime(x[..., 1])
        return out

    support = (np.array([0.0, 0.0]), np.array([2.0, 2.0]))
    return InitialDatum(2, ev, grad, "blowup_seed", "blowup_seed", support)


# ---------------------------------------------------------------------------
# smooth compactly supported test functions
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TestFunction:
    """C-infinity bump supported in the closed ball of ``radius`` at ``center``."""

    dim: int
    center: np.ndarray
    radius: float
    eval: Callable
    gradient: Callable


def smooth_test_bump(center=(0.0, 0.0), radius: float = 1.5) -> TestFunction:
    c = np.atleast_1d(np.asarray(center, dtype=float))
    rho2 = float(radius) ** 2
    if rho2 <= 0.0:
        raise ValidationError("radius must be positive")

    def ev(x):
        x = np.asarray(x, dtype=float)
        s = np.sum((x - c) ** 2, axis=-1) / rho2
        out = np.zeros(x.shape[:-1])
        inside = s < 1.0 - 1e-12
        out[inside] = np.exp(1.0 - 1.0 / (1.0 - s[inside]))
        return out

    def grad(x):
        x = np.asarray(x, dtype=float)
        s = np.sum((x - c) ** 2, axis=-1) / rho2
        out = np.zeros_like(x)
        inside = s < 1.0 - 1e-12
        si = s[inside]
        phi = np.exp(1.0 - 1.0 / (1.0 - si))
        coeff = -phi / (1.0 - si) ** 2 * (2.0 / rho2)
        out[inside] = coeff[..., None] * (x[inside] - c)
        return out

    return TestFunction(c.size, c, float(radius), ev, grad)


# ---------------------------------------------------------------------------
# registries used by the CLI
# ---------------------------------------------------------------------------

_FIELD_MAKERS = {
    "zero": zero_field,
    "rotation": rotation_field,
    "gaussian_bump": gaussian_bump_field,
    "counterexample": counterexample_field,
    "constant": constant_field,
}

_DATUM_MAKERS = {
    "constant": constant_datum,
    "gaussian": gaussian_datum,
    "cos2_bump": cos2_bump_datum,
    "blowup_seed": blowup_seed_datum,
}


def make_field(name: str, **params) -> DriftField:
    try:
        maker = _FIELD_MAKERS[name]
    except KeyError:
        raise ValidationError(
            f"unknown field {name!r}; choose from {sorted(_FIELD_MAKERS)}"
        ) from None
    return maker(**params)


def make_datum(name: str, **params) -> InitialDatum:
    try:
        maker = _DATUM_MAKERS[name]
    except KeyError:
        raise ValidationError(
            f"unknown datum {name!r}; choose from {sorted(_DATUM_MAKERS)}"
        ) from None
    return maker(**params)
