"""Characteristic flow engine.

Integrates the characteristic ODE/SDE ``dX = b(t, X) dt + dB`` forward and
backward on fixed uniform grids, together with the variational (Jacobian)
recursion. The noise enters additively, so the Jacobian recursion carries no
stochastic term, and forward/backward runs can share one stored path, which
keeps the pathwise inverse exact at scheme level.

Steps are fixed (never adaptive): forward and inverse runs must share grids
and Brownian increments exactly, and the flow (composition) property then
holds bitwise for the discrete scheme.

Single-point entry points raise :class:`DivergenceError` when a trajectory
escapes the bounding box; batch entry points freeze the offending points and
return a mask instead, so one bad grid cell never aborts a whole field.
"""

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .brownian import BrownianPath
from .errors import DivergenceError, SingularInputError, ValidationError
from .fields import DriftField

DEFAULT_BBOX_RADIUS = 1.0e6
_SCHEMES = ("euler_maruyama", "heun")


@dataclass(frozen=True)
class FlowResult:
    """Trajectory of one characteristic, with optional Jacobian trajectory."""

    times: np.ndarray  # (n+1,)
    states: np.ndarray  # (n+1, d)
    jacobians: Optional[np.ndarray]  # (n+1, d, d) or None
    path_ref: Optional[tuple]  # (seed, stream_id) or None for deterministic

    @property
    def final_state(self) -> np.ndarray:
        return self.states[-1]

    @property
    def final_jacobian(self) -> np.ndarray:
        if self.jacobians is None:
            raise ValidationError("run was integrated without Jacobians")
        return self.jacobians[-1]


def _check_scheme(scheme: str):
    if scheme not in _SCHEMES:
        raise ValidationError(f"scheme must be one of {_SCHEMES}")


def _resolve_grid(path, t, n_steps, start_step=0):
    """Map (path | n_steps, t) to (h, n, increments-or-None)."""
    if t is None or not t >= 0.0:
        raise ValidationError("t must be a non-negative time")
    if path is not None:
        h = path.step
        n = int(round(t / h))
        if abs(n * h - t) > 1e-9 * max(1.0, t):
            raise ValidationError("t must lie on the Brownian path grid")
        if start_step + n > path.n_steps:
            raise ValidationError("path horizon does not cover the requested interval")
        return h, n, path.increments[start_step:start_step + n]
    if t == 0.0:
        return 0.0, 0, None
    if n_steps is None or n_steps < 1:
        raise ValidationError("deterministic runs need n_steps >= 1")
    return t / n_steps, int(n_steps), None


def _reversed_field(field: DriftField, t: float) -> DriftField:
    """Drift of the backward flow: opposite sign, time run from t down to 0."""
    return DriftField(
        dim=field.dim,
        eval=lambda s, z: -field.eval(t - s, z),
        gradient=lambda s, z: -field.gradient(t - s, z),
        divergence=lambda s, z: -field.divergence(t - s, z),
        regularity_tag=field.regularity_tag,
        name=field.name + "~reversed",
        sup_bound=field.sup_bound,
        holder_alpha=field.holder_alpha,
    )


def _step(field, states, t, h, dw, scheme, eye, want_factor):
    """One explicit step; returns (new_states, jacobian_update_factor|None)."""
    drift0 = field.eval(t, states)
    factor = None
    if scheme == "euler_maruyama":
        new = states + h * drift0
        if dw is not None:
            new = new + dw
        if want_factor:
            factor = eye + h * field.gradient(t, states)
    else:  # heun: valid here since the noise is additive
        pred = states + h * drift0
        if dw is not None:
            pred = pred + dw
        new = states + 0.5 * h * (drift0 + field.eval(t + h, pred))
        if dw is not None:
            new = new + dw
        if want_factor:
            grad0 = field.gradient(t, states)
            grad1 = field.gradient(t + h, pred)
            factor = (
                eye
                + 0.5 * h * (grad0 + grad1)
                + 0.5 * h * h * np.einsum("...ij,...jk->...ik", grad1, grad0)
            )
    return new, factor


def _single_run(field, x, h, n, incs, t0, scheme, with_jacobian, bbox_radius):
    """One characteristic with stored trajectory; raises on escape."""
    dim = x.size
    eye = np.eye(dim)
    states = np.empty((n + 1, dim))
    states[0] = x
    jac = np.empty((n + 1, dim, dim)) if with_jacobian else None
    if with_jacobian:
        jac[0] = eye
    cur = x.astype(float).copy()
    for k in range(n):
        t = t0 + k * h
        dw = None if incs is None else incs[k]
        cur, factor = _step(field, cur, t, h, dw, scheme, eye, with_jacobian)
        if not np.all(np.isfinite(cur)) or np.abs(cur).max() > bbox_radius:
            raise DivergenceError(
                "trajectory escaped the bounding box", escape_time=t + h
            )
        states[k + 1] = cur
        if with_jacobian:
            jac[k + 1] = factor @ jac[k]
    return states, jac


def scan_forward(
    field: DriftField,
    points: np.ndarray,
    h: float,
    n_steps: int,
    increments=None,
    t0: float = 0.0,
    scheme: str = "euler_maruyama",
    with_det: bool = False,
    callback: Optional[Callable] = None,
    bbox_radius: float = DEFAULT_BBOX_RADIUS,
):
    """Advance a batch of starting points, reporting each time level.

    ``increments`` may be None (deterministic), an (n_steps, d) array shared
    by the whole batch, or an (n_steps, N, d) array with one path per point.
    ``callback(k, t, states, dets, alive)`` runs at every level, including 0.
    Returns ``(states, dets, alive)`` at the final level; points that left
    the bounding box are frozen at their last finite position and masked.
    """
    _check_scheme(scheme)
    states = np.atleast_2d(np.array(points, dtype=float, copy=True))
    n_pts, dim = states.shape
    dets = np.ones(n_pts) if with_det else None
    alive = np.ones(n_pts, dtype=bool)
    eye = np.eye(dim)

    if callback is not None:
        callback(0, t0, states, dets, alive)
    for k in range(n_steps):
        t = t0 + k * h
        dw = None if increments is None else increments[k]
        new, factor = _step(field, states, t, h, dw, scheme, eye, with_det)
        bad = ~np.isfinite(new).all(axis=-1) | (np.abs(new).max(axis=-1) > bbox_radius)
        alive = alive & ~bad
        states = np.where(alive[:, None], new, states)
        if with_det:
            step_det = np.linalg.det(np.broadcast_to(factor, (n_pts, dim, dim)))
            dets = np.where(alive, dets * step_det, dets)
        if callback is not None:
            callback(k + 1, t + h, states, dets, alive)
    return states, dets, alive


def forward_jacobians(
    field: DriftField,
    points,
    h: float,
    n_steps: int,
    increments=None,
    t0: float = 0.0,
    scheme: str = "euler_maruyama",
    bbox_radius: float = DEFAULT_BBOX_RADIUS,
):
    """Batch forward run carrying full Jacobian matrices.

    Returns ``(states, jacobians, alive)`` at the final time; dead points are
    frozen (states and Jacobians stop updating once the point is masked).
    """
    _check_scheme(scheme)
    states = np.atleast_2d(np.array(points, dtype=float, copy=True))
    n_pts, dim = states.shape
    jac = np.broadcast_to(np.eye(dim), (n_pts, dim, dim)).copy()
    alive = np.ones(n_pts, dtype=bool)
    eye = np.eye(dim)
    for k in range(n_steps):
        t = t0 + k * h
        dw = None if increments is None else increments[k]
        new, factor = _step(field, states, t, h, dw, scheme, eye, True)
        bad = ~np.isfinite(new).all(axis=-1) | (np.abs(new).max(axis=-1) > bbox_radius)
        alive = alive & ~bad
        states = np.where(alive[:, None], new, states)
        new_jac = np.einsum(
            "nij,njk->nik", np.broadcast_to(factor, (n_pts, dim, dim)), jac
        )
        jac = np.where(alive[:, None, None], new_jac, jac)
    return states, jac, alive


def integrate_forward(
    field: DriftField,
    x,
    path: Optional[BrownianPath] = None,
    t: Optional[float] = None,
    n_steps: Optional[int] = None,
    scheme: str = "euler_maruyama",
    with_jacobian: bool = False,
    start_step: int = 0,
    bbox_radius: float = DEFAULT_BBOX_RADIUS,
) -> FlowResult:
    """Integrate one characteristic forward, storing the whole trajectory.

    With a path the grid is the path grid and ``t`` defaults to the remaining
    horizon; without one, ``t`` and ``n_steps`` define the grid. The Jacobian
    follows the variational recursion started at the identity.
    """
    _check_scheme(scheme)
    if path is not None and t is None:
        t = path.horizon - start_step * path.step
    h, n, incs = _resolve_grid(path, t, n_steps, start_step)
    t0 = start_step * (path.step if path is not None else 0.0)
    x = np.asarray(x, dtype=float)
    states, jac = _single_run(
        field, x, h, n, incs, t0, scheme, with_jacobian, bbox_radius
    )
    times = t0 + h * np.arange(n + 1) if n > 0 else np.array([t0])
    ref = None if path is None else (path.seed, path.stream_id)
    return FlowResult(times, states, jac, ref)


def inverse_points(
    field: DriftField,
    points,
    t: float,
    path: Optional[BrownianPath] = None,
    n_steps: Optional[int] = None,
    scheme: str = "euler_maruyama",
    bbox_radius: float = DEFAULT_BBOX_RADIUS,
):
    """Batch inverse flow: start points of the characteristics ending at ``points``.

    Integrates the time-reversed dynamics ``dZ(s) = -b(t - s, Z) ds - dB~(s)``
    over ``s in [0, t]`` with the reversed increment sequence of the same
    stored path. Returns ``(start_points, alive_mask)``.
    """
    h, n, incs = _resolve_grid(path, t, n_steps)
    points = np.atleast_2d(np.asarray(points, dtype=float))
    if n == 0:
        return points.copy(), np.ones(points.shape[0], dtype=bool)
    rev = None if incs is None else -incs[::-1]
    states, _, alive = scan_forward(
        _reversed_field(field, t), points, h, n, rev, 0.0, scheme,
        with_det=False, bbox_radius=bbox_radius,
    )
    return states, alive


def integrate_inverse(
    field: DriftField,
    x,
    t: float,
    path: Optional[BrownianPath] = None,
    n_steps: Optional[int] = None,
    scheme: str = "euler_maruyama",
    bbox_radius: float = DEFAULT_BBOX_RADIUS,
) -> np.ndarray:
    """Single-point inverse flow X^{-1}(t, x); raises on divergence."""
    states, alive = inverse_points(
        field, np.asarray(x, dtype=float)[None, :], t, path, n_steps, scheme,
        bbox_radius,
    )
    if not alive[0]:
        raise DivergenceError("inverse characteristic escaped the bounding box")
    return states[0]


def inverse_jacobians(
    field: DriftField,
    points,
    t: float,
    path: Optional[BrownianPath] = None,
    n_steps: Optional[int] = None,
    scheme: str = "euler_maruyama",
    bbox_radius: float = DEFAULT_BBOX_RADIUS,
    cond_limit: float = 1e12,
):
    """Batch gradient of the inverse flow at ``points``.

    Computed as the matrix inverse of the forward Jacobian along the
    characteristic started at ``X^{-1}(t, x)`` and run with the same
    increments. Returns ``(start_points, jac_inv, ok)``; points whose forward
    Jacobian is near singular (condition number above ``cond_limit``) or
    whose characteristic diverged are masked out.
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    starts, alive = inverse_points(
        field, points, t, path, n_steps, scheme, bbox_radius
    )
    dim = starts.shape[1]
    if t == 0.0:
        eye = np.broadcast_to(np.eye(dim), (starts.shape[0], dim, dim)).copy()
        return starts, eye, alive
    h, n, incs = _resolve_grid(path, t, n_steps)
    _, jac, fwd_alive = forward_jacobians(
        field, starts, h, n, incs, 0.0, scheme, bbox_radius
    )
    alive = alive & fwd_alive
    jac_inv = np.broadcast_to(np.eye(dim), jac.shape).copy()
    with np.errstate(all="ignore"):
        conds = np.linalg.cond(jac)
    ok = alive & np.isfinite(conds) & (conds <= cond_limit)
    if np.any(ok):
        jac_inv[ok] = np.linalg.inv(jac[ok])
    return starts, jac_inv, ok


def jacobian_inverse_flow(
    field: DriftField,
    x,
    t: float,
    path: Optional[BrownianPath] = None,
    n_steps: Optional[int] = None,
    scheme: str = "euler_maruyama",
    bbox_radius: float = DEFAULT_BBOX_RADIUS,
) -> np.ndarray:
    """Gradient of the inverse flow at one point; errors on singular Jacobian."""
    _, jac_inv, ok = inverse_jacobians(
        field, np.asarray(x, dtype=float)[None, :], t, path, n_steps, scheme,
        bbox_radius,
    )
    if not ok[0]:
        raise SingularInputError(
            "forward Jacobian is numerically singular along this characteristic"
        )
    return jac_inv[0]


def euler_identity_residual(
    field: DriftField,
    x,
    t: float,
    path: Optional[BrownianPath] = None,
    n_steps: Optional[int] = None,
    scheme: str = "euler_maruyama",
    bbox_radius: float = DEFAULT_BBOX_RADIUS,
) -> float:
    """|det grad_x X(t,x) - exp(integral of div b along the characteristic)|.

    The time integral uses the trapezoid rule on the same grid as the flow,
    so both sides carry matched-order discretization error.
    """
    res = integrate_forward(
        field, x, path, t, n_steps, scheme,
        with_jacobian=True, bbox_radius=bbox_radius,
    )
    det = float(np.linalg.det(res.final_jacobian))
    div_vals = np.array(
        [float(field.divergence(tk, s)) for tk, s in zip(res.times, res.states)]
    )
    integral = float(np.trapezoid(div_vals, res.times)) if len(res.times) > 1 else 0.0
    return abs(det - np.exp(integral))
