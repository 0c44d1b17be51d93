"""Command-line front end: configure, run, and report experiments.

Every experiment is driven by a JSON config file; the only flags are
``--config``, ``--out`` and ``--assert``. Each run writes ``report.json``
(resolved config, summary numbers, verdicts, wall time) plus one CSV per
result table into the output directory. Exit codes: 0 success, 2 config
validation failure (nothing written), 3 numeric failure (report written with
``error.kind``), 4 verdict failure in ``--assert`` mode.

Reruns with the same config and seed are byte-identical regardless of the
``workers`` setting: all sample streams are pre-assigned by stream id, and
``workers`` only sets chunk sizes.
"""

import argparse
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__, blowup, brownian, flow, regularity, transport, zvonkin
from .errors import NumericError, StochTransError, ValidationError
from .fields import make_datum, make_field, smooth_test_bump
from .grids import Grid
from .reporting import ExperimentReport

COMMANDS = (
    "euler-identity",
    "solve",
    "weak-form",
    "compare",
    "zvonkin",
    "moments",
    "tail",
    "blowup-det",
    "blowup-stoch",
    "contrast",
)

ENV_OUT_DIR = "STOCHTRANS_OUT"


# ---------------------------------------------------------------------------
# config parsing helpers (validate everything before any computation)
# ---------------------------------------------------------------------------

class _Cfg:
    """Dict wrapper that tracks consumed keys and rejects unknown ones."""

    def __init__(self, data: dict, context: str = "config"):
        if not isinstance(data, dict):
            raise ValidationError(f"{context} must be a JSON object")
        self._data = dict(data)
        self._context = context
        self._seen = set()

    def take(self, key, default=None, required=False):
        self._seen.add(key)
        if key not in self._data:
            if required:
                raise ValidationError(f"{self._context}: missing key {key!r}")
            return default
        return self._data[key]

    def sub(self, key, required=False) -> "_Cfg":
        raw = self.take(key, default={}, required=required)
        return _Cfg(raw if raw is not None else {}, f"{self._context}.{key}")

    def finish(self):
        unknown = set(self._data) - self._seen
        if unknown:
            raise ValidationError(
                f"{self._context}: unknown keys {sorted(unknown)}"
            )


def _pos_float(value, name):
    try:
        v = float(value)
    except (TypeError, ValueError):
        raise ValidationError(f"{name} must be a number") from None
    if not v > 0.0 or not np.isfinite(v):
        raise ValidationError(f"{name} must be positive and finite (got {value!r})")
    return v


def _nonneg_int(value, name):
    if not isinstance(value, int) or isinstance(value, bool) or value < 0:
        raise ValidationError(f"{name} must be a non-negative integer")
    return value


def _pos_int(value, name):
    v = _nonneg_int(value, name)
    if v < 1:
        raise ValidationError(f"{name} must be at least 1")
    return v


def _float_list(value, name, positive=False, strictly_decreasing=False):
    if not isinstance(value, (list, tuple)) or not value:
        raise ValidationError(f"{name} must be a non-empty list of numbers")
    try:
        arr = [float(v) for v in value]
    except (TypeError, ValueError):
        raise ValidationError(f"{name} must contain numbers") from None
    if positive and any(v <= 0 for v in arr):
        raise ValidationError(f"{name} entries must be positive")
    if strictly_decreasing and any(b >= a for a, b in zip(arr, arr[1:])):
        raise ValidationError(f"{name} must be strictly decreasing")
    return arr


def _point(value, name, dim=None):
    arr = _float_list(value, name)
    if dim is not None and len(arr) != dim:
        raise ValidationError(f"{name} must have length {dim}")
    return np.asarray(arr)


def _field_from(cfg: _Cfg, key="field", required=True):
    sub = cfg.take(key, required=required)
    if sub is None:
        return None
    box = _Cfg(sub, f"{cfg._context}.{key}")
    name = box.take("name", required=True)
    params = box.take("params", default={})
    box.finish()
    if not isinstance(params, dict):
        raise ValidationError(f"{key}.params must be an object")
    return make_field(name, **params)


def _datum_from(cfg: _Cfg, key="datum", required=True):
    sub = cfg.take(key, required=required)
    if sub is None:
        return None
    box = _Cfg(sub, f"{cfg._context}.{key}")
    name = box.take("name", required=True)
    params = box.take("params", default={})
    box.finish()
    if not isinstance(params, dict):
        raise ValidationError(f"{key}.params must be an object")
    return make_datum(name, **params)


def _grid_from(cfg: _Cfg, key="grid", required=True):
    box = cfg.sub(key, required=required)
    lo = _float_list(box.take("lo", required=True), "grid.lo")
    hi = _float_list(box.take("hi", required=True), "grid.hi")
    shape = box.take("shape", required=True)
    box.finish()
    if not isinstance(shape, (list, tuple)) or not all(
        isinstance(s, int) and s >= 2 for s in shape
    ):
        raise ValidationError("grid.shape must be a list of integers >= 2")
    if len(lo) != len(hi) or len(lo) != len(shape):
        raise ValidationError("grid lo/hi/shape lengths must agree")
    if any(h <= l for l, h in zip(lo, hi)):
        raise ValidationError("grid must have lo < hi per axis")
    return Grid.regular(lo, hi, shape)


def _time_from(cfg: _Cfg, levels=False):
    box = cfg.sub("time", required=True)
    T = _pos_float(box.take("T", required=True), "time.T")
    if levels:
        lst = box.take("n_steps_list", required=True)
        if not isinstance(lst, (list, tuple)) or not all(
            isinstance(v, int) and v >= 1 for v in lst
        ):
            raise ValidationError("time.n_steps_list must be a list of integers >= 1")
        box.finish()
        return T, list(lst)
    n = _pos_int(box.take("n_steps", required=True), "time.n_steps")
    box.finish()
    return T, n


def _common(cfg: _Cfg):
    seed = _nonneg_int(cfg.take("seed", default=0), "seed")
    workers = _pos_int(cfg.take("workers", default=1), "workers")
    out = cfg.sub("output")
    formats = out.take("formats", default=["csv", "json"])
    out.finish()
    if not isinstance(formats, (list, tuple)) or not set(formats) <= {"csv", "json"}:
        raise ValidationError("output.formats must be a subset of ['csv','json']")
    return seed, workers, tuple(formats)


def _band_check(value, band, label, failures):
    lo, hi = band
    if not lo <= value <= hi:
        failures.append(f"{label}={value:.6g} outside [{lo:g}, {hi:g}]")


# ---------------------------------------------------------------------------
# command implementations; each returns (summary, failures)
# ---------------------------------------------------------------------------

def _cmd_euler_identity(cfg: _Cfg, report: ExperimentReport, seed: int):
    field = _field_from(cfg)
    x = _point(cfg.take("x", required=True), "x", field.dim)
    T, levels = _time_from(cfg, levels=True)
    noise = bool(cfg.take("noise", default=False))
    scheme = cfg.take("scheme", default="euler_maruyama")
    checks = cfg.sub("assert")
    max_residual = checks.take("max_residual")
    ratio_band = checks.take("ratio_band")
    checks.finish()
    cfg.finish()

    table = report.table("residuals", ["n_steps", "h", "residual", "ratio"])
    residuals = []
    for i, n in enumerate(levels):
        path = brownian.generate(seed, 0, field.dim, T, n) if noise else None
        r = flow.euler_identity_residual(field, x, T, path, n, scheme)
        residuals.append(r)
        ratio = residuals[i - 1] / r if i > 0 and r > 0 else float("nan")
        table.add(n, T / n, r, ratio)
    ratios = [
        residuals[i - 1] / residuals[i]
        for i in range(1, len(residuals))
        if residuals[i] > 0
    ]
    report.summary.update(
        residuals=residuals, ratios=ratios, scheme=scheme, noise=noise
    )
    failures = []
    if max_residual is not None and max(residuals) > float(max_residual):
        failures.append(
            f"max residual {max(residuals):.3e} > {float(max_residual):.3e}"
        )
    if ratio_band is not None:
        band = _float_list(ratio_band, "assert.ratio_band")
        for rho in ratios:
            _band_check(rho, band, "ratio", failures)
    return failures


def _cmd_solve(cfg: _Cfg, report: ExperimentReport, seed: int):
    field = _field_from(cfg)
    datum = _datum_from(cfg)
    grid = _grid_from(cfg)
    T, n_steps = _time_from(cfg)
    noise = bool(cfg.take("noise", default=True))
    scheme = cfg.take("scheme", default="euler_maruyama")
    norm_box = cfg.sub("norms")
    norm_R = norm_box.take("R")
    norm_r = norm_box.take("r", default=2.0)
    norm_box.finish()
    cfg.finish()

    path = brownian.generate(seed, 0, field.dim, T, n_steps) if noise else None
    sol = transport.solve(field, datum, T, grid, path, n_steps, scheme)
    pts = grid.points()
    dim = grid.dim
    header = (
        [f"x{i}" for i in range(dim)]
        + ["value"]
        + [f"grad{i}" for i in range(dim)]
        + ["grad_u0_norm", "jac_inv_norm", "masked"]
    )
    table = report.table("solution", header)
    for i in range(pts.shape[0]):
        table.add(
            *pts[i], sol.values[i], *sol.gradient_values[i],
            sol.grad_u0_norms[i], sol.jac_inv_norms[i], int(not sol.mask[i]),
        )
    masked_fraction = float(1.0 - sol.mask.mean())
    report.summary.update(
        sup_value=float(np.max(np.abs(sol.values))),
        masked_fraction=masked_fraction,
    )
    if norm_R is not None:
        R = _pos_float(norm_R, "norms.R")
        rr = float(norm_r)
        report.summary["sobolev_chain_rule"] = transport.local_sobolev_norm(
            sol, R, rr
        )
        report.summary["sobolev_product"] = transport.local_sobolev_norm(
            sol, R, rr, mode="product"
        )
    return []


def _cmd_weak_form(cfg: _Cfg, report: ExperimentReport, seed: int):
    field = _field_from(cfg)
    datum = _datum_from(cfg)
    grid = _grid_from(cfg)
    T, levels = _time_from(cfg, levels=True)
    noise = bool(cfg.take("noise", default=True))
    phi_box = cfg.sub("phi", required=True)
    center = _float_list(phi_box.take("center", required=True), "phi.center")
    radius = _pos_float(phi_box.take("radius", required=True), "phi.radius")
    phi_box.finish()
    checks = cfg.sub("assert")
    min_factor = checks.take("min_factor")
    checks.finish()
    cfg.finish()

    if noise:
        for a, b in zip(levels, levels[1:]):
            if b != 2 * a:
                raise ValidationError(
                    "with noise, n_steps_list must double per level so the "
                    "path can be refined coherently"
                )
    phi = smooth_test_bump(center, radius)
    table = report.table(
        "residuals", ["n_steps", "time_step", "residual", "factor"]
    )
    residuals = []
    path = brownian.generate(seed, 0, field.dim, T, levels[0]) if noise else None
    for i, n in enumerate(levels):
        if noise and i > 0:
            path = brownian.refine(path)
        rep = transport.weak_form_residual(
            field, datum, phi, T, grid, path, None if noise else n
        )
        residuals.append(abs(rep.residual))
        factor = (
            residuals[i - 1] / residuals[i]
            if i > 0 and residuals[i] > 0
            else float("nan")
        )
        table.add(n, rep.time_step, rep.residual, factor)
    factors = [
        residuals[i - 1] / residuals[i]
        for i in range(1, len(residuals))
        if residuals[i] > 0
    ]
    report.summary.update(residuals=residuals, factors=factors, noise=noise)
    failures = []
    if min_factor is not None:
        if not factors or min(factors) < float(min_factor):
            worst = min(factors) if factors else float("nan")
            failures.append(f"decay factor {worst:.3f} < {float(min_factor):.3f}")
    return failures


def _cmd_compare(cfg: _Cfg, report: ExperimentReport, seed: int):
    field = _field_from(cfg)
    low = _datum_from(cfg, "datum_low")
    high = _datum_from(cfg, "datum_high")
    grid = _grid_from(cfg)
    T, n_steps = _time_from(cfg)
    n_seeds = _pos_int(cfg.take("n_seeds", default=20), "n_seeds")
    cfg.finish()

    table = report.table("runs", ["seed", "violations", "max_gap"])
    total = 0
    worst_gap = 0.0
    for s in range(n_seeds):
        path = brownian.generate(seed, s, field.dim, T, n_steps)
        violations, max_gap = transport.comparison_check(
            field, low, high, T, grid, path
        )
        table.add(s, violations, max_gap)
        total += violations
        worst_gap = max(worst_gap, max_gap)
    report.summary.update(total_violations=total, max_gap=worst_gap,
                          n_seeds=n_seeds)
    return [f"{total} comparison violations"] if total else []


def _cmd_zvonkin(cfg: _Cfg, report: ExperimentReport, seed: int):
    field = _field_from(cfg)
    lambdas = _float_list(
        cfg.take("lambdas", default=[1.0, 10.0, 100.0]), "lambdas", positive=True
    )
    pde = cfg.sub("pde", required=True)
    halfwidth = _pos_float(pde.take("halfwidth", required=True), "pde.halfwidth")
    n_nodes = _pos_int(pde.take("n_nodes", required=True), "pde.n_nodes")
    T = _pos_float(pde.take("T", required=True), "pde.T")
    n_t = _pos_int(pde.take("n_t", required=True), "pde.n_t")
    pde.finish()
    equiv = cfg.take("equivalence")
    checks = cfg.sub("assert")
    require_monotone = bool(checks.take("monotone_grad", default=False))
    min_equiv_factor = checks.take("min_equiv_factor")
    checks.finish()
    cfg.finish()

    table = report.table(
        "lambda_scan",
        ["lambda", "sup_U", "sup_grad", "sup_hess", "min_det",
         "lip_inverse", "terminal_max", "boundary_max"],
    )
    sols = {}
    grad_sups = []
    for lam in lambdas:
        sol = zvonkin.solve_backward_pde(field, lam, halfwidth, n_nodes, T, n_t)
        gamma = zvonkin.gamma_diffeo_check(sol)
        sols[lam] = sol
        grad_sups.append(sol.sup_grad())
        table.add(
            lam, sol.sup_U(), sol.sup_grad(), sol.sup_hess(), gamma.min_det,
            gamma.lip_inverse, sol.terminal_max(), sol.boundary_max,
        )
    report.summary.update(lambdas=lambdas, grad_sups=grad_sups)

    # spatial slice of the last solution at t = 0
    sol = sols[lambdas[-1]]
    dim = sol.dim
    slice_table = report.table(
        "u_slice",
        [f"x{i}" for i in range(dim)]
        + [f"U{i}" for i in range(dim)]
        + [f"gradU{i}{j}" for i in range(dim) for j in range(dim)],
    )
    pts = sol.grid.points()
    u0 = sol.U[0].reshape(-1, dim)
    g0 = sol.grad_U[0].reshape(-1, dim, dim)
    for i in range(pts.shape[0]):
        slice_table.add(*pts[i], *u0[i], *g0[i].ravel())

    failures = []
    if require_monotone and not all(
        a > b for a, b in zip(grad_sups, grad_sups[1:])
    ):
        failures.append(f"grad sup not strictly decreasing: {grad_sups}")

    if equiv is not None:
        ebox = _Cfg(equiv, "equivalence")
        lam = _pos_float(ebox.take("lambda", required=True), "equivalence.lambda")
        x = _point(ebox.take("x", required=True), "equivalence.x", field.dim)
        n_list = ebox.take("n_steps_list", required=True)
        n_paths = _pos_int(ebox.take("n_paths", default=5), "equivalence.n_paths")
        ebox.finish()
        if not isinstance(n_list, (list, tuple)) or not all(
            isinstance(v, int) and v >= 1 for v in n_list
        ):
            raise ValidationError("equivalence.n_steps_list must be integers")
        for a, b in zip(n_list, n_list[1:]):
            if b != 2 * a:
                raise ValidationError("equivalence.n_steps_list must double")
        sol = zvonkin.solve_backward_pde(field, lam, halfwidth, n_nodes, T, n_t)
        etable = report.table("equivalence", ["n_steps", "median_gap", "factor"])
        medians = []
        for i, n in enumerate(n_list):
            paths = []
            for p in range(n_paths):
                path = brownian.generate(seed, p, field.dim, T, n_list[0])
                for _ in range(i):
                    path = brownian.refine(path)
                paths.append(path)
            gaps = zvonkin.equivalence_gaps(field, sol, x, paths)
            medians.append(float(np.median(gaps)))
            factor = (
                medians[i - 1] / medians[i]
                if i > 0 and medians[i] > 0
                else float("nan")
            )
            etable.add(n, medians[i], factor)
        factors = [
            medians[i - 1] / medians[i]
            for i in range(1, len(medians))
            if medians[i] > 0
        ]
        report.summary.update(equiv_medians=medians, equiv_factors=factors)
        if min_equiv_factor is not None:
            if not factors or min(factors) < float(min_equiv_factor):
                worst = min(factors) if factors else float("nan")
                failures.append(
                    f"equivalence factor {worst:.3f} < {float(min_equiv_factor)}"
                )
    return failures


def _cmd_moments(cfg: _Cfg, report: ExperimentReport, seed: int):
    field = _field_from(cfg)
    quantity = cfg.take("quantity", required=True)
    m = _pos_float(cfg.take("m", default=2.0), "m")
    n_samples = _nonneg_int(cfg.take("n_samples", default=1000), "n_samples")
    T, n_steps = _time_from(cfg)
    cfg_x = cfg.take("x")
    cfg_y = cfg.take("y")
    box_cfg = cfg.take("box")
    grid_shape = cfg.take("grid_shape")
    which = cfg.take("which", default="inverse")
    alpha = cfg.take("alpha")
    deterministic = bool(cfg.take("deterministic", default=False))
    cfg.finish()

    if quantity == "pair":
        est = regularity.pair_moment(
            field, _point(cfg_x, "x", field.dim), _point(cfg_y, "y", field.dim),
            m, T, n_samples, n_steps, seed, deterministic=deterministic,
        )
    elif quantity == "jac_sup":
        if box_cfg is None or grid_shape is None:
            raise ValidationError("jac_sup needs 'box' and 'grid_shape'")
        bbox = _Cfg(box_cfg, "box")
        lo = _float_list(bbox.take("lo", required=True), "box.lo")
        hi = _float_list(bbox.take("hi", required=True), "box.hi")
        bbox.finish()
        est = regularity.jacobian_sup_moment(
            field, (lo, hi), m, T, n_samples, grid_shape, n_steps, seed,
            deterministic=deterministic, which=which,
        )
    elif quantity == "holder":
        est = regularity.holder_jacobian_diff(
            field, _point(cfg_x, "x", field.dim), _point(cfg_y, "y", field.dim),
            m, n_samples, T, n_steps, alpha, seed,
        )
    else:
        raise ValidationError("quantity must be pair | jac_sup | holder")

    table = report.table(
        "estimate", ["quantity", "m", "samples", "value", "ci_halfwidth", "excluded"]
    )
    table.add(est.quantity_id, est.m, est.samples, est.value, est.ci_halfwidth,
              est.excluded)
    report.summary.update(
        quantity=est.quantity_id, value=est.value, ci_halfwidth=est.ci_halfwidth,
        samples=est.samples, excluded=est.excluded, extras=est.extras,
    )
    return []


def _cmd_tail(cfg: _Cfg, report: ExperimentReport, seed: int):
    field = _field_from(cfg)
    m = _pos_float(cfg.take("m", default=2.0), "m")
    K_list = _float_list(cfg.take("K_list", required=True), "K_list", positive=True)
    n_samples = _pos_int(cfg.take("n_samples", required=True), "n_samples")
    T, n_steps = _time_from(cfg)
    n_levels = _pos_int(cfg.take("n_levels", default=6), "n_levels")
    alpha = cfg.take("alpha")
    checks = cfg.sub("assert")
    require_monotone = bool(checks.take("monotone", default=False))
    require_positive = bool(checks.take("positive_exponent", default=False))
    checks.finish()
    cfg.finish()

    tr = regularity.dyadic_tail(
        field, m, K_list, n_samples, T, n_steps, n_levels, alpha, seed
    )
    table = report.table("frequencies", ["K", "frequency"])
    for k, f in zip(tr.thresholds, tr.frequencies):
        table.add(k, f)
    report.summary.update(
        fitted_exponent=tr.fitted_exponent, n_samples=tr.n_samples,
        alpha=tr.alpha, tau=tr.tau,
    )
    failures = []
    if require_monotone and np.any(np.diff(tr.frequencies) > 0):
        failures.append("tail frequencies increase somewhere")
    if require_positive and not tr.fitted_exponent > 0:
        failures.append(f"fitted exponent {tr.fitted_exponent} not positive")
    return failures


def _cmd_blowup_det(cfg: _Cfg, report: ExperimentReport, seed: int):
    R = _pos_float(cfg.take("R", default=2.0), "R")
    t = _pos_float(cfg.take("t", default=1.0), "t")
    cutoffs = _float_list(
        cfg.take("cutoffs", required=True), "cutoffs", positive=True,
        strictly_decreasing=True,
    )
    surrogate = bool(cfg.take("lipschitz_surrogate", default=False))
    checks = cfg.sub("assert")
    expect_verdict = checks.take("verdict")
    slope_band = checks.take("slope_band")
    checks.finish()
    cfg.finish()

    cert = blowup.deterministic_blowup(R, t, cutoffs, surrogate)
    table = report.table("certificate", ["eps", "integral"])
    for e, v in zip(cert.cutoffs, cert.truncated_integrals):
        table.add(e, v)
    report.summary.update(
        det_slope=cert.fitted_slope, verdict=cert.verdict,
        prefactor=cert.prefactor, transverse_factor=cert.transverse_factor,
    )
    failures = []
    if expect_verdict is not None and cert.verdict != expect_verdict:
        failures.append(f"verdict {cert.verdict!r} != {expect_verdict!r}")
    if slope_band is not None:
        _band_check(
            cert.fitted_slope, _float_list(slope_band, "assert.slope_band"),
            "det_slope", failures,
        )
    return failures


def _cmd_blowup_stoch(cfg: _Cfg, report: ExperimentReport, seed: int):
    t = _pos_float(cfg.take("t", default=1.0), "t")
    cutoffs = _float_list(
        cfg.take("cutoffs", required=True), "cutoffs", positive=True,
        strictly_decreasing=True,
    )
    n_samples = _pos_int(cfg.take("n_samples", required=True), "n_samples")
    checks = cfg.sub("assert")
    expect_verdict = checks.take("verdict")
    ci_multiples = checks.take("max_ci_multiples")
    checks.finish()
    cfg.finish()

    sf = blowup.stochastic_finiteness(t, cutoffs, n_samples, seed)
    table = report.table(
        "estimates", ["eps", "mc_mean", "ci_halfwidth", "reference"]
    )
    for e, v, hw, ref in zip(
        sf.cutoffs, sf.mc_estimates, sf.mc_ci_halfwidths, sf.quadrature_reference
    ):
        table.add(e, v, hw, ref)
    report.summary.update(
        verdict=sf.verdict, majorant=sf.majorant, reference_full=sf.reference_full,
        failed_samples=sf.failed_samples,
    )
    failures = []
    if expect_verdict is not None and sf.verdict != expect_verdict:
        failures.append(f"verdict {sf.verdict!r} != {expect_verdict!r}")
    if ci_multiples is not None:
        k = float(ci_multiples)
        gaps = np.abs(sf.mc_estimates - sf.quadrature_reference)
        if np.any(gaps > k * sf.mc_ci_halfwidths):
            failures.append("Monte Carlo and quadrature reference disagree")
    if sf.majorant < sf.reference_full:
        failures.append("majorant fails to dominate the reference")
    return failures


def _cmd_contrast(cfg: _Cfg, report: ExperimentReport, seed: int):
    t = _pos_float(cfg.take("t", default=1.0), "t")
    cutoffs = _float_list(
        cfg.take("cutoffs", default=[1e-7, 1e-8, 1e-9, 1e-10]), "cutoffs",
        positive=True, strictly_decreasing=True,
    )
    path_count = _pos_int(cfg.take("path_count", default=100), "path_count")
    R = _pos_float(cfg.take("R", default=2.0), "R")
    n_steps = _pos_int(cfg.take("n_steps", default=400), "n_steps")
    per_decade = _pos_int(cfg.take("per_decade", default=8), "per_decade")
    n_y = _pos_int(cfg.take("n_y", default=41), "n_y")
    checks = cfg.sub("assert")
    slope_band = checks.take("det_slope_band", default=[-0.6, -0.4])
    min_plateau = checks.take("min_plateau_fraction", default=0.95)
    checks.finish()
    cfg.finish()

    rep = blowup.end_to_end_contrast(
        t, cutoffs, path_count, R, n_steps, seed, per_decade, n_y
    )
    table = report.table(
        "curves",
        ["realization", "eps", "w13_product", "w13_chain_rule"],
    )
    for e, p, c in zip(rep.cutoffs, rep.det_product_curve, rep.det_chain_curve):
        table.add("det", e, p, c)
    for i in range(rep.path_count):
        for j, e in enumerate(rep.cutoffs):
            table.add(f"path{i}", e, rep.stochastic_product_curves[i, j], float("nan"))
    report.summary.update(
        det_slope=rep.det_slope, det_chain_slope=rep.det_chain_slope,
        plateau_fraction=rep.plateau_fraction, verdict=rep.verdict,
    )
    failures = []
    _band_check(
        rep.det_slope, _float_list(slope_band, "assert.det_slope_band"),
        "det_slope", failures,
    )
    if rep.plateau_fraction < float(min_plateau):
        failures.append(
            f"plateau fraction {rep.plateau_fraction:.3f} < {float(min_plateau)}"
        )
    return failures


_HANDLERS = {
    "euler-identity": _cmd_euler_identity,
    "solve": _cmd_solve,
    "weak-form": _cmd_weak_form,
    "compare": _cmd_compare,
    "zvonkin": _cmd_zvonkin,
    "moments": _cmd_moments,
    "tail": _cmd_tail,
    "blowup-det": _cmd_blowup_det,
    "blowup-stoch": _cmd_blowup_stoch,
    "contrast": _cmd_contrast,
}


def run(command: str, config: dict, out_dir, assert_mode: bool = False) -> int:
    """Execute one experiment command; returns the process exit code.

    Writes ``report.json`` plus per-table CSVs into ``out_dir``. Validation
    problems exit 2 before anything is written; numeric failures exit 3 with
    the error recorded in the report; verdict failures under ``assert_mode``
    exit 4.
    """
    if command not in _HANDLERS:
        print(f"error: unknown command {command!r}", file=sys.stderr)
        return 2
    report = ExperimentReport(command, dict(config), __version__)
    started = time.perf_counter()
    try:
        cfg = _Cfg(config)
        seed, workers, formats = _common(cfg)
        report.config.setdefault("seed", seed)
        report.config.setdefault("workers", workers)
        failures = _HANDLERS[command](cfg, report, seed)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except StochTransError as exc:
        report.error = {"kind": exc.kind, "message": str(exc)}
        report.wall_time_s = time.perf_counter() - started
        report.write(Path(out_dir), formats=("json",))
        print(f"error: {exc}", file=sys.stderr)
        return 3
    report.wall_time_s = time.perf_counter() - started
    report.summary.setdefault("verdict_failures", failures)
    report.write(Path(out_dir), formats=formats)
    if assert_mode and failures:
        for f in failures:
            print(f"assert: {f}", file=sys.stderr)
        return 4
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="stochtrans",
        description="Transport-equation experiments with multiplicative noise",
    )
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", required=True, help="JSON config file")
    parser.add_argument(
        "--out", default=None,
        help=f"output directory (default: ${ENV_OUT_DIR} or ./stochtrans-out)",
    )
    parser.add_argument(
        "--assert", dest="assert_mode", action="store_true",
        help="exit 4 when a verdict check fails",
    )
    args = parser.parse_args(argv)
    try:
        with open(args.config) as fh:
            config = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        print(f"error: cannot read config: {exc}", file=sys.stderr)
        return 2
    out_dir = args.out or os.environ.get(ENV_OUT_DIR) or "stochtrans-out"
    return run(args.command, config, out_dir, args.assert_mode)


if __name__ == "__main__":
    sys.exit(main())
