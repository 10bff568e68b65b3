"""Damped Newton continuation for the quotient equation family on torus grids.

The iteration works on the inverse-eigenvalue residual, which is concave in
admissible directions, with the potential (mean-zero) and the scalar constant
solved jointly: each step solves the bordered linear system

    -tr(A(x) Hess(dphi)(x)) + (dR/db)(x) db = -R(x)    at every grid point
    mean(dphi) = 0

by preconditioned LGMRES, where A rotates the per-eigendirection coefficients
back to the coordinate frame and Hess is the spectral complex Hessian.
Backtracking keeps every accepted iterate admissible (X > 0 pointwise) and
strictly decreases the sup residual. Potentials live in the Fourier subspace
complementary to the Hessian's kernel (modes with every axis frequency at 0
or Nyquist), where the linearized systems are nonsingular.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from itertools import product

import numpy as np
from scipy.sparse.linalg import LinearOperator, lgmres

from .errors import ConeViolationError, InputError, NonconvergenceError
from .pointwise import (
    EquationParams,
    cone_margin,
    eigensystem_rel,
    linearization_coefficients,
    residual_inverse_form,
    residual_volume_form,
)
from .symfunc import elementary_sym
from .torus import (
    DENSITY_CONVENTION_SCALE,
    FormField,
    complex_hessian,
    holomorphic_gradient,
    integrate_density,
    total_volume,
)

MODES = ("additive", "multiplicative")


@dataclass(frozen=True)
class EquationSpec:
    """One member of the equation family, discretized.

    additive mode: the unknown scalar multiplies source_field (b * f);
    multiplicative mode: exp(b) multiplies coefficient_field (e^b * g).
    """

    n: int
    m: int
    background: FormField
    omega: FormField
    coefficient_field: np.ndarray
    source_field: np.ndarray
    unknown_mode: str = "additive"

    def __post_init__(self):
        grid = self.background.grid
        if self.omega.grid != grid:
            raise InputError("background and omega must share a grid")
        if self.n != grid.n:
            raise InputError(f"n={self.n} does not match grid dimension {grid.n}")
        if not 0 <= self.m < self.n:
            raise InputError(f"need 0 <= m < n, got m={self.m}")
        if self.unknown_mode not in MODES:
            raise InputError(f"unknown_mode must be one of {MODES}")
        for name in ("coefficient_field", "source_field"):
            vals = np.asarray(getattr(self, name), dtype=np.float64)
            if vals.ndim == 0:
                vals = np.full(grid.shape, float(vals))
            elif vals.shape != grid.shape:
                raise InputError(f"{name} shape {vals.shape} does not match grid")
            if np.min(vals) < 0.0:
                raise InputError(f"{name} must be nonnegative")
            object.__setattr__(self, name, vals)
        if self.unknown_mode == "additive":
            vol = total_volume(self.omega)
            total = integrate_density(self.source_field, self.omega)
            if abs(total - vol) > 1e-8 * vol:
                raise InputError(
                    f"additive mode needs a normalized source density: got {total} vs volume {vol}"
                )

    @property
    def grid(self):
        return self.background.grid


@dataclass(frozen=True)
class SolverConfig:
    tol: float = 1e-10            # sup-norm residual target
    max_newton: int = 50
    damping_floor: float = 2.0**-30
    krylov_inner: int = 20
    krylov_maxiter: int = 400
    forcing_max: float = 0.1      # loosest inner relative tolerance
    b_compat_factor: float = 10.0


@dataclass(frozen=True)
class SolverState:
    """Converged solve; phi is reported with sup phi = 0."""

    phi: np.ndarray
    b: float
    t: float
    residual_sup: float
    diagnostics: dict
    spec: EquationSpec = field(repr=False)


class _Inadmissible(Exception):
    def __init__(self, count, worst, where):
        self.count = count
        self.worst = worst
        self.where = where
        super().__init__(f"{count} points outside the cone, min eigenvalue {worst:.3e} at {where}")


def strip_kernel_modes(grid, values, keep_mean=False):
    """Project out the spectral Hessian's kernel modes.

    The kernel is exactly the modes whose every axis frequency is 0 or
    Nyquist: all holomorphic multipliers vanish there. Potentials are kept
    orthogonal to all of them (the mean is pinned by the bordered row), and
    the Newton equation rows are projected with keep_mean=True: the mean
    part is matched by the scalar unknown, while the remaining kernel modes
    are invisible to the discrete Hessian, so leaving them in the rows makes
    the linear systems inconsistent and the Krylov iteration stagnates.
    """
    fhat = np.fft.fftn(values)
    for idx in product((0, grid.N // 2), repeat=2 * grid.n):
        if keep_mean and not any(idx):
            continue
        fhat[idx] = 0.0
    return np.fft.ifftn(fhat).real


def _metric_for(spec):
    if spec.omega.is_constant:
        return spec.omega.const
    return spec.omega.matrices().reshape(-1, spec.n, spec.n)


@dataclass
class _Eval:
    lam: np.ndarray       # (P, n) descending
    vecs: np.ndarray      # (P, n, n) omega-orthonormal columns
    resid: np.ndarray     # (P,) inverse-form residual
    rsup: float
    params: EquationParams
    dresid_db: np.ndarray  # (P,)


def _evaluate(spec, phi, b, need_vectors=True):
    grid = spec.grid
    mats = spec.background.matrices() + complex_hessian(grid, phi)
    flat = mats.reshape(-1, spec.n, spec.n)
    if need_vectors:
        lam, vecs = eigensystem_rel(flat, _metric_for(spec), check=False)
    else:
        lam = eigensystem_rel(flat, _metric_for(spec), check=False)[0]
        vecs = None
    bad = lam[:, -1] <= 0.0
    if np.any(bad):
        worst_flat = int(np.argmin(lam[:, -1]))
        raise _Inadmissible(
            int(np.sum(bad)), float(lam[worst_flat, -1]),
            np.unravel_index(worst_flat, grid.shape),
        )
    coeff = spec.coefficient_field.reshape(-1)
    source = spec.source_field.reshape(-1)
    if spec.unknown_mode == "additive":
        params = EquationParams(spec.n, spec.m, coeff, b * source)
        dresid_db = source * elementary_sym(spec.n, 1.0 / lam)
    else:
        params = EquationParams(spec.n, spec.m, math.exp(b) * coeff, source)
        dresid_db = (
            math.exp(b) * coeff / params.binom
            * elementary_sym(spec.n - spec.m, 1.0 / lam)
        )
    resid = residual_inverse_form(lam, params)
    return _Eval(lam, vecs, resid, float(np.max(np.abs(resid))), params, dresid_db)


def quadrature_b(spec):
    """Integral-identity value of the scalar constant (additive mode)."""
    if spec.unknown_mode != "additive":
        raise InputError("quadrature value of b is an additive-mode notion")
    lam = eigensystem_rel(
        spec.background.matrices().reshape(-1, spec.n, spec.n), _metric_for(spec), check=False
    )[0]
    if spec.omega.is_constant:
        detw = float(np.linalg.det(spec.omega.const).real)
    else:
        detw = np.linalg.det(spec.omega.matrices()).real.reshape(-1)
    coeff = spec.coefficient_field.reshape(-1)
    binom = math.comb(spec.n, spec.m)
    lhs = (elementary_sym(spec.n, lam) - coeff / binom * elementary_sym(spec.m, lam)) * detw
    num = float(np.mean(lhs)) * DENSITY_CONVENTION_SCALE
    return num / integrate_density(spec.source_field, spec.omega)


def _linear_step(spec, ev, config, rsup_prev):
    """One inexact-Newton linear solve; returns (dphi, db, krylov_iters)."""
    grid = spec.grid
    P = grid.npoints
    a = linearization_coefficients(ev.lam, ev.params)
    amat = np.einsum("pij,pj,pkj->pik", ev.vecs, a, np.conj(ev.vecs), optimize=True)
    col = ev.dresid_db

    def matvec(u):
        dphi = u[:P].reshape(grid.shape)
        db = u[P]
        hess = complex_hessian(grid, dphi).reshape(-1, spec.n, spec.n)
        trace = np.einsum("pij,pji->p", amat, hess, optimize=True).real
        rows = strip_kernel_modes(grid, (-trace + col * db).reshape(grid.shape), keep_mean=True)
        out = np.empty(P + 1)
        out[:P] = rows.reshape(-1)
        out[P] = float(np.mean(dphi))
        return out

    # constant-coefficient symbol: sum_j abar_j |p_j|^2 diagonalizes the
    # frozen operator in Fourier space; kernel modes share the Hessian's
    abar = [max(float(np.mean(amat[:, j, j].real)), 1e-300) for j in range(spec.n)]
    symbol = 0.0
    for j in range(spec.n):
        symbol = symbol + abar[j] * np.abs(grid.holomorphic_multiplier(j)) ** 2
    symbol = np.broadcast_to(symbol, grid.shape)
    invertible = symbol > 0.0
    col_mean = float(np.mean(col))

    def psolve(r):
        r1 = r[:P].reshape(grid.shape)
        r2 = r[P]
        db = float(np.mean(r1)) / col_mean
        rhat = np.fft.fftn(r1 - db * col.reshape(grid.shape))
        rhat = np.where(invertible, rhat / np.where(invertible, symbol, 1.0), 0.0)
        dphi = np.fft.ifftn(rhat).real + r2
        out = np.empty(P + 1)
        out[:P] = dphi.reshape(-1)
        out[P] = db
        return out

    op = LinearOperator((P + 1, P + 1), matvec=matvec, dtype=np.float64)
    pre = LinearOperator((P + 1, P + 1), matvec=psolve, dtype=np.float64)
    rhs_rows = strip_kernel_modes(grid, -ev.resid.reshape(grid.shape), keep_mean=True)
    rhs = np.concatenate([rhs_rows.reshape(-1), [0.0]])
    # Eisenstat-Walker style forcing, floored so inner error cannot block
    # the outer target
    eta = config.forcing_max
    if np.isfinite(rsup_prev) and rsup_prev > 0.0:
        eta = min(config.forcing_max, 0.5 * (ev.rsup / rsup_prev) ** 2)
    eta = max(eta, min(config.forcing_max, 0.25 * config.tol / ev.rsup))
    nit = 0

    def count(_):
        nonlocal nit
        nit += 1

    sol, info = lgmres(
        op, rhs, M=pre, rtol=eta, atol=0.0,
        inner_m=config.krylov_inner, maxiter=config.krylov_maxiter, callback=count,
    )
    dphi = strip_kernel_modes(grid, sol[:P].reshape(grid.shape))
    return dphi, float(sol[P]), nit, info


def newton_solve(spec, init=None, config=None, t=math.nan):
    """Drive the inverse-form residual to zero; returns the converged state.

    init may be a prior SolverState (warm start) or None for the zero
    potential with the quadrature value of b (additive) or b = 0.
    """
    config = config or SolverConfig()
    grid = spec.grid
    if init is not None:
        phi = strip_kernel_modes(grid, np.asarray(init.phi, dtype=np.float64))
        b = float(init.b)
    else:
        phi = np.zeros(grid.shape)
        b = quadrature_b(spec) if spec.unknown_mode == "additive" else 0.0
    try:
        ev = _evaluate(spec, phi, b)
    except _Inadmissible as bad:
        raise ConeViolationError(
            f"initial state leaves the cone: {bad}",
            detail={"count": bad.count, "min_eig": bad.worst, "where": bad.where},
        ) from None

    iters = 0
    krylov_total = 0
    rsup_prev = math.inf
    while ev.rsup > config.tol:
        if iters >= config.max_newton:
            raise NonconvergenceError(
                f"no convergence in {config.max_newton} Newton steps (residual {ev.rsup:.3e})",
                state=_make_state(spec, phi, b, t, ev, iters, krylov_total),
            )
        dphi, db, nit, _ = _linear_step(spec, ev, config, rsup_prev)
        krylov_total += nit
        tau = 1.0
        while True:
            cand_phi = phi + tau * dphi
            cand_b = b + tau * db
            try:
                cand = _evaluate(spec, cand_phi, cand_b)
            except (_Inadmissible, InputError):
                cand = None
            if cand is not None and cand.rsup < ev.rsup:
                break
            tau *= 0.5
            if tau < config.damping_floor:
                raise NonconvergenceError(
                    f"damping floor reached at residual {ev.rsup:.3e}",
                    state=_make_state(spec, phi, b, t, ev, iters, krylov_total),
                )
        rsup_prev = ev.rsup
        phi, b, ev = cand_phi, cand_b, cand
        iters += 1

    if spec.unknown_mode == "additive":
        bq = quadrature_b(spec)
        budget = config.b_compat_factor * config.tol
        if abs(b - bq) > budget:
            raise NonconvergenceError(
                f"converged b={b!r} disagrees with quadrature value {bq!r} beyond {budget:.1e}",
                state=_make_state(spec, phi, b, t, ev, iters, krylov_total),
            )
    return _make_state(spec, phi, b, t, ev, iters, krylov_total)


def _gradient_sup_sq(spec, phi):
    grad = holomorphic_gradient(spec.grid, phi).reshape(-1, spec.n)
    if spec.omega.is_constant:
        ginv = np.linalg.inv(spec.omega.const)
    else:
        ginv = np.linalg.inv(spec.omega.matrices().reshape(-1, spec.n, spec.n))
    sq = np.einsum("...kj,...j,...k->...", ginv, grad, np.conj(grad)).real
    return float(np.max(sq))


def _make_state(spec, phi, b, t, ev, iters, krylov_total):
    phi_out = phi - float(np.max(phi))
    lam = ev.lam
    coeff = ev.params.coefficient
    sn = elementary_sym(spec.n, lam)
    vol_resid = residual_volume_form(lam, ev.params)
    diag = {
        "sup_phi": float(np.max(np.abs(phi_out))),
        "sup_grad": math.sqrt(_gradient_sup_sq(spec, phi)),
        "sup_w": float(np.max(np.log(elementary_sym(1, lam)))),
        "min_eig": float(np.min(lam[:, -1])),
        "min_margin": float(np.min(cone_margin(lam, coeff, spec.m))),
        "newton_iters": iters,
        "krylov_iters": krylov_total,
        "volume_resid_rel": float(np.max(np.abs(vol_resid) / sn)),
    }
    return SolverState(phi_out, float(b), float(t), ev.rsup, diag, spec)


def diagnostics(state):
    """A priori estimate monitors for one converged state.

    Reports the sup norms entering the gradient and second-order bounds and
    the fitted slopes of ln|grad phi|^2 and ln w against (phi - inf phi),
    the exponent shape those bounds predict.
    """
    spec = state.spec
    grid = spec.grid
    phi = np.asarray(state.phi)
    grad = holomorphic_gradient(grid, phi).reshape(-1, spec.n)
    if spec.omega.is_constant:
        ginv = np.linalg.inv(spec.omega.const)
    else:
        ginv = np.linalg.inv(spec.omega.matrices().reshape(-1, spec.n, spec.n))
    grad_sq = np.einsum("...kj,...j,...k->...", ginv, grad, np.conj(grad)).real
    mats = spec.background.matrices() + complex_hessian(grid, phi)
    lam = eigensystem_rel(mats.reshape(-1, spec.n, spec.n), _metric_for(spec), check=False)[0]
    w = np.log(elementary_sym(1, lam))
    shifted = (phi - float(np.min(phi))).reshape(-1)

    def slope(y_log_arg, mask):
        if int(np.sum(mask)) < 2 or np.ptp(shifted[mask]) == 0.0:
            return math.nan
        return float(np.polyfit(shifted[mask], np.log(y_log_arg[mask]), 1)[0])

    return {
        "sup_phi": float(np.max(np.abs(phi))),
        "sup_grad_sq": float(np.max(grad_sq)),
        "sup_w": float(np.max(w)),
        "slope_grad_sq": slope(grad_sq, grad_sq > 1e-300),
        "slope_w": slope(w, w > 0.0),
        "residual_sup": state.residual_sup,
        "b": state.b,
    }


@dataclass(frozen=True)
class PathResult:
    states: list
    failed_t: float | None = None
    failure: str = ""

    @property
    def complete(self):
        return self.failed_t is None


def continuation_path(spec_family, schedule, config=None):
    """Warm-started solves along a decreasing t schedule.

    A failing solve truncates the path: the states reached so far come back
    with the failing t and reason recorded, since partial paths are exactly
    what degenerate instances produce.
    """
    schedule = [float(t) for t in schedule]
    if not schedule or any(b >= a for a, b in zip(schedule, schedule[1:])):
        raise InputError("schedule must be strictly decreasing")
    if schedule[0] > 1.0 or schedule[-1] <= 0.0:
        raise InputError("schedule must lie in (0, 1]")
    states = []
    prev = None
    for t in schedule:
        spec = spec_family(t)
        try:
            prev = newton_solve(spec, init=prev, config=config, t=t)
        except (NonconvergenceError, ConeViolationError) as err:
            return PathResult(states, failed_t=t, failure=str(err))
        states.append(prev)
    return PathResult(states)


PATH_CSV_COLUMNS = (
    "t", "b", "residual_sup", "sup_phi", "sup_grad", "sup_w",
    "min_eig", "min_margin", "newton_iters",
)


def write_path_csv(path, result):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(PATH_CSV_COLUMNS)
        for st in result.states:
            d = st.diagnostics
            row = [st.t, st.b, st.residual_sup] + [
                d[k] for k in PATH_CSV_COLUMNS[3:]
            ]
            writer.writerow([f"{v:.17g}" if isinstance(v, float) else str(v) for v in row])


@dataclass(frozen=True)
class StabilityRecord:
    sup_diff: float
    positive_part_norm: float
    c_implied: float
    q: float
    q_star: float


def stability_compare(run1, run2, q):
    """Empirical form of the L^{q*} stability bound between two solves."""
    if q <= 1.0:
        raise InputError(f"q must exceed 1, got {q}")
    if run1.spec.grid != run2.spec.grid:
        raise InputError("stability comparison needs a shared grid")
    n = run1.spec.n
    q_star = q / (q - 1.0)
    diff = np.asarray(run2.phi) - np.asarray(run1.phi)
    sup_diff = float(np.max(diff))
    pos = np.maximum(diff, 0.0)
    norm = integrate_density(pos**q_star, run1.spec.omega) ** (1.0 / q_star)
    c_implied = 0.0 if norm == 0.0 else sup_diff / norm ** (1.0 / (n + 1.0))
    return StabilityRecord(sup_diff, float(norm), float(c_implied), q, q_star)


def uniqueness_gap(phi1, phi2, ample_mask):
    """Sup deviation of phi1 - phi2 from constancy over the marked region."""
    mask = np.asarray(ample_mask, dtype=bool)
    if not mask.any():
        raise InputError("ample mask is empty")
    diff = (np.asarray(phi1) - np.asarray(phi2))[mask]
    return float(np.max(np.abs(diff - np.mean(diff))))


def volume_lower_bound_check(state, c):
    """min over the grid of S_n(lam(X)) - c^(n/(n-m)) for a converged state."""
    spec = state.spec
    mats = spec.background.matrices() + complex_hessian(spec.grid, state.phi)
    lam = eigensystem_rel(mats.reshape(-1, spec.n, spec.n), _metric_for(spec), check=False)[0]
    floor = c ** (spec.n / (spec.n - spec.m))
    return float(np.min(elementary_sym(spec.n, lam)) - floor)
