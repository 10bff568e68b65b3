"""Fake boundary detection and the two-stage solve for touching coefficients.

A coefficient field g >= c whose minimum equals the background's quotient
constant c looks like a boundary instance of the multiplicative equation

    X^n = e^b g X^m wedge omega^(n-m),      X = chi + Hess(phi),

since no margin is left at the touching points. The scalar unknown rescues
it: the compatibility integral forces e^b < 1, so the effective coefficient
e^b g sits strictly below g and the instance is solvable after all. The
module makes that quantitative and constructive:

  * compute_theta0 measures how much mass g carries well above c,
  * solve_b_prime turns theta0 into an analytic upper bound b' < 0 for b,
  * g1_field / g2_field build a strictly solvable stand-in coefficient g2
    sitting just above both e^{b'} g and the background's own quotient
    density,
  * two_stage_solve solves the g2 equation and then continues along the
    interpolated family e^{t b'} g^t g2^(1-t), t: 0 -> 1, landing on the
    g equation with scalar b = b_1 + b'.

Coefficients with min g strictly above c are rescaled down to the touching
normalization first; the log of the factor is kept on the instance so the
scalar for the original field can be recovered.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import bisect

from .errors import (
    ConeViolationError,
    ConstructionError,
    DomainError,
    InputError,
    NonconvergenceError,
)
from .pointwise import cone_margin
from .solver import EquationSpec, SolverConfig, SolverState, newton_solve
from .symfunc import elementary_sym
from .torus import (
    FormField,
    compute_c,
    form_eigenvalues,
    integrate_density,
    integrate_mixed,
)


def compute_theta0(g, chi, omega, c, g_max, m):
    """Superlevel constant measuring the coefficient's spread above c.

    theta0 = (g_max - c)/2 * c^(m/(n-m)) * Vol_omega{g >= (g_max + c)/2}
             / (c * integral of chi^m wedge omega^(n-m)),

    the largest constant for which the half-gap superlevel mass bounds the
    compatibility defect from below. Requires g_max > c and the superlevel
    set to meet the grid; a coefficient that never rises above c gives the
    bound nothing to work with and belongs to the plain pipeline.
    """
    grid = chi.grid
    n = grid.n
    g = np.asarray(g, dtype=np.float64)
    if g.shape != grid.shape:
        raise InputError(f"coefficient shape {g.shape} does not match grid")
    if not 0 <= m < n:
        raise InputError(f"need 0 <= m < n, got m={m}, n={n}")
    if g_max <= c:
        raise DomainError(f"need max g > c, got {g_max} <= {c}")
    indicator = (g >= 0.5 * (g_max + c)).astype(np.float64)
    if not indicator.any():
        raise DomainError("superlevel set {g >= (max g + c)/2} misses the grid")
    mass = integrate_density(indicator, omega)
    mixed = integrate_mixed(chi, m, omega)
    return 0.5 * (g_max - c) * c ** (m / (n - m)) * mass / (c * mixed)


def solve_b_prime(theta0, n, m):
    """Unique negative root of 1 = e^x + theta0 e^(n x / (n-m)).

    The right side increases strictly from 0 to infinity and equals
    1 + theta0 > 1 at x = 0, so the root is negative; bisection gets it
    after bracketing by doubling downward.
    """
    if theta0 <= 0.0:
        raise InputError(f"theta0 must be positive, got {theta0}")
    if not 0 <= m < n:
        raise InputError(f"need 0 <= m < n, got m={m}, n={n}")
    p = n / (n - m)

    def h(x):
        return math.exp(x) + theta0 * math.exp(p * x) - 1.0

    lo = -1.0
    while h(lo) >= 0.0:
        lo *= 2.0
    root = float(bisect(h, lo, 0.0, xtol=1e-15))
    resid = abs(h(root))
    if resid > 1e-12:
        raise ConstructionError(f"bisection left residual {resid:.3e} at {root!r}")
    return root


def g1_field(chi, omega, m):
    """Quotient density of the background: chi^n = g1 chi^m wedge omega^(n-m).

    Pointwise g1 = C(n,m) S_n(mu) / S_m(mu) with mu the eigenvalues of chi
    relative to omega.
    """
    grid = chi.grid
    n = grid.n
    if not 0 <= m < n:
        raise InputError(f"need 0 <= m < n, got m={m}, n={n}")
    mu = form_eigenvalues(chi, omega)
    mins = np.min(mu, axis=-1)
    if np.min(mins) <= 0.0:
        where = np.unravel_index(int(np.argmin(mins)), grid.shape)
        raise DomainError(
            f"background not positive definite (min eig {np.min(mins):.3e} at {where})"
        )
    return math.comb(n, m) * elementary_sym(n, mu) / elementary_sym(m, mu)


def g2_field(g, g1, b_prime, delta1, chi=None, omega=None, m=None):
    """Strictly solvable stand-in coefficient just above the required floor.

    Returns softmax_kappa(e^{b'} g, g1) + delta1/2, escalating the sharpness
    kappa until the output lies strictly inside the band
    (max{e^{b'} g, g1}, max{e^{b'} g, g1} + delta1) at every grid point.
    When the background fields are supplied, the strict cone condition with
    the widened coefficient g2 + delta1 is also verified pointwise; failing
    it means delta1 is too large for this background.
    """
    g = np.asarray(g, dtype=np.float64)
    g1 = np.asarray(g1, dtype=np.float64)
    if g.shape != g1.shape:
        raise InputError(f"field shapes differ: {g.shape} vs {g1.shape}")
    if delta1 <= 0.0:
        raise InputError(f"delta1 must be positive, got {delta1}")
    u = math.exp(b_prime) * g
    floor = np.maximum(u, g1)
    kappa = 1.0 / delta1
    g2 = None
    for _ in range(64):
        cand = np.logaddexp(kappa * u, kappa * g1) / kappa + 0.5 * delta1
        if np.all(cand > floor) and np.all(cand < floor + delta1):
            g2 = cand
            break
        kappa *= 2.0
    if g2 is None:
        raise ConstructionError(
            f"no sharpness in [{1.0 / delta1:g}, {kappa:g}] puts the smooth max in its band"
        )
    if chi is not None:
        mu = form_eigenvalues(chi, omega).reshape(-1, chi.grid.n)
        margin = float(np.min(cone_margin(mu, (g2 + delta1).reshape(-1), m)))
        if margin <= 0.0:
            raise ConstructionError(
                f"delta1={delta1:g} too large: cone margin {margin:.3e} "
                "with the widened coefficient"
            )
    return g2


@dataclass(frozen=True)
class FakeBoundaryInstance:
    """Prepared fake-boundary data; the band invariants are checked on build.

    g is stored in the touching normalization min g = c; log_rescale records
    ln(original min / c) when the input had to be scaled down (the scalar of
    the original equation is b - log_rescale).
    """

    g: np.ndarray
    g_max: float
    g_min: float
    theta0: float
    b_prime: float
    delta1: float
    g1: np.ndarray
    g2: np.ndarray
    chi: FormField = field(repr=False)
    omega: FormField = field(repr=False)
    m: int = 1
    c: float = 1.0
    log_rescale: float = 0.0

    def __post_init__(self):
        if float(np.min(self.g)) < self.c * (1.0 - 1e-12):
            raise ConstructionError(
                f"coefficient dips below c: min g = {np.min(self.g)!r}, c = {self.c!r}"
            )
        if self.delta1 <= 0.0:
            raise ConstructionError(f"delta1 must be positive, got {self.delta1}")
        floor = np.maximum(math.exp(self.b_prime) * self.g, self.g1)
        if not (np.all(self.g2 > floor) and np.all(self.g2 < floor + self.delta1)):
            raise ConstructionError("g2 escapes its band around max{e^b' g, g1}")

    @property
    def grid(self):
        return self.chi.grid


def prepare_instance(g, chi, omega, m, delta1=None):
    """Assemble a FakeBoundaryInstance from raw fields.

    Computes c from the background, rescales g down when min g > c (keeping
    the log of the factor), and fills in theta0, b_prime, g1, g2. A constant
    coefficient g == c degenerates cleanly: theta0 = b_prime = 0 and the
    continuation reduces to the classical solvable case. delta1=None picks
    the largest c/2^k whose widened-coefficient cone check passes.
    """
    grid = chi.grid
    if omega.grid != grid:
        raise InputError("background and omega must share a grid")
    g = np.asarray(g, dtype=np.float64)
    if g.ndim == 0:
        g = np.full(grid.shape, float(g))
    if g.shape != grid.shape:
        raise InputError(f"coefficient shape {g.shape} does not match grid")
    c = compute_c(chi, omega, m)
    g_min = float(np.min(g))
    if g_min < c * (1.0 - 1e-12):
        raise DomainError(f"coefficient must stay >= c = {c:g}, got min {g_min:g}")
    log_rescale = 0.0
    if g_min > c * (1.0 + 1e-12):
        log_rescale = math.log(g_min / c)
        g = g * (c / g_min)
        g_min = float(np.min(g))
    g_max = float(np.max(g))
    if g_max <= c * (1.0 + 1e-12):
        theta0, b_prime = 0.0, 0.0
    else:
        theta0 = compute_theta0(g, chi, omega, c, g_max, m)
        b_prime = solve_b_prime(theta0, grid.n, m)

    g1 = g1_field(chi, omega, m)
    candidates = [delta1] if delta1 is not None else [c / 2.0**k for k in range(1, 41)]
    err = None
    for d1 in candidates:
        try:
            g2 = g2_field(g, g1, b_prime, d1, chi=chi, omega=omega, m=m)
        except ConstructionError as bad:
            err = bad
            continue
        return FakeBoundaryInstance(
            g, g_max, g_min, theta0, b_prime, d1, g1, g2,
            chi, omega, m, c, log_rescale,
        )
    raise ConstructionError(f"no feasible delta1 among {len(candidates)} candidates: {err}")


STAGE_CSV_COLUMNS = ("t", "b_t", "residual_sup", "min_band_slack", "min_cone_margin")


@dataclass(frozen=True)
class TwoStageResult:
    """Final potential and scalar of the g equation, with the path records.

    b already includes the analytic shift: b = b_1 + b_prime, so the bound
    b <= b_prime is equivalent to the recorded b_1 < 0.
    """

    phi: np.ndarray
    b: float
    b_stage1: float
    records: list
    final_state: SolverState = field(repr=False)


def _tagged(err, tag):
    if isinstance(err, NonconvergenceError):
        return NonconvergenceError(f"{tag}: {err}", state=err.state)
    return ConeViolationError(f"{tag}: {err}", detail=err.detail)


def two_stage_solve(instance, config=None, csv_path=None, steps=16):
    """Bridge from the g2 equation to the g equation along the mixed family.

    Stage 1 solves the multiplicative equation with coefficient g2 (scalar
    b_tilde < 0 since g2 strictly dominates the background density g1).
    Stage 2 walks t upward through coefficient e^{t b'} g^t g2^(1-t) on a
    uniform grid of `steps` steps, warm starting each solve; the fixed part
    t b' is folded into the coefficient so the solver's scalar is b_t
    itself. Each accepted step must keep b_t negative and the effective
    coefficient e^{b_t} (path field) strictly below g2; Newton stalls halve
    the step down to a floor. Failures carry the stage and t in the message.
    """
    if steps < 1:
        raise InputError(f"need at least one continuation step, got {steps}")
    inst = instance
    # default tolerance sits above the collocation floor of smoothed-corner
    # coefficients at moderate N; tighten only with the resolution to match
    config = config or SolverConfig(tol=1e-8)
    grid = inst.grid
    n = grid.n
    mu_chi = form_eigenvalues(inst.chi, inst.omega).reshape(-1, n)

    def solve_at(t, init):
        coeff = np.exp(t * inst.b_prime) * inst.g**t * inst.g2 ** (1.0 - t)
        spec = EquationSpec(
            n, inst.m, inst.chi, inst.omega, coeff, 0.0, unknown_mode="multiplicative"
        )
        state = newton_solve(spec, init=init, config=config, t=t)
        effective = math.exp(state.b) * coeff
        slack = float(np.min(inst.g2 - effective))
        margin = float(np.min(cone_margin(mu_chi, effective.reshape(-1), inst.m)))
        return state, slack, margin

    records = []

    def accept(t, state, slack, margin, tag):
        if inst.theta0 > 0.0:
            if state.b >= 0.0:
                raise ConstructionError(f"{tag}: scalar must stay negative, got {state.b!r}")
        elif state.b > 100.0 * config.tol:
            # constant-coefficient degeneration: b_t -> 0 at t = 1 is legitimate
            raise ConstructionError(f"{tag}: scalar {state.b!r} above the degenerate budget")
        if slack <= 0.0:
            raise ConstructionError(
                f"{tag}: path coefficient not strictly below g2 (slack {slack:.3e})"
            )
        records.append({
            "t": t, "b_t": state.b, "residual_sup": state.residual_sup,
            "min_band_slack": slack, "min_cone_margin": margin,
        })

    try:
        state, slack, margin = solve_at(0.0, None)
    except (NonconvergenceError, ConeViolationError) as err:
        raise _tagged(err, "stage 1") from err
    accept(0.0, state, slack, margin, "stage 1")
    b_stage1 = state.b

    todo = [k / steps for k in range(1, steps + 1)]
    min_step = 1.0 / (steps * 64.0)
    prev_t = 0.0
    while todo:
        t = todo[0]
        try:
            cand, slack, margin = solve_at(t, state)
        except ConeViolationError as err:
            raise _tagged(err, f"stage 2 (t={t:g})") from err
        except NonconvergenceError as err:
            if t - prev_t <= min_step:
                raise _tagged(err, f"stage 2 (t={t:g})") from err
            todo.insert(0, 0.5 * (prev_t + t))
            continue
        accept(t, cand, slack, margin, f"stage 2 (t={t:g})")
        prev_t, state = t, cand
        todo.pop(0)

    if csv_path is not None:
        write_stage_csv(csv_path, records)
    return TwoStageResult(state.phi, float(state.b + inst.b_prime), float(b_stage1), records, state)


def write_stage_csv(path, records):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(STAGE_CSV_COLUMNS)
        for rec in records:
            writer.writerow([f"{rec[k]:.17g}" for k in STAGE_CSV_COLUMNS])
