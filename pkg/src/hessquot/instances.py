"""Reference problem instances shared by tests, scripts, and the CLI.

Each builder returns an Instance bundling the geometric data (chi, chitilde,
omega), the constants, the normalized source density, and any closed-form
facts (expected b along the family, a manufactured potential) that make the
instance checkable.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InputError
from .solver import EquationSpec
from .torus import (
    FormField,
    TorusGrid,
    complex_hessian,
    compute_c,
    constant_form,
    identity_form,
    make_degenerate_big,
    normalize_density,
    tune_to_boundary,
)

TWO_PI = 2.0 * np.pi


@dataclass
class Instance:
    name: str
    grid: TorusGrid
    m: int
    chi: FormField
    chitilde: FormField
    omega: FormField
    c: float
    f: np.ndarray
    extras: dict = field(default_factory=dict)

    def spec(self, t, f=None):
        """Additive-mode spec of the t-family member (1+t)chi + chitilde."""
        background = (1.0 + t) * self.chi + self.chitilde
        return EquationSpec(
            n=self.grid.n,
            m=self.m,
            background=background,
            omega=self.omega,
            coefficient_field=np.full(self.grid.shape, self.c),
            source_field=self.f if f is None else f,
            unknown_mode="additive",
        )

    def family(self, f=None):
        return lambda t: self.spec(t, f=f)


def _grid_field(grid, expr):
    return np.ascontiguousarray(np.broadcast_to(expr, grid.shape)).astype(np.float64)


def uniform_instance(N=16, eps=0.1, m=1):
    """Everything proportional to the flat metric; phi = 0 and b closed-form.

    For chi = omega, chitilde = eps*omega the family background is s*omega
    with s = 1 + t + eps, c = 1, and b(t) = s^2 - s at n = 2, m = 1.
    """
    grid = TorusGrid(2, N)
    omega = identity_form(grid)
    inst = Instance(
        name="uniform",
        grid=grid,
        m=m,
        chi=identity_form(grid),
        chitilde=constant_form(grid, eps * np.eye(2)),
        omega=omega,
        c=compute_c(identity_form(grid), omega, m),
        f=np.ones(grid.shape),
    )
    inst.extras["expected_b"] = lambda t: (1.0 + t + eps) ** 2 - (1.0 + t + eps)
    inst.extras["eps"] = eps
    return inst


def boundary_instance(N=16, m=1):
    """chi tuned so the cone-condition margin vanishes; chitilde = omega.

    The margin of I + a*idd(cos(2 pi x1) + cos(2 pi y1)) is 1/2 - 2 pi^2 a,
    so the boundary amplitude is 1/(4 pi^2) with c = 1. The chitilde = omega
    direction admits no calibrated scale (F(s) = s^2 + s), leaving the
    relaxed family with limit constant b0 = 2.
    """
    grid = TorusGrid(2, N)
    omega = identity_form(grid)
    coords = grid.coords()
    psi = _grid_field(grid, np.cos(TWO_PI * coords["x1"]) + np.cos(TWO_PI * coords["y1"]))
    tuned = tune_to_boundary(
        lambda a: FormField(grid, np.eye(2), a * psi), omega, m, (0.0, 0.05)
    )
    if tuned.mode != "boundary":
        raise InputError(f"boundary tuning failed: {tuned.mode}")
    inst = Instance(
        name="boundary",
        grid=grid,
        m=m,
        chi=tuned.chi,
        chitilde=omega,
        omega=omega,
        c=tuned.c,
        f=np.ones(grid.shape),
    )
    inst.extras["amplitude"] = tuned.amplitude
    inst.extras["b_limit"] = 2.0
    return inst


def degenerate_instance(N=16, m=1):
    """chitilde semipositive with eigenvalue hitting zero on the slab x1 = 0.

    chi = omega keeps the cone condition strict; all t-dependence of the
    degeneracy lives in chitilde = I + (1/pi^2) idd cos(2 pi x1).
    """
    grid = TorusGrid(2, N)
    omega = identity_form(grid)
    shape = _grid_field(grid, np.cos(TWO_PI * grid.coords()["x1"]))
    degen = make_degenerate_big(grid, np.eye(2), shape)
    inst = Instance(
        name="degenerate",
        grid=grid,
        m=m,
        chi=identity_form(grid),
        chitilde=degen.form,
        omega=omega,
        c=compute_c(identity_form(grid), omega, m),
        f=np.ones(grid.shape),
    )
    inst.extras["degenerate_mask"] = degen.degenerate_mask
    inst.extras["ample_mask"] = degen.ample_mask
    inst.extras["amplitude"] = degen.amplitude
    return inst


def boundary_degenerate_instance(N=16, m=1):
    """Boundary-tuned chi together with the degenerate chitilde.

    Stacks both marginal features: the cone margin of chi vanishes at the
    minimum points of its potential while chitilde loses an eigenvalue on
    the slab x1 = 0. The family background is still (2+t)*I plus a complex
    Hessian, so the exact potential cancels it:

        phi_t = -[(1+t) * a * (cos(2 pi x1) + cos(2 pi y1)) + amp * cos(2 pi x1)]

    up to an additive constant, with X_t = (2+t)*I and b(t) = (2+t)(2+t-c).
    Useful as the hard continuation target: the t -> 0 limit equation has a
    boundary-case chi and a genuinely degenerate chitilde at once.
    """
    grid = TorusGrid(2, N)
    omega = identity_form(grid)
    coords = grid.coords()
    psi = _grid_field(grid, np.cos(TWO_PI * coords["x1"]) + np.cos(TWO_PI * coords["y1"]))
    tuned = tune_to_boundary(
        lambda a: FormField(grid, np.eye(2), a * psi), omega, m, (0.0, 0.05)
    )
    if tuned.mode != "boundary":
        raise InputError(f"boundary tuning failed: {tuned.mode}")
    shape = _grid_field(grid, np.cos(TWO_PI * coords["x1"]))
    degen = make_degenerate_big(grid, np.eye(2), shape)
    inst = Instance(
        name="boundary_degenerate",
        grid=grid,
        m=m,
        chi=tuned.chi,
        chitilde=degen.form,
        omega=omega,
        c=tuned.c,
        f=np.ones(grid.shape),
    )
    c = inst.c
    amp = degen.amplitude
    a = tuned.amplitude
    inst.extras["amplitude"] = a
    inst.extras["degenerate_mask"] = degen.degenerate_mask
    inst.extras["ample_mask"] = degen.ample_mask
    inst.extras["expected_b"] = lambda t: (2.0 + t) * (2.0 + t - c)
    inst.extras["potential_exact"] = lambda t: -((1.0 + t) * a * psi + amp * shape)
    return inst


def manufactured_instance(N=32):
    """Source engineered so phi* = 0.1 sin(2 pi x1) cos(2 pi y2) solves exactly.

    Background 3*I (chi = omega, chitilde = 1.5*omega, t = 0.5); with c = 1
    the pointwise defect S_2 - S_1/2 of X* = 3I + Hess(phi*) is strictly
    positive (minimum about 0.09), and dividing by its mean b* = 6 gives a
    normalized density. phi* and b* are then exact discrete solutions.
    """
    grid = TorusGrid(2, N)
    omega = identity_form(grid)
    coords = grid.coords()
    phi_star = _grid_field(
        grid, 0.1 * np.sin(TWO_PI * coords["x1"]) * np.cos(TWO_PI * coords["y2"])
    )
    hess = complex_hessian(grid, phi_star).reshape(-1, 2, 2)
    xstar = 3.0 * np.eye(2) + hess
    # c = 1 for chi = omega; S_2 = det, S_1 = trace relative to the identity
    f_raw = (np.linalg.det(xstar).real - 0.5 * np.trace(xstar.real, axis1=-2, axis2=-1)).reshape(
        grid.shape
    )
    if np.min(f_raw) <= 0.0:
        raise InputError("manufactured defect lost positivity; background too small")
    b_star = float(np.mean(f_raw))
    inst = Instance(
        name="manufactured",
        grid=grid,
        m=1,
        chi=identity_form(grid),
        chitilde=constant_form(grid, 1.5 * np.eye(2)),
        omega=omega,
        c=1.0,
        f=normalize_density(f_raw, omega),
    )
    inst.extras["phi_star"] = phi_star - float(np.max(phi_star))
    inst.extras["b_star"] = b_star
    inst.extras["t_star"] = 0.5
    return inst


def fake_boundary_sample(N=16):
    """One-mode coefficient touching its cone constant, for the two-stage path.

    g = 1 + (1 - cos(2 pi x1))/8 in [1, 5/4] with chi = omega = identity and
    m = 1, so min g = c = 1: a fake boundary instance. The half-gap superlevel
    set {g >= 9/8} is {cos(2 pi x1) <= 0} and its measure is a plain grid
    count, which makes the spread constant and the analytic scalar bound
    exactly reproducible. The modulation is mild enough that the smoothed
    stand-in coefficient built from g (whose corner sharpness is what limits
    spectral accuracy) stays resolved at N = 16.
    """
    grid = TorusGrid(2, N)
    omega = identity_form(grid)
    g = _grid_field(grid, 1.0 + 0.125 * (1.0 - np.cos(TWO_PI * grid.coords()["x1"])))
    return {
        "grid": grid,
        "m": 1,
        "chi": identity_form(grid),
        "omega": omega,
        "g": g,
        "c": 1.0,
        "Lambda": 1.25,
    }
