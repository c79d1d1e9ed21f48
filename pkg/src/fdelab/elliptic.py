"""Explicit blow-up barriers and the semilinear problem ``Lap W = alpha |W|^{p-1} W``.

The barrier on ``B_R`` is

    W_R(r) = alpha^{-1/(p-1)} * C * H(R)^{1/(p-1)} / (H(R) - H(r))^{2/(p-1)},

a supersolution of ``Lap W <= alpha W^p`` whenever ``C >= default_barrier_constant(p)``.
On stochastically complete profiles ``H(R) -> inf`` and the barriers collapse to
zero on every fixed ball, which forces nonnegative subsolutions to vanish.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_banded

from .errors import NewtonError, NumericalError, ValidationError
from .geometry import Profile, RadialField, RadialGrid, h_function, laplacian_stencil, radial_laplacian

BLOWUP_MARGIN = 1e-3


def default_barrier_constant(p: float) -> float:
    """Smallest constant for which the barrier is a supersolution, ``[2(3p+1)/(p-1)^2]^{1/(p-1)}``."""
    if not p > 1:
        raise ValidationError(f"p must be > 1, got {p}", "p")
    return (2.0 * (3.0 * p + 1.0) / (p - 1.0) ** 2) ** (1.0 / (p - 1.0))


@dataclass(frozen=True)
class BarrierSpec:
    p: float
    alpha: float
    R: float
    C: float | None = None

    def __post_init__(self):
        if not self.p > 1:
            raise ValidationError(f"p must be > 1, got {self.p}", "p")
        if not self.alpha > 0:
            raise ValidationError(f"alpha must be > 0, got {self.alpha}", "alpha")
        if not self.R > 0:
            raise ValidationError(f"R must be > 0, got {self.R}", "R")
        c_min = default_barrier_constant(self.p)
        if self.C is None:
            object.__setattr__(self, "C", c_min)
        elif self.C < c_min * (1 - 1e-12):
            raise ValidationError(f"C must be >= {c_min!r} for p={self.p}, got {self.C}", "C")


@dataclass
class SupersolutionReport:
    max_violation: float
    node_of_max: int
    tolerance_used: float
    pass_: bool
    violations: np.ndarray = field(repr=False)

    def to_dict(self) -> dict:
        return {
            "max_violation": self.max_violation,
            "node_of_max": self.node_of_max,
            "tolerance_used": self.tolerance_used,
            "pass": self.pass_,
        }


def eval_barrier(profile: Profile, spec: BarrierSpec, r):
    """Barrier value at radii ``0 <= r < R`` (scalar or array)."""
    r = np.asarray(r, dtype=float)
    if np.any(r < 0) or np.any(r >= spec.R):
        raise ValidationError(f"barrier is defined on [0, {spec.R}); r = R is the blow-up locus", "r")
    hf = h_function(profile, spec.R)
    hR = float(hf(spec.R))
    gap = hR - np.asarray(hf(r))
    e = 1.0 / (spec.p - 1.0)
    return (spec.alpha ** (-e) * spec.C * hR**e / gap ** (2.0 * e))[()]


def barrier_laplacian(profile: Profile, spec: BarrierSpec, r):
    """Exact ``Lap W_R``, from ``H'' + (n-1)(psi'/psi)H' = 1``.

    ``Lap W = k [2/(p-1)] hR^e / gap^{(p+1)/(p-1)} + k [2(p+1)/(p-1)^2] hR^e H'^2 / gap^{2p/(p-1)}``
    with ``k = alpha^{-e} C`` and ``e = 1/(p-1)``.
    """
    r = np.asarray(r, dtype=float)
    hf = h_function(profile, spec.R)
    hR = float(hf(spec.R))
    gap = hR - np.asarray(hf(r))
    hp = np.asarray(hf.derivative(r))
    p = spec.p
    e = 1.0 / (p - 1.0)
    k = spec.alpha ** (-e) * spec.C * hR**e
    return (k * (2 * e) / gap ** ((p + 1) * e) + k * 2 * (p + 1) * e * e * hp**2 / gap ** (2 * p * e))[()]


def barrier_field(profile: Profile, spec: BarrierSpec, N: int, outer: float | None = None) -> RadialField:
    """Barrier sampled on a uniform grid of ``[0, outer]`` (default ``R(1 - 1e-3)``)."""
    outer = spec.R * (1 - BLOWUP_MARGIN) if outer is None else outer
    if outer > spec.R * (1 - BLOWUP_MARGIN) * (1 + 1e-12):
        raise ValidationError(f"barrier grids must stop at R(1 - {BLOWUP_MARGIN})", "outer")
    grid = RadialGrid.uniform(outer, N)
    return RadialField(grid, eval_barrier(profile, spec, grid.nodes))


def barrier_grid(spec: BarrierSpec, h: float, layer: float = 0.25) -> RadialGrid:
    """Grid on ``[0, R(1 - 1e-3)]`` with nominal spacing ``h``, graded toward the blow-up.

    Uniform up to ``R(1 - layer)``; beyond that the spacing shrinks in
    proportion to the distance ``R - r`` (geometric nodes), so the barrier,
    which varies on the scale ``R - r``, is resolved equally well at every node.
    """
    R, L = spec.R, layer * spec.R
    if not 0 < h < L:
        raise ValidationError(f"h must lie in (0, {L})", "h")
    n1 = math.ceil((R - L) / h)
    inner = np.linspace(0.0, R - L, n1 + 1)
    ratio = BLOWUP_MARGIN * R / L
    M = math.ceil(math.log(1.0 / ratio) * L / h)
    dist = L * ratio ** (np.arange(1, M + 1) / M)
    return RadialGrid(np.concatenate([inner, R - dist]))


def graded_barrier_field(profile: Profile, spec: BarrierSpec, h: float) -> RadialField:
    grid = barrier_grid(spec, h)
    return RadialField(grid, eval_barrier(profile, spec, grid.nodes))


def verify_supersolution(profile: Profile, W: RadialField, spec: BarrierSpec, tol: float) -> SupersolutionReport:
    """Check ``Lap_h W - alpha W^p <= tol`` at the non-Dirichlet nodes ``0..N-1``."""
    if W.grid.R >= spec.R:
        raise ValidationError("grid must stay strictly inside the blow-up radius", "W.grid")
    v = W.values
    if np.any(v[:-1] <= 0):
        raise ValidationError("barrier candidates must be positive", "W")
    lap = radial_laplacian(profile, W).values[:-1]
    viol = lap - spec.alpha * v[:-1] ** spec.p
    i = int(np.argmax(viol))
    return SupersolutionReport(float(viol[i]), i, float(tol), bool(viol[i] <= tol), viol)


@dataclass(frozen=True)
class NewtonControl:
    """Damped Newton settings.

    Convergence: ``max|F| <= atol + rtol * max(alpha |W|^p)``.
    """

    atol: float = 1e-10
    rtol: float = 1e-12
    max_iter: int = 200
    min_step: float = 2.0**-20


@dataclass
class NewtonInfo:
    iterations: int
    residual: float
    history: list


def _semilinear_residual(st, alpha, p, w, b):
    full = np.append(w, b)
    nl = alpha * np.abs(w) ** (p - 1) * w
    return st.apply(full) - nl, nl


def solve_semilinear(
    profile: Profile,
    spec: BarrierSpec,
    grid: RadialGrid,
    boundary_value: float,
    newton: NewtonControl = NewtonControl(),
    return_info: bool = False,
):
    """Solve ``Lap_h W = alpha |W|^{p-1} W`` with ``W'(0) = 0`` and ``W(R) = boundary_value``.

    Damped Newton with backtracking on the l2 residual (halving, down to
    ``newton.min_step``), started from the linear ramp from 0 to the boundary
    value. The discrete operator is monotone, so nonnegative boundary data give
    a nonnegative solution; this is asserted on return.
    """
    b = float(boundary_value)
    if not b >= 0:
        raise ValidationError(f"boundary_value must be >= 0, got {b}", "boundary_value")
    st = laplacian_stencil(profile, grid)
    alpha, p = spec.alpha, spec.p
    w = b * grid.nodes[:-1] / grid.R
    F, nl = _semilinear_residual(st, alpha, p, w, b)
    history = [float(np.max(np.abs(F)))]
    for it in range(newton.max_iter + 1):
        res = float(np.max(np.abs(F)))
        if res <= newton.atol + newton.rtol * float(np.max(np.abs(nl), initial=0.0)):
            out = RadialField(grid, np.append(w, b))
            if np.any(out.values < -1e-12 * max(b, 1.0)):
                raise NumericalError("negative values for nonnegative boundary data (monotonicity broken)")
            info = NewtonInfo(it, res, history)
            return (out, info) if return_info else out
        if it == newton.max_iter:
            break
        dnl = alpha * p * np.abs(w) ** (p - 1)
        ab = np.zeros((3, w.size))
        ab[0, 1:] = st.upper[:-1]
        ab[1] = st.diag - dnl
        ab[2, :-1] = st.lower[1:]
        delta = solve_banded((1, 1), ab, -F)
        norm0 = np.linalg.norm(F)
        t = 1.0
        while True:
            trial = w + t * delta
            F_t, nl_t = _semilinear_residual(st, alpha, p, trial, b)
            if np.all(np.isfinite(F_t)) and np.linalg.norm(F_t) <= (1 - 1e-4 * t) * norm0:
                break
            t *= 0.5
            if t < newton.min_step:
                raise NewtonError(
                    "backtracking line search exhausted", history, line_search_exhausted=True, iteration=it
                )
        w, F, nl = trial, F_t, nl_t
        history.append(float(np.max(np.abs(F))))
    raise NewtonError(f"no convergence in {newton.max_iter} Newton iterations", history, iteration=newton.max_iter)


@dataclass
class DecayRow:
    R: float
    sup_barrier: float
    sup_solution: float
    newton_iters: int
    residual: float
    error: str | None = None

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def nonexistence_experiment(
    profile: Profile,
    p_nl: float,
    alpha: float,
    R_list,
    probe_radius: float,
    C: float | None = None,
    boundary_factor: float = 1e3,
    h: float = 5e-3,
    newton: NewtonControl = NewtonControl(),
) -> list[DecayRow]:
    """Suprema over ``B_probe`` of the barrier and of a large-data solution, per ``R``.

    The solution lives on ``[0, R(1 - 1e-3)]`` with boundary value
    ``boundary_factor * W_R(0)``. A failed solve is recorded in ``error``
    and the sweep continues.
    """
    R_list = [float(R) for R in R_list]
    if any(b <= a for a, b in zip(R_list, R_list[1:])):
        raise ValidationError("R_list must be increasing", "R_list")
    if not 0 < probe_radius < min(R_list) / 2:
        raise ValidationError("probe_radius must lie in (0, min(R_list)/2)", "probe_radius")
    rows = []
    for R in R_list:
        spec = BarrierSpec(p_nl, alpha, R, C)
        sup_bar = float(eval_barrier(profile, spec, probe_radius))
        outer = R * (1 - BLOWUP_MARGIN)
        grid = RadialGrid.uniform(outer, max(64, int(math.ceil(outer / h))))
        bval = boundary_factor * float(eval_barrier(profile, spec, 0.0))
        try:
            sol, info = solve_semilinear(profile, spec, grid, bval, newton, return_info=True)
        except NumericalError as exc:
            rows.append(DecayRow(R, sup_bar, math.nan, -1, math.nan, str(exc)))
            continue
        inside = grid.nodes <= probe_radius
        sup_sol = max(float(sol.values[inside].max()), float(np.interp(probe_radius, grid.nodes, sol.values)))
        rows.append(DecayRow(R, sup_bar, sup_sol, info.iterations, info.residual))
    return rows
