"""Implicit radial fast diffusion ``u_t = Lap(u^m)`` and the minimal-solution ladder.

Time stepping is backward Euler; each step solves
``u+ - dt * Lap_h phi(u+) = u (+ dt * forcing)`` by damped Newton on a
tridiagonal system. ``Lap_h`` is an M-matrix and ``phi`` is increasing, so the
scheme is monotone: ordered data give ordered trajectories.

The minimal solution for ``u0 >= 0`` is approximated by lifted Dirichlet
problems (boundary value ``ell``, datum ``ell + min(u0, beta)``) and three
monotone limits: ``beta`` up, then ``ell`` down, then the domain radius up.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.linalg import solve_banded

from .errors import NewtonError, OrderingViolation, ValidationError
from .geometry import GL8, Profile, RadialField, RadialGrid, ball_integral, laplacian_stencil

BOUND_SLACK = 1e-8
EPS = np.finfo(float).eps
ORDER_SLACK = 1e-7


@dataclass(frozen=True)
class FdeConfig:
    """Solver settings. ``delta=None`` picks 0 for positive states and ``1e-8 * scale`` otherwise."""

    m: float
    dt: float
    t_end: float
    newton_tol: float = 1e-11
    newton_max: int = 60
    delta: float | None = None
    store_every: int = 1

    def __post_init__(self):
        if not 0 < self.m < 1:
            raise ValidationError(f"m must be in (0,1), got {self.m}", "m")
        if not self.dt > 0:
            raise ValidationError(f"dt must be > 0, got {self.dt}", "dt")
        if not self.t_end > 0:
            raise ValidationError(f"t_end must be > 0, got {self.t_end}", "t_end")
        if self.dt > self.t_end * (1 + 1e-12):
            raise ValidationError("dt must not exceed t_end", "dt")
        if not self.newton_tol > 0:
            raise ValidationError("newton_tol must be > 0", "newton_tol")
        if self.newton_max < 1:
            raise ValidationError("newton_max must be >= 1", "newton_max")
        if self.delta is not None and self.delta < 0:
            raise ValidationError(f"delta must be >= 0, got {self.delta}", "delta")
        if self.store_every < 1:
            raise ValidationError("store_every must be >= 1", "store_every")


def phi(s, m, delta=0.0):
    """Regularised power: ``s (s^2 + delta^2)^{(m-1)/2}``, or ``sign(s)|s|^m`` when delta = 0."""
    s = np.asarray(s, dtype=float)
    if delta > 0:
        return s * (s * s + delta * delta) ** ((m - 1) / 2)
    return np.sign(s) * np.abs(s) ** m


def dphi(s, m, delta=0.0):
    s = np.asarray(s, dtype=float)
    if delta > 0:
        q = s * s + delta * delta
        return q ** ((m - 3) / 2) * (m * s * s + delta * delta)
    with np.errstate(divide="ignore"):
        return m * np.abs(s) ** (m - 1)


@dataclass(frozen=True, eq=False)
class SpaceTimeField:
    """Stored snapshots ``states[k]`` at ``times[k]`` on a common grid."""

    grid: RadialGrid
    times: np.ndarray
    states: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        t = np.array(self.times, dtype=float)
        s = np.array(self.states, dtype=float)
        if t.ndim != 1 or t.size == 0 or t[0] != 0.0 or np.any(np.diff(t) <= 0):
            raise ValidationError("times must start at 0 and increase", "times")
        if s.shape != (t.size, self.grid.nodes.size):
            raise ValidationError(f"states shape {s.shape} does not match times/grid", "states")
        t.setflags(write=False)
        s.setflags(write=False)
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "states", s)

    def time_index(self, t: float) -> int:
        k = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[k] - t) > 1e-9 * max(1.0, abs(t)):
            raise ValidationError(f"t={t} is not a stored time", "t")
        return k

    def at(self, t: float) -> RadialField:
        return RadialField(self.grid, self.states[self.time_index(t)])

    def same_mesh(self, other: "SpaceTimeField") -> bool:
        return (
            self.grid.same_as(other.grid)
            and self.times.shape == other.times.shape
            and np.allclose(self.times, other.times, rtol=0, atol=1e-12)
        )


def _auto_delta(cfg: FdeConfig, u0, boundary):
    if cfg.delta is not None:
        return cfg.delta
    if np.all(u0 > 0) and boundary > 0:
        return 0.0
    return 1e-8 * max(1.0, float(np.max(np.abs(u0))), abs(boundary))


def solve_fde(
    profile: Profile,
    cfg: FdeConfig,
    grid: RadialGrid,
    u0: RadialField | np.ndarray,
    boundary: float,
    forcing: Callable | None = None,
) -> SpaceTimeField:
    """Backward-Euler trajectory of ``u_t = Lap(phi(u)) (+ forcing(r, t))``.

    Symmetry at ``r = 0`` and ``u(R) = boundary``; ``u0`` supplies the
    interior values (its last entry is replaced by ``boundary``). With
    ``delta = 0`` the state must stay positive, and a step that cannot keep it
    so raises :class:`NewtonError` asking for ``delta > 0``.
    """
    v0 = np.asarray(u0.values if isinstance(u0, RadialField) else u0, dtype=float)
    if isinstance(u0, RadialField) and not u0.grid.same_as(grid):
        raise ValidationError("u0 lives on a different grid", "u0")
    if v0.shape != grid.nodes.shape:
        raise ValidationError("u0 length does not match the grid", "u0")
    boundary = float(boundary)
    delta = _auto_delta(cfg, v0[:-1], boundary)
    if delta == 0.0 and (np.any(v0[:-1] <= 0) or boundary <= 0):
        raise ValidationError("delta = 0 needs a strictly positive state; set delta > 0", "delta")
    st = laplacian_stencil(profile, grid)
    m = cfg.m
    r_in = grid.nodes[:-1]
    n_steps = int(math.ceil(cfg.t_end / cfg.dt - 1e-9))
    step_times = np.minimum(cfg.dt * np.arange(1, n_steps + 1), cfg.t_end)
    phi_b = float(phi(boundary, m, delta))

    u = v0[:-1].copy()
    times = [0.0]
    states = [np.append(u, boundary)]
    t_prev = 0.0
    total_iters = 0
    lo, up, dg = st.lower, st.upper, st.diag
    absL = np.abs(lo) + np.abs(dg) + np.abs(up)
    for k, t in enumerate(step_times):
        dt = t - t_prev
        rhs = u.copy()
        if forcing is not None:
            rhs = rhs + dt * np.asarray(forcing(r_in, t), dtype=float)
        scale = max(1.0, float(np.max(np.abs(u))), abs(boundary))

        def resid(w):
            f = phi(w, m, delta)
            lap = dg * f
            lap[:-1] += up[:-1] * f[1:]
            lap[-1] += up[-1] * phi_b
            lap[1:] += lo[1:] * f[:-1]
            return w - dt * lap - rhs

        w = u.copy()
        F = resid(w)
        history = []
        for it in range(cfg.newton_max + 1):
            res = float(np.max(np.abs(F)))
            history.append(res)
            # residual cannot be resolved below the rounding level of dt * Lap_h phi(w)
            floor = 16 * EPS * (scale + dt * float(np.max(absL * np.abs(phi(w, m, delta)))))
            if res <= max(cfg.newton_tol * scale, floor):
                break
            if it == cfg.newton_max:
                raise NewtonError(
                    f"no convergence at step {k + 1} (t={t:.6g})", history, step=k + 1, time=float(t)
                )
            d = dphi(w, m, delta)
            ab = np.empty((3, w.size))
            ab[0, 0] = 0.0
            ab[0, 1:] = -dt * up[:-1] * d[1:]
            ab[1] = 1.0 - dt * dg * d
            ab[2, -1] = 0.0
            ab[2, :-1] = -dt * lo[1:] * d[:-1]
            step = solve_banded((1, 1), ab, -F, check_finite=False)
            norm0 = np.linalg.norm(F)
            lam = 1.0
            while True:
                trial = w + lam * step
                if delta > 0 or np.all(trial > 0):
                    F_t = resid(trial)
                    if np.all(np.isfinite(F_t)) and np.linalg.norm(F_t) <= (1 - 1e-4 * lam) * norm0:
                        break
                lam *= 0.5
                if lam < 2.0**-30:
                    hint = " (state may cross 0: use delta > 0)" if delta == 0 else ""
                    raise NewtonError(
                        f"line search exhausted at step {k + 1}{hint}",
                        history,
                        line_search_exhausted=True,
                        step=k + 1,
                        time=float(t),
                    )
            w, F = trial, F_t
        total_iters += it
        u = w
        t_prev = t
        if (k + 1) % cfg.store_every == 0 or k == n_steps - 1:
            times.append(float(t))
            states.append(np.append(u, boundary))
    return SpaceTimeField(
        grid, np.array(times), np.array(states), meta={"delta": delta, "newton_iterations": total_iters}
    )


def mass(profile: Profile, f: SpaceTimeField, radius: float | None = None) -> np.ndarray:
    """``int_{B_radius} u(., t) dmu`` for every stored time."""
    return np.atleast_1d(ball_integral(profile, f.grid, f.states, f.grid.R if radius is None else radius))


# --------------------------------------------------------------------------
# Data and lifted problems
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Datum:
    """Initial datum ``u0(r)``; ``mode`` is ``"point"`` (sampling) or ``"cell"`` (volume averages)."""

    func: Callable
    mode: str = "point"
    name: str = "datum"

    def __post_init__(self):
        if self.mode not in ("point", "cell"):
            raise ValidationError(f"mode must be 'point' or 'cell', got {self.mode!r}", "u0.mode")

    def sample(self, grid: RadialGrid, profile: Profile) -> RadialField:
        r = grid.nodes
        if self.mode == "point":
            return RadialField(grid, np.broadcast_to(np.asarray(self.func(r), dtype=float), r.shape))
        faces = 0.5 * (r[:-1] + r[1:])
        left = np.concatenate([[0.0], faces])
        right = np.concatenate([faces, [r[-1]]])
        xi, wi = GL8
        z = left[:, None] + (right - left)[:, None] * xi
        # weights relative to each cell's largest density, so huge psi cannot overflow
        lw = (profile.n - 1) * profile.log_psi(z)
        with np.errstate(invalid="ignore"):
            w = np.exp(lw - np.max(np.where(np.isfinite(lw), lw, -np.inf), axis=1, keepdims=True)) * wi
        vals = np.asarray(self.func(z), dtype=float)
        return RadialField(grid, np.sum(vals * w, axis=1) / np.sum(w, axis=1))


def datum_zero() -> Datum:
    return Datum(lambda r: np.zeros_like(r), "point", "zero")


def datum_constant(c: float) -> Datum:
    return Datum(lambda r: np.full_like(r, float(c)), "point", f"constant({c})")


def datum_tent(height: float = 1.0, width: float = 1.0) -> Datum:
    return Datum(lambda r: height * np.maximum(0.0, 1.0 - r / width), "point", f"tent({height},{width})")


def datum_gaussian(height: float = 1.0, width: float = 1.0) -> Datum:
    return Datum(lambda r: height * np.exp(-((r / width) ** 2)), "point", f"gaussian({height},{width})")


def datum_power(height: float, exponent: float) -> Datum:
    """``height * r^{-exponent}``: unbounded near the pole but locally integrable when exponent < n."""
    with np.errstate(divide="ignore"):
        return Datum(lambda r: height * np.where(r > 0, r, np.inf) ** (-exponent), "cell", f"power({height},{exponent})")


@dataclass(frozen=True)
class LiftedProblem:
    ell: float
    beta: float
    R: float
    u0: RadialField

    def __post_init__(self):
        if not self.ell > 0:
            raise ValidationError(f"ell must be > 0, got {self.ell}", "ell")
        if not self.beta > 0:
            raise ValidationError(f"beta must be > 0, got {self.beta}", "beta")
        if abs(self.u0.grid.R - self.R) > 1e-12 * self.R:
            raise ValidationError("u0 grid radius differs from R", "R")
        if np.any(self.u0.values < 0):
            raise ValidationError("lifted problems need u0 >= 0", "u0")

    @property
    def initial_state(self) -> np.ndarray:
        return self.ell + np.minimum(self.u0.values, self.beta)


def solve_lifted(profile: Profile, cfg: FdeConfig, prob: LiftedProblem, grid: RadialGrid) -> SpaceTimeField:
    """Trajectory of the lifted problem; asserts ``ell <= u <= ell + beta`` throughout."""
    if not prob.u0.grid.same_as(grid):
        raise ValidationError("problem datum lives on a different grid", "grid")
    if cfg.delta is None:
        cfg = FdeConfig(cfg.m, cfg.dt, cfg.t_end, cfg.newton_tol, cfg.newton_max, 0.0, cfg.store_every)
    traj = solve_fde(profile, cfg, grid, prob.initial_state, prob.ell)
    s = traj.states
    low = float(np.min(s - prob.ell))
    high = float(np.max(s - prob.ell - prob.beta))
    if low < -BOUND_SLACK or high > BOUND_SLACK:
        raise OrderingViolation(
            "lifted trajectory left [ell, ell + beta]", below=low, above=high, ell=prob.ell, beta=prob.beta
        )
    return SpaceTimeField(traj.grid, traj.times, traj.states, meta={**traj.meta, "ell": prob.ell, "beta": prob.beta})


def extend_by_zero(f: SpaceTimeField, larger_grid: RadialGrid) -> SpaceTimeField:
    """Carry ``f`` onto a grid of radius ``>= f.grid.R``; zero outside the old ball.

    Old nodes are reached by linear interpolation (order preserving), so the
    jump at the old radius is kept rather than smoothed.
    """
    if larger_grid.R < f.grid.R * (1 - 1e-12):
        raise ValidationError("extend_by_zero cannot shrink the domain", "larger_grid")
    if larger_grid.same_as(f.grid):
        return f
    r = larger_grid.nodes
    inside = r <= f.grid.R * (1 + 1e-12)
    states = np.zeros((f.times.size, r.size))
    for k, row in enumerate(f.states):
        states[k, inside] = np.interp(r[inside], f.grid.nodes, row)
    return SpaceTimeField(larger_grid, f.times, states, meta=dict(f.meta))


# --------------------------------------------------------------------------
# The triple limit
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class LiftSchedule:
    """Radii ``R_k`` (increasing), lifts ``ell_j`` (decreasing), truncations ``beta_i`` (increasing).

    ``h`` is the grid spacing shared by all radii (so smaller grids nest in
    larger ones), ``tol`` the stage tolerance on probe-ball sup increments.
    """

    R_list: tuple
    ell_list: tuple
    beta_list: tuple
    tol: float
    probe_radius: float
    h: float

    def __post_init__(self):
        for name, seq, inc in (("R_list", self.R_list, True), ("ell_list", self.ell_list, False), ("beta_list", self.beta_list, True)):
            if len(seq) == 0 or any(x <= 0 for x in seq):
                raise ValidationError(f"{name} must be a nonempty list of positive numbers", name)
            if any((b <= a) if inc else (b >= a) for a, b in zip(seq, seq[1:])):
                raise ValidationError(f"{name} must be strictly {'increasing' if inc else 'decreasing'}", name)
        if not self.tol > 0:
            raise ValidationError("tol must be > 0", "tol")
        if not 0 < self.probe_radius <= self.R_list[0]:
            raise ValidationError("probe_radius must lie in (0, R_0]", "probe_radius")
        if not 0 < self.h < self.R_list[0] / 8:
            raise ValidationError("h must be positive and below R_0/8", "h")

    @classmethod
    def geometric(cls, R0=2.0, K=3, ell0=0.1, J=4, beta0=1.0, I=4, datum_sup=1.0, h=0.05):
        return cls(
            tuple(R0 * 2.0**k for k in range(K)),
            tuple(ell0 * 4.0**-j for j in range(J)),
            tuple(beta0 * 2.0**i for i in range(I)),
            1e-4 * max(float(datum_sup), 1.0),
            R0 / 2.0,
            h,
        )

    def grid(self, k: int) -> RadialGrid:
        R = self.R_list[k]
        return RadialGrid.uniform(R, int(round(R / self.h)))


@dataclass
class MinimalSolutionResult:
    field: SpaceTimeField
    ladder_log: list
    converged: bool


def _probe(f: SpaceTimeField, radius):
    return f.states[:, f.grid.nodes <= radius * (1 + 1e-12)]


def minimal_solution(
    profile: Profile, cfg: FdeConfig, u0_spec: Datum, ladder: LiftSchedule
) -> MinimalSolutionResult:
    """Approximate the minimal solution by the ``beta -> ell -> R`` sweeps.

    Each sweep stops once the sup of successive increments over the probe ball
    (all stored times) falls below ``ladder.tol``; the beta sweep also stops as
    soon as ``beta`` exceeds ``sup u0``, where truncation is inactive. An
    increment of the wrong sign beyond ``1e-7`` raises
    :class:`OrderingViolation`; for the outer sweeps the slack also absorbs the
    inner sweep's last increment, since those compare truncated limits.
    """
    log = []
    ok = True
    probe = ladder.probe_radius
    prev_k = None
    k_done = False
    for k, R in enumerate(ladder.R_list):
        grid = ladder.grid(k)
        u0 = u0_spec.sample(grid, profile)
        if np.any(u0.values < 0):
            raise ValidationError("the minimal-solution ladder needs u0 >= 0", "u0")
        sup0 = float(np.max(u0.values))
        if sup0 == 0.0:
            times = _time_mesh(cfg)
            zero = SpaceTimeField(grid, times, np.zeros((times.size, grid.nodes.size)), meta={"datum": "zero"})
            log.append({"stage": "all", "k": k, "R": R, "increment": 0.0, "note": "zero datum"})
            return MinimalSolutionResult(
                extend_by_zero(zero, ladder.grid(len(ladder.R_list) - 1)), log, True
            )
        prev_l = None
        inner_inc = 0.0
        l_done = False
        for j, ell in enumerate(ladder.ell_list):
            prev_b = None
            b_done = False
            for i, beta in enumerate(ladder.beta_list):
                traj = solve_lifted(profile, cfg, LiftedProblem(ell, beta, R, u0), grid)
                inc = 0.0
                if prev_b is not None:
                    d = _probe(traj, probe) - _probe(prev_b, probe)
                    if d.min() < -ORDER_SLACK:
                        raise OrderingViolation("beta sweep decreased", k=k, j=j, i=i, violation=float(-d.min()))
                    inc = float(d.max())
                inactive = beta >= sup0
                log.append({"stage": "beta", "k": k, "j": j, "i": i, "R": R, "ell": ell, "beta": beta,
                            "increment": inc, "truncation_inactive": inactive})
                prev_b = traj
                if inactive or (i > 0 and inc < ladder.tol):
                    b_done = True
                    break
            ok &= b_done
            if prev_l is not None:
                d = _probe(prev_l, probe) - _probe(traj, probe)
                if d.min() < -(ORDER_SLACK + inner_inc):
                    raise OrderingViolation("ell sweep increased", k=k, j=j, violation=float(-d.min()))
                inc = float(np.abs(d).max())
                log.append({"stage": "ell", "k": k, "j": j, "R": R, "ell": ell, "increment": inc})
                if inc < ladder.tol:
                    prev_l = traj
                    l_done = True
                    break
            inner_inc = max(inner_inc, inc if prev_b is not None else 0.0)
            prev_l = traj
        ok &= l_done
        u_k = prev_l
        if prev_k is not None:
            ext = extend_by_zero(prev_k, grid)
            d = _probe(u_k, probe) - _probe(ext, probe)
            if d.min() < -(ORDER_SLACK + ladder.tol):
                raise OrderingViolation("R sweep decreased", k=k, violation=float(-d.min()))
            inc = float(np.abs(d).max())
            log.append({"stage": "R", "k": k, "R": R, "increment": inc})
            if inc < ladder.tol:
                prev_k = u_k
                k_done = True
                break
        prev_k = u_k
    ok &= k_done
    final = extend_by_zero(prev_k, ladder.grid(len(ladder.R_list) - 1))
    return MinimalSolutionResult(final, log, bool(ok))


def _time_mesh(cfg: FdeConfig):
    n_steps = int(math.ceil(cfg.t_end / cfg.dt - 1e-9))
    t = np.concatenate([[0.0], np.minimum(cfg.dt * np.arange(1, n_steps + 1), cfg.t_end)])
    keep = [0] + [k for k in range(1, n_steps + 1) if k % cfg.store_every == 0 or k == n_steps]
    return t[keep]


@dataclass
class OrderingReport:
    """Largest violation (positive = violated) of each ordering family."""

    violations: dict
    slack: float

    @property
    def passed(self) -> bool:
        return all(v <= self.slack for v in self.violations.values())


def ordering_chain(profile: Profile, cfg: FdeConfig, u0_spec: Datum, ladder: LiftSchedule) -> OrderingReport:
    """Solve every ``(k, ell, beta)`` rung and measure the six ordering families.

    lower: ``ell <= u``; upper: ``u <= ell + beta``; domain: ``u_k <= u_{k+1}``
    on the smaller ball; lift: ``u_ell <= u_ell'`` for ``ell < ell'``;
    truncation: ``u_beta <= u_beta'`` for ``beta < beta'``; zero_extension:
    ``u_k`` extended by zero stays below ``u_{k+1}`` on the larger ball.
    """
    sols = {}
    for k, R in enumerate(ladder.R_list):
        grid = ladder.grid(k)
        u0 = u0_spec.sample(grid, profile)
        for j, ell in enumerate(ladder.ell_list):
            for i, beta in enumerate(ladder.beta_list):
                prob = LiftedProblem(ell, beta, R, u0)
                cfg0 = FdeConfig(cfg.m, cfg.dt, cfg.t_end, cfg.newton_tol, cfg.newton_max, 0.0, cfg.store_every)
                sols[k, j, i] = solve_fde(profile, cfg0, grid, prob.initial_state, ell)
    v = dict.fromkeys(("lower", "upper", "domain", "lift", "truncation", "zero_extension"), -math.inf)
    K = len(ladder.R_list)
    for (k, j, i), s in sols.items():
        ell, beta = ladder.ell_list[j], ladder.beta_list[i]
        v["lower"] = max(v["lower"], float(np.max(ell - s.states)))
        v["upper"] = max(v["upper"], float(np.max(s.states - ell - beta)))
        if j > 0:  # ell_j < ell_{j-1}
            v["lift"] = max(v["lift"], float(np.max(s.states - sols[k, j - 1, i].states)))
        if i > 0:
            v["truncation"] = max(v["truncation"], float(np.max(sols[k, j, i - 1].states - s.states)))
        if k + 1 < K:
            big = sols[k + 1, j, i]
            n_small = s.grid.nodes.size
            v["domain"] = max(v["domain"], float(np.max(s.states - big.states[:, :n_small])))
            ext = extend_by_zero(s, big.grid)
            v["zero_extension"] = max(v["zero_extension"], float(np.max(ext.states - big.states)))
    for key in v:
        if v[key] == -math.inf:
            v[key] = 0.0
    return OrderingReport(v, ORDER_SLACK)
