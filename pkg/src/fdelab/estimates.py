"""Herrero-Pierre constants and checks, and the contraction functional used for uniqueness.

Ball integrals use :func:`fdelab.geometry.ball_integral` (piecewise-linear
values, Gauss-Legendre per cell), the same rule on both sides of every
estimate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .elliptic import BarrierSpec, eval_barrier
from .errors import NumericalError, ValidationError
from .geometry import GL20, Profile, RadialField, ball_integral, laplacian_stencil, sphere_area
from .parabolic import SpaceTimeField, phi

HP_REL_TOL = 0.02
ORDER_SLACK = 1e-8


# --------------------------------------------------------------------------
# Cut-offs and constants
# --------------------------------------------------------------------------


def transition(x):
    """Smoothstep bridge: 1 on ``[0, 1]``, 0 on ``[2, inf)``, C^2 in between."""
    s = np.clip(np.asarray(x, dtype=float) - 1.0, 0.0, 1.0)
    return 1.0 - s**3 * (10.0 - 15.0 * s + 6.0 * s * s)


def transition_d1(x):
    s = np.clip(np.asarray(x, dtype=float) - 1.0, 0.0, 1.0)
    return -30.0 * s * s * (1.0 - s) ** 2


def transition_d2(x):
    s = np.clip(np.asarray(x, dtype=float) - 1.0, 0.0, 1.0)
    return -60.0 * s * (1.0 - s) * (1.0 - 2.0 * s)


@dataclass(frozen=True)
class CutoffFamily:
    """Radial cut-off ``phi_R(r) = transition(r / R)``."""

    R: float

    def __post_init__(self):
        if not self.R > 0:
            raise ValidationError(f"R must be > 0, got {self.R}", "R")

    def __call__(self, r):
        return transition(np.asarray(r, dtype=float) / self.R)

    def grad(self, r):
        return transition_d1(np.asarray(r, dtype=float) / self.R) / self.R

    def laplacian(self, profile: Profile, r):
        r = np.asarray(r, dtype=float)
        x = r / self.R
        return transition_d2(x) / self.R**2 + (profile.n - 1) * profile.dlog_psi(r) * transition_d1(x) / self.R


def kappa_m(m: float) -> float:
    """``(1 - m) 2^{1-m} k (k - 1)`` with ``k`` the smallest integer ``>= 2/(1-m)``."""
    if not 0 < m < 1:
        raise ValidationError(f"m must be in (0,1), got {m}", "m")
    k = math.ceil(2.0 / (1.0 - m) - 1e-12)  # 2/(1-0.8) is 10.000000000000002 in floating point
    return (1.0 - m) * 2.0 ** (1.0 - m) * k * (k - 1)


def log_annulus_volume(p: Profile, R: float, cells: int = 64) -> float:
    """``log vol(B_2R minus B_R)``, safe when the volume itself overflows."""
    edges = np.linspace(R, 2 * R, cells + 1)
    xi, wi = GL20
    z = edges[:-1, None] + np.diff(edges)[:, None] * xi
    lw = (p.n - 1) * p.log_psi(z) + np.log(wi * np.diff(edges)[:, None])
    return float(math.log(sphere_area(p.n)) + logsumexp(lw))


def hp_parts(p: Profile, m: float, R: float, samples: int = 4001) -> dict:
    """Ingredients of the remainder constant: ``kappa``, annulus sup term and (log) annulus volume."""
    cut = CutoffFamily(R)
    r = np.linspace(R, 2 * R, samples)
    term = cut.grad(r) ** 2 + np.abs(cut.laplacian(p, r))
    log_vol = log_annulus_volume(p, R)
    vol = math.exp(log_vol) if log_vol < 700 else math.inf
    return {"kappa": kappa_m(m), "sup_term": float(term.max()), "volume": vol, "log_volume": log_vol}


def log_hp_constant(p: Profile, m: float, R: float, samples: int = 4001) -> float:
    parts = hp_parts(p, m, R, samples)
    return math.log(parts["kappa"] * parts["sup_term"]) + (1.0 - m) * parts["log_volume"]


def hp_constant(p: Profile, m: float, R: float, samples: int = 4001) -> float:
    """``kappa_m * sup_{[R,2R]}(|grad phi_R|^2 + |Lap phi_R|) * vol(B_2R minus B_R)^{1-m}``.

    Raises :class:`NumericalError` when the value exceeds the double range
    (fast-growing profiles); :func:`log_hp_constant` is always finite.
    """
    log_h = log_hp_constant(p, m, R, samples)
    if log_h > 709.0:
        raise NumericalError("remainder constant overflows double precision", log_h_r=log_h, R=R, m=m)
    return math.exp(log_h)


# --------------------------------------------------------------------------
# Estimate checks
# --------------------------------------------------------------------------


@dataclass
class HpReport:
    lhs: float
    rhs: float
    h_r: float
    slack: float
    pass_: bool
    t: float = math.nan
    s: float = math.nan

    def to_dict(self) -> dict:
        return {"lhs": self.lhs, "rhs": self.rhs, "h_r": self.h_r, "slack": self.slack, "pass": self.pass_,
                "t": self.t, "s": self.s}


def _report(lhs_int, rhs_int, hR, m, t, s, rel_tol):
    lhs = max(lhs_int, 0.0) ** (1 - m)
    rhs = max(rhs_int, 0.0) ** (1 - m) + hR * abs(t - s)
    slack = rhs - lhs
    return HpReport(lhs, rhs, hR, slack, bool(slack >= -rel_tol * rhs), t, s)


def _common(u: SpaceTimeField, v: SpaceTimeField, R):
    if not u.same_mesh(v):
        raise ValidationError("u and v must share grid and stored times", "v")
    if 2 * R > u.grid.R * (1 + 1e-12):
        raise ValidationError(f"grid radius {u.grid.R} does not cover 2R = {2 * R}", "R")


def check_hp_ordered(u, v, p: Profile, m: float, R: float, t: float, s: float, rel_tol: float = HP_REL_TOL,
                     h_r: float | None = None) -> HpReport:
    """Ordered estimate for ``u >= v``: ``[int_{B_R}(u-v)(t)]^{1-m} <= [int_{B_2R}(u-v)(s)]^{1-m} + H_R |t-s|``."""
    _common(u, v, R)
    du = u.states - v.states
    if du.min() < -ORDER_SLACK:
        raise ValidationError(f"u < v by {-du.min():.3g}; use check_hp_strong", "u")
    hR = hp_constant(p, m, R) if h_r is None else h_r
    dt, ds = du[u.time_index(t)], du[u.time_index(s)]
    return _report(ball_integral(p, u.grid, dt, R), ball_integral(p, u.grid, ds, 2 * R), hR, m, t, s, rel_tol)


def check_hp_strong(u, v, p: Profile, m: float, R: float, t: float, s: float, rel_tol: float = HP_REL_TOL,
                    h_r: float | None = None) -> HpReport:
    """Same estimate with ``|u - v|``; no ordering needed."""
    _common(u, v, R)
    hR = hp_constant(p, m, R) if h_r is None else h_r
    dt = np.abs(u.states[u.time_index(t)] - v.states[v.time_index(t)])
    ds = np.abs(u.states[u.time_index(s)] - v.states[v.time_index(s)])
    return _report(ball_integral(p, u.grid, dt, R), ball_integral(p, u.grid, ds, 2 * R), hR, m, t, s, rel_tol)


def check_hp_datum(u: SpaceTimeField, u0: RadialField, p: Profile, m: float, R: float,
                   rel_tol: float = HP_REL_TOL) -> list[HpReport]:
    """A priori bound ``[int_{B_R} u(t)]^{1-m} <= [int_{B_2R} u0]^{1-m} + H_R t`` for every stored ``t``."""
    if not u0.grid.same_as(u.grid):
        raise ValidationError("datum must live on the trajectory grid", "u0")
    if 2 * R > u.grid.R * (1 + 1e-12):
        raise ValidationError(f"grid radius {u.grid.R} does not cover 2R = {2 * R}", "R")
    hR = hp_constant(p, m, R)
    rhs_int = ball_integral(p, u.grid, u0.values, 2 * R)
    lhs_ints = np.atleast_1d(ball_integral(p, u.grid, u.states, R))
    return [_report(a, rhs_int, hR, m, float(t), 0.0, rel_tol) for a, t in zip(lhs_ints, u.times)]


# --------------------------------------------------------------------------
# Contraction functional
# --------------------------------------------------------------------------


def _exp_trapezoid_weights(times):
    """Weights ``w`` with ``sum w_k g(t_k) = int g_lin(s) e^{-s} ds`` exactly for piecewise-linear ``g``."""
    a, h = times[:-1], np.diff(times)
    ea = np.exp(-a)
    em = -np.expm1(-h)  # 1 - e^{-h}
    left = ea * (1.0 - em / h)
    right = ea * (em - h * np.exp(-h)) / h
    w = np.zeros(times.size)
    w[:-1] += left
    w[1:] += right
    return w


def contraction_functional(u: SpaceTimeField, v: SpaceTimeField, m: float, t0: float) -> RadialField:
    """``W(r) = int_0^{t0} |u^m - v^m| e^{-s} ds`` with exact exponential weights on stored times."""
    if not u.same_mesh(v):
        raise ValidationError("u and v must share grid and stored times", "v")
    if not 0 < t0 <= u.times[-1] * (1 + 1e-12):
        raise ValidationError(f"t0 must lie in (0, {u.times[-1]}]", "t0")
    k = u.time_index(t0)
    g = np.abs(phi(u.states[: k + 1], m) - phi(v.states[: k + 1], m))
    w = _exp_trapezoid_weights(u.times[: k + 1])
    return RadialField(u.grid, w @ g)


def probe_alpha(m: float, t0: float) -> float:
    """``(2 - 2 e^{-t0})^{-(1-m)/m}``."""
    return (-2.0 * math.expm1(-t0)) ** (-(1.0 - m) / m)


@dataclass
class ProbeReport:
    sup_w: float
    min_defect: float
    alpha: float
    t0: float
    barrier_sup: float
    probe_radius: float
    W: RadialField = field(repr=False)
    defect: np.ndarray = field(repr=False)

    @property
    def exact(self) -> bool:
        return self.sup_w == 0.0

    @property
    def dominated(self) -> bool:
        return self.sup_w <= self.barrier_sup

    def to_dict(self) -> dict:
        return {"sup_w": self.sup_w, "min_defect": self.min_defect, "alpha": self.alpha, "t0": self.t0,
                "barrier_sup": self.barrier_sup, "probe_radius": self.probe_radius,
                "dominated": self.dominated, "exact": self.exact}


def uniqueness_probe(u, v, p: Profile, m: float, t0: float, alpha: float | None = None,
                     probe_radius: float | None = None) -> ProbeReport:
    """Evaluate ``W``, its defect ``Lap_h W - alpha W^{1/m}`` and the barrier bound with exponent ``1/m``.

    ``W`` must be a subsolution in the continuum, so negative defects measure
    discretisation error. Any subsolution is dominated by the blow-up barrier on
    the solve ball, which is reported as ``barrier_sup`` at ``probe_radius``.
    """
    if not 0.05 <= m < 1:
        raise ValidationError(f"m must be in [0.05, 1) for the probe, got {m}", "m")
    a = probe_alpha(m, t0) if alpha is None else float(alpha)
    W = contraction_functional(u, v, m, t0)
    grid = W.grid
    rp = grid.R / 2 if probe_radius is None else float(probe_radius)
    if not 0 < rp < grid.R:
        raise ValidationError("probe_radius must lie in (0, R)", "probe_radius")
    st = laplacian_stencil(p, grid)
    defect = st.apply(W.values) - a * W.values[:-1] ** (1.0 / m)
    inside = grid.nodes <= rp * (1 + 1e-12)
    bar = float(eval_barrier(p, BarrierSpec(1.0 / m, a, grid.R), rp))
    return ProbeReport(float(W.values[inside].max()), float(defect.min()), a, float(t0), bar, rp, W, defect)
