"""Model-manifold geometry.

A model manifold is ``[0, inf) x S^{n-1}`` with metric ``dr^2 + psi(r)^2 dtheta^2``.
Radial functions then satisfy ``Lap f = f'' + (n-1) (psi'/psi) f'`` and the
Riemannian volume of a ball is ``|S^{n-1}| * int_0^R psi^{n-1}``.

Everything that touches ``psi^{n-1}`` goes through ``log_psi`` so that
profiles with super-exponential volume growth (``power_exponential``) never
overflow.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np
from scipy.interpolate import PchipInterpolator
from scipy.linalg import solve

from .errors import NumericalError, QuadratureError, ValidationError

KINDS = ("euclidean", "hyperbolic", "power_exponential", "custom")


def _gauss_legendre01(k):
    x, w = np.polynomial.legendre.leggauss(k)
    return 0.5 * (x + 1.0), 0.5 * w


GL20 = _gauss_legendre01(20)
GL14 = _gauss_legendre01(14)
GL8 = _gauss_legendre01(8)


def sphere_area(n: int) -> float:
    """Surface measure of the unit sphere S^{n-1} in R^n."""
    return 2.0 * math.pi ** (n / 2) / math.gamma(n / 2)


# --------------------------------------------------------------------------
# Profiles
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Profile:
    """Warping function ``psi`` together with the dimension ``n``.

    Use :func:`make_profile` rather than the constructor; it validates the
    parameters. ``table`` holds ``(r, psi, dpsi_or_None)`` for custom profiles.
    """

    kind: str
    n: int
    a: float = 1.0
    q: float = 2.0
    table: tuple | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.kind == "custom":
            r, psi, dpsi = self.table
            ip = PchipInterpolator(r, psi, extrapolate=False)
            if dpsi is not None:
                dip = PchipInterpolator(r, dpsi, extrapolate=False)
                d2ip = dip.derivative()
            else:
                dip = ip.derivative()
                d2ip = ip.derivative(2)
            object.__setattr__(self, "_interp", (ip, dip, d2ip))

    # identity for caches: analytic profiles compare by parameters
    @property
    def key(self):
        if self.kind == "custom":
            r, psi, dpsi = self.table
            extra = None if dpsi is None else np.asarray(dpsi).tobytes()
            return (self.kind, self.n, np.asarray(r).tobytes(), np.asarray(psi).tobytes(), extra)
        return (self.kind, self.n, float(self.a), float(self.q))

    def __eq__(self, other):
        return isinstance(other, Profile) and self.key == other.key

    def __hash__(self):
        return hash(self.key)

    @property
    def r_max(self) -> float:
        """Largest radius at which the profile can be evaluated."""
        return float(self.table[0][-1]) if self.kind == "custom" else math.inf

    def describe(self) -> dict:
        d = {"kind": self.kind, "n": self.n}
        if self.kind == "hyperbolic":
            d["a"] = self.a
        elif self.kind == "power_exponential":
            d["q"] = self.q
        elif self.kind == "custom":
            d["r_max"] = self.r_max
        return d

    def _check_hull(self, r):
        if self.kind == "custom" and np.any(r > self.r_max * (1 + 1e-12)):
            raise ValidationError(f"radius beyond table hull r_max={self.r_max}", "profile")

    def psi(self, r):
        r = np.asarray(r, dtype=float)
        with np.errstate(over="ignore"):
            if self.kind == "euclidean":
                out = r.copy()
            elif self.kind == "hyperbolic":
                out = np.sinh(self.a * r) / self.a
            elif self.kind == "power_exponential":
                out = r * np.exp(r**self.q / self.q)
            else:
                self._check_hull(r)
                out = self._interp[0](r)
        return out[()]

    def dpsi(self, r):
        r = np.asarray(r, dtype=float)
        with np.errstate(over="ignore"):
            if self.kind == "euclidean":
                out = np.ones_like(r)
            elif self.kind == "hyperbolic":
                out = np.cosh(self.a * r)
            elif self.kind == "power_exponential":
                out = np.exp(r**self.q / self.q) * (1.0 + r**self.q)
            else:
                self._check_hull(r)
                out = self._interp[1](r)
        return out[()]

    def d2psi(self, r):
        r = np.asarray(r, dtype=float)
        with np.errstate(over="ignore"):
            if self.kind == "euclidean":
                out = np.zeros_like(r)
            elif self.kind == "hyperbolic":
                out = self.a * np.sinh(self.a * r)
            elif self.kind == "power_exponential":
                q = self.q
                out = np.exp(r**q / q) * r ** (q - 1) * (1.0 + q + r**q)
            else:
                self._check_hull(r)
                out = self._interp[2](r)
        return out[()]

    def log_psi(self, r):
        """``log psi(r)``; ``-inf`` at the pole."""
        r = np.asarray(r, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            if self.kind == "euclidean":
                out = np.log(r)
            elif self.kind == "hyperbolic":
                ar = self.a * r
                big = ar > 20.0
                safe = np.where(big, 1.0, ar)
                out = np.where(
                    big,
                    ar - math.log(2.0 * self.a) + np.log1p(-np.exp(-2.0 * np.where(big, ar, 0.0))),
                    np.log(np.sinh(safe) / self.a),
                )
            elif self.kind == "power_exponential":
                out = np.log(r) + r**self.q / self.q
            else:
                self._check_hull(r)
                out = np.log(self._interp[0](r))
        return out[()]

    def dlog_psi(self, r):
        """``psi'/psi`` (the mean-curvature factor of geodesic spheres, up to n-1)."""
        r = np.asarray(r, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            if self.kind == "euclidean":
                out = 1.0 / r
            elif self.kind == "hyperbolic":
                out = self.a / np.tanh(self.a * r)
            elif self.kind == "power_exponential":
                out = (1.0 + r**self.q) / r
            else:
                self._check_hull(r)
                out = self._interp[1](r) / self._interp[0](r)
        return out[()]

    def excess_rate(self, r):
        """``|psi'/psi - 1/r|``: growth of ``log psi`` beyond the Euclidean part."""
        r = np.asarray(r, dtype=float)
        if self.kind == "euclidean":
            return np.zeros_like(r)[()]
        if self.kind == "power_exponential":
            return (r ** (self.q - 1))[()]
        with np.errstate(divide="ignore", invalid="ignore"):
            out = np.abs(self.dlog_psi(r) - 1.0 / r)
        return np.where(r > 0, out, 0.0)[()]


def make_profile(descriptor: Mapping | str, **overrides) -> Profile:
    """Build a validated :class:`Profile` from a descriptor.

    Descriptors are mappings such as ``{"kind": "hyperbolic", "a": 1, "n": 2}``
    or ``{"kind": "custom", "csv": "table.csv", "n": 3}``; a bare kind string
    is accepted together with keyword overrides.

    >>> float(make_profile("hyperbolic", a=1.0, n=2).psi(1.0))  # doctest: +ELLIPSIS
    1.1752011936...
    """
    d = {"kind": descriptor} if isinstance(descriptor, str) else dict(descriptor)
    d.update(overrides)
    kind = d.get("kind")
    if kind not in KINDS:
        raise ValidationError(f"kind must be one of {KINDS}, got {kind!r}", "profile.kind")
    n = d.get("n", 3)
    if isinstance(n, bool) or not isinstance(n, (int, np.integer)) or n < 2:
        raise ValidationError(f"n must be an integer >= 2, got {n!r}", "profile.n")
    n = int(n)

    if kind == "euclidean":
        return Profile("euclidean", n)
    if kind == "hyperbolic":
        a = float(d.get("a", 1.0))
        if not a > 0:
            raise ValidationError(f"a must be > 0, got {a}", "profile.a")
        return Profile("hyperbolic", n, a=a)
    if kind == "power_exponential":
        q = float(d.get("q", 2.0))
        if not q > 1:
            raise ValidationError(f"q must be > 1, got {q}", "profile.q")
        return Profile("power_exponential", n, q=q)

    if "csv" in d:
        r, psi, dpsi = read_profile_csv(d["csv"])
    else:
        r = np.asarray(d.get("r"), dtype=float)
        psi = np.asarray(d.get("psi"), dtype=float)
        dpsi = None if d.get("dpsi") is None else np.asarray(d["dpsi"], dtype=float)
    return Profile("custom", n, table=_validate_table(r, psi, dpsi))


def _validate_table(r, psi, dpsi):
    if r.ndim != 1 or r.shape != psi.shape or r.size < 4:
        raise ValidationError("table needs matching r and psi columns with >= 4 rows", "profile.table")
    if dpsi is not None and dpsi.shape != r.shape:
        raise ValidationError("dpsi column length differs from r", "profile.table")
    if not np.all(np.isfinite(r)) or not np.all(np.isfinite(psi)):
        raise ValidationError("table contains non-finite values", "profile.table")
    if r[0] != 0.0 or np.any(np.diff(r) <= 0):
        raise ValidationError("r must start at 0 and be strictly increasing", "profile.table.r")
    if abs(psi[0]) > 1e-12:
        raise ValidationError(f"psi(0) must be 0, got {psi[0]}", "profile.table.psi")
    if np.any(psi[1:] <= 0) or np.any(np.diff(psi) < 0):
        raise ValidationError("psi must be positive for r > 0 and nondecreasing", "profile.table.psi")
    if dpsi is not None:
        if np.any(dpsi < 0):
            raise ValidationError("dpsi must be nonnegative", "profile.table.dpsi")
        if abs(dpsi[0] - 1.0) > 1e-6:
            raise ValidationError(f"dpsi(0) must be 1, got {dpsi[0]}", "profile.table.dpsi")
    psi = psi.copy()
    psi[0] = 0.0
    return (r, psi, dpsi)


def read_profile_csv(path) -> tuple:
    """Read a ``r, psi[, dpsi]`` table with a header row."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if len(rows) < 2:
        raise ValidationError("profile CSV needs a header and data rows", "profile.csv")
    header = [h.strip().lower() for h in rows[0]]
    if header[:2] != ["r", "psi"] or len(header) not in (2, 3) or (len(header) == 3 and header[2] != "dpsi"):
        raise ValidationError(f"profile CSV header must be r,psi[,dpsi], got {rows[0]}", "profile.csv")
    try:
        data = np.array([[float(x) for x in row] for row in rows[1:] if row], dtype=float)
    except ValueError as exc:
        raise ValidationError(f"non-numeric entry in profile CSV: {exc}", "profile.csv") from None
    if data.shape[1] != len(header):
        raise ValidationError("ragged profile CSV", "profile.csv")
    dpsi = data[:, 2] if data.shape[1] == 3 else None
    return data[:, 0], data[:, 1], dpsi


def volume_density(p: Profile, r):
    """``psi(r)^{n-1}``, the radial density of the Riemannian volume."""
    with np.errstate(over="ignore"):
        return np.asarray(p.psi(r) ** (p.n - 1))[()]


# --------------------------------------------------------------------------
# Grids and fields
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class RadialGrid:
    """Nodes ``0 = r_0 < ... < r_N = R``."""

    nodes: np.ndarray

    def __post_init__(self):
        r = np.array(self.nodes, dtype=float)
        if r.ndim != 1 or r.size < 9:
            raise ValidationError(f"grid needs N >= 8 (>= 9 nodes), got {r.size} nodes", "grid")
        if r[0] != 0.0:
            raise ValidationError("grid must start at r = 0", "grid")
        h = np.diff(r)
        if np.any(h <= 0):
            raise ValidationError("grid nodes must be strictly increasing", "grid")
        if h.max() / h.min() > 1e3:
            raise ValidationError("grid spacing ratio exceeds 1e3", "grid")
        r.setflags(write=False)
        object.__setattr__(self, "nodes", r)

    @classmethod
    def uniform(cls, R: float, N: int) -> "RadialGrid":
        return cls(np.linspace(0.0, float(R), int(N) + 1))

    @property
    def R(self) -> float:
        return float(self.nodes[-1])

    @property
    def N(self) -> int:
        return self.nodes.size - 1

    def same_as(self, other: "RadialGrid") -> bool:
        return self is other or (self.nodes.shape == other.nodes.shape and np.array_equal(self.nodes, other.nodes))


@dataclass(frozen=True, eq=False)
class RadialField:
    """Values of a radial function on a grid.

    ``stencil`` is set by :func:`radial_laplacian`: per node, one of
    ``"center"``, ``"interior"`` or ``"boundary"``.
    """

    grid: RadialGrid
    values: np.ndarray
    stencil: tuple | None = None

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.shape != self.grid.nodes.shape:
            raise ValidationError(f"field has {v.size} values for {self.grid.nodes.size} nodes", "field")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def r(self):
        return self.grid.nodes


# --------------------------------------------------------------------------
# H(r) = int_0^r (int_0^rho psi^{n-1}) / psi(rho)^{n-1} drho
# --------------------------------------------------------------------------


def _hprime_from(p: Profile, a, hp_a, x, rule):
    """H'(x) given H'(a), for a <= x in one panel (arrays of equal shape).

    H'(x) = H'(a) * (psi(a)/psi(x))^{n-1} + int_a^x (psi(z)/psi(x))^{n-1} dz,
    evaluated entirely with log-psi differences.
    """
    xi, wi = rule
    nm1 = p.n - 1
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        lx = p.log_psi(x)
        decay = np.exp(nm1 * (p.log_psi(a) - lx))
        decay = np.where(a == x, 1.0, decay)
        span = x - a
        z = a[..., None] + span[..., None] * xi
        inner = span * np.sum(wi * np.exp(nm1 * (p.log_psi(z) - lx[..., None])), axis=-1)
        out = np.where(hp_a == 0.0, 0.0, hp_a * decay) + np.where(span > 0, inner, 0.0)
    # removable singularity at the pole: H'(rho) ~ rho/n -> 0
    return np.where(x == 0.0, 0.0, out)


class HFunction:
    """Tabulated ``H`` on ``[0, rmax]`` by adaptive composite Gauss-Legendre.

    Panels are sized so that ``(n-1) * |psi'/psi - 1/r| * width <= 4`` and then
    bisected until the 20-point and 14-point rules agree to ``rtol * H(rmax)``.
    ``H'`` is carried across panels by an exact recurrence, so no quantity
    ever involves ``psi^{n-1}`` itself.
    """

    def __init__(self, profile: Profile, rmax: float, rtol: float = 1e-12, max_panels: int = 400_000):
        if not rtol > 0:
            raise ValidationError(f"quadrature tolerance must be > 0, got {rtol}", "quad.rtol")
        if rmax > profile.r_max:
            raise ValidationError(f"rmax={rmax} beyond table hull {profile.r_max}", "profile")
        self.profile = profile
        self.rmax = float(rmax)
        self.rtol = rtol
        b = self._initial_breaks(max(self.rmax, 1e-300))
        for _ in range(12):
            est = self._build(b)
            if est["total"] <= est["target"]:
                self.error_estimate = est["total"]
                return
            bad = est["local"] > est["target"] / (2.0 * (b.size - 1))
            if b.size + bad.sum() > max_panels:
                break
            mids = 0.5 * (b[:-1] + b[1:])[bad]
            b = np.sort(np.concatenate([b, mids]))
        raise QuadratureError(
            "H quadrature did not reach tolerance",
            achieved=float(est["total"]),
            target=float(est["target"]),
            panels=int(b.size - 1),
        )

    def _initial_breaks(self, rmax):
        p = self.profile
        hmax = min(0.25, rmax / 4.0)
        b = np.linspace(0.0, rmax, int(math.ceil(rmax / hmax)) + 1)
        for _ in range(6):
            lam_h = (p.n - 1) * p.excess_rate(b[1:]) * np.diff(b)
            split = np.maximum(1, np.ceil(lam_h / 4.0)).astype(int)
            if np.all(split == 1):
                break
            pieces = [np.linspace(b[i], b[i + 1], k + 1)[:-1] for i, k in enumerate(split) if k > 1]
            keep = b[:-1][split == 1]
            b = np.unique(np.concatenate([keep, *pieces, [rmax]]))
        return b

    def _panel_integrals(self, a, w, hp_a, rule, chunk=4000):
        xi, wi = rule
        out = np.empty(a.size)
        for s in range(0, a.size, chunk):
            sl = slice(s, s + chunk)
            aa = np.repeat(a[sl, None], xi.size, axis=1)
            xx = a[sl, None] + w[sl, None] * xi
            hp = _hprime_from(self.profile, aa, np.repeat(hp_a[sl, None], xi.size, axis=1), xx, rule)
            out[sl] = w[sl] * (hp @ wi)
        return out

    def _build(self, b):
        p = self.profile
        nm1 = p.n - 1
        a, c, w = b[:-1], b[1:], np.diff(b)
        lc = p.log_psi(c)
        growth = {}
        for name, (xi, wi) in (("hi", GL20), ("lo", GL14)):
            z = a[:, None] + w[:, None] * xi
            with np.errstate(over="ignore"):
                growth[name] = w * (np.exp(nm1 * (p.log_psi(z) - lc[:, None])) @ wi)
        with np.errstate(divide="ignore"):
            decay = np.exp(nm1 * (p.log_psi(a) - lc))
        decay[a == 0.0] = 0.0
        hp_c = np.empty(a.size)
        acc = 0.0
        g = growth["hi"]
        for i in range(a.size):
            acc = acc * decay[i] + g[i]
            hp_c[i] = acc
        hp_a = np.concatenate([[0.0], hp_c[:-1]])
        dh_hi = self._panel_integrals(a, w, hp_a, GL20)
        dh_lo = self._panel_integrals(a, w, hp_a, GL14)
        h_b = np.concatenate([[0.0], np.cumsum(dh_hi)])
        if not (np.all(np.isfinite(h_b)) and np.all(np.isfinite(hp_c))):
            raise QuadratureError("non-finite H values", rmax=self.rmax)
        # an error in H'(a) propagates with factor <= 1 (psi nondecreasing) over the remaining length
        reach = b[-1] - a
        local = np.abs(dh_hi - dh_lo) + np.abs(growth["hi"] - growth["lo"]) * reach
        # round-off floor: log-psi carries an absolute error ~ eps * |log psi|
        scale = 64 * np.finfo(float).eps * nm1 * (1.0 + np.abs(np.where(np.isfinite(lc), lc, 0.0)))
        floor = scale * (np.abs(dh_hi) + np.abs(growth["hi"]) * reach)
        local = np.maximum(local - floor, 0.0)
        self.breaks, self.h_b, self.hp_b = b, h_b, np.concatenate([[0.0], hp_c])
        return {"local": local, "total": local.sum(), "target": self.rtol * max(h_b[-1], 1e-300)}

    def _locate(self, r):
        r = np.asarray(r, dtype=float)
        if np.any(r < 0):
            raise ValidationError("H is defined for r >= 0", "r")
        if np.any(r > self.rmax * (1 + 1e-12)):
            raise ValidationError(f"r beyond tabulated range {self.rmax}", "r")
        idx = np.clip(np.searchsorted(self.breaks, r, side="right") - 1, 0, self.breaks.size - 2)
        return r, idx

    def derivative(self, r):
        r, idx = self._locate(r)
        a = self.breaks[idx]
        return _hprime_from(self.profile, a, self.hp_b[idx], np.minimum(r, self.rmax), GL20)[()]

    def second_derivative(self, r):
        """``H'' = 1 - (n-1)(psi'/psi) H'``; equals ``1/n`` at the pole."""
        r = np.asarray(r, dtype=float)
        hp = np.asarray(self.derivative(r))
        with np.errstate(divide="ignore", invalid="ignore"):
            out = 1.0 - (self.profile.n - 1) * self.profile.dlog_psi(r) * hp
        return np.where(r == 0.0, 1.0 / self.profile.n, out)[()]

    def __call__(self, r):
        r, idx = self._locate(r)
        a = self.breaks[idx]
        span = r - a
        xi, wi = GL20
        x = a[..., None] + span[..., None] * xi
        hp = _hprime_from(
            self.profile,
            np.broadcast_to(a[..., None], x.shape),
            np.broadcast_to(self.hp_b[idx][..., None], x.shape),
            x,
            GL20,
        )
        return (self.h_b[idx] + span * (hp @ wi))[()]


_H_CACHE: dict = {}


def h_function(p: Profile, rmax: float, rtol: float = 1e-12) -> HFunction:
    """Cached :class:`HFunction` covering at least ``[0, rmax]``."""
    key = (p.key, rtol)
    hf = _H_CACHE.get(key)
    if hf is None or hf.rmax < rmax:
        hf = HFunction(p, rmax, rtol)
        if len(_H_CACHE) > 64:
            _H_CACHE.clear()
        _H_CACHE[key] = hf
    return hf


def eval_H(p: Profile, r, rtol: float = 1e-12):
    """``H(r)`` for scalar or array ``r >= 0`` to relative tolerance ``rtol``.

    Raises :class:`QuadratureError` (with the achieved estimate) when the
    panel budget is exhausted.
    """
    r = np.asarray(r, dtype=float)
    if np.any(r < 0):
        raise ValidationError("H is defined for r >= 0", "r")
    rmax = float(r.max()) if r.size else 0.0
    if rmax == 0.0:
        return np.zeros_like(r)[()]
    return h_function(p, rmax, rtol)(r)


def eval_H_prime(p: Profile, r, rtol: float = 1e-12):
    r = np.asarray(r, dtype=float)
    rmax = float(r.max()) if r.size else 0.0
    if rmax == 0.0:
        return np.zeros_like(r)[()]
    return h_function(p, rmax, rtol).derivative(r)


# --------------------------------------------------------------------------
# Stochastic completeness
# --------------------------------------------------------------------------


@dataclass
class CompletenessReport:
    verdict: str
    sigma: float
    c: float
    fit_residual: float
    H_horizon: float
    horizon: float
    r_samples: np.ndarray
    H_samples: np.ndarray
    Hprime_samples: np.ndarray

    def to_dict(self) -> dict:
        return {
            "verdict": self.verdict,
            "sigma": self.sigma,
            "c": self.c,
            "fit_residual": self.fit_residual,
            "H_horizon": self.H_horizon,
            "horizon": self.horizon,
            "r_samples": self.r_samples.tolist(),
            "H_samples": self.H_samples.tolist(),
            "Hprime_samples": self.Hprime_samples.tolist(),
        }


def classify_completeness(
    p: Profile,
    horizon: float = 50.0,
    samples: int = 40,
    eps_fit: float = 0.1,
    max_fit_residual: float = 0.1,
) -> CompletenessReport:
    """Guess whether ``int_0^inf H'(r) dr`` diverges from the tail of ``H'``.

    ``H'(r) ~ c r^{-sigma}`` is fitted by least squares on log samples over
    ``[horizon/2, horizon]``. ``sigma <= 1 - eps_fit`` means the integral
    diverges (stochastically complete), ``sigma >= 1 + eps_fit`` means it
    converges; the band in between, or a poor fit, is ``"undetermined"``.
    """
    if horizon < 10:
        raise ValidationError(f"horizon must be >= 10, got {horizon}", "horizon")
    if samples < 20:
        raise ValidationError(f"samples must be >= 20, got {samples}", "samples")
    hf = h_function(p, horizon)
    r = np.geomspace(horizon / 2.0, horizon, samples)
    hp = np.asarray(hf.derivative(r))
    h = np.asarray(hf(r))
    if not (np.all(np.isfinite(hp)) and np.all(np.isfinite(h))) or np.any(hp <= 0):
        raise NumericalError("non-finite or nonpositive H samples", horizon=horizon)
    slope, intercept = np.polyfit(np.log(r), np.log(hp), 1)
    resid = np.log(hp) - (slope * np.log(r) + intercept)
    rms = float(np.sqrt(np.mean(resid**2)))
    sigma = -float(slope)
    if rms > max_fit_residual:
        verdict = "undetermined"
    elif sigma <= 1.0 - eps_fit:
        verdict = "complete"
    elif sigma >= 1.0 + eps_fit:
        verdict = "incomplete"
    else:
        verdict = "undetermined"
    return CompletenessReport(
        verdict, sigma, float(math.exp(intercept)), rms, float(hf(horizon)), float(horizon), r, h, hp
    )


# --------------------------------------------------------------------------
# Radial Laplacian
# --------------------------------------------------------------------------


def _fd_weights(x0, xs, order):
    """Finite-difference weights at ``x0`` for the ``order``-th derivative."""
    xs = np.asarray(xs, dtype=float)
    k = xs.size
    scale = np.abs(xs - x0).max()  # unit offsets keep the Vandermonde system well conditioned
    A = np.vander((xs - x0) / scale, k, increasing=True).T
    rhs = np.zeros(k)
    rhs[order] = math.factorial(order)
    return solve(A, rhs) / scale**order


@dataclass(frozen=True, eq=False)
class LaplacianStencil:
    """Tridiagonal discrete Laplacian on rows ``0..N-1`` plus a boundary row.

    Rows ``0..N-1`` use the conservative form
    ``(1/V_i) [S_{i+1/2} (f_{i+1}-f_i)/h_{i+1} - S_{i-1/2} (f_i-f_{i-1})/h_i]``
    with ``S = psi^{n-1}`` at cell faces and ``V_i`` the exact cell volume.
    Off-diagonals are nonnegative for every ``n`` (an M-matrix), which is
    what gives the solvers a discrete comparison principle. Row 0 is the
    symmetry cell ``[0, h/2]`` and tends to ``n f''(0)``.
    """

    grid: RadialGrid
    lower: np.ndarray  # coefficient of f_{i-1} in row i (lower[0] = 0)
    diag: np.ndarray
    upper: np.ndarray  # coefficient of f_{i+1} in row i
    boundary_weights: np.ndarray  # row N acting on the last four nodes

    def apply(self, f):
        """Rows ``0..N-1`` of ``L f`` (f includes the boundary value)."""
        f = np.asarray(f, dtype=float)
        out = self.diag * f[..., :-1] + self.upper * f[..., 1:]
        out[..., 1:] += self.lower[1:] * f[..., :-2]
        return out


_STENCIL_CACHE: dict = {}


def laplacian_stencil(p: Profile, grid: RadialGrid) -> LaplacianStencil:
    key = (p.key, grid.nodes.tobytes())
    st = _STENCIL_CACHE.get(key)
    if st is not None:
        return st
    r = grid.nodes
    N = grid.N
    if N < 4:
        raise ValidationError("grid too coarse for the Laplacian stencil", "grid")
    p._check_hull(r)
    nm1 = p.n - 1
    h = np.diff(r)
    faces = 0.5 * (r[:-1] + r[1:])  # face i+1/2 for i = 0..N-1
    left = np.concatenate([[0.0], faces[:-1]])
    right = faces
    # cell volumes relative to psi(right face)^{n-1}
    xi, wi = GL20
    z = left[:, None] + (right - left)[:, None] * xi
    lr = p.log_psi(right)
    with np.errstate(over="ignore", divide="ignore"):
        vol_rel = (right - left) * (np.exp(nm1 * (p.log_psi(z) - lr[:, None])) @ wi)
        s_left_rel = np.exp(nm1 * (p.log_psi(left) - lr))
    s_left_rel[0] = 0.0
    upper = 1.0 / (vol_rel * h)
    lower = np.zeros(N)
    lower[1:] = s_left_rel[1:] / (vol_rel[1:] * h[:-1])
    diag = -(lower + upper)
    # boundary row: one-sided second-order f'' (4 points) and f' (3 points)
    x4 = r[-4:]
    w2 = _fd_weights(r[-1], x4, 2)
    w1 = np.concatenate([[0.0], _fd_weights(r[-1], x4[1:], 1)])
    bw = w2 + nm1 * float(p.dlog_psi(r[-1])) * w1
    st = LaplacianStencil(grid, lower, diag, upper, bw)
    if not all(np.all(np.isfinite(x)) for x in (lower, diag, upper, bw)):
        raise NumericalError("non-finite Laplacian coefficients (grid too coarse for the profile growth)")
    if len(_STENCIL_CACHE) > 256:
        _STENCIL_CACHE.clear()
    _STENCIL_CACHE[key] = st
    return st


def radial_laplacian(p: Profile, f: RadialField) -> RadialField:
    """Discrete ``f'' + (n-1)(psi'/psi) f'`` at every node of ``f.grid``.

    Interior nodes use the conservative second-order stencil of
    :class:`LaplacianStencil`, the pole uses the symmetry cell, and ``r = R``
    a one-sided second-order stencil. Constants are annihilated exactly and
    ``Lap r^2 = 2n`` is reproduced exactly on Euclidean profiles.
    """
    st = laplacian_stencil(p, f.grid)
    v = f.values
    out = np.empty_like(v)
    out[:-1] = st.apply(v)
    out[-1] = st.boundary_weights @ v[-4:]
    flags = ("center",) + ("interior",) * (f.grid.N - 1) + ("boundary",)
    return RadialField(f.grid, out, stencil=flags)


def ball_integral(p: Profile, grid: RadialGrid, values, radius: float):
    """``int_{B_radius} f dmu`` for ``f`` piecewise linear between nodes.

    ``values`` may carry leading axes (e.g. time); the last axis runs over
    nodes. The radial weight is integrated with 8-point Gauss-Legendre per cell.
    """
    values = np.asarray(values, dtype=float)
    r = grid.nodes
    if radius < 0 or radius > grid.R * (1 + 1e-12):
        raise ValidationError(f"radius {radius} outside grid [0, {grid.R}]", "radius")
    radius = min(radius, grid.R)
    ends = np.append(r[r < radius], radius)
    if ends.size < 2:
        return np.zeros(values.shape[:-1])[()]
    fe = np.stack([np.interp(ends, r, v) for v in values.reshape(-1, r.size)])
    a, b = ends[:-1], ends[1:]
    xi, wi = GL8
    z = a[:, None] + (b - a)[:, None] * xi
    with np.errstate(over="ignore"):
        dens = p.psi(z) ** (p.n - 1) * (wi * (b - a)[:, None])  # (cells, 8)
    fa, fb = fe[:, :-1], fe[:, 1:]
    total = np.einsum("sc,ck->s", fa, dens * (1 - xi)) + np.einsum("sc,ck->s", fb, dens * xi)
    return (sphere_area(p.n) * total).reshape(values.shape[:-1])[()]


def ball_volume(p: Profile, radius: float, inner: float = 0.0) -> float:
    """Riemannian volume of the annulus ``inner < r < radius`` (a ball if inner = 0)."""
    n_cells = 64
    edges = np.linspace(inner, radius, n_cells + 1)
    xi, wi = GL20
    z = edges[:-1, None] + np.diff(edges)[:, None] * xi
    with np.errstate(over="ignore"):
        dens = p.psi(z) ** (p.n - 1)
    return float(sphere_area(p.n) * np.sum(dens * wi * np.diff(edges)[:, None]))
