import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from fdelab.errors import ValidationError
from fdelab.geometry import (
    RadialField,
    RadialGrid,
    ball_integral,
    ball_volume,
    classify_completeness,
    eval_H,
    eval_H_prime,
    h_function,
    make_profile,
    radial_laplacian,
    read_profile_csv,
    volume_density,
)

EUC3 = make_profile({"kind": "euclidean", "n": 3})
HYP2 = make_profile({"kind": "hyperbolic", "a": 1.0, "n": 2})
PE3 = make_profile({"kind": "power_exponential", "q": 3.0, "n": 3})


# profiles ---------------------------------------------------------------------


def test_euclidean_psi():
    assert EUC3.psi(1.0) == 1.0
    assert EUC3.dpsi(1.0) == 1.0


def test_hyperbolic_psi_matches_series():
    assert HYP2.psi(1.0) == pytest.approx(oracles.sinh_series(1.0), rel=1e-14)
    assert round(float(HYP2.psi(1.0)), 5) == 1.17520


def test_power_exponential_slope_at_pole():
    assert PE3.dpsi(0.0) == 1.0
    assert PE3.dpsi(1e-8) == pytest.approx(1.0, rel=1e-6)


@pytest.mark.parametrize("desc", [{"kind": "euclidean"}, {"kind": "hyperbolic", "a": 2.0}, {"kind": "power_exponential", "q": 2.5}])
def test_pole_normalisation(desc):
    p = make_profile(desc)
    assert abs(p.psi(1e-8) / 1e-8 - 1) < 1e-6
    assert abs(p.dpsi(1e-8) - 1) < 1e-6


@pytest.mark.parametrize("desc,path", [
    ({"kind": "power_exponential", "q": 1.0}, "profile.q"),
    ({"kind": "hyperbolic", "a": 0.0}, "profile.a"),
    ({"kind": "euclidean", "n": 1}, "profile.n"),
    ({"kind": "sphere"}, "profile.kind"),
])
def test_bad_descriptors(desc, path):
    with pytest.raises(ValidationError) as ei:
        make_profile(desc)
    assert ei.value.path == path


def test_custom_table_rejections():
    r = np.linspace(0, 2, 9)
    with pytest.raises(ValidationError):
        make_profile({"kind": "custom", "r": r, "psi": r + 0.1})
    with pytest.raises(ValidationError):
        make_profile({"kind": "custom", "r": r[::-1], "psi": r})


def test_custom_table_tracks_analytic(tmp_path):
    r = np.linspace(0, 3, 301)
    path = tmp_path / "t.csv"
    path.write_text("r,psi,dpsi\n" + "".join(f"{a!r},{math.sinh(a)!r},{math.cosh(a)!r}\n" for a in r.tolist()))
    tab = make_profile({"kind": "custom", "csv": str(path), "n": 3})
    x = np.linspace(0.1, 2.9, 17)
    assert np.allclose(tab.psi(x), np.sinh(x), rtol=1e-6)
    assert read_profile_csv(path)[0].size == 301
    with pytest.raises(ValidationError):
        tab.psi(3.5)
    hyp = make_profile({"kind": "hyperbolic", "n": 3})
    assert eval_H(tab, 2.5) == pytest.approx(eval_H(hyp, 2.5), rel=1e-5)


def test_volume_density():
    assert volume_density(EUC3, 2.0) == 4.0
    assert volume_density(EUC3, 0.0) == 0.0


def test_profile_equality_and_hash():
    a = make_profile("hyperbolic", a=1.0, n=2)
    assert a == HYP2 and hash(a) == hash(HYP2)
    assert a != make_profile("hyperbolic", a=1.0, n=3)


# grids ------------------------------------------------------------------------


def test_grid_validation():
    with pytest.raises(ValidationError):
        RadialGrid(np.linspace(0, 1, 8))
    with pytest.raises(ValidationError):
        RadialGrid(np.linspace(0.1, 1, 20))
    nodes = np.concatenate([[0.0, 1e-6], np.linspace(0.1, 1, 10)])
    with pytest.raises(ValidationError):
        RadialGrid(nodes)
    g = RadialGrid.uniform(2.0, 10)
    with pytest.raises(ValidationError):
        RadialField(g, np.zeros(10))


# H function -------------------------------------------------------------------


@pytest.mark.parametrize("n", [2, 3, 5])
@pytest.mark.parametrize("r", [0.5, 1.0, 2.0])
def test_H_euclidean_closed_form(n, r):
    p = make_profile("euclidean", n=n)
    assert abs(eval_H(p, r) - oracles.H_euclidean(n, r)) <= 1e-10
    assert eval_H_prime(p, r) == pytest.approx(r / n, rel=1e-12)


@pytest.mark.parametrize("r", [1.0, 2.0])
def test_H_hyperbolic_closed_form(r):
    assert abs(eval_H(HYP2, r) - oracles.H_hyperbolic_n2(r)) <= 1e-8


@pytest.mark.parametrize("kind,r", [("hyperbolic", 3.0), ("power_exponential", 1.0), ("power_exponential", 5.0)])
def test_H_against_nested_quadrature(kind, r):
    p = make_profile(kind, q=3.0, n=3)
    assert eval_H(p, r) == pytest.approx(oracles.H_quad(kind, 3, r), rel=1e-8)


def test_H_at_pole():
    hf = h_function(PE3, 5.0)
    assert hf(0.0) == 0.0
    assert hf.derivative(0.0) == 0.0
    assert hf.second_derivative(0.0) == pytest.approx(1 / 3)


@settings(max_examples=40, deadline=None)
@given(
    kind=st.sampled_from(["euclidean", "hyperbolic", "power_exponential"]),
    n=st.integers(2, 5),
    r=st.floats(0.05, 6.0),
)
def test_H_identities_property(kind, n, r):
    p = make_profile(kind, q=2.5, a=0.7, n=n)
    hf = h_function(p, 6.0)
    H, H1, H2 = float(hf(r)), float(hf.derivative(r)), float(hf.second_derivative(r))
    assert H1 * H1 <= 2 * H * (1 + 1e-10)
    assert H2 + (n - 1) * float(p.dlog_psi(r)) * H1 == pytest.approx(1.0, abs=1e-10)
    assert H > 0 and H1 > 0


def test_power_exponential_H_has_finite_limit():
    # H(inf) - H(R) ~ 1/(2R) for q = 3, n = 3
    tail = [eval_H(PE3, 2 * R) - eval_H(PE3, R) for R in (10.0, 20.0)]
    assert tail[0] == pytest.approx(0.025, rel=0.05)
    assert tail[1] == pytest.approx(0.0125, rel=0.05)


# classifier -------------------------------------------------------------------


@pytest.mark.parametrize("desc,verdict", [
    ({"kind": "euclidean", "n": 3}, "complete"),
    ({"kind": "hyperbolic", "a": 1.0, "n": 3}, "complete"),
    ({"kind": "power_exponential", "q": 3.0, "n": 3}, "incomplete"),
])
def test_classifier(desc, verdict):
    assert classify_completeness(make_profile(desc)).verdict == verdict


def test_classifier_quadratic_threshold_is_never_incomplete():
    rep = classify_completeness(make_profile("power_exponential", q=2.0, n=3))
    assert rep.verdict in ("complete", "undetermined")
    assert 0.9 < rep.sigma < 1.1
    assert set(rep.to_dict()) >= {"verdict", "sigma", "fit_residual"}


# Laplacian and integrals ------------------------------------------------------


@settings(max_examples=30, deadline=None)
@given(n=st.integers(2, 6), seed=st.integers(0, 2**31 - 1), N=st.integers(9, 80))
def test_laplacian_of_r_squared_is_exact(n, seed, N):
    rng = np.random.default_rng(seed)
    h = rng.uniform(0.5, 2.0, N)
    nodes = np.concatenate([[0.0], np.cumsum(h)])
    g = RadialGrid(nodes / nodes[-1] * 3.0)
    p = make_profile("euclidean", n=n)
    lap = radial_laplacian(p, RadialField(g, g.nodes**2))
    assert np.allclose(lap.values, 2 * n, rtol=0, atol=1e-9)
    assert lap.stencil[0] == "center" and lap.stencil[-1] == "boundary"


def test_laplacian_constant_is_zero_and_m_matrix():
    g = RadialGrid.uniform(4.0, 40)
    from fdelab.geometry import laplacian_stencil

    for p in (EUC3, HYP2, PE3):
        st_ = laplacian_stencil(p, g)
        assert np.all(st_.upper > 0) and np.all(st_.lower >= 0)
        assert np.allclose(st_.apply(np.ones(41)), 0, atol=1e-9 * np.abs(st_.diag).max())


def test_laplacian_second_order_on_hyperbolic():
    p = make_profile("hyperbolic", n=3)
    errs = []
    for N in (40, 80, 160):
        g = RadialGrid.uniform(2.0, N)
        f = np.cosh(g.nodes)
        exact = 3 * np.cosh(g.nodes)  # f'' + 2 coth(r) f' with f = cosh
        errs.append(np.abs(radial_laplacian(p, RadialField(g, f)).values - exact).max())
    orders = np.log2(np.array(errs[:-1]) / errs[1:])
    assert np.all(orders > 1.8)


def test_ball_integrals():
    g = RadialGrid.uniform(2.0, 40)
    assert ball_integral(EUC3, g, np.ones(41), 1.0) == pytest.approx(4 * math.pi / 3, rel=1e-12)
    assert ball_volume(EUC3, 2.0, inner=1.0) == pytest.approx(4 * math.pi / 3 * 7, rel=1e-12)
    stacked = np.vstack([np.ones(41), 2 * np.ones(41)])
    assert np.allclose(ball_integral(EUC3, g, stacked, 2.0), [32 * math.pi / 3, 64 * math.pi / 3])
    with pytest.raises(ValidationError):
        ball_integral(EUC3, g, np.ones(41), 3.0)
