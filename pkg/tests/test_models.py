import dataclasses

import numpy as np
import pytest

from prclab.models import (GoodwinParams, ModelDef, MorrisLecarParams, RadialClockParams,
                           finite_difference_derivatives, get_model, goodwin_model, ml_gating,
                           morris_lecar_model, radial_clock_model)

MODELS = {
    "goodwin": goodwin_model(),
    "morris_lecar": morris_lecar_model(),
    "radial_clock": radial_clock_model(),
}


def _points(model, rng, k=100):
    lo, hi = (np.asarray(b, dtype=float) for b in model.box)
    return lo + (hi - lo) * rng.random((k, model.n))


def _cd(fun, v, step=1e-6):
    """Central differences of fun at v (1-D), stacked on a trailing axis."""
    v = np.asarray(v, dtype=float)
    cols = []
    for j in range(v.size):
        h = step * max(1.0, abs(v[j]))
        vp, vm = v.copy(), v.copy()
        vp[j] += h
        vm[j] -= h
        cols.append((fun(vp) - fun(vm)) / (2 * h))
    return np.stack(cols, axis=-1)


def _close(a, b, rtol=1e-5, ref=1.0):
    # ref is the size of the differenced function; central differences carry
    # roundoff of order eps * ref / step regardless of the derivative's size
    scale = max(np.abs(a).max(), np.abs(b).max(), 1e-3 * max(1.0, np.abs(ref).max()))
    return np.abs(a - b).max() <= rtol * scale


@pytest.mark.parametrize("name", sorted(MODELS))
def test_first_derivatives_match_central_differences(name, rng):
    m = MODELS[name]
    lam = m.params()
    for x in _points(m, rng):
        u = 0.1 * rng.standard_normal()
        f = m.f(x, u, lam)
        assert _close(m.dfdx(x, u, lam), _cd(lambda xx: m.f(xx, u, lam), x), ref=f)
        assert _close(m.dfdu(x, u, lam), _cd(lambda uu: m.f(x, uu[0], lam), [u])[..., 0], ref=f)
        assert _close(m.dfdlam(x, u, lam), _cd(lambda ll: m.f(x, u, ll), lam), ref=f)


@pytest.mark.parametrize("name", sorted(MODELS))
def test_second_derivatives_match_central_differences(name, rng):
    m = MODELS[name]
    lam = m.params()
    for x in _points(m, rng, 50):
        u = 0.1 * rng.standard_normal()
        J, B = m.dfdx(x, u, lam), m.dfdu(x, u, lam)
        assert _close(m.d2fdxdx(x, u, lam), _cd(lambda xx: m.dfdx(xx, u, lam), x), ref=J)
        assert _close(m.d2fdxdlam(x, u, lam), _cd(lambda ll: m.dfdx(x, u, ll), lam), ref=J)
        assert _close(m.d2fdlamdu(x, u, lam), _cd(lambda ll: m.dfdu(x, u, ll), lam), ref=B)
        # index order of d2fdxdu: differentiate dfdu by x
        assert _close(m.d2fdxdu(x, u, lam), _cd(lambda xx: m.dfdu(xx, u, lam), x), ref=B)


@pytest.mark.parametrize("name", sorted(MODELS))
def test_batched_evaluation_matches_pointwise(name, rng):
    m = MODELS[name]
    X = _points(m, rng, 7)
    lam = m.params()
    F = m.f(X, 0.0, lam)
    J = m.dfdx(X, 0.0, lam)
    for i, x in enumerate(X):
        np.testing.assert_allclose(F[i], m.f(x, 0.0, lam), rtol=1e-14, atol=1e-14)
        np.testing.assert_allclose(J[i], m.dfdx(x, 0.0, lam), rtol=1e-14, atol=1e-14)


@pytest.mark.parametrize("name", sorted(MODELS))
def test_finite_output_for_finite_input(name, rng):
    m = MODELS[name]
    lo, hi = (np.asarray(b) for b in m.box)
    X = lo - 5 * (hi - lo) + 11 * (hi - lo) * rng.random((200, m.n))
    for cb in (m.f, m.dfdx, m.dfdu, m.dfdlam, m.d2fdxdx, m.d2fdxdu, m.d2fdlamdu, m.d2fdxdlam):
        assert np.all(np.isfinite(cb(X, 0.0, m.params())))


def test_goodwin_shape_and_saturated_hill_limit():
    K = 2.5
    m = goodwin_model(GoodwinParams(K=K, tau=1.3))
    assert (m.n, m.l) == (3, 2)
    assert m.param_names == ("K", "tau")
    f = m.f(np.array([K, K, K]), 0.0, m.params())
    np.testing.assert_allclose(f, [-K, 0.0, 0.0], atol=1e-6 * K)


def test_goodwin_input_enters_inside_hill_term():
    m = goodwin_model()
    x = np.array([0.5, 0.6, 0.7])
    b = m.dfdu(x, 0.0, m.params())
    assert b[0] != 0 and b[1] == 0 and b[2] == 0
    # u shifts p inside the Hill function
    np.testing.assert_allclose(m.f(x, 0.05, m.params()), m.f(x + [0, 0, 0.05], 0.0, m.params())
                               * [1, 0, 0] + m.f(x, 0.0, m.params()) * [0, 1, 1], rtol=1e-14)
    assert m.h(x) == 0.5


def test_goodwin_hill_is_overflow_safe():
    m = goodwin_model(GoodwinParams(nu=200.0))
    x = np.array([[1.0, 1.0, 1e6], [1.0, 1.0, -3.0]])
    assert np.all(np.isfinite(m.f(x, 0.0, m.params())))
    assert np.all(np.isfinite(m.d2fdxdx(x, 0.0, m.params())))


@pytest.mark.parametrize("kw", [dict(K=0.0), dict(tau=-1.0), dict(nu=0.5)])
def test_goodwin_rejects_invalid_parameters(kw):
    with pytest.raises(ValueError):
        goodwin_model(GoodwinParams(**kw))


def test_morris_lecar_gating_identities():
    p = MorrisLecarParams()
    minf, _, _ = ml_gating(p, p.V1)
    _, winf, tauw = ml_gating(p, p.V3)
    assert minf == 0.5
    assert winf == 0.5
    assert tauw == 1.0


def test_morris_lecar_exposes_sweep_and_input_adds_to_current():
    m = morris_lecar_model()
    assert (m.n, m.l) == (2, 2)
    assert m.param_names == ("Iapp", "gCa")
    x = np.array([-20.0, 0.1])
    lam = m.params()
    lam2 = lam + [3.0, 0.0]
    np.testing.assert_allclose(m.f(x, 3.0, lam), m.f(x, 0.0, lam2), rtol=1e-15)
    np.testing.assert_allclose(m.dfdu(x, 0.0, lam), [1 / 20.0, 0.0])
    assert m.h(x) == -20.0


def test_morris_lecar_custom_sweep():
    m = morris_lecar_model(sweep=("gK", "phi", "Iapp"))
    assert m.l == 3
    np.testing.assert_allclose(m.params(), [8.0, 1 / 15, 45.0])
    with pytest.raises(ValueError):
        morris_lecar_model(sweep=("bogus",))


@pytest.mark.parametrize("kw", [dict(C=0.0), dict(gK=-1.0), dict(V2=0.0), dict(V4=0.0)])
def test_morris_lecar_rejects_invalid_parameters(kw):
    with pytest.raises(ValueError):
        morris_lecar_model(MorrisLecarParams(**kw))


def test_radial_clock_unit_circle_is_invariant():
    m = radial_clock_model(RadialClockParams(omega0=3.0, kappa=2.0))
    th = np.linspace(0, 2 * np.pi, 9)
    X = np.stack([np.cos(th), np.sin(th)], axis=1)
    F = m.f(X, 0.0, m.params())
    np.testing.assert_allclose(F, 3.0 * np.stack([-np.sin(th), np.cos(th)], axis=1), atol=1e-14)


@pytest.mark.parametrize("kw", [dict(omega0=0.0), dict(kappa=-1.0)])
def test_radial_clock_rejects_invalid_parameters(kw):
    with pytest.raises(ValueError):
        radial_clock_model(RadialClockParams(**kw))


def test_fd_model_matches_analytic_goodwin(rng):
    m = goodwin_model()
    fd = finite_difference_derivatives(m, 1e-6)
    lam = m.params()
    for x in _points(m, rng, 20):
        a, b = m.dfdx(x, 0.0, lam), fd.dfdx(x, 0.0, lam)
        assert np.abs(a - b).max() <= 1e-6 * max(np.abs(a).max(), 1.0)
        np.testing.assert_allclose(fd.dfdu(x, 0.0, lam), m.dfdu(x, 0.0, lam),
                                   atol=1e-6 * max(1.0, np.abs(m.dfdu(x, 0.0, lam)).max()))


def test_fd_model_is_idempotent(rng):
    m = goodwin_model()
    once = finite_difference_derivatives(m, 1e-6)
    twice = finite_difference_derivatives(once, 1e-6)
    x = _points(m, rng, 5)
    for name in ("dfdx", "dfdu", "dfdlam", "d2fdxdx", "d2fdxdlam"):
        a = getattr(once, name)(x, 0.0, m.params())
        b = getattr(twice, name)(x, 0.0, m.params())
        assert np.abs(a - b).max() <= 1e-12 * max(1.0, np.abs(a).max())


def test_fd_model_of_zero_field_is_zero(rng):
    zero = ModelDef(name="zero", n=2, param_names=("a",), lam=np.array([1.0]),
                    f=lambda x, u, lam: np.zeros_like(np.asarray(x, dtype=float)),
                    h=lambda x, lam=None: np.asarray(x)[..., 0],
                    dfdx=None, dfdu=None, dfdlam=None)
    fd = finite_difference_derivatives(zero)
    x = rng.standard_normal((4, 2))
    for name in ("dfdx", "dfdu", "dfdlam", "d2fdxdx", "d2fdxdu", "d2fdlamdu", "d2fdxdlam"):
        assert not np.any(getattr(fd, name)(x, 0.0, zero.lam))
    with pytest.raises(ValueError):
        finite_difference_derivatives(zero, 0.0)


def test_get_model_and_parameter_plumbing():
    m = get_model("goodwin", {"K": 4.0})
    np.testing.assert_allclose(m.params(), [4.0, 1.5])
    assert m.index("tau") == 1
    with pytest.raises(KeyError):
        m.index("nope")
    with pytest.raises(ValueError):
        m.params([1.0])
    assert dataclasses.replace(m).with_params([2.0, 2.0]).lam.tolist() == [2.0, 2.0]
    with pytest.raises(KeyError):
        get_model("unknown")
