import numpy as np
import pytest

from prclab import analysis
from prclab.analysis import (canonical_prc, classify, cost_gradient_signal, grad_cost, identify,
                             robustness)
from prclab.errors import NoCycleDetected
from prclab.metrics import PrcSpace, distance, inner, l2norm
from prclab.orbit import newton_orbit, solve_orbit
from prclab.prc import adjoint_prc
from prclab.sensitivity import sensitivity_bundle
from prclab.signals import PhaseSignal, uniform_grid

TH = uniform_grid(128)


@pytest.fixture(scope="module")
def goodwin_target(goodwin):
    o = solve_orbit(goodwin, [3.3, 1.8], N=128, scheme="trapezoidal")
    return adjoint_prc(goodwin, o)[1]


@pytest.mark.parametrize("space", list(PrcSpace))
def test_signal_gradient_matches_directional_derivative(space, rng):
    q = PhaseSignal(1 - np.cos(TH) + 0.3 * np.sin(2 * TH) + 0.1)
    r = PhaseSignal(np.sin(TH + 0.7) + 0.2 * np.cos(3 * TH) + 0.4)
    V, d, G, _, singular = cost_gradient_signal(space, q, r)
    assert V == pytest.approx(0.5 * distance(space, q, r) ** 2, rel=1e-12)
    assert not singular
    for _ in range(3):
        eta = rng.standard_normal(TH.size)
        t = 1e-6
        fd = (0.5 * distance(space, q + t * eta, r) ** 2 - 0.5 * distance(space, q - t * eta, r) ** 2) / (2 * t)
        assert inner(G, eta) == pytest.approx(fd, rel=1e-6, abs=1e-9)


@pytest.mark.parametrize("space", list(PrcSpace))
def test_parameter_gradient_matches_full_resolve(goodwin, goodwin_small, goodwin_target, space):
    o = goodwin_small
    g, q = adjoint_prc(goodwin, o)
    b = sensitivity_bundle(goodwin, o, g, q)
    cg = grad_cost(space, q, goodwin_target, b.S_q)
    fd = np.empty(goodwin.l)
    for j in range(goodwin.l):
        d = 1e-5 * o.lam[j]
        V = []
        for s in (1, -1):
            lam = o.lam.copy()
            lam[j] += s * d
            oo = newton_orbit(goodwin, lam, o, o.scheme, o.phase_cond, tol=1e-12)
            V.append(0.5 * distance(space, adjoint_prc(goodwin, oo)[1], goodwin_target) ** 2)
        fd[j] = (V[0] - V[1]) / (2 * d)
    np.testing.assert_allclose(cg.grad, fd, rtol=1e-5)
    assert cg.cost == pytest.approx(0.5 * cg.dist**2)


def test_gradient_vanishes_at_the_target(goodwin, goodwin_small):
    g, q = adjoint_prc(goodwin, goodwin_small)
    b = sensitivity_bundle(goodwin, goodwin_small, g, q)
    cg = grad_cost("D", q, q, b.S_q)
    assert cg.cost == 0 and not np.any(cg.grad)


def test_antipodal_signal_is_flagged():
    q = PhaseSignal(np.sin(TH))
    _, d, G, _, singular = cost_gradient_signal("B", q, -q)
    assert singular and d == pytest.approx(np.pi) and not np.any(G)


def test_identify_recovers_radial_gain(radial):
    o = solve_orbit(radial, [1.0, 1.0, 1.0], N=32, scheme="multiple_shooting")
    q_ref = adjoint_prc(radial, o)[1]
    st = identify(radial, q_ref, [1.0, 1.0, 1.6], space="A", params=["gain"], N=32,
                  scheme="multiple_shooting", max_iter=60)
    assert st.lam[2] == pytest.approx(1.0, abs=1e-5)
    assert st.lam[:2].tolist() == [1.0, 1.0]
    costs = [c for _, c in st.trace]
    assert all(b <= a for a, b in zip(costs, costs[1:]))
    assert not st.boundary


def test_identify_stops_when_parameter_is_invisible(radial):
    # the input gain only scales the PRC, so it is invisible in a scale-invariant space
    o = solve_orbit(radial, N=32, scheme="multiple_shooting")
    q_ref = adjoint_prc(radial, o)[1]
    st = identify(radial, q_ref, [1.0, 1.0, 2.0], space="B", params=["gain"], N=32,
                  scheme="multiple_shooting")
    assert st.iterations == 0 and st.dist < 1e-7


def test_identify_reports_boundary(radial, monkeypatch):
    o = solve_orbit(radial, [1.0, 1.0, 1.0], N=32, scheme="multiple_shooting")
    q_ref = adjoint_prc(radial, o)[1]
    calls = {"n": 0}
    real = analysis._Evaluator.orbit_at

    def no_cycle_after_first(self, lam):
        calls["n"] += 1
        if calls["n"] > 1:
            raise NoCycleDetected("no cycle detected")
        return real(self, lam)

    monkeypatch.setattr(analysis._Evaluator, "orbit_at", no_cycle_after_first)
    st = identify(radial, q_ref, [1.0, 1.0, 1.5], space="A", params=["gain"], N=32,
                  scheme="multiple_shooting")
    assert st.boundary and "boundary" in st.status
    assert st.lam[2] == 1.5


def test_identify_keeps_parameter_signs(radial):
    o = solve_orbit(radial, [1.0, 1.0, 1.0], N=32, scheme="multiple_shooting")
    q_ref = PhaseSignal(-o.lam[2] * adjoint_prc(radial, o)[1].values)       # PRC of gain -1
    st = identify(radial, q_ref, [1.0, 1.0, 1.0], space="A", params=["gain"], N=32,
                  scheme="multiple_shooting", max_iter=40)
    assert st.lam[2] > 0


def test_canonical_curves_classify_as_themselves():
    for space in ("A", "B", "C", "D"):
        assert classify(canonical_prc("I", 128), space).label == "class-q_I"
        assert classify(canonical_prc("II", 128), space).label == "class-q_II"


def test_classification_invariances():
    q = PhaseSignal(1 - np.cos(TH) + 0.4 * np.sin(TH))
    c0 = classify(q, "D")
    for v in (3.0 * q, q.shifted(1.234), 0.01 * q.shifted(4.0)):
        c = classify(v, "D")
        assert c.label == c0.label
        assert c.d_I == pytest.approx(c0.d_I, abs=1e-6)
        assert c.d_II == pytest.approx(c0.d_II, abs=1e-6)


def test_classification_tie_and_errors():
    # a signal equidistant from both canonical curves
    qI, qII = canonical_prc("I", 128), canonical_prc("II", 128)
    c = classify(qI, "A", tie_tol=10.0)
    assert c.label == "tie"
    with pytest.raises(ValueError):
        classify(PhaseSignal(np.zeros(16)))
    with pytest.raises(ValueError):
        canonical_prc("III")
    np.testing.assert_allclose(qII.values, -np.sin(TH), atol=1e-15)


def test_robustness_radial(radial, radial_orbits):
    o = radial_orbits["multiple_shooting"]
    b = sensitivity_bundle(radial, o)
    rep = robustness(radial, o, b, space="A", scaling="relative")
    speed, kappa, gain = 0, 1, 2
    assert rep.R_omega[speed] == pytest.approx(1.0, rel=1e-9)
    assert rep.R_q[speed] < 1e-7 and rep.R_q[kappa] < 1e-7
    assert rep.R_q[gain] == pytest.approx(1.0, rel=1e-8)
    assert rep.order_q[0] == gain and rep.rho_q[gain] == 1.0
    # in scale-invariant spaces the gain is invisible and every R^q vanishes
    rep = robustness(radial, o, b, space="D")
    assert np.abs(rep.R_q).max() < 1e-7
    with pytest.raises(ValueError):
        robustness(radial, o, b, scaling="bogus")


def test_robustness_degenerate_flag(radial, radial_orbits):
    o = radial_orbits["multiple_shooting"]
    b = sensitivity_bundle(radial, o, params=["kappa"])
    b.S_q = [PhaseSignal(np.zeros(o.N))]
    rep = robustness(radial, o, b, space="A")
    assert rep.degenerate and rep.rho_q.tolist() == [0.0]


def test_robustness_ranking_is_stable_under_refinement(goodwin, goodwin_small, goodwin_orbits):
    reps = []
    for o in (goodwin_small, goodwin_orbits["trapezoidal"]):
        reps.append(robustness(goodwin, o, sensitivity_bundle(goodwin, o), space="D"))
    assert reps[0].order_q.tolist() == reps[1].order_q.tolist()
    assert reps[0].order_omega.tolist() == reps[1].order_omega.tolist()
    np.testing.assert_allclose(reps[0].R_q, reps[1].R_q, rtol=1e-2)
    assert max(reps[1].rho_q) == 1.0 and max(reps[1].rho_omega) == 1.0


def test_absolute_and_relative_scaling(goodwin, goodwin_small):
    b = sensitivity_bundle(goodwin, goodwin_small)
    ra = robustness(goodwin, goodwin_small, b, space="A", scaling="absolute")
    rr = robustness(goodwin, goodwin_small, b, space="A", scaling="relative")
    np.testing.assert_allclose(rr.R_q, np.abs(b.lam) * ra.R_q / l2norm(b.q), rtol=1e-14)
    np.testing.assert_allclose(rr.R_omega, np.abs(b.lam) * ra.R_omega / b.omega, rtol=1e-14)
