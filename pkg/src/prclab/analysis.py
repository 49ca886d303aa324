"""Robustness ranking, identification by gradient descent, and PRC-shape classification."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from prclab.errors import NumericalError
from prclab.metrics import (PrcSpace, as_space, distance_info, horizontal_project, inner,
                            l2norm, norm_in_space, optimal_shift, shift_signal)
from prclab.models import ModelDef
from prclab.orbit import PeriodicOrbit, newton_orbit, solve_orbit
from prclab.prc import adjoint_prc
from prclab.sensitivity import SensitivityBundle, sensitivity_bundle
from prclab.signals import PhaseSignal

log = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# robustness


@dataclass
class RobustnessReport:
    param_names: tuple[str, ...]
    space: PrcSpace
    scaling: str
    R_omega: np.ndarray
    R_q: np.ndarray
    rho_omega: np.ndarray
    rho_q: np.ndarray
    groups: tuple | None = None
    degenerate: bool = False        # some R vector was all zero; rho left unnormalized

    @property
    def order_q(self) -> np.ndarray:
        """Parameter indices from least to most robust PRC (largest rho_q first)."""
        return np.argsort(-self.rho_q, kind="stable")

    @property
    def order_omega(self) -> np.ndarray:
        return np.argsort(-self.rho_omega, kind="stable")


def _normalize(R):
    m = np.max(np.abs(R)) if R.size else 0.0
    if m == 0:
        return R.copy(), True
    return R / m, False


def robustness(model: ModelDef, orbit: PeriodicOrbit, bundle: SensitivityBundle, space="D",
               scaling: str = "relative", groups=None) -> RobustnessReport:
    """Scalar robustness measures R^omega = |S^omega| and R^q = ||P^h S^q||_q.

    ``relative`` scaling multiplies each sensitivity by its parameter value and
    divides by the size of the characteristic (|omega| for omega, ||q||_2 for
    q; in spaces B and D the quotient norm already carries that division).
    """
    space = as_space(space)
    if scaling not in ("absolute", "relative"):
        raise ValueError("scaling must be 'absolute' or 'relative'")
    q = bundle.q
    if space.scale_invariant and l2norm(q) == 0:
        raise ValueError("robustness: zero PRC in a scale-invariant space")
    R_w = np.abs(bundle.S_omega).astype(float)
    R_q = np.empty(len(bundle.S_q))
    for j, sq in enumerate(bundle.S_q):
        R_q[j] = norm_in_space(space, q, horizontal_project(space, q, sq))
    if scaling == "relative":
        lam = np.abs(bundle.lam)
        R_w = lam * R_w / abs(bundle.omega)
        R_q = lam * R_q
        if not space.scale_invariant:
            R_q = R_q / l2norm(q)
    rho_w, dw = _normalize(R_w)
    rho_q, dq = _normalize(R_q)
    if dw or dq:
        log.warning("robustness: all-zero sensitivity vector, rho left unnormalized")
    return RobustnessReport(param_names=bundle.param_names, space=space, scaling=scaling, R_omega=R_w,
                            R_q=R_q, rho_omega=rho_w, rho_q=rho_q,
                            groups=tuple(groups) if groups is not None else None, degenerate=dw or dq)


# ---------------------------------------------------------------------------
# cost and gradient


@dataclass
class CostGradient:
    cost: float
    dist: float
    grad: np.ndarray
    sigma: float | None = None
    singular: bool = False          # distance at pi in B/D: gradient undefined


def _dsin_ratio(d):
    """d / sin(d) with a series guard near 0."""
    if d < 1e-4:
        return 1.0 + d * d / 6.0
    return d / np.sin(d)


def cost_gradient_signal(space, q: PhaseSignal, q_ref: PhaseSignal):
    """(V, d, L2 gradient of V = d^2/2 with respect to q, sigma*, singular flag)."""
    space = as_space(space)
    a, r = q.values, q_ref.values
    sigma = None
    if np.array_equal(a, r):
        if space.scale_invariant and not np.any(a):
            raise ValueError("cost: zero signal in a scale-invariant space")
        return 0.0, 0.0, np.zeros_like(a), (0.0 if space.shift_invariant else None), False
    if space.shift_invariant:
        s = optimal_shift(a, r)
        sigma = s.sigma
        r = shift_signal(r, sigma).values
    if space in (PrcSpace.A, PrcSpace.C):
        diff = a - r
        d = l2norm(diff)
        return 0.5 * d * d, d, diff, sigma, False
    na, nr = l2norm(a), l2norm(r)
    if na == 0 or nr == 0:
        raise ValueError("cost: zero signal in a scale-invariant space")
    u, v = a / na, r / nr
    d = float(2 * np.arctan2(np.linalg.norm(u - v), np.linalg.norm(u + v)))
    c = inner(a, r) / (na * nr)
    gc = r / (na * nr) - c * a / na**2
    if np.pi - d < 1e-8:
        return 0.5 * d * d, d, np.zeros_like(a), sigma, True
    g = -_dsin_ratio(d) * gc
    return 0.5 * d * d, d, g, sigma, False


def grad_cost(space, q: PhaseSignal, q_ref: PhaseSignal, S_q) -> CostGradient:
    """Gradient of V = dist(q, q_ref)^2 / 2 with respect to the parameters.

    Component j is the L2 pairing of the cost gradient with the horizontal
    projection of S^q_j; in the shift quotients sigma* is held fixed (it is a
    maximizer, so its variation does not contribute).
    """
    space = as_space(space)
    V, d, G, sigma, singular = cost_gradient_signal(space, q, q_ref)
    grad = np.zeros(len(S_q))
    if d > 0 and not singular:
        for j, sq in enumerate(S_q):
            grad[j] = inner(G, horizontal_project(space, q, sq))
    return CostGradient(cost=V, dist=d, grad=grad, sigma=sigma, singular=singular)


# ---------------------------------------------------------------------------
# identification


@dataclass
class IdentifyState:
    lam: np.ndarray
    cost: float
    grad: np.ndarray
    step: float
    iterations: int
    trace: list = field(default_factory=list)     # (lam, cost) per accepted iterate
    status: str = "running"
    boundary: bool = False
    dist: float = float("nan")
    orbit: PeriodicOrbit | None = field(default=None, repr=False)
    q: PhaseSignal | None = field(default=None, repr=False)


class _Evaluator:
    """Orbit, PRC and PRC sensitivities at a parameter point, warm-started from the last orbit."""

    def __init__(self, model, scheme, N, newton_tol, params):
        self.model, self.scheme, self.N, self.tol, self.params = model, scheme, N, newton_tol, params
        self.orbit = None
        self.evals = 0

    def orbit_at(self, lam):
        self.evals += 1
        if self.orbit is not None:
            try:
                return newton_orbit(self.model, lam, self.orbit, self.scheme, self.orbit.phase_cond, self.tol)
            except NumericalError:
                pass
        return solve_orbit(self.model, lam, N=self.N, scheme=self.scheme, tol=self.tol)

    def __call__(self, lam, space, q_ref, need_grad=True):
        orbit = self.orbit_at(lam)
        g, q = adjoint_prc(self.model, orbit)
        if need_grad:
            b = sensitivity_bundle(self.model, orbit, g, q, params=self.params)
            cg = grad_cost(space, q, q_ref, b.S_q)
        else:
            V, d, _, sigma, singular = cost_gradient_signal(space, q, q_ref)
            cg = CostGradient(V, d, np.zeros(len(self.params)), sigma, singular)
        return orbit, q, cg


def identify(model: ModelDef, q_ref: PhaseSignal, lam0, space="D", max_iter: int = 100,
             tol: float = 1e-12, ftol: float = 1e-14, step: float | None = None, c1: float = 1e-4,
             min_step: float | None = None, params=None, N: int | None = None,
             scheme: str = "trapezoidal", newton_tol: float = 1e-10, keep_sign: bool = True,
             callback=None) -> IdentifyState:
    """Fit parameters so that the model PRC matches q_ref in the chosen space.

    Gradient descent with Armijo backtracking: the search direction is the
    normalized negative gradient, the trial length starts at ``step`` (default
    10% of |lam0|), doubles after each accepted step and halves on rejection.
    A trial point where no orbit is found counts as a rejection; if every
    trial fails this way the run stops with ``boundary=True``. ``params``
    restricts the fit to a subset of parameters (names or indices).
    """
    space = as_space(space)
    lam = model.params(lam0).copy()
    idx = list(range(model.l)) if params is None else [model.index(p) if isinstance(p, str) else int(p)
                                                      for p in params]
    N = q_ref.N if N is None else N
    ev = _Evaluator(model, scheme, N, newton_tol, idx)
    orbit, q, cg = ev(lam, space, q_ref)
    ev.orbit = orbit
    if q.N != q_ref.N:
        raise ValueError("q_ref must be sampled on the model's orbit grid")
    L = float(np.linalg.norm(lam[idx]))
    s_len = float(step) if step is not None else 0.1 * L
    min_step = float(min_step) if min_step is not None else 1e-10 * max(L, 1.0)
    st = IdentifyState(lam=lam.copy(), cost=cg.cost, grad=cg.grad, step=s_len, iterations=0,
                       trace=[(lam.copy(), cg.cost)], dist=cg.dist, orbit=orbit, q=q)
    while True:
        gn = float(np.linalg.norm(cg.grad))
        if gn <= tol or cg.cost == 0:
            st.status = "gradient below tolerance"
            break
        if st.iterations >= max_iter:
            st.status = "max_iter reached"
            break
        direction = -cg.grad / gn
        accepted = False
        any_solved = False
        while s_len >= min_step:
            trial = lam.copy()
            trial[idx] += s_len * direction
            if keep_sign and np.any(np.sign(trial[idx]) != np.sign(lam[idx])):
                s_len *= 0.5
                continue
            try:
                t_orbit, t_q, t_cg = ev(trial, space, q_ref, need_grad=False)
            except (NumericalError, ValueError) as exc:
                log.debug("identify: trial %s failed (%s)", trial, exc)
                s_len *= 0.5
                continue
            any_solved = True
            if t_cg.cost <= cg.cost - c1 * s_len * gn:
                accepted = True
                break
            s_len *= 0.5
        if not accepted:
            st.boundary = not any_solved
            st.status = ("line search failed: no orbit at trial points (oscillation region boundary)"
                         if st.boundary else "line search could not decrease the cost")
            break
        prev = cg.cost
        ev.orbit = t_orbit
        t_orbit, t_q, cg = ev(trial, space, q_ref)
        ev.orbit = t_orbit
        lam, orbit, q = trial, t_orbit, t_q
        st.iterations += 1
        st.trace.append((lam.copy(), cg.cost))
        st.lam, st.cost, st.grad, st.dist, st.orbit, st.q = lam.copy(), cg.cost, cg.grad, cg.dist, orbit, q
        st.step = s_len
        if callback is not None:
            callback(st)
        log.info("identify it=%d cost=%.3e lam=%s", st.iterations, cg.cost, lam)
        if prev - cg.cost <= ftol:
            st.status = "cost change below tolerance"
            break
        s_len *= 2.0
    st.lam, st.grad = lam.copy(), cg.grad
    return st


# ---------------------------------------------------------------------------
# classification


def canonical_prc(kind: str, N: int = 256) -> PhaseSignal:
    """q_I = 1 - cos(theta) or q_II = sin(theta + pi) sampled on N points."""
    if kind == "I":
        return PhaseSignal.from_function(lambda t: 1 - np.cos(t), N)
    if kind == "II":
        return PhaseSignal.from_function(lambda t: np.sin(t + np.pi), N)
    raise ValueError("kind must be 'I' or 'II'")


@dataclass
class Classification:
    label: str                      # "class-q_I", "class-q_II" or "tie"
    d_I: float
    d_II: float
    space: PrcSpace


def classify(q: PhaseSignal, space="D", tie_tol: float = 1e-9) -> Classification:
    """Label q by the nearer canonical curve, 1 - cos(theta) or sin(theta + pi)."""
    space = as_space(space)
    if not np.any(q.values):
        raise ValueError("classify: zero PRC")
    d1 = distance_info(space, q, canonical_prc("I", q.N)).value
    d2 = distance_info(space, q, canonical_prc("II", q.N)).value
    if abs(d1 - d2) <= tie_tol:
        label = "tie"
    else:
        label = "class-q_I" if d1 < d2 else "class-q_II"
    return Classification(label=label, d_I=d1, d_II=d2, space=space)
