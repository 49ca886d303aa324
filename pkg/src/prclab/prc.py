"""Infinitesimal PRCs by the adjoint method, finite PRCs by direct simulation, and phase models."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import quad, solve_ivp
from scipy.interpolate import CubicSpline
from scipy.linalg import lu_solve

from prclab.errors import ConvergenceError, IntegrationError
from prclab.integrate import ZeroInput, _integrate_batch, as_input
from prclab.models import ModelDef
from prclab.orbit import CirclePartition, PeriodicOrbit, _block_matrix, factorize
from prclab.signals import PhaseSignal, trig_eval, uniform_grid

log = logging.getLogger(__name__)


@dataclass
class GradientCurve:
    """p_i = grad Theta at the orbit nodes, shape (N+1, n), with p_N = p_0."""

    partition: CirclePartition
    p: np.ndarray
    omega: float
    xi: float
    scheme: str
    cache: dict = field(default_factory=dict, repr=False, compare=False)

    def normalization_error(self, orbit: PeriodicOrbit, model: ModelDef) -> float:
        """max_i |<p_i, f(x_i)> - omega|."""
        F = model.f(orbit.x, 0.0, orbit.lam)
        return float(np.max(np.abs(np.einsum("ij,ij->i", self.p, F) - self.omega)))


@dataclass(frozen=True)
class Impulse:
    """Dirac input alpha * delta(t)."""

    alpha: float


@dataclass
class FinitePrc:
    theta: np.ndarray
    shift: np.ndarray              # wrapped to [-pi, pi)
    input: object
    eps: float
    t_star: np.ndarray | None = None

    def __post_init__(self):
        self.theta = np.asarray(self.theta, dtype=float)
        self.shift = np.asarray(self.shift, dtype=float)


def wrap(x):
    """Map to [-pi, pi)."""
    return np.mod(np.asarray(x) + np.pi, 2 * np.pi) - np.pi


def adjoint_weights(orbit: PeriodicOrbit) -> np.ndarray:
    """Diagonal of the normalization weighting P for the orbit's scheme."""
    N = orbit.N
    if orbit.scheme == "multiple_shooting":
        return np.full(N + 1, 1.0 / (N + 1))
    return orbit.partition.trapezoid_weights()


def adjoint_matrix(model: ModelDef, orbit: PeriodicOrbit) -> np.ndarray:
    """Bordered adjoint matrix [[A~, b],[v^T P, 1]] for the orbit's scheme.

    b is the tangent v_Pi with the closure block set to zero, so the computed
    curve closes exactly.
    """
    N, n = orbit.N, orbit.n
    blocks = orbit.cache.get("blocks")
    if blocks is None:
        raise ValueError("orbit carries no Newton blocks; solve it with newton_orbit")
    F, A = blocks["F"], blocks["A"]
    I = np.eye(n)
    if orbit.scheme == "multiple_shooting":
        Gt = np.broadcast_to(I, (N, n, n))
        Ht = np.transpose(blocks["Phi"], (0, 2, 1))
    elif orbit.scheme == "trapezoidal":
        k = (orbit.partition.h / (2 * orbit.omega))[:, None, None]
        At = np.transpose(A, (0, 2, 1))
        Gt = -I + k * At[:-1]
        Ht = -I - k * At[1:]
    else:
        raise ValueError(f"unknown scheme {orbit.scheme!r}")
    w = adjoint_weights(orbit)
    c = (w[:, None] * F).ravel()
    return _block_matrix(N, n, Gt, Ht, F[:-1], c, 1.0)


def adjoint_prc(model: ModelDef, orbit: PeriodicOrbit) -> tuple[GradientCurve, PhaseSignal]:
    """Gradient of the asymptotic phase along the orbit and the infinitesimal PRC q.

    Solves [[A~, b],[v^T P, 1]] [p; xi] = [0; omega]; q_i = <p_i, dfdu(x_i)>.
    q is returned on the uniform grid of N samples (spline-resampled when the
    orbit partition is not uniform).
    """
    N, n = orbit.N, orbit.n
    M = adjoint_matrix(model, orbit)
    lu = factorize(M, "adjoint bordered matrix")
    rhs = np.zeros(M.shape[0])
    rhs[-1] = orbit.omega
    sol = lu_solve(lu, rhs, check_finite=False)
    p = sol[:-1].reshape(N + 1, n).copy()
    xi = float(sol[-1])
    p[N] = p[0]
    g = GradientCurve(partition=orbit.partition, p=p, omega=orbit.omega, xi=xi, scheme=orbit.scheme)
    g.cache.update(matrix=M, lu=lu)
    return g, q_from_gradient(model, orbit, p)


def q_from_gradient(model: ModelDef, orbit: PeriodicOrbit, p) -> PhaseSignal:
    B = model.dfdu(orbit.x, 0.0, orbit.lam)
    return node_signal(orbit.partition, np.einsum("ij,ij->i", p, B))


def node_signal(part: CirclePartition, values) -> PhaseSignal:
    """PhaseSignal from closed node values (N+1,) on a partition."""
    values = np.asarray(values, dtype=float)
    if part.is_uniform:
        return PhaseSignal(values[:-1])
    sp = CubicSpline(part.theta, np.append(values[:-1], values[0]), bc_type="periodic")
    return PhaseSignal(sp(uniform_grid(part.N)))


# ---------------------------------------------------------------------------
# direct method


class _OrbitCurve:
    """Trigonometric interpolant of the orbit nodes, used for nearest-phase estimates."""

    def __init__(self, orbit: PeriodicOrbit, M: int = 4096):
        part = orbit.partition
        if part.is_uniform:
            self.nodes = orbit.x[:-1]
        else:
            sp = CubicSpline(part.theta, orbit.x, axis=0, bc_type="periodic")
            self.nodes = sp(uniform_grid(part.N))
        self.M = M
        self.grid = uniform_grid(M)
        self.fine = trig_eval(self.nodes, self.grid)
        self.diameter = float(np.max(np.linalg.norm(self.fine[:, None, :] - self.fine[None, ::16, :], axis=-1)))

    def nearest(self, X):
        """(theta*, distance) of each row of X to the curve."""
        X = np.atleast_2d(X)
        d2 = ((X[:, None, :] - self.fine[None, :, :]) ** 2).sum(-1)
        j = np.argmin(d2, axis=1)
        th = self.grid[j]
        # Newton on g(theta) = |x - c(theta)|^2 using the interpolant
        for _ in range(3):
            c0 = trig_eval(self.nodes, th)
            c1 = trig_eval(self.nodes, th, 1)
            c2 = trig_eval(self.nodes, th, 2)
            r = X - c0
            g1 = -2 * np.einsum("ij,ij->i", r, c1)
            g2 = 2 * (np.einsum("ij,ij->i", c1, c1) - np.einsum("ij,ij->i", r, c2))
            step = np.where(g2 > 0, -g1 / np.where(g2 > 0, g2, 1.0), 0.0)
            step = np.clip(step, -2 * np.pi / self.M, 2 * np.pi / self.M)
            th = th + step
        th = np.mod(th, 2 * np.pi)
        dist = np.linalg.norm(X - trig_eval(self.nodes, th), axis=1)
        return th, dist


def direct_prc(model: ModelDef, orbit: PeriodicOrbit, input=Impulse(1e-3), phases=None,
               eps: float | None = None, max_periods: int = 50, rtol: float = 1e-10,
               atol: float = 1e-12) -> FinitePrc:
    """Finite PRC by simulating the perturbed orbit until it returns near the cycle.

    For each phase theta_i the input is applied from x(theta_i) (an Impulse as
    a state jump, any other input signal over its support), the trajectory is
    flowed in whole periods until its distance to the orbit falls below
    ``eps`` and the asymptotic phase is read off by the nearest point on the
    orbit. The unperturbed orbit point is flowed alongside for the same time
    and read off the same way; the shift is the difference of the two phase
    estimates, wrapped to [-pi, pi). For an exact orbit this equals
    theta* - (omega t* + theta_i) and it cancels discretization bias in the
    orbit and in omega.
    """
    lam = orbit.lam
    n = model.n
    curve = _OrbitCurve(orbit)
    if eps is None:
        eps = 1e-6 * curve.diameter
    if not eps > 0:
        raise ValueError("eps must be positive")
    if phases is None:
        phases = orbit.theta[:-1]
    phases = np.atleast_1d(np.asarray(phases, dtype=float))
    m = phases.size
    x0 = trig_eval(curve.nodes, np.mod(phases, 2 * np.pi)).reshape(m, n)
    T = orbit.period
    groups = [(slice(None), lam)]

    if isinstance(input, Impulse):
        xp = x0 + input.alpha * model.dfdu(x0, 0.0, lam)
        xu = x0.copy()
        t_in = 0.0
    else:
        u = as_input(input)
        bps = [b for b in getattr(u, "breakpoints", ()) if b > 0]
        t_in = float(max(bps)) if bps else 0.0
        if t_in == 0.0 and not isinstance(u, ZeroInput):
            raise ValueError("direct_prc needs an input with finite support (breakpoints)")
        xp, xu = x0.copy(), x0.copy()
        knots = [0.0] + sorted(set(bps))
        for a, b in zip(knots[:-1], knots[1:]):
            X, _, _ = _integrate_batch(model, b - a, np.vstack([xp, xu]),
                                       [(slice(0, m), lam), (slice(m, 2 * m), lam)],
                                       _split_input(u, m), phi=False, dlam=False,
                                       rtol=rtol, atol=atol, t0=a)
            xp, xu = X[:m], X[m:]

    floor = eps
    active = np.ones(m, dtype=bool)
    shift = np.full(m, np.nan)
    t_star = np.full(m, np.nan)
    t = t_in
    # the unperturbed copy needs no convergence wait; align to whole periods for stable readout
    for k in range(max_periods + 1):
        if k > 0:
            idx = np.flatnonzero(active)
            X, _, _ = _integrate_batch(model, T, np.vstack([xp[idx], xu[idx]]), groups, ZeroInput(),
                                       phi=False, dlam=False, rtol=rtol, atol=atol)
            xp[idx], xu[idx] = X[:idx.size], X[idx.size:]
            t += T
        idx = np.flatnonzero(active)
        thp, dp = curve.nearest(xp[idx])
        thu, du = curve.nearest(xu[idx])
        done = dp <= floor + du
        shift[idx[done]] = wrap(thp[done] - thu[done])
        t_star[idx[done]] = t
        active[idx[done]] = False
        if not active.any():
            break
    if active.any():
        bad = phases[active]
        raise ConvergenceError(f"direct PRC did not converge within {max_periods} periods at "
                               f"{bad.size} phase(s), first theta={bad[0]:.4g}")
    if isinstance(input, Impulse) and input.alpha == 0:
        shift[:] = 0.0
    return FinitePrc(theta=phases, shift=shift, input=input, eps=eps, t_star=t_star)


def _split_input(u, m):
    """Batch input: u on the first m members (perturbed), zero on the rest."""

    def uu(t):
        t = np.asarray(t, dtype=float)
        out = np.zeros_like(t)
        out[:m] = u(t[:m])
        return out

    uu.breakpoints = getattr(u, "breakpoints", ())
    return uu


def ptc_from_prc(prc: FinitePrc) -> np.ndarray:
    """New phases theta + shift mod 2*pi."""
    return np.mod(prc.theta + prc.shift, 2 * np.pi)


def convolution_prc(q: PhaseSignal, omega: float, u, theta, t_end: float | None = None) -> np.ndarray:
    """First-order finite PRC: integral of q(omega s + theta) u(s) ds.

    An ``Impulse`` gives alpha q(theta) exactly. Other inputs are integrated
    over [0, t_end] (defaults to the last breakpoint of u).
    """
    theta = np.asarray(theta, dtype=float)
    if isinstance(u, Impulse):
        return u.alpha * q(theta)
    u = as_input(u)
    bps = sorted(b for b in getattr(u, "breakpoints", ()) if b > 0)
    if t_end is None:
        if not bps:
            if isinstance(u, ZeroInput):
                return np.zeros_like(theta)
            raise ValueError("convolution_prc needs t_end for inputs without finite support")
        t_end = bps[-1]
    pts = [b for b in bps if b < t_end]
    out = np.empty(theta.size)
    for i, th in enumerate(theta.reshape(-1)):
        val, _ = quad(lambda s: float(q(omega * s + th)) * float(u(s)), 0.0, t_end,
                      points=pts or None, limit=200, epsabs=1e-13, epsrel=1e-10)
        out[i] = val
    return out.reshape(theta.shape)


# ---------------------------------------------------------------------------
# phase models


@dataclass
class PhaseTrajectory:
    t: np.ndarray
    theta_unwrapped: np.ndarray
    theta: np.ndarray              # mod 2*pi
    y: np.ndarray | None = None


def simulate_phase_model(omega: float, q: PhaseSignal, u=None, theta0: float = 0.0,
                         t_end: float = 1.0, h_out: PhaseSignal | None = None, t_eval=None,
                         rtol: float = 1e-10, atol: float = 1e-12) -> PhaseTrajectory:
    """Integrate theta' = omega + q(theta) u(t); output y = h_out(theta) when given."""
    if not t_end > 0:
        raise ValueError("t_end must be positive")
    u = as_input(u)
    if t_eval is None:
        t_eval = np.linspace(0.0, t_end, 1001)
    t_eval = np.asarray(t_eval, dtype=float)

    def rhs(t, th):
        return omega + float(q(th[0])) * float(u(t))

    cuts = sorted(b for b in getattr(u, "breakpoints", ()) if 0 < b < t_end)
    knots = [0.0] + cuts + [t_end]
    ts, ths = [], []
    th = np.array([theta0], dtype=float)
    for a, b in zip(knots[:-1], knots[1:]):
        sel = t_eval[(t_eval >= a) & ((t_eval < b) | ((b == t_end) & (t_eval <= b)))]
        sol = solve_ivp(rhs, (a, b), th, method="DOP853", t_eval=sel, rtol=rtol, atol=atol)
        if sol.status != 0:
            raise IntegrationError(f"phase model integration failed: {sol.message}")
        ts.append(sol.t)
        ths.append(sol.y[0])
        th = sol.y[:, -1] if sol.t.size and sol.t[-1] == b else _final(rhs, a, b, th, rtol, atol)
    t = np.concatenate(ts)
    unw = np.concatenate(ths)
    wrapped = np.mod(unw, 2 * np.pi)
    y = h_out(wrapped) if h_out is not None else None
    return PhaseTrajectory(t=t, theta_unwrapped=unw, theta=wrapped, y=y)


def _final(rhs, a, b, th, rtol, atol):
    sol = solve_ivp(rhs, (a, b), th, method="DOP853", rtol=rtol, atol=atol)
    return sol.y[:, -1]


def _prc_function(prc):
    if isinstance(prc, PhaseSignal):
        return lambda th: float(prc(th))
    th = np.asarray(prc.theta, dtype=float)
    N = th.size
    if N >= 2 and np.allclose(th, uniform_grid(N), atol=1e-12):
        sig = PhaseSignal(prc.shift)
        return lambda x: float(sig(x))
    order = np.argsort(th)
    tt = np.append(th[order], th[order][0] + 2 * np.pi)
    vv = np.append(prc.shift[order], prc.shift[order][0])
    sp = CubicSpline(tt, vv, bc_type="periodic")
    return lambda x: float(sp(th[order][0] + np.mod(x - th[order][0], 2 * np.pi)))


def simulate_hybrid_phase_model(omega: float, prc, impulse_times, theta0: float = 0.0,
                                t_end: float = 1.0, t_eval=None) -> PhaseTrajectory:
    """theta' = omega between impulses, theta+ = theta + PRC(theta) at each impulse time.

    ``prc`` is a FinitePrc or a PhaseSignal (for the infinitesimal model pass
    alpha * q). The trajectory value at an impulse time is the post-jump phase.
    """
    tk = np.asarray(impulse_times, dtype=float).reshape(-1)
    if tk.size > 1 and np.any(np.diff(tk) <= 0):
        raise ValueError("impulse times must be strictly increasing")
    jump = _prc_function(prc)
    if t_eval is None:
        t_eval = np.linspace(0.0, t_end, 1001)
    t_eval = np.asarray(t_eval, dtype=float)
    # phase just after each impulse, in unwrapped form
    base = [(0.0, float(theta0))]
    th, tl = float(theta0), 0.0
    for t in tk:
        if t > t_end:
            break
        th = th + omega * (t - tl)
        th = th + jump(np.mod(th, 2 * np.pi))
        tl = t
        base.append((t, th))
    starts = np.array([b[0] for b in base])
    vals = np.array([b[1] for b in base])
    j = np.searchsorted(starts, t_eval, side="right") - 1
    unw = vals[j] + omega * (t_eval - starts[j])
    return PhaseTrajectory(t=t_eval, theta_unwrapped=unw, theta=np.mod(unw, 2 * np.pi))


def stroboscopic_map(omega: float, prc, period: float):
    """Circle map theta -> theta + PRC(theta) + omega*period (mod 2*pi) of periodic impulses."""
    jump = _prc_function(prc)
    return lambda th: np.mod(th + jump(np.mod(th, 2 * np.pi)) + omega * period, 2 * np.pi)
