"""Periodic orbits by Newton's method on the discretized boundary value problem.

Unknowns are the closed discrete curve x_0..x_N on a circle partition and the
angular frequency omega. Two one-step residuals are supported:

* ``multiple_shooting``: r_i = phi(h_i/omega, x_i) - x_{i+1}
* ``trapezoidal``:       r_i = x_{i+1} - x_i - h_i/(2 omega) (f_i + f_{i+1})

completed by the closure r_N = x_N - x_0 and a scalar phase condition.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from typing import Literal

import numpy as np
from scipy.integrate import solve_ivp
from scipy.interpolate import CubicSpline
from scipy.linalg import LinAlgWarning, lu_factor, lu_solve
from scipy.linalg.lapack import dgecon
from scipy.signal import resample

from prclab.errors import IntegrationError, NewtonError, NoCycleDetected, SingularSystemError
from prclab.integrate import segment_flows
from prclab.models import ModelDef

log = logging.getLogger(__name__)

SCHEMES = ("multiple_shooting", "trapezoidal")
Scheme = Literal["multiple_shooting", "trapezoidal"]

ORBIT_RTOL = 1e-11
ORBIT_ATOL = 1e-13
COND_LIMIT = 1e12


@dataclass(frozen=True)
class CirclePartition:
    theta: np.ndarray

    def __post_init__(self):
        th = np.asarray(self.theta, dtype=float)
        if th.ndim != 1 or th.size < 3:
            raise ValueError("partition needs at least 3 phases")
        if th[0] != 0.0 or not np.isclose(th[-1], 2 * np.pi, rtol=0, atol=1e-12):
            raise ValueError("partition must start at 0 and end at 2*pi")
        if np.any(np.diff(th) <= 0):
            raise ValueError("partition must be strictly increasing")
        th = th.copy()
        th[-1] = 2 * np.pi
        object.__setattr__(self, "theta", th)

    @classmethod
    def uniform(cls, N: int) -> "CirclePartition":
        return cls(np.linspace(0.0, 2 * np.pi, N + 1))

    @property
    def N(self) -> int:
        return self.theta.size - 1

    @property
    def h(self) -> np.ndarray:
        return np.diff(self.theta)

    @property
    def is_uniform(self) -> bool:
        h = self.h
        return bool(np.allclose(h, h[0], rtol=1e-12, atol=0))

    def trapezoid_weights(self) -> np.ndarray:
        """Node weights of the trapezoid rule on [0, 2 pi], normalized to sum to one."""
        h = self.h
        w = np.zeros(self.N + 1)
        w[:-1] += h / 2
        w[1:] += h / 2
        return w / (2 * np.pi)


@dataclass(frozen=True)
class PhaseCondition:
    """Scalar condition Psi(x_0) = 0 anchoring the phase origin.

    ``component``: Psi = x_0[k] - level.
    ``orthogonality``: Psi = <x_0 - ref, tangent>.
    Neither depends on the parameters, so dPsi/dlam = 0.
    """

    kind: Literal["component", "orthogonality"]
    k: int = 0
    level: float = 0.0
    ref: np.ndarray | None = None
    tangent: np.ndarray | None = None

    def value(self, x0) -> float:
        x0 = np.asarray(x0, dtype=float)
        if self.kind == "component":
            return float(x0[self.k] - self.level)
        return float(np.dot(x0 - self.ref, self.tangent))

    def grad(self, n: int) -> np.ndarray:
        if self.kind == "component":
            g = np.zeros(n)
            g[self.k] = 1.0
            return g
        return np.asarray(self.tangent, dtype=float)

    @classmethod
    def anchor_at(cls, model: ModelDef, x_ref, lam=None, curve=None) -> "PhaseCondition":
        """Component anchor through ``x_ref`` on the most transversal coordinate.

        The coordinate is the one whose velocity at x_ref is largest relative
        to its oscillation amplitude along ``curve`` (when given).
        """
        lam = model.params(lam)
        x_ref = np.asarray(x_ref, dtype=float)
        v = np.abs(model.f(x_ref, 0.0, lam))
        if curve is not None:
            amp = np.ptp(np.asarray(curve), axis=0)
            v = v / np.where(amp > 0, amp, np.inf)
        k = int(np.argmax(v))
        if v[k] == 0:
            raise SingularSystemError("phase anchor: reference point is an equilibrium")
        return cls("component", k=k, level=float(x_ref[k]))

    @classmethod
    def orthogonal_at(cls, model: ModelDef, x_ref, lam=None) -> "PhaseCondition":
        lam = model.params(lam)
        x_ref = np.asarray(x_ref, dtype=float)
        return cls("orthogonality", ref=x_ref.copy(), tangent=np.asarray(model.f(x_ref, 0.0, lam)))

    def to_dict(self) -> dict:
        if self.kind == "component":
            return {"kind": "component", "k": self.k, "level": self.level}
        return {"kind": "orthogonality", "ref": list(map(float, self.ref)),
                "tangent": list(map(float, self.tangent))}


@dataclass
class PeriodicOrbit:
    partition: CirclePartition
    x: np.ndarray                  # (N+1, n), x[N] == x[0]
    omega: float
    scheme: str
    residual_norm: float
    lam: np.ndarray
    phase_cond: PhaseCondition | None = None
    iterations: int = 0
    # factorization and per-segment blocks at the solution, reused downstream
    cache: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def N(self) -> int:
        return self.partition.N

    @property
    def n(self) -> int:
        return self.x.shape[1]

    @property
    def theta(self) -> np.ndarray:
        return self.partition.theta

    @property
    def period(self) -> float:
        return 2 * np.pi / self.omega

    def tangent(self, model: ModelDef) -> np.ndarray:
        """v_i = f(x_i, 0, lam) at every node, shape (N+1, n)."""
        return model.f(self.x, 0.0, self.lam)


# ---------------------------------------------------------------------------
# residual and bordered Jacobian


def _unpack(z, N, n):
    return z[:-1].reshape(N + 1, n), z[-1]


def _segments(model, part, x, omega, lam, phi, rtol, atol):
    return segment_flows(model, part.h / omega, x[:-1], lam, phi=phi, rtol=rtol, atol=atol)


def residual(model: ModelDef, part: CirclePartition, x, omega, lam, scheme: str,
             phase_cond: PhaseCondition, rtol=ORBIT_RTOL, atol=ORBIT_ATOL, _seg=None) -> np.ndarray:
    """Stacked residual (r_0, ..., r_{N-1}, r_N, r_Psi)."""
    N, n = part.N, x.shape[1]
    h = part.h
    if scheme == "trapezoidal":
        F = model.f(x, 0.0, lam)
        r = x[1:] - x[:-1] - (h / (2 * omega))[:, None] * (F[:-1] + F[1:])
    elif scheme == "multiple_shooting":
        xe = _seg[0] if _seg is not None else _segments(model, part, x, omega, lam, False, rtol, atol)[0]
        r = xe - x[1:]
    else:
        raise ValueError(f"unknown scheme {scheme!r}")
    return np.concatenate([r.ravel(), x[N] - x[0], [phase_cond.value(x[0])]])


def _block_matrix(N, n, G, Hm, b, c, d):
    """Assemble [[A, b],[c^T, d]] with A rows G_i x_i - H_i x_{i+1} and the closure row."""
    size = (N + 1) * n + 1
    M = np.zeros((size, size))
    for i in range(N):
        r = slice(i * n, (i + 1) * n)
        M[r, i * n:(i + 1) * n] = G[i]
        M[r, (i + 1) * n:(i + 2) * n] = -Hm[i]
    rc = slice(N * n, (N + 1) * n)
    M[rc, 0:n] = -np.eye(n)
    M[rc, N * n:(N + 1) * n] = np.eye(n)
    if b is not None:
        M[:N * n, -1] = b.ravel()
    M[-1, :-1] = c
    M[-1, -1] = d
    return M


def orbit_blocks(model: ModelDef, part: CirclePartition, x, omega, lam, scheme: str,
                 rtol=ORBIT_RTOL, atol=ORBIT_ATOL) -> dict:
    """Table blocks G_i, H_i, b_i for the chosen scheme, plus data reused later."""
    N, n = part.N, x.shape[1]
    h = part.h
    I = np.eye(n)
    F = model.f(x, 0.0, lam)
    A = model.dfdx(x, 0.0, lam)
    out = {"F": F, "A": A}
    if scheme == "trapezoidal":
        k = (h / (2 * omega))[:, None, None]
        out["G"] = -I - k * A[:-1]
        out["H"] = -I + k * A[1:]
        # exact d r_i / d omega for the trapezoidal residual
        out["b"] = (h / (2 * omega**2))[:, None] * (F[:-1] + F[1:])
    else:
        xe, Phi, _ = _segments(model, part, x, omega, lam, True, rtol, atol)
        out["xe"] = xe
        out["Phi"] = Phi
        out["G"] = Phi
        out["H"] = np.broadcast_to(I, (N, n, n))
        out["b"] = -(h / omega**2)[:, None] * model.f(xe, 0.0, lam)
    return out


def bordered_matrix(blocks: dict, N: int, n: int, phase_cond: PhaseCondition) -> np.ndarray:
    c = np.zeros((N + 1) * n)
    c[:n] = phase_cond.grad(n)
    return _block_matrix(N, n, blocks["G"], blocks["H"], blocks["b"], c, 0.0)


def factorize(M: np.ndarray, what: str = "bordered system"):
    """LU factors of M; raises SingularSystemError past the condition limit."""
    if not np.all(np.isfinite(M)):
        raise SingularSystemError(f"{what}: non-finite entries")
    with warnings.catch_warnings():
        # exact singularity is reported below through the condition estimate
        warnings.simplefilter("ignore", LinAlgWarning)
        lu = lu_factor(M, check_finite=False)
    anorm = np.abs(M).sum(axis=0).max()
    rcond, info = dgecon(lu[0], anorm, norm="1")
    if info != 0 or rcond < 1.0 / COND_LIMIT:
        raise SingularSystemError(f"{what}: condition estimate {1.0 / max(rcond, 1e-300):.3g} exceeds "
                                  f"{COND_LIMIT:.0e} (degenerate phase condition or non-hyperbolic orbit)")
    return lu


# ---------------------------------------------------------------------------


def newton_orbit(model: ModelDef, lam=None, guess=None, scheme: Scheme = "trapezoidal",
                 phase_cond: PhaseCondition | None = None, tol: float = 1e-10, max_iter: int = 50,
                 partition: CirclePartition | None = None, rtol: float = ORBIT_RTOL,
                 atol: float = ORBIT_ATOL) -> PeriodicOrbit:
    """Solve the discretized orbit problem by damped Newton iterations.

    ``guess`` is a PeriodicOrbit or a pair (x, omega) with x of shape (N+1, n)
    on ``partition`` (uniform when omitted). The step solves the bordered
    system [[A, b],[c^T, d]] [dx; domega] = -[r; r_Psi]; steps are halved
    (down to 2**-20) until the residual norm decreases.
    """
    if scheme not in SCHEMES:
        raise ValueError(f"unknown scheme {scheme!r}")
    lam = model.params(lam)
    if isinstance(guess, PeriodicOrbit):
        x, omega = guess.x.copy(), float(guess.omega)
        partition = partition or guess.partition
        phase_cond = phase_cond or guess.phase_cond
    else:
        x, omega = guess
        x = np.array(x, dtype=float)
        omega = float(omega)
    N = x.shape[0] - 1
    n = model.n
    if x.shape != (N + 1, n):
        raise ValueError(f"guess has shape {x.shape}, expected (N+1, {n})")
    part = partition or CirclePartition.uniform(N)
    if part.N != N:
        raise ValueError("guess and partition disagree on N")
    if not tol > 0:
        raise ValueError("tol must be positive")
    if phase_cond is None:
        phase_cond = PhaseCondition.anchor_at(model, x[0], lam, curve=x)
    x[N] = x[0]

    def res(z, seg=None):
        xx, ww = _unpack(z, N, n)
        if ww <= 0:
            return None
        try:
            return residual(model, part, xx, ww, lam, scheme, phase_cond, rtol, atol, _seg=seg)
        except IntegrationError:
            return None

    z = np.concatenate([x.ravel(), [omega]])
    it = 0
    r = res(z)
    if r is None or not np.all(np.isfinite(r)):
        raise NewtonError("residual undefined at the initial guess")
    rn = np.abs(r).max()
    while rn > tol:
        if it >= max_iter:
            raise NewtonError(f"Newton did not converge in {max_iter} iterations (|r|={rn:.3g})")
        xx, ww = _unpack(z, N, n)
        blocks = orbit_blocks(model, part, xx, ww, lam, scheme, rtol, atol)
        M = bordered_matrix(blocks, N, n, phase_cond)
        lu = factorize(M, "orbit Newton matrix")
        dz = -lu_solve(lu, r, check_finite=False)
        step = 1.0
        while True:
            zt = z + step * dz
            rt = res(zt)
            if rt is not None and np.all(np.isfinite(rt)):
                rtn = np.abs(rt).max()
                if rtn < rn or rtn <= tol:
                    break
            step *= 0.5
            if step < 2.0**-20:
                raise NewtonError(f"line search failed at iteration {it} (|r|={rn:.3g})")
        z, r, rn = zt, rt, rtn
        it += 1
        log.debug("newton %s it=%d |r|=%.3e step=%g", scheme, it, rn, step)

    xx, ww = _unpack(z, N, n)
    xx = xx.copy()
    xx[N] = xx[0]
    orbit = PeriodicOrbit(partition=part, x=xx, omega=float(ww), scheme=scheme, residual_norm=float(rn),
                          lam=lam.copy(), phase_cond=phase_cond, iterations=it)
    blocks = orbit_blocks(model, part, xx, ww, lam, scheme, rtol, atol)
    M = bordered_matrix(blocks, N, n, phase_cond)
    orbit.cache.update(blocks=blocks, matrix=M, lu=factorize(M, "orbit bordered matrix"),
                       rtol=rtol, atol=atol)
    if ww <= 0:
        raise NewtonError("Newton converged to a non-positive frequency")
    return orbit


# ---------------------------------------------------------------------------


def _find_peaks(t, y):
    """Times and values of strict local maxima of sampled y, refined by a parabola."""
    i = np.flatnonzero((y[1:-1] > y[:-2]) & (y[1:-1] >= y[2:])) + 1
    y0, y1, y2 = y[i - 1], y[i], y[i + 1]
    den = y0 - 2 * y1 + y2
    off = np.where(den != 0, 0.5 * (y0 - y2) / np.where(den != 0, den, 1.0), 0.0)
    dt = t[1] - t[0]
    return t[i] + off * dt, y1 - 0.25 * (y0 - y2) * off


def initial_guess(model: ModelDef, lam=None, x_seed=None, settle_time: float | None = None,
                  N: int = 256, partition: CirclePartition | None = None,
                  max_window: float | None = None, samples_per_unit: float | None = None):
    """Simulate to steady state, detect one cycle at a maximum of h, resample it.

    Returns (x, omega) with x of shape (N+1, n) on the partition (uniform by
    default), x[0] at the detected maximum of the output. Raises
    NoCycleDetected when no sustained oscillation is found.
    """
    lam = model.params(lam)
    x_seed = np.asarray(model.x_seed if x_seed is None else x_seed, dtype=float)
    settle = float(model.settle_time if settle_time is None else settle_time)
    part = partition or CirclePartition.uniform(N)
    window = float(max_window if max_window is not None else max(settle / 2, 1.0))

    def rhs(t, x):
        return model.f(x, 0.0, lam)

    kw = dict(method="DOP853", rtol=1e-10, atol=1e-12)
    sol = solve_ivp(rhs, (0.0, settle), x_seed, method="DOP853", rtol=1e-8, atol=1e-10)
    if sol.status != 0:
        raise NoCycleDetected(f"no cycle detected: settling integration failed ({sol.message})")
    xs = sol.y[:, -1]
    sol = solve_ivp(rhs, (0.0, window), xs, dense_output=True, **kw)
    if sol.status != 0:
        raise NoCycleDetected(f"no cycle detected: integration failed ({sol.message})")
    # sample densely relative to the step sizes the integrator chose
    nsamp = int(max(20000, 50 * len(sol.t)))
    t = np.linspace(0.0, window, nsamp)
    X = sol.sol(t).T
    y = np.asarray(model.h(X, lam), dtype=float)
    amp = float(np.ptp(y[nsamp // 2:]))
    scale = max(1.0, float(np.max(np.abs(y))))
    if amp <= 1e-6 * scale:
        raise NoCycleDetected("no cycle detected: trajectory settles to an equilibrium")
    tp, yp = _find_peaks(t, y)
    # keep only the global maxima of each cycle (peaks near the top of the range)
    top = yp >= y.max() - 0.05 * amp
    tp, yp = tp[top], yp[top]
    if tp.size < 3:
        raise NoCycleDetected("no cycle detected within the observation window")
    periods = np.diff(tp)
    T = periods[-1]
    if abs(periods[-1] - periods[-2]) > 1e-3 * T or abs(yp[-1] - yp[-2]) > 1e-3 * amp:
        raise NoCycleDetected("no cycle detected: oscillation has not settled (amplitude or period drifting)")
    t0 = tp[-2]
    omega = 2 * np.pi / T
    # resample one cycle by a fresh integration from the peak, for accuracy
    x0 = sol.sol(t0)
    ts = part.theta / omega
    cyc = solve_ivp(rhs, (0.0, ts[-1]), x0, t_eval=ts, **kw)
    x = cyc.y.T.copy()
    x[-1] = x[0]
    return x, omega


def resample_orbit(orbit: PeriodicOrbit, N_new: int | None = None,
                   partition: CirclePartition | None = None) -> PeriodicOrbit:
    """Periodic interpolation of the orbit onto a new partition (a guess for Newton).

    Trigonometric (FFT) interpolation when both partitions are uniform,
    periodic cubic splines otherwise.
    """
    if partition is None:
        if N_new is None or N_new < 4:
            raise ValueError("N_new must be >= 4")
        partition = CirclePartition.uniform(N_new)
    N_new = partition.N
    src = orbit.partition
    if src.is_uniform and partition.is_uniform:
        if N_new == src.N:
            xn = orbit.x.copy()
        else:
            xn = np.empty((N_new + 1, orbit.n))
            xn[:-1] = resample(orbit.x[:-1], N_new, axis=0)
            xn[-1] = xn[0]
    else:
        sp = CubicSpline(src.theta, orbit.x, axis=0, bc_type="periodic")
        xn = sp(partition.theta)
        xn[-1] = xn[0]
    return PeriodicOrbit(partition=partition, x=xn, omega=orbit.omega, scheme=orbit.scheme,
                         residual_norm=float("nan"), lam=orbit.lam.copy(), phase_cond=orbit.phase_cond)


def solve_orbit(model: ModelDef, lam=None, N: int = 256, scheme: Scheme = "trapezoidal",
                x_seed=None, settle_time=None, phase_cond=None, tol: float = 1e-10,
                max_iter: int = 50, coarse_N: int | None = None, **kw) -> PeriodicOrbit:
    """initial_guess followed by newton_orbit (optionally through a coarse grid first)."""
    lam = model.params(lam)
    if coarse_N:
        x, w = initial_guess(model, lam, x_seed, settle_time, N=coarse_N)
        coarse = newton_orbit(model, lam, (x, w), scheme, phase_cond, tol, max_iter, **kw)
        return newton_orbit(model, lam, resample_orbit(coarse, N), scheme, coarse.phase_cond, tol, max_iter, **kw)
    x, w = initial_guess(model, lam, x_seed, settle_time, N=N)
    return newton_orbit(model, lam, (x, w), scheme, phase_cond, tol, max_iter, **kw)
