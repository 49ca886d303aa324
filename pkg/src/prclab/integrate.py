"""Initial-value integration of a model and its variational equations.

All flows are integrated with SciPy's DOP853 on one combined system: the
state, optionally the fundamental matrix dphi/dx0 and the parameter
sensitivity dphi/dlam. Batches of initial conditions (each with its own
duration) are stacked into the same system and integrated in a normalized
time s in [0, 1], so a batch shares one step sequence.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.integrate import solve_ivp

from prclab.errors import IntegrationError
from prclab.models import ModelDef

RTOL = 1e-9
ATOL = 1e-11


# ---------------------------------------------------------------------------
# input signals; each is callable on arrays of time


class ZeroInput:
    breakpoints: tuple[float, ...] = ()

    def __call__(self, t):
        return np.zeros_like(np.asarray(t, dtype=float))

    def __repr__(self):
        return "ZeroInput()"


@dataclass(frozen=True)
class ConstantInput:
    value: float
    breakpoints: tuple[float, ...] = ()

    def __call__(self, t):
        return np.full_like(np.asarray(t, dtype=float), self.value)


@dataclass(frozen=True)
class RectPulse:
    """``amplitude`` on [start, start + width), zero elsewhere."""

    amplitude: float
    width: float
    start: float = 0.0

    @property
    def breakpoints(self) -> tuple[float, ...]:
        return (self.start, self.start + self.width)

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        on = (t >= self.start) & (t < self.start + self.width)
        return np.where(on, self.amplitude, 0.0)


@dataclass(frozen=True)
class Sinusoid:
    amplitude: float
    omega: float
    phase: float = 0.0
    breakpoints: tuple[float, ...] = ()

    def __call__(self, t):
        return self.amplitude * np.sin(self.omega * np.asarray(t, dtype=float) + self.phase)


def as_input(u) -> Callable:
    if u is None:
        return ZeroInput()
    if np.isscalar(u):
        return ConstantInput(float(u))
    return u


# ---------------------------------------------------------------------------


@dataclass
class FlowResult:
    x_end: np.ndarray
    Phi: np.ndarray | None = None
    dphidlam: np.ndarray | None = None
    dphidt: np.ndarray | None = None


def _integrate_batch(model: ModelDef, durations, x0, lam_groups, u, *, phi: bool, dlam: bool,
                     rtol: float, atol: float, t0=0.0):
    """Integrate m members in normalized time.

    ``lam_groups`` is a list of (index array, lam) pairs covering all members.
    Returns (x_end, Phi, Psi) with shapes (m, n), (m, n, n), (m, n, l).
    """
    x0 = np.atleast_2d(np.asarray(x0, dtype=float))
    m, n = x0.shape
    l = model.l
    dur = np.broadcast_to(np.asarray(durations, dtype=float), (m,)).copy()
    t0 = np.broadcast_to(np.asarray(t0, dtype=float), (m,)).copy()
    nx, nphi = m * n, (m * n * n if phi else 0)
    npsi = m * n * l if dlam else 0

    y0 = [x0.ravel()]
    if phi:
        y0.append(np.broadcast_to(np.eye(n), (m, n, n)).ravel())
    if dlam:
        y0.append(np.zeros(npsi))
    y0 = np.concatenate(y0)
    scale = dur[:, None]

    def rhs(s, y):
        x = y[:nx].reshape(m, n)
        uu = u(t0 + s * dur)
        fx = np.empty((m, n))
        A = np.empty((m, n, n)) if (phi or dlam) else None
        fl = np.empty((m, n, l)) if dlam else None
        for idx, lam in lam_groups:
            ui = uu[idx]
            fx[idx] = model.f(x[idx], ui, lam)
            if A is not None:
                A[idx] = model.dfdx(x[idx], ui, lam)
            if dlam:
                fl[idx] = model.dfdlam(x[idx], ui, lam)
        out = [(scale * fx).ravel()]
        if phi:
            P = y[nx:nx + nphi].reshape(m, n, n)
            out.append((scale[:, :, None] * (A @ P)).ravel())
        if dlam:
            S = y[nx + nphi:].reshape(m, n, l)
            out.append((scale[:, :, None] * (A @ S + fl)).ravel())
        return np.concatenate(out)

    if not np.all(np.isfinite(y0)):
        raise IntegrationError("non-finite initial state")
    if np.all(dur == 0):
        yend = y0
    else:
        sol = solve_ivp(rhs, (0.0, 1.0), y0, method="DOP853", rtol=rtol, atol=atol)
        if sol.status != 0:
            raise IntegrationError(f"integration failed: {sol.message}")
        yend = sol.y[:, -1]
    if not np.all(np.isfinite(yend)):
        raise IntegrationError("non-finite state encountered")
    xe = yend[:nx].reshape(m, n)
    P = yend[nx:nx + nphi].reshape(m, n, n) if phi else None
    S = yend[nx + nphi:].reshape(m, n, l) if dlam else None
    return xe, P, S


def flow(model: ModelDef, t, x0, u=None, lam=None, *, phi: bool = False, dlam: bool = False,
         dphidt: bool = False, rtol: float = RTOL, atol: float = ATOL) -> FlowResult:
    """Solution phi(t, x0, u) and, on request, its derivatives.

    ``x0`` may be a single state (n,) or a batch (m, n); ``t`` a scalar or
    one duration per member. Inputs with a ``breakpoints`` attribute are
    integrated piecewise between breakpoints.
    """
    lam = model.params(lam)
    u = as_input(u)
    x0 = np.asarray(x0, dtype=float)
    single = x0.ndim == 1
    X = np.atleast_2d(x0)
    m = X.shape[0]
    T = np.broadcast_to(np.asarray(t, dtype=float), (m,)).copy()
    if np.any(T < 0):
        raise ValueError("flow: t must be non-negative")
    groups = [(slice(None), lam)]

    # piecewise integration across input discontinuities (shared across the batch)
    cuts = sorted({b for b in getattr(u, "breakpoints", ()) if b > 0})
    tmax = T.max() if m else 0.0
    knots = [0.0] + [c for c in cuts if c < tmax] + [np.inf]
    n = model.n
    want_phi = phi or dlam
    Phi = np.broadcast_to(np.eye(n), (m, n, n)).copy() if want_phi else None
    Psi = np.zeros((m, n, model.l)) if dlam else None
    xc = X.copy()
    for a, b in zip(knots[:-1], knots[1:]):
        seg = np.clip(np.minimum(T, b) - a, 0.0, None)
        if not np.any(seg > 0):
            continue
        xe, P, S = _integrate_batch(model, seg, xc, groups, u, phi=want_phi, dlam=dlam,
                                    rtol=rtol, atol=atol, t0=a)
        if dlam:
            Psi = P @ Psi + S
        if want_phi:
            Phi = P @ Phi
        xc = xe
    res = FlowResult(x_end=xc)
    if phi:
        res.Phi = Phi
    if dlam:
        res.dphidlam = Psi
    if dphidt:
        res.dphidt = model.f(xc, u(T), lam)
    if single:
        res.x_end = res.x_end[0]
        for name in ("Phi", "dphidlam", "dphidt"):
            v = getattr(res, name)
            if v is not None:
                setattr(res, name, v[0])
    return res


def segment_flows(model: ModelDef, durations, x0, lam, *, phi=True, dlam=False,
                  lam_groups=None, rtol=RTOL, atol=ATOL):
    """Zero-input flows of many segments at once (multiple shooting helper)."""
    lam = model.params(lam)
    groups = lam_groups if lam_groups is not None else [(slice(None), lam)]
    return _integrate_batch(model, durations, x0, groups, ZeroInput(), phi=phi, dlam=dlam,
                            rtol=rtol, atol=atol)


def impulse_flow(model: ModelDef, x0, alpha: float, lam=None, t: float = 0.0,
                 rtol: float = RTOL, atol: float = ATOL):
    """State after a Dirac input alpha*delta at time 0, then zero-input flow for ``t``.

    The impulse is applied as the jump x0 + alpha * dfdu(x0, 0, lam).
    """
    lam = model.params(lam)
    if not np.isfinite(alpha):
        raise ValueError("impulse amplitude must be finite")
    x0 = np.asarray(x0, dtype=float)
    xj = x0 + alpha * model.dfdu(x0, 0.0, lam)
    if t == 0:
        return xj
    return flow(model, t, xj, None, lam, rtol=rtol, atol=atol).x_end


def trajectory(model: ModelDef, t_eval, x0, u=None, lam=None, rtol: float = RTOL, atol: float = ATOL):
    """States at the (increasing) times ``t_eval`` starting from x0 at t = 0; shape (len, n)."""
    lam = model.params(lam)
    u = as_input(u)
    t_eval = np.asarray(t_eval, dtype=float)

    def rhs(t, x):
        return model.f(x, float(u(t)), lam)

    sol = solve_ivp(rhs, (0.0, float(t_eval[-1])), np.asarray(x0, dtype=float), method="DOP853",
                    t_eval=t_eval, rtol=rtol, atol=atol)
    if sol.status != 0:
        raise IntegrationError(f"integration failed: {sol.message}")
    return sol.y.T
