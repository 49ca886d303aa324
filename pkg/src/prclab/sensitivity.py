"""Parametric sensitivities of the orbit, the frequency, the phase gradient and the PRC.

All right-hand sides are exact derivatives of the discrete equations with
respect to one parameter, so the linear solves reuse the factorizations of
the orbit Newton matrix and of the bordered adjoint matrix.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import lu_solve

from prclab.integrate import segment_flows
from prclab.metrics import l2norm
from prclab.models import ModelDef
from prclab.orbit import ORBIT_ATOL, ORBIT_RTOL, PeriodicOrbit
from prclab.prc import GradientCurve, adjoint_prc, adjoint_weights, node_signal
from prclab.signals import PhaseSignal

FD_REL_STEP = 1e-6


@dataclass
class SensitivityBundle:
    param_names: tuple[str, ...]
    lam: np.ndarray
    omega: float
    q: PhaseSignal
    S_omega: np.ndarray            # (l,)
    S_x: np.ndarray                # (l, N+1, n)
    S_p: np.ndarray                # (l, N+1, n)
    S_q: list                      # l PhaseSignals
    relative: bool = False

    @property
    def S_T(self) -> np.ndarray:
        return period_sensitivity(self.S_omega, self.omega)

    @property
    def period(self) -> float:
        return 2 * np.pi / self.omega


def _segment_param_flows(model: ModelDef, orbit: PeriodicOrbit) -> np.ndarray:
    """d phi / d lam over each shooting segment, shape (N, n, l)."""
    c = orbit.cache
    if "dphidlam" not in c:
        rtol, atol = c.get("rtol", ORBIT_RTOL), c.get("atol", ORBIT_ATOL)
        _, _, S = segment_flows(model, orbit.partition.h / orbit.omega, orbit.x[:-1], orbit.lam,
                                phi=True, dlam=True, rtol=rtol, atol=atol)
        c["dphidlam"] = S
    return c["dphidlam"]


def orbit_rhs(model: ModelDef, orbit: PeriodicOrbit) -> np.ndarray:
    """Right-hand sides -dr/dlam of the orbit equations, shape ((N+1) n + 1, l)."""
    N, n, l = orbit.N, orbit.n, model.l
    E = np.zeros(((N + 1) * n + 1, l))
    if orbit.scheme == "trapezoidal":
        k = (orbit.partition.h / (2 * orbit.omega))[:, None, None]
        Fl = model.dfdlam(orbit.x, 0.0, orbit.lam)
        E[:N * n] = (k * (Fl[:-1] + Fl[1:])).reshape(N * n, l)
    else:
        E[:N * n] = -_segment_param_flows(model, orbit).reshape(N * n, l)
    # the closure row and the phase condition do not depend on lam
    return E


def orbit_sensitivity(model: ModelDef, orbit: PeriodicOrbit, j=None):
    """(S_omega, S_x) for parameter j (all parameters when j is None).

    S_x has shape (N+1, n), or (l, N+1, n) for all parameters.
    """
    N, n = orbit.N, orbit.n
    E = orbit_rhs(model, orbit)
    cols = slice(None) if j is None else [j]
    sol = lu_solve(orbit.cache["lu"], E[:, cols], check_finite=False)
    S_omega = sol[-1]
    S_x = np.moveaxis(sol[:-1].reshape(N + 1, n, -1), -1, 0).copy()
    S_x[:, N] = S_x[:, 0]
    if j is None:
        return S_omega, S_x
    return float(S_omega[0]), S_x[0]


def _shooting_dPhi(model: ModelDef, orbit: PeriodicOrbit, S_omega: float, S_x, j: int) -> np.ndarray:
    """Total derivative of each segment's fundamental matrix along parameter j.

    Central difference along the direction (S_x, S_omega, e_j); both copies
    are integrated in one batch so they share a step sequence.
    """
    N = orbit.N
    lam = orbit.lam
    delta = FD_REL_STEP * (abs(lam[j]) if lam[j] != 0 else 1.0)
    lp, lm = lam.copy(), lam.copy()
    lp[j] += delta
    lm[j] -= delta
    h = orbit.partition.h
    x0 = np.vstack([orbit.x[:-1] + delta * S_x[:-1], orbit.x[:-1] - delta * S_x[:-1]])
    dur = np.concatenate([h / (orbit.omega + delta * S_omega), h / (orbit.omega - delta * S_omega)])
    rtol, atol = orbit.cache.get("rtol", ORBIT_RTOL), orbit.cache.get("atol", ORBIT_ATOL)
    _, P, _ = segment_flows(model, dur, x0, lam, phi=True,
                            lam_groups=[(slice(0, N), lp), (slice(N, 2 * N), lm)], rtol=rtol, atol=atol)
    return (P[:N] - P[N:]) / (2 * delta)


def _adjoint_rhs(model: ModelDef, orbit: PeriodicOrbit, grad: GradientCurve, S_omega: float, S_x, j: int):
    N, n = orbit.N, orbit.n
    x, lam, w = orbit.x, orbit.lam, orbit.omega
    p = grad.p
    A = orbit.cache["blocks"]["A"]
    Fl = model.dfdlam(x, 0.0, lam)[..., j]
    S_v = np.einsum("ijk,ik->ij", A, S_x) + Fl
    rhs = np.zeros((N + 1) * n + 1)
    if orbit.scheme == "trapezoidal":
        H2 = model.d2fdxdx(x, 0.0, lam)
        dA = np.einsum("ijkl,il->ijk", H2, S_x) + model.d2fdxdlam(x, 0.0, lam)[..., j]
        k = (orbit.partition.h / (2 * w))[:, None]
        ATp = np.einsum("ikj,ik->ij", A, p)
        dATp = np.einsum("ikj,ik->ij", dA, p)
        d_row = k * (dATp[:-1] + dATp[1:]) - k * (S_omega / w) * (ATp[:-1] + ATp[1:])
        E = -d_row
    else:
        dPhi = _shooting_dPhi(model, orbit, S_omega, S_x, j)
        E = np.einsum("ikj,ik->ij", dPhi, p[1:])
    # derivative of the bordering column (tangent blocks) times xi
    E = E - grad.xi * S_v[:-1]
    rhs[:N * n] = E.ravel()
    wts = adjoint_weights(orbit)
    rhs[-1] = S_omega - float(np.sum(wts * np.einsum("ij,ij->i", S_v, p)))
    return rhs


def prc_sensitivity(model: ModelDef, orbit: PeriodicOrbit, grad: GradientCurve, orbit_sens, j: int):
    """(S_p, S_q) for parameter j given orbit_sens = (S_omega_j, S_x_j)."""
    if not model.has_second_derivatives:
        raise ValueError(f"{model.name}: PRC sensitivities need second derivatives "
                         "(wrap the model with finite_difference_derivatives)")
    S_omega, S_x = orbit_sens
    N, n = orbit.N, orbit.n
    rhs = _adjoint_rhs(model, orbit, grad, S_omega, S_x, j)
    sol = lu_solve(grad.cache["lu"], rhs, check_finite=False)
    S_p = sol[:-1].reshape(N + 1, n).copy()
    S_p[N] = S_p[0]
    x, lam = orbit.x, orbit.lam
    B = model.dfdu(x, 0.0, lam)
    dB = np.einsum("ijk,ik->ij", model.d2fdxdu(x, 0.0, lam), S_x) + model.d2fdlamdu(x, 0.0, lam)[..., j]
    sq = np.einsum("ij,ij->i", S_p, B) + np.einsum("ij,ij->i", grad.p, dB)
    return S_p, node_signal(orbit.partition, sq)


def period_sensitivity(S_omega, omega: float, T: float | None = None):
    """S_T = -T S_omega / omega."""
    if not omega > 0:
        raise ValueError("omega must be positive")
    T = 2 * np.pi / omega if T is None else T
    return -T * np.asarray(S_omega) / omega


def relative_sensitivity(c, S, lam_j: float, norm: float | None = None):
    """lam_j * S / ||c||, with ||c|| = |c| for scalars and the L2 norm for signals."""
    if lam_j == 0:
        raise ValueError("relative sensitivity undefined at lam_j = 0")
    if norm is None:
        norm = l2norm(c) if isinstance(c, PhaseSignal) or np.ndim(c) else abs(float(c))
    if norm == 0:
        raise ValueError("relative sensitivity undefined for a zero characteristic")
    if isinstance(S, PhaseSignal):
        return PhaseSignal(lam_j * S.values / norm)
    return lam_j * np.asarray(S) / norm


def sensitivity_bundle(model: ModelDef, orbit: PeriodicOrbit, grad: GradientCurve | None = None,
                       q: PhaseSignal | None = None, params=None) -> SensitivityBundle:
    """All sensitivities for the listed parameters (names or indices; default all)."""
    if grad is None or q is None:
        grad, q = adjoint_prc(model, orbit)
    idx = list(range(model.l)) if params is None else [model.index(p) if isinstance(p, str) else int(p)
                                                      for p in params]
    S_omega_all, S_x_all = orbit_sensitivity(model, orbit)
    S_p, S_q = [], []
    for j in idx:
        sp, sq = prc_sensitivity(model, orbit, grad, (S_omega_all[j], S_x_all[j]), j)
        S_p.append(sp)
        S_q.append(sq)
    return SensitivityBundle(param_names=tuple(model.param_names[j] for j in idx), lam=orbit.lam[idx].copy(),
                             omega=orbit.omega, q=q, S_omega=S_omega_all[idx].copy(), S_x=S_x_all[idx].copy(),
                             S_p=np.array(S_p), S_q=S_q)
