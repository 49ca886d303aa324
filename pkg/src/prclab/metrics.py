"""Inner products, shifts, distances and tangent-space operations for PRC spaces.

Four spaces are supported:

* A: the signals themselves, L2 distance
* B: signals up to positive scaling (rays), angle between normalized signals
* C: signals up to circular phase shift, L2 distance after optimal alignment
* D: signals up to both scaling and shift
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from enum import Enum

import numpy as np

from prclab.signals import PhaseSignal, spectral_shift, trig_eval

TWO_PI = 2 * np.pi


class PrcSpace(str, Enum):
    A = "A"
    B = "B"
    C = "C"
    D = "D"

    @property
    def scale_invariant(self) -> bool:
        return self in (PrcSpace.B, PrcSpace.D)

    @property
    def shift_invariant(self) -> bool:
        return self in (PrcSpace.C, PrcSpace.D)


def as_space(space) -> PrcSpace:
    if isinstance(space, PrcSpace):
        return space
    try:
        return PrcSpace(str(space).upper())
    except ValueError:
        raise ValueError(f"unknown PRC space {space!r}; expected one of A, B, C, D") from None


@dataclass
class ShiftResult:
    sigma: float                   # in [0, 2*pi)
    peak: float
    corr: np.ndarray | None = None
    flat: bool = False
    multiple: bool = False


@dataclass
class DistanceResult:
    value: float
    sigma: float | None = None
    fallback: bool = False          # D collapsed to B because q' == 0


def _values(q):
    return q.values if isinstance(q, PhaseSignal) else np.asarray(q, dtype=float)


def _check(q1, q2):
    a, b = _values(q1), _values(q2)
    if a.shape != b.shape:
        raise ValueError(f"grid mismatch: {a.shape[0]} vs {b.shape[0]} samples")
    return a, b


def inner(xi, zeta) -> float:
    """Rectangle-rule L2 inner product (2 pi / N) sum xi_i zeta_i."""
    a, b = _check(xi, zeta)
    return float(TWO_PI / a.size * np.dot(a, b))


def l2norm(q) -> float:
    a = _values(q)
    return float(np.sqrt(TWO_PI / a.size) * np.linalg.norm(a))


def derivative(q) -> PhaseSignal:
    """Spectral derivative d/dtheta (Nyquist mode dropped)."""
    a = _values(q)
    N = a.size
    k = np.fft.fftfreq(N, 1.0 / N)
    if N % 2 == 0:
        k[N // 2] = 0.0
    return PhaseSignal(np.real(np.fft.ifft(1j * k * np.fft.fft(a))))


def correlation(q1, q2) -> np.ndarray:
    """c[k] = integral of q1(theta) q2(theta + 2 pi k / N), computed through the DFT."""
    a, b = _check(q1, q2)
    return TWO_PI / a.size * np.real(np.fft.ifft(np.conj(np.fft.fft(a)) * np.fft.fft(b)))


def optimal_shift(q1, q2, keep_corr: bool = False) -> ShiftResult:
    """Shift sigma maximizing the correlation of q1 with q2(. + sigma).

    Grid argmax (smallest sigma among ties), quadratic refinement through the
    peak and its neighbors, then Newton steps on the trigonometric interpolant
    of the correlation.
    """
    a, b = _check(q1, q2)
    N = a.size
    c = correlation(a, b)
    scale = max(np.abs(c).max(), np.finfo(float).tiny)
    h = TWO_PI / N
    if np.ptp(c) <= 1e-14 * scale:
        return ShiftResult(0.0, float(c[0]), c if keep_corr else None, flat=True)
    cmax = c.max()
    cand = np.flatnonzero(c >= cmax - 1e-9 * scale)
    j = int(cand[0])
    # candidates forming one circular run of neighbors are a single broad peak
    multiple = False
    if cand.size > 1:
        gaps = np.diff(np.append(cand, cand[0] + N))
        multiple = np.count_nonzero(gaps > 1) > 1
    if multiple:
        warnings.warn("optimal_shift: correlation maximum is not unique; smallest shift chosen",
                      RuntimeWarning, stacklevel=2)
    cm, c0, cp = c[(j - 1) % N], c[j], c[(j + 1) % N]
    den = cm - 2 * c0 + cp
    off = 0.5 * (cm - cp) / den if den < 0 else 0.0
    off = float(np.clip(off, -0.5, 0.5))
    sigma = (j + off) * h
    for _ in range(4):
        d1 = float(trig_eval(c, sigma, 1))
        d2 = float(trig_eval(c, sigma, 2))
        if not d2 < 0:
            break
        step = float(np.clip(-d1 / d2, -h, h))
        sigma += step
        if abs(step) < 1e-15:
            break
    peak = float(trig_eval(c, sigma))
    if peak < c0:
        sigma, peak = j * h, float(c0)
    sigma = float(np.mod(sigma, TWO_PI))
    if sigma >= TWO_PI:
        sigma = 0.0
    return ShiftResult(sigma, peak, c if keep_corr else None, multiple=multiple)


def shift_signal(q, sigma: float) -> PhaseSignal:
    """q(. + sigma) by spectral (band-limited) shifting."""
    return PhaseSignal(spectral_shift(_values(q), sigma))


def _angle(u, v) -> float:
    """Angle between vectors, accurate near 0 and pi."""
    return float(2 * np.arctan2(np.linalg.norm(u - v), np.linalg.norm(u + v)))


def _nonzero_norm(a, what):
    nrm = np.linalg.norm(a)
    if nrm == 0:
        raise ValueError(f"{what}: zero signal has no ray (undefined in spaces B/D)")
    return nrm


def is_constant(q, rtol: float = 1e-12) -> bool:
    a = _values(q)
    return bool(np.ptp(a) <= rtol * max(np.abs(a).max(), np.finfo(float).tiny))


def distance_info(space, q1, q2) -> DistanceResult:
    space = as_space(space)
    a, b = _check(q1, q2)
    if np.array_equal(a, b):
        if space.scale_invariant:
            _nonzero_norm(a, "distance")
        return DistanceResult(0.0, 0.0 if space.shift_invariant else None)
    # canonical argument order makes the computed distance exactly symmetric
    if tuple(a) > tuple(b):
        a, b = b, a
    if space == PrcSpace.A:
        return DistanceResult(l2norm(a - b))
    if space == PrcSpace.B:
        return DistanceResult(_angle(a / _nonzero_norm(a, "distance"), b / _nonzero_norm(b, "distance")))
    if space == PrcSpace.D and (is_constant(a) or is_constant(b)):
        # shift quotient collapses on constant signals
        d = _angle(a / _nonzero_norm(a, "distance"), b / _nonzero_norm(b, "distance"))
        return DistanceResult(d, 0.0, fallback=True)
    s = optimal_shift(a, b)
    bs = spectral_shift(b, s.sigma)
    if space == PrcSpace.C:
        return DistanceResult(l2norm(a - bs), s.sigma)
    return DistanceResult(_angle(a / _nonzero_norm(a, "distance"), bs / _nonzero_norm(b, "distance")), s.sigma)


def distance(space, q1, q2) -> float:
    """Geodesic distance between the classes of q1 and q2 in the given space."""
    return distance_info(space, q1, q2).value


def horizontal_project(space, qbar, eta) -> PhaseSignal:
    """Remove the vertical components of eta at qbar (scaling and/or shift directions)."""
    space = as_space(space)
    q, e = _check(qbar, eta)
    out = e.copy()
    if space.scale_invariant:
        qq = np.dot(q, q)
        if qq == 0:
            raise ValueError("horizontal_project: zero reference signal")
        out = out - (np.dot(e, q) / qq) * q
    if space.shift_invariant:
        dq = derivative(q).values
        dd = np.dot(dq, dq)
        if dd == 0:
            if space == PrcSpace.C:
                raise ValueError("horizontal_project: reference signal is constant (no shift direction)")
        else:
            out = out - (np.dot(e, dq) / dd) * dq
    return PhaseSignal(out)


def norm_in_space(space, qbar, xi) -> float:
    """Tangent norm of an (already horizontal) vector xi at qbar."""
    space = as_space(space)
    nrm = l2norm(xi)
    if space.scale_invariant:
        qn = l2norm(qbar)
        if qn == 0:
            raise ValueError("norm_in_space: zero reference signal")
        return nrm / qn
    return nrm


def metric(space, qbar, xi, zeta) -> float:
    """Riemannian metric g_qbar(xi, zeta) on horizontal vectors."""
    space = as_space(space)
    g = inner(xi, zeta)
    if space.scale_invariant:
        g /= inner(qbar, qbar)
    return g
