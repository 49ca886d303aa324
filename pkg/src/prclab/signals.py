"""2*pi-periodic signals sampled on uniform circle grids, with trigonometric interpolation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def _coeffs(values):
    """DFT coefficients along axis 0 with the Nyquist term split for even N."""
    values = np.asarray(values)
    N = values.shape[0]
    return np.fft.fft(values, axis=0) / N, np.fft.fftfreq(N, 1.0 / N)


def trig_eval(values, theta, deriv: int = 0):
    """Evaluate the trigonometric interpolant of uniform samples (axis 0) at ``theta``.

    For even N the Nyquist mode is taken as c cos(N theta / 2), the real
    interpolant of minimal degree. ``deriv`` selects the derivative order.
    """
    values = np.asarray(values, dtype=float)
    N = values.shape[0]
    c, k = _coeffs(values)
    theta = np.asarray(theta, dtype=float)
    flat = theta.reshape(-1)
    # real form: a0 + sum_k 2 Re(c_k e^{ik theta}) over k = 1..(N-1)//2, plus Nyquist
    kmax = (N - 1) // 2
    kk = np.arange(1, kmax + 1)
    E = np.exp(1j * np.outer(flat, kk)) * (1j * kk) ** deriv
    tail = values.shape[1:]
    cc = c[1:kmax + 1].reshape(kmax, -1)
    out = 2 * np.real(E @ cc)
    if deriv == 0:
        out = out + np.real(c[0]).reshape(1, -1)
    if N % 2 == 0:
        nq = N // 2
        cn = np.real(c[nq]).reshape(1, -1)
        # d^m/dtheta^m cos(nq theta) = nq^m cos(nq theta + m pi/2)
        out = out + cn * (nq**deriv * np.cos(nq * flat + deriv * np.pi / 2))[:, None]
    return out.reshape(theta.shape + tail)


def spectral_shift(values, sigma: float):
    """Samples of q(. + sigma) computed exactly for the trigonometric interpolant."""
    values = np.asarray(values, dtype=float)
    N = values.shape[0]
    c = np.fft.fft(values, axis=0)
    k = np.fft.fftfreq(N, 1.0 / N)
    phase = np.exp(1j * k * sigma)
    if N % 2 == 0:
        # keep the Nyquist mode real: cos(nq(theta + sigma)) sampled on the grid
        phase[N // 2] = np.cos(N // 2 * sigma)
    phase = phase.reshape((N,) + (1,) * (values.ndim - 1))
    return np.real(np.fft.ifft(c * phase, axis=0))


def uniform_grid(N: int) -> np.ndarray:
    return 2 * np.pi * np.arange(N) / N


@dataclass(frozen=True)
class PhaseSignal:
    """Scalar 2*pi-periodic signal sampled at theta_i = 2*pi*i/N, i = 0..N-1."""

    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=float).reshape(-1)
        if v.size < 2:
            raise ValueError("a phase signal needs at least 2 samples")
        if not np.all(np.isfinite(v)):
            raise ValueError("phase signal samples must be finite")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @classmethod
    def from_function(cls, fun, N: int = 256) -> "PhaseSignal":
        return cls(fun(uniform_grid(N)))

    @property
    def N(self) -> int:
        return self.values.size

    @property
    def theta(self) -> np.ndarray:
        return uniform_grid(self.N)

    def __call__(self, theta, deriv: int = 0):
        return trig_eval(self.values, np.mod(theta, 2 * np.pi), deriv)

    def __len__(self):
        return self.N

    def __add__(self, other):
        return PhaseSignal(self.values + _vals(other))

    def __sub__(self, other):
        return PhaseSignal(self.values - _vals(other))

    def __mul__(self, a):
        return PhaseSignal(self.values * float(a))

    __rmul__ = __mul__

    def __neg__(self):
        return PhaseSignal(-self.values)

    def shifted(self, sigma: float) -> "PhaseSignal":
        """The signal theta -> q(theta + sigma)."""
        return PhaseSignal(spectral_shift(self.values, sigma))

    def resampled(self, N: int) -> "PhaseSignal":
        return PhaseSignal(trig_eval(self.values, uniform_grid(N)))

    def closed(self) -> np.ndarray:
        """Samples including the repeated endpoint theta_N = 2*pi."""
        return np.append(self.values, self.values[0])


def _vals(x):
    if isinstance(x, PhaseSignal):
        return x.values
    return np.asarray(x, dtype=float)
