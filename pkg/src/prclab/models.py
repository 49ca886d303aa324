"""Oscillator model definitions.

Every callback takes a state array ``x`` with shape ``(..., n)``, a scalar (or
broadcastable) input ``u`` and the parameter vector ``lam`` with shape ``(l,)``.
Outputs carry the leading batch shape of ``x``:

=============  =================  =======================================
callback       shape              entry
=============  =================  =======================================
f              (..., n)           f_i
dfdx           (..., n, n)        df_i/dx_j
dfdu           (..., n)           df_i/du
dfdlam         (..., n, l)        df_i/dlam_k
d2fdxdx        (..., n, n, n)     d2f_i/dx_j dx_k
d2fdxdu        (..., n, n)        d2f_i/dx_j du
d2fdlamdu      (..., n, l)        d2f_i/dlam_k du
d2fdxdlam      (..., n, n, l)     d2f_i/dx_j dlam_k
=============  =================  =======================================
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

Array = np.ndarray


@dataclass(frozen=True)
class ModelDef:
    name: str
    n: int
    param_names: tuple[str, ...]
    lam: Array
    f: Callable
    h: Callable
    dfdx: Callable
    dfdu: Callable
    dfdlam: Callable
    d2fdxdx: Callable | None = None
    d2fdxdu: Callable | None = None
    d2fdlamdu: Callable | None = None
    d2fdxdlam: Callable | None = None
    state_names: tuple[str, ...] = ()
    # box used by derivative checks and as a sampling domain: (lower, upper)
    box: tuple[Array, Array] | None = None
    x_seed: Array | None = None
    settle_time: float = 200.0

    @property
    def l(self) -> int:
        return len(self.param_names)

    def params(self, lam=None) -> Array:
        """Return ``lam`` as a float array, defaulting to the nominal vector."""
        if lam is None:
            return np.array(self.lam, dtype=float)
        lam = np.asarray(lam, dtype=float)
        if lam.shape != (self.l,):
            raise ValueError(f"{self.name}: expected {self.l} parameters, got shape {lam.shape}")
        return lam

    def with_params(self, lam) -> "ModelDef":
        return dataclasses.replace(self, lam=self.params(lam))

    def index(self, name: str) -> int:
        try:
            return self.param_names.index(name)
        except ValueError:
            raise KeyError(f"{self.name} has no parameter {name!r}; known: {self.param_names}") from None

    @property
    def has_second_derivatives(self) -> bool:
        return None not in (self.d2fdxdx, self.d2fdxdu, self.d2fdlamdu, self.d2fdxdlam)


def _batch(x) -> tuple[Array, tuple[int, ...]]:
    x = np.asarray(x, dtype=float)
    return x, x.shape[:-1]


# ---------------------------------------------------------------------------
# Goodwin oscillator


@dataclass(frozen=True)
class GoodwinParams:
    K: float = 3.0
    tau: float = 1.5
    nu: float = 20.0

    def validate(self) -> None:
        if not self.K > 0:
            raise ValueError(f"Goodwin: K must be positive, got {self.K}")
        if not self.tau > 0:
            raise ValueError(f"Goodwin: tau must be positive, got {self.tau}")
        if not self.nu >= 1:
            raise ValueError(f"Goodwin: nu must be >= 1, got {self.nu}")


def _hill(s, nu):
    """Repressive Hill term 1/(1+s^nu) and its first two derivatives in s.

    Evaluated in the log domain so that s**nu never overflows; s <= 0 is
    clamped to the s = 0 limit.
    """
    s = np.asarray(s, dtype=float)
    pos = s > 0
    ls = np.log(np.where(pos, s, 1.0))
    # log(1 + s^nu)
    L = np.logaddexp(0.0, nu * ls)
    H = np.where(pos, np.exp(-L), 1.0)
    d1 = -nu * np.exp((nu - 1.0) * ls - 2.0 * L)
    d2 = -nu * ((nu - 1.0) * np.exp((nu - 2.0) * ls - 3.0 * L)
                - (nu + 1.0) * np.exp((2.0 * nu - 2.0) * ls - 3.0 * L))
    d1 = np.where(pos, d1, -1.0 if nu == 1 else 0.0)
    d2 = np.where(pos, d2, 0.0)
    return H, d1, d2


def goodwin_model(params: GoodwinParams = GoodwinParams()) -> ModelDef:
    """Dimensionless Goodwin loop with parameters (K, tau).

    State (m, e, p); the input enters the Hill repression through (p + u)
    and the output is m.
    """
    params.validate()
    nu = float(params.nu)

    def f(x, u, lam):
        x, _ = _batch(x)
        K, tau = lam
        m, e, p = x[..., 0], x[..., 1], x[..., 2]
        H, _, _ = _hill(p + u, nu)
        return np.stack([-m + K * H, (m - e) / tau, (e - p) / tau], axis=-1)

    def h(x, lam=None):
        return np.asarray(x)[..., 0]

    def dfdx(x, u, lam):
        x, b = _batch(x)
        K, tau = lam
        _, d1, _ = _hill(x[..., 2] + u, nu)
        J = np.zeros(b + (3, 3))
        J[..., 0, 0] = -1.0
        J[..., 0, 2] = K * d1
        J[..., 1, 0] = 1.0 / tau
        J[..., 1, 1] = -1.0 / tau
        J[..., 2, 1] = 1.0 / tau
        J[..., 2, 2] = -1.0 / tau
        return J

    def dfdu(x, u, lam):
        x, b = _batch(x)
        K, _ = lam
        _, d1, _ = _hill(x[..., 2] + u, nu)
        out = np.zeros(b + (3,))
        out[..., 0] = K * d1
        return out

    def dfdlam(x, u, lam):
        x, b = _batch(x)
        _, tau = lam
        H, _, _ = _hill(x[..., 2] + u, nu)
        out = np.zeros(b + (3, 2))
        out[..., 0, 0] = H
        out[..., 1, 1] = -(x[..., 0] - x[..., 1]) / tau**2
        out[..., 2, 1] = -(x[..., 1] - x[..., 2]) / tau**2
        return out

    def d2fdxdx(x, u, lam):
        x, b = _batch(x)
        K, _ = lam
        _, _, d2 = _hill(x[..., 2] + u, nu)
        out = np.zeros(b + (3, 3, 3))
        out[..., 0, 2, 2] = K * d2
        return out

    def d2fdxdu(x, u, lam):
        x, b = _batch(x)
        K, _ = lam
        _, _, d2 = _hill(x[..., 2] + u, nu)
        out = np.zeros(b + (3, 3))
        out[..., 0, 2] = K * d2
        return out

    def d2fdlamdu(x, u, lam):
        x, b = _batch(x)
        _, d1, _ = _hill(x[..., 2] + u, nu)
        out = np.zeros(b + (3, 2))
        out[..., 0, 0] = d1
        return out

    def d2fdxdlam(x, u, lam):
        x, b = _batch(x)
        _, tau = lam
        _, d1, _ = _hill(x[..., 2] + u, nu)
        out = np.zeros(b + (3, 3, 2))
        out[..., 0, 2, 0] = d1
        t2 = 1.0 / tau**2
        out[..., 1, 0, 1] = -t2
        out[..., 1, 1, 1] = t2
        out[..., 2, 1, 1] = -t2
        out[..., 2, 2, 1] = t2
        return out

    return ModelDef(
        name="goodwin",
        n=3,
        param_names=("K", "tau"),
        lam=np.array([params.K, params.tau], dtype=float),
        f=f, h=h, dfdx=dfdx, dfdu=dfdu, dfdlam=dfdlam,
        d2fdxdx=d2fdxdx, d2fdxdu=d2fdxdu, d2fdlamdu=d2fdlamdu, d2fdxdlam=d2fdxdlam,
        state_names=("m", "e", "p"),
        box=(np.array([0.05, 0.05, 0.05]), np.array([1.5, 1.5, 1.5])),
        x_seed=np.array([0.5, 0.6, 0.7]),
        settle_time=300.0,
    )


# ---------------------------------------------------------------------------
# Morris-Lecar neuron

ML_CONSTANTS = ("C", "gCa", "gK", "gL", "VCa", "VK", "VL", "V1", "V2", "V3", "V4", "phi", "Iapp")


@dataclass(frozen=True)
class MorrisLecarParams:
    C: float = 20.0
    gCa: float = 4.0
    gK: float = 8.0
    gL: float = 2.0
    VCa: float = 120.0
    VK: float = -80.0
    VL: float = -60.0
    V1: float = -1.2
    V2: float = 18.0
    V3: float = 12.0
    V4: float = 17.4
    phi: float = 1.0 / 15.0
    Iapp: float = 45.0

    def validate(self) -> None:
        if not self.C > 0:
            raise ValueError("Morris-Lecar: C must be positive")
        for g in ("gCa", "gK", "gL"):
            if getattr(self, g) < 0:
                raise ValueError(f"Morris-Lecar: {g} must be non-negative")
        if self.V2 == 0 or self.V4 == 0:
            raise ValueError("Morris-Lecar: V2 and V4 must be nonzero")


def _complex_step(fun, lam, idx, h=1e-30):
    """d fun / d lam[k] for k in idx, stacked on a trailing axis (exact to roundoff)."""
    cols = []
    for k in idx:
        lc = np.array(lam, dtype=complex)
        lc[k] += 1j * h
        cols.append(np.imag(fun(lc)) / h)
    return np.stack(cols, axis=-1)


def morris_lecar_model(params: MorrisLecarParams = MorrisLecarParams(),
                       sweep: Sequence[str] = ("Iapp", "gCa")) -> ModelDef:
    """Two-state Morris-Lecar neuron; ``sweep`` names the exposed parameters.

    The applied current is the input: u adds to Iapp. Constants not listed
    in ``sweep`` are frozen at their ``params`` values. Derivatives in the
    state and input are analytic; parameter derivatives use complex-step
    differentiation of the same analytic expressions.
    """
    params.validate()
    sweep = tuple(sweep)
    for s in sweep:
        if s not in ML_CONSTANTS:
            raise ValueError(f"Morris-Lecar: unknown parameter {s!r}")
    if len(set(sweep)) != len(sweep):
        raise ValueError("Morris-Lecar: duplicate sweep parameter")
    base = np.array([getattr(params, c) for c in ML_CONSTANTS], dtype=float)
    pos = [ML_CONSTANTS.index(s) for s in sweep]

    def full(lam):
        lam = np.asarray(lam)
        c = base.astype(lam.dtype)
        c[pos] = lam
        return c

    def _f(x, u, c):
        C, gCa, gK, gL, VCa, VK, VL, V1, V2, V3, V4, phi, I = c
        V, w = x[..., 0], x[..., 1]
        minf = 0.5 * (1.0 + np.tanh((V - V1) / V2))
        winf = 0.5 * (1.0 + np.tanh((V - V3) / V4))
        ch = np.cosh((V - V3) / (2.0 * V4))
        dV = (-gCa * minf * (V - VCa) - gK * w * (V - VK) - gL * (V - VL) + I + u) / C
        dw = phi * (winf - w) * ch
        return np.stack([dV, dw], axis=-1)

    def _dfdx(x, u, c):
        C, gCa, gK, gL, VCa, VK, VL, V1, V2, V3, V4, phi, I = c
        V, w = x[..., 0], x[..., 1]
        a = np.tanh((V - V1) / V2)
        minf = 0.5 * (1.0 + a)
        dminf = 0.5 * (1.0 - a**2) / V2
        bt = np.tanh((V - V3) / V4)
        winf = 0.5 * (1.0 + bt)
        dwinf = 0.5 * (1.0 - bt**2) / V4
        arg = (V - V3) / (2.0 * V4)
        ch, sh = np.cosh(arg), np.sinh(arg)
        J = np.zeros(x.shape[:-1] + (2, 2), dtype=np.result_type(x, c))
        J[..., 0, 0] = (-gCa * (dminf * (V - VCa) + minf) - gK * w - gL) / C
        J[..., 0, 1] = -gK * (V - VK) / C
        J[..., 1, 0] = phi * (dwinf * ch + (winf - w) * sh / (2.0 * V4))
        J[..., 1, 1] = -phi * ch
        return J

    def _dfdu(x, u, c):
        out = np.zeros(x.shape[:-1] + (2,), dtype=np.result_type(x, c))
        out[..., 0] = 1.0 / c[0]
        return out

    def f(x, u, lam):
        return _f(np.asarray(x, dtype=float), u, full(lam))

    def h(x, lam=None):
        return np.asarray(x)[..., 0]

    def dfdx(x, u, lam):
        return _dfdx(np.asarray(x, dtype=float), u, full(lam))

    def dfdu(x, u, lam):
        return _dfdu(np.asarray(x, dtype=float), u, full(lam))

    def dfdlam(x, u, lam):
        x = np.asarray(x, dtype=float)
        return _complex_step(lambda lc: _f(x, u, full(lc)), lam, range(len(sweep)))

    def d2fdxdx(x, u, lam):
        x = np.asarray(x, dtype=float)
        c = full(lam)
        C, gCa, gK, gL, VCa, VK, VL, V1, V2, V3, V4, phi, I = c
        V, w = x[..., 0], x[..., 1]
        a = np.tanh((V - V1) / V2)
        minf = 0.5 * (1.0 + a)
        dminf = 0.5 * (1.0 - a**2) / V2
        d2minf = -(1.0 - a**2) * a / V2**2
        bt = np.tanh((V - V3) / V4)
        winf = 0.5 * (1.0 + bt)
        dwinf = 0.5 * (1.0 - bt**2) / V4
        d2winf = -(1.0 - bt**2) * bt / V4**2
        arg = (V - V3) / (2.0 * V4)
        ch, sh = np.cosh(arg), np.sinh(arg)
        k = 1.0 / (2.0 * V4)
        out = np.zeros(x.shape[:-1] + (2, 2, 2))
        out[..., 0, 0, 0] = -gCa * (d2minf * (V - VCa) + 2.0 * dminf) / C
        out[..., 0, 0, 1] = -gK / C
        out[..., 0, 1, 0] = -gK / C
        out[..., 1, 0, 0] = phi * (d2winf * ch + 2.0 * dwinf * sh * k + (winf - w) * ch * k**2)
        out[..., 1, 0, 1] = -phi * sh * k
        out[..., 1, 1, 0] = -phi * sh * k
        return out

    def d2fdxdu(x, u, lam):
        x = np.asarray(x, dtype=float)
        return np.zeros(x.shape[:-1] + (2, 2))

    def d2fdlamdu(x, u, lam):
        x = np.asarray(x, dtype=float)
        return _complex_step(lambda lc: _dfdu(x, u, full(lc)), lam, range(len(sweep)))

    def d2fdxdlam(x, u, lam):
        x = np.asarray(x, dtype=float)
        return _complex_step(lambda lc: _dfdx(x, u, full(lc)), lam, range(len(sweep)))

    return ModelDef(
        name="morris_lecar",
        n=2,
        param_names=sweep,
        lam=base[pos].copy(),
        f=f, h=h, dfdx=dfdx, dfdu=dfdu, dfdlam=dfdlam,
        d2fdxdx=d2fdxdx, d2fdxdu=d2fdxdu, d2fdlamdu=d2fdlamdu, d2fdxdlam=d2fdxdlam,
        state_names=("V", "w"),
        box=(np.array([-70.0, 0.0]), np.array([40.0, 0.6])),
        x_seed=np.array([0.0, 0.1]),
        settle_time=2000.0,
    )


def ml_gating(params: MorrisLecarParams, V):
    """Steady-state activations m_inf, w_inf and the time scale tau_w at voltage V."""
    V = np.asarray(V, dtype=float)
    minf = 0.5 * (1.0 + np.tanh((V - params.V1) / params.V2))
    winf = 0.5 * (1.0 + np.tanh((V - params.V3) / params.V4))
    tauw = 1.0 / np.cosh((V - params.V3) / (2.0 * params.V4))
    return minf, winf, tauw


# ---------------------------------------------------------------------------
# Radial isochron clock


@dataclass(frozen=True)
class RadialClockParams:
    omega0: float = 2.0 * np.pi
    kappa: float = 1.0
    speed: float = 1.0
    gain: float = 1.0

    def validate(self) -> None:
        if not self.omega0 > 0:
            raise ValueError("radial clock: omega0 must be positive")
        if not self.kappa > 0:
            raise ValueError("radial clock: kappa must be positive")
        if not self.speed > 0:
            raise ValueError("radial clock: speed must be positive")


def radial_clock_model(params: RadialClockParams = RadialClockParams()) -> ModelDef:
    """Planar clock with a unit-circle orbit and radial isochrons.

    x' = kappa x (1 - r^2) - w y + gain u,  y' = kappa y (1 - r^2) + w x,
    with angular speed w = speed * omega0. Parameters exposed: (speed, kappa, gain);
    omega0 is the frozen base frequency. The PRC for the input on x' is
    q(theta) = -gain * sin(theta).
    """
    params.validate()
    w0 = float(params.omega0)

    def f(x, u, lam):
        x, _ = _batch(x)
        s, k, g = lam
        X, Y = x[..., 0], x[..., 1]
        a = k * (1.0 - X**2 - Y**2)
        w = s * w0
        return np.stack([a * X - w * Y + g * u, a * Y + w * X], axis=-1)

    def h(x, lam=None):
        return np.asarray(x)[..., 0]

    def dfdx(x, u, lam):
        x, b = _batch(x)
        s, k, _ = lam
        X, Y = x[..., 0], x[..., 1]
        a = k * (1.0 - X**2 - Y**2)
        w = s * w0
        J = np.empty(b + (2, 2))
        J[..., 0, 0] = a - 2 * k * X**2
        J[..., 0, 1] = -2 * k * X * Y - w
        J[..., 1, 0] = -2 * k * X * Y + w
        J[..., 1, 1] = a - 2 * k * Y**2
        return J

    def dfdu(x, u, lam):
        x, b = _batch(x)
        out = np.zeros(b + (2,))
        out[..., 0] = lam[2]
        return out

    def dfdlam(x, u, lam):
        x, b = _batch(x)
        X, Y = x[..., 0], x[..., 1]
        r = 1.0 - X**2 - Y**2
        out = np.zeros(b + (2, 3))
        out[..., 0, 0] = -w0 * Y
        out[..., 1, 0] = w0 * X
        out[..., 0, 1] = r * X
        out[..., 1, 1] = r * Y
        out[..., 0, 2] = u
        return out

    def d2fdxdx(x, u, lam):
        x, b = _batch(x)
        k = lam[1]
        X, Y = x[..., 0], x[..., 1]
        out = np.empty(b + (2, 2, 2))
        out[..., 0, 0, 0] = -6 * k * X
        out[..., 0, 0, 1] = -2 * k * Y
        out[..., 0, 1, 0] = -2 * k * Y
        out[..., 0, 1, 1] = -2 * k * X
        out[..., 1, 0, 0] = -2 * k * Y
        out[..., 1, 0, 1] = -2 * k * X
        out[..., 1, 1, 0] = -2 * k * X
        out[..., 1, 1, 1] = -6 * k * Y
        return out

    def d2fdxdu(x, u, lam):
        x, b = _batch(x)
        return np.zeros(b + (2, 2))

    def d2fdlamdu(x, u, lam):
        x, b = _batch(x)
        out = np.zeros(b + (2, 3))
        out[..., 0, 2] = 1.0
        return out

    def d2fdxdlam(x, u, lam):
        x, b = _batch(x)
        X, Y = x[..., 0], x[..., 1]
        out = np.zeros(b + (2, 2, 3))
        out[..., 0, 1, 0] = -w0
        out[..., 1, 0, 0] = w0
        out[..., 0, 0, 1] = 1.0 - 3 * X**2 - Y**2
        out[..., 0, 1, 1] = -2 * X * Y
        out[..., 1, 0, 1] = -2 * X * Y
        out[..., 1, 1, 1] = 1.0 - X**2 - 3 * Y**2
        return out

    return ModelDef(
        name="radial_clock",
        n=2,
        param_names=("speed", "kappa", "gain"),
        lam=np.array([params.speed, params.kappa, params.gain], dtype=float),
        f=f, h=h, dfdx=dfdx, dfdu=dfdu, dfdlam=dfdlam,
        d2fdxdx=d2fdxdx, d2fdxdu=d2fdxdu, d2fdlamdu=d2fdlamdu, d2fdxdlam=d2fdxdlam,
        state_names=("x", "y"),
        box=(np.array([-1.5, -1.5]), np.array([1.5, 1.5])),
        x_seed=np.array([0.5, 0.0]),
        settle_time=20.0,
    )


# ---------------------------------------------------------------------------


def finite_difference_derivatives(model: ModelDef, step: float = 1e-6) -> ModelDef:
    """Replace every derivative callback of ``model`` by central differences.

    First derivatives difference ``f``; second derivatives difference the
    (finite-difference) first derivatives. Steps scale with max(1, |coord|).
    """
    if not step > 0:
        raise ValueError("step must be positive")
    f = model.f

    def _sc(v):
        return step * max(1.0, abs(float(v)))

    def _du(fun, u):
        hu = _sc(np.max(np.abs(u)) if np.ndim(u) else u)
        return (fun(u + hu) - fun(u - hu)) / (2.0 * hu)

    def _dlam(fun, lam):
        lam = np.asarray(lam, dtype=float)
        cols = []
        for k in range(lam.size):
            hk = _sc(lam[k])
            lp, lm = lam.copy(), lam.copy()
            lp[k] += hk
            lm[k] -= hk
            cols.append((fun(lp) - fun(lm)) / (2.0 * hk))
        return np.stack(cols, axis=-1)

    def _dx(fun, x):
        x = np.asarray(x, dtype=float)
        cols = []
        for j in range(x.shape[-1]):
            hj = step * np.maximum(1.0, np.abs(x[..., j]))
            xp, xm = x.copy(), x.copy()
            xp[..., j] += hj
            xm[..., j] -= hj
            d = fun(xp) - fun(xm)
            cols.append(d / (2.0 * hj).reshape(hj.shape + (1,) * (d.ndim - hj.ndim)))
        return np.stack(cols, axis=-1)

    def dfdx(x, u, lam):
        return _dx(lambda xx: f(xx, u, lam), x)

    def dfdu(x, u, lam):
        return _du(lambda uu: f(x, uu, lam), u)

    def dfdlam(x, u, lam):
        return _dlam(lambda ll: f(x, u, ll), lam)

    def d2fdxdx(x, u, lam):
        return _dx(lambda xx: dfdx(xx, u, lam), x)

    def d2fdxdu(x, u, lam):
        return _du(lambda uu: dfdx(x, uu, lam), u)

    def d2fdlamdu(x, u, lam):
        return _dlam(lambda ll: dfdu(x, u, ll), lam)

    def d2fdxdlam(x, u, lam):
        return _dlam(lambda ll: dfdx(x, u, ll), lam)

    return dataclasses.replace(
        model,
        name=model.name,
        dfdx=dfdx, dfdu=dfdu, dfdlam=dfdlam,
        d2fdxdx=d2fdxdx, d2fdxdu=d2fdxdu, d2fdlamdu=d2fdlamdu, d2fdxdlam=d2fdxdlam,
    )


def get_model(name: str, overrides: dict | None = None, sweep: Sequence[str] | None = None) -> ModelDef:
    """Build a built-in model by name with keyword overrides of its parameter dataclass."""
    overrides = dict(overrides or {})
    if name == "goodwin":
        return goodwin_model(GoodwinParams(**overrides))
    if name == "morris_lecar":
        kw = {} if sweep is None else {"sweep": tuple(sweep)}
        return morris_lecar_model(MorrisLecarParams(**overrides), **kw)
    if name == "radial_clock":
        return radial_clock_model(RadialClockParams(**overrides))
    raise KeyError(f"unknown model {name!r}")


MODELS = ("goodwin", "morris_lecar", "radial_clock")
