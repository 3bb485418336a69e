"""Shuttling profiles, inertial forcing, frequency-variation models and
voltage-waveform design for linear transport."""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .field_model import (Mode, SegmentedLinearTrap, TrapModel, VoltageSchedule,
                          golden_minimize)


class ProfileKind(str, enum.Enum):
    LINEAR = "Linear"
    SINUSOIDAL = "Sinusoidal"
    TANH = "Tanh"


class SynthesisError(ValueError):
    pass


class DesignError(RuntimeError):
    def __init__(self, message, residuals=None):
        super().__init__(message)
        self.residuals = residuals


@dataclass(frozen=True)
class ShuttleProfile:
    kind: ProfileKind
    L: float
    T: float
    N: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "kind", ProfileKind(self.kind))
        if not (self.L > 0 and self.T > 0):
            raise ValueError("shuttle distance and duration must be positive")
        if self.kind is ProfileKind.TANH:
            if self.N is None or not self.N >= 1:
                raise ValueError("tanh profile needs N >= 1")

    # -- closed forms on the open interval (0, T) --
    def _inside(self, t):
        L, T = self.L, self.T
        if self.kind is ProfileKind.LINEAR:
            return L * t / T, np.full_like(t, L / T), np.zeros_like(t)
        if self.kind is ProfileKind.SINUSOIDAL:
            w = math.pi / T
            return (0.5 * L * (1 - np.cos(w * t)), 0.5 * L * w * np.sin(w * t),
                    0.5 * L * w * w * np.cos(w * t))
        n = self.N
        u = n * (2 * t - T) / T
        e = np.exp(-2.0 * np.abs(u))
        th, sech2 = np.tanh(u), 4.0 * e / (1.0 + e) ** 2
        coth = 1.0 / math.tanh(n)
        return (0.5 * L * (th + math.tanh(n)) * coth, L * n / T * coth * sech2,
                -L * 4 * n * n / T ** 2 * coth * th * sech2)

    def position(self, t):
        """x0(t), with H(0) = 1 and clamping outside [0, T]."""
        t = np.asarray(t, dtype=float)
        x, _, _ = self._inside(t)
        out = np.where(t < 0, 0.0, np.where(t >= self.T, self.L, x))
        return out if out.ndim else float(out)

    def velocity(self, t):
        t = np.asarray(t, dtype=float)
        _, v, _ = self._inside(t)
        out = np.where((t >= 0) & (t < self.T), v, 0.0)
        return out if out.ndim else float(out)

    def regular_acceleration(self, t):
        t = np.asarray(t, dtype=float)
        _, _, a = self._inside(t)
        out = np.where((t >= 0) & (t <= self.T), a, 0.0)
        return out if out.ndim else float(out)

    @property
    def kick_amplitude(self) -> float:
        """A0: velocity jump at the start as a fraction of the mean speed L/T."""
        if self.kind is ProfileKind.LINEAR:
            return 1.0
        if self.kind is ProfileKind.SINUSOIDAL:
            return 0.0
        n = self.N
        return n / math.tanh(n) / math.cosh(n) ** 2

    @property
    def accel_amplitude(self) -> float:
        """B0: starting acceleration as a fraction of L/T^2."""
        if self.kind is ProfileKind.LINEAR:
            return 0.0
        if self.kind is ProfileKind.SINUSOIDAL:
            return math.pi ** 2 / 2
        return 4 * self.N ** 2 / math.cosh(self.N) ** 2

    def kicks(self):
        dv = self.kick_amplitude * self.L / self.T
        if dv == 0.0:
            return []
        return [(0.0, dv), (self.T, -dv)]

    def decomposition(self) -> "ForcingDecomposition":
        return ForcingDecomposition(self.kick_amplitude, self.accel_amplitude,
                                    self.regular_acceleration, self.kicks())

    def to_config(self) -> dict:
        cfg = {"kind": self.kind.value, "L_um": self.L * 1e6, "T_us": self.T * 1e6}
        if self.N is not None:
            cfg["N"] = self.N
        return cfg

    @classmethod
    def from_config(cls, cfg: dict) -> "ShuttleProfile":
        return cls(ProfileKind(cfg["kind"]), float(cfg["L_um"]) * 1e-6,
                   float(cfg["T_us"]) * 1e-6,
                   None if cfg.get("N") is None else float(cfg["N"]))


@dataclass(frozen=True)
class ForcingDecomposition:
    A0: float
    B0: float
    regular_acceleration: Callable
    kicks: list


def x0(profile: ShuttleProfile, t):
    return profile.position(t)


def xddot0(profile: ShuttleProfile, t):
    """Regular part of the frame acceleration at t, and the kick list
    as (time, velocity jump) pairs."""
    return profile.regular_acceleration(t), profile.kicks()


@dataclass(frozen=True)
class FreqVariation:
    g: float
    M: int
    omega0: float
    T: float

    def __post_init__(self):
        if not 0.0 <= self.g < 1.0:
            raise ValueError("modulation depth g must lie in [0, 1)")
        if int(self.M) != self.M or self.M < 0:
            raise ValueError("M must be a nonnegative integer")
        if not (self.omega0 > 0 and self.T > 0):
            raise ValueError("omega0 and T must be positive")

    def omega_squared(self, t):
        """Squared frequency at protocol time t; the model window [-T/2, T/2]
        is shifted onto [0, T]."""
        t = np.asarray(t, dtype=float)
        phase = (self.M + 0.5) * 2 * np.pi * (t - 0.5 * self.T) / self.T
        out = self.omega0 ** 2 * (1.0 - self.g * np.cos(phase))
        return out if out.ndim else float(out)

    def to_config(self) -> dict:
        return {"g": self.g, "M": int(self.M), "omega0_hz": self.omega0 / (2 * math.pi),
                "T_us": self.T * 1e6}

    @classmethod
    def from_config(cls, cfg: dict) -> "FreqVariation":
        return cls(float(cfg.get("g", 0.0)), int(cfg.get("M", 0)),
                   2 * math.pi * float(cfg["omega0_hz"]), float(cfg["T_us"]) * 1e-6)


def omega_squared(fv: FreqVariation, t):
    return fv.omega_squared(t)


def voltage_from_trajectory(profile: ShuttleProfile, eta: Callable[[float], float], d: float,
                            omega: float, mass: float, charge: float, check_samples: int = 401):
    """Waveform t -> capacitor voltage difference that places the minimum at x0(t).

    The returned callable accepts scalars or arrays.  eta is sampled along the
    path up front so a zero crossing is reported before any waveform is used.
    """
    scale = mass * omega ** 2 * d / charge

    def eta_checked(x):
        vals = np.asarray(np.vectorize(eta, otypes=[float])(x), dtype=float)
        bad = np.flatnonzero(vals == 0.0)
        if bad.size:
            where = np.atleast_1d(x)[bad[0]]
            raise SynthesisError(f"geometry factor vanishes at x={float(where)!r}")
        return vals

    probe = np.linspace(0.0, profile.T, check_samples)
    xs = profile.position(probe)
    ev = eta_checked(xs)
    if np.any(np.sign(ev) != np.sign(ev[0])):
        k = int(np.flatnonzero(np.sign(ev) != np.sign(ev[0]))[0])
        raise SynthesisError(f"geometry factor changes sign near x={float(xs[k])!r}")

    def waveform(t):
        x = profile.position(t)
        out = np.asarray(x, dtype=float) * scale / eta_checked(x)
        return out if out.ndim else float(out)

    return waveform


@dataclass(frozen=True)
class AdiabaticityReport:
    kick_ok: bool
    kick_margin: float
    accel_ok: bool
    accel_margin: float
    tanh_vs_sin: bool
    threshold: float = 10.0


def adiabaticity_check(profile: ShuttleProfile, omega0: float,
                       threshold: float = 10.0) -> AdiabaticityReport:
    """Screens for the start/stop kick and the start/stop acceleration.

    Both conditions are taken per unit shuttle distance, so the kick margin is
    omega0*T/A0 and the acceleration margin is (omega0*T)^2 / (2*B0).  A
    margin above ``threshold`` counts as "much less than".
    """
    wt = omega0 * profile.T
    a0, b0 = profile.kick_amplitude, profile.accel_amplitude
    kick_margin = math.inf if a0 == 0 else wt / a0
    accel_margin = math.inf if b0 == 0 else wt * wt / (2 * b0)
    if profile.kind is ProfileKind.TANH:
        n = profile.N
        tanh_vs_sin = (n + 4 * n * n) * math.exp(-2 * n) < math.pi ** 2 / 2
    else:
        tanh_vs_sin = False
    return AdiabaticityReport(kick_margin > threshold, kick_margin, accel_margin > threshold,
                              accel_margin, tanh_vs_sin, threshold)


# ------------------------------------------------------------ protocol design

def _segmented_basis(model: TrapModel) -> SegmentedLinearTrap:
    for b in model.control_bases:
        if isinstance(b, SegmentedLinearTrap):
            return b
    raise DesignError("model has no segmented control electrodes")


def axial_energy(model: TrapModel, voltages, x: float) -> float:
    e, _ = model.energy_and_gradient(np.array([x, 0.0, 0.0]), voltages, 0.0, Mode.PSEUDO)
    return e


def axial_minimum(model: TrapModel, voltages, lo: float, hi: float, n_scan: int = 64):
    """Axial potential minimum inside [lo, hi] (scan, then golden section)."""
    xs = np.linspace(lo, hi, n_scan)
    u = np.array([axial_energy(model, voltages, x) for x in xs])
    i = int(np.argmin(u))
    a, b = xs[max(i - 1, 0)], xs[min(i + 1, n_scan - 1)]
    x, _ = golden_minimize(lambda s: axial_energy(model, voltages, s), a, b, tol=1e-13)
    return x


def axial_frequency(model: TrapModel, voltages, x: float, h: float) -> float:
    """Secular frequency from a central second difference of the axial energy."""
    curv = (axial_energy(model, voltages, x + h) - 2 * axial_energy(model, voltages, x)
            + axial_energy(model, voltages, x - h)) / (h * h)
    if curv <= 0:
        return 0.0
    return math.sqrt(curv / model.mass)


def design_linear_protocol(model: TrapModel, start: float, end: float, n_steps: int,
                           target_omega: float, freq_tol: float = 0.005,
                           step_time: float = 5e-6, max_rounds: int = 5) -> VoltageSchedule:
    """Constant-frequency transport from ``start`` to ``end`` along the axis.

    Every waypoint uses the segment nearest to it as the well center, with its
    two neighbours as endcaps: V_left = s(1 + delta), V_right = s(1 - delta).
    Each round bisects delta until the minimum sits on the waypoint, then
    adjusts s by secant iteration until the measured frequency is on target.
    """
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    seg = _segmented_basis(model)
    lo_c, hi_c = seg.centers[0], seg.centers[-1]
    for p in (start, end):
        if not lo_c + seg.d * 0.5 <= p <= hi_c - seg.d * 0.5:
            raise DesignError(f"waypoint {p!r} is outside the usable electrode span")
    ids = model.control_ids
    col = {e: ids.index(e) for e in seg.electrode_ids}
    pos_tol = max(abs(end - start) / (10.0 * n_steps), 1e-9 * seg.d)
    h = 1e-3 * seg.d
    waypoints = np.linspace(start, end, n_steps + 1)
    rows = []
    scale = None
    for target in waypoints:
        k = int(np.argmin(np.abs(seg.centers - target)))
        k = min(max(k, 1), len(seg.centers) - 2)
        left, right = col[seg.electrode_ids[k - 1]], col[seg.electrode_ids[k + 1]]
        lo, hi = seg.centers[k - 1], seg.centers[k + 1]

        def volts(delta, s):
            v = np.zeros(len(ids))
            v[left] = s * (1 + delta)
            v[right] = s * (1 - delta)
            return v

        if scale is None:
            scale = 1.0
        delta = 0.0
        ok = False
        for _ in range(max_rounds):
            delta = _bisect_delta(model, volts, scale, lo, hi, target, pos_tol)
            scale, freq = _tune_scale(model, volts, delta, scale, lo, hi, h, target_omega,
                                      freq_tol)
            xmin = axial_minimum(model, volts(delta, scale), lo, hi)
            if abs(xmin - target) <= pos_tol and abs(freq / target_omega - 1) <= freq_tol:
                ok = True
                break
        if not ok:
            raise DesignError(f"waypoint {target!r} did not converge",
                              residuals={"position": xmin - target,
                                         "frequency": freq / target_omega - 1})
        rows.append(volts(delta, scale))
    times = step_time * np.arange(n_steps + 1)
    return VoltageSchedule(ids, times, np.array(rows))


def _bisect_delta(model, volts, scale, lo, hi, target, tol, max_iter=200):
    a, b = -0.999, 0.999
    xa = axial_minimum(model, volts(a, scale), lo, hi)
    xb = axial_minimum(model, volts(b, scale), lo, hi)
    if not xa <= target <= xb:
        raise DesignError(f"endcap asymmetry cannot reach {target!r}",
                          residuals={"reachable": (xa, xb)})
    for _ in range(max_iter):
        mid = 0.5 * (a + b)
        xm = axial_minimum(model, volts(mid, scale), lo, hi)
        if abs(xm - target) <= tol:
            return mid
        if xm < target:
            a = mid
        else:
            b = mid
    return 0.5 * (a + b)


def _tune_scale(model, volts, delta, scale, lo, hi, h, target, tol, max_iter=30):
    def resid(s):
        v = volts(delta, s)
        x = axial_minimum(model, v, lo, hi)
        w = axial_frequency(model, v, x, h)
        return w / target - 1.0, w

    s0, (r0, w0) = scale, resid(scale)
    if abs(r0) <= tol * 0.1:
        return s0, w0
    # frequency ~ sqrt(scale) when controls dominate: good first secant partner
    s1 = s0 / (1 + r0) ** 2 if w0 > 0 else s0 * 4
    r1, w1 = resid(s1)
    for _ in range(max_iter):
        if abs(r1) <= tol * 0.1 or r1 == r0:
            break
        s2 = s1 - r1 * (s1 - s0) / (r1 - r0)
        if s2 <= 0:
            s2 = 0.5 * s1
        s0, r0 = s1, r1
        s1 = s2
        r1, w1 = resid(s1)
    return s1, w1
