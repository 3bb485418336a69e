"""Quantum motional heating of a shuttled ion.

The classical response of the forced parametric oscillator is integrated in
scaled variables: time is measured in units of 1/omega0 and the displacement
in units of a characteristic amplitude of the forcing.  Energies follow from
the end state; transition probabilities come from expanding the bivariate
generating function as a truncated power series.
"""
from __future__ import annotations

import enum
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import solver_core as sc
from .field_model import ELEMENTARY_CHARGE, EPSILON_0, HBAR, DomainError
from .shuttle_protocols import FreqVariation, ProfileKind, ShuttleProfile


class Direction(str, enum.Enum):
    FORWARD = "Forward"
    REVERSED = "Reversed"


class AccuracyError(RuntimeError):
    pass


class UnsupportedCombinationError(ValueError):
    pass


class TruncationError(RuntimeError):
    pass


DEFAULT_GOAL = sc.ErrorGoal(10, 10)
PAIR_GOAL = sc.ErrorGoal(12, 12)


# ------------------------------------------------------------ frequency specs

@dataclass(frozen=True)
class _Freq:
    omega0: float
    kind: int | None            # compiled frequency kind, None for a Python callable
    params: tuple
    func: Callable | None = None


def _freq_spec(omega, T: float) -> _Freq:
    """Normalize a frequency description. Scaled time is omega0 * t."""
    if isinstance(omega, FreqVariation):
        if not math.isclose(omega.T, T, rel_tol=1e-12):
            raise ValueError("frequency model and profile durations differ")
        return _Freq(omega.omega0, 1, (1.0, omega.g, float(omega.M), omega.omega0 * T))
    if callable(omega):
        w0 = float(omega(0.0))
        if not w0 > 0:
            raise ValueError("omega must be positive")
        return _Freq(w0, None, (), omega)
    w0 = float(omega)
    if not w0 > 0:
        raise ValueError("omega must be positive")
    return _Freq(w0, 0, (1.0, 0.0, 0.0, 1.0))


def _is_constant(omega) -> bool:
    if isinstance(omega, FreqVariation):
        return omega.g == 0.0
    return not callable(omega)


def _accel_spec(profile: ShuttleProfile | None, scale: float, omega0: float):
    if profile is None or profile.kind is ProfileKind.LINEAR:
        return 0, (0.0, 1.0, 1.0)
    kind = 1 if profile.kind is ProfileKind.SINUSOIDAL else 2
    return kind, (profile.L / scale, omega0 * profile.T, profile.N or 1.0)


def _amplitude_scale(profile: ShuttleProfile | None, omega0: float) -> float:
    if profile is None:
        return 1.0
    wt = omega0 * profile.T
    s = profile.L * max(profile.kick_amplitude / wt, profile.accel_amplitude / wt ** 2)
    return s if s > 0 else profile.L


def _system(freq: _Freq, profile, scale, span_s, reversed_):
    if freq.kind is not None:
        ak, ap = _accel_spec(profile, scale, freq.omega0)
        return sc.parametric_oscillator_system(freq.kind, freq.params, ak, ap,
                                               reverse_span=span_s if reversed_ else None)
    w0 = freq.omega0

    def deriv(tau, y):
        s = span_s - tau if reversed_ else tau
        w = freq.func(s / w0) / w0
        acc = 0.0
        if profile is not None and 0.0 <= s <= span_s:
            acc = profile.regular_acceleration(s / w0) / (w0 * w0 * scale)
        return np.array([y[1], -w * w * y[0] - acc])

    return sc.OdeSystem(deriv, 2, "parametric-oscillator")


def _config(span_s: float, config: sc.SolverConfig | None) -> sc.SolverConfig:
    cfg = config or sc.SolverConfig(initial_step=0.5)
    return cfg.with_span(span_s)


# ------------------------------------------------------------ classical response

@dataclass
class ClassicalResponse:
    """Samples of the displacement from the moving minimum.

    The first sample's velocity already includes a kick at t=0 and the last
    sample's velocity includes a kick at t=T.
    """
    times: np.ndarray
    xi: np.ndarray
    xi_dot: np.ndarray
    direction: Direction
    trace: sc.IntegrationTrace | None = field(default=None, repr=False)
    _scaled_end: tuple | None = field(default=None, repr=False)
    _scale: float = 1.0
    _omega0: float = 1.0

    @property
    def final(self):
        return float(self.xi[-1]), float(self.xi_dot[-1])


def solve_xi(profile: ShuttleProfile, omega, direction=Direction.FORWARD,
             goal: sc.ErrorGoal = DEFAULT_GOAL,
             config: sc.SolverConfig | None = None) -> ClassicalResponse:
    """Integrate xi'' = -omega(t)^2 xi - x0''(t) over [0, T].

    ``omega`` is a constant (rad/s), a FreqVariation, or a callable t -> rad/s.
    Kicks enter as velocity jumps of -dv at their times.  The reversed
    direction integrates the time-reflected system: omega(T - t) and
    x0''(T - t), kicks moved to T - t.
    """
    direction = Direction(direction)
    T = profile.T
    freq = _freq_spec(omega, T)
    w0 = freq.omega0
    scale = _amplitude_scale(profile, w0)
    span_s = w0 * T
    rev = direction is Direction.REVERSED
    kicks = [((T - t) if rev else t, dv) for t, dv in profile.kicks()]
    y = np.zeros(2)
    for t, dv in kicks:
        if t == 0.0:
            y[1] -= dv / (w0 * scale)
    system = _system(freq, profile, scale, span_s, rev)
    trace = sc.integrate(system, 0.0, y, span_s, _config(span_s, config), goal)
    states = np.array(trace.states, dtype=float)
    for t, dv in kicks:
        if t == T:
            states[-1, 1] -= dv / (w0 * scale)
    return ClassicalResponse(trace.times / w0, states[:, 0] * scale,
                             states[:, 1] * scale * w0, direction, trace,
                             (float(states[-1, 0]), float(states[-1, 1])), scale, w0)


def upsilon(response: ClassicalResponse, omega_at_end: float, mass: float) -> float:
    """Classical forcing energy at the end of the response in units of hbar*omega."""
    w = float(omega_at_end)
    # evaluate in scaled units to keep the small end state well conditioned
    if response._scaled_end is None:
        xi, xid = response.final
        return upsilon_from_state(xi, xid, w, mass)
    x, v = response._scaled_end
    s, w0 = response._scale, response._omega0
    r = w / w0
    return mass * s * s * w0 * w0 / (2 * HBAR * w) * (r * r * x * x + v * v)


def upsilon_from_state(xi: float, xi_dot: float, omega: float, mass: float) -> float:
    return mass / (2 * HBAR * omega) * (omega ** 2 * xi ** 2 + xi_dot ** 2)


# ------------------------------------------------------------ homogeneous pair

@dataclass
class HomogeneousPair:
    times: np.ndarray
    x1: np.ndarray          # seconds
    x1_dot: np.ndarray
    x2: np.ndarray
    x2_dot: np.ndarray      # 1/s
    omega0: float

    @property
    def wronskian(self) -> np.ndarray:
        return self.x1_dot * self.x2 - self.x1 * self.x2_dot


def _sampled_run(system, y0, taus, goal, config):
    out = np.empty((len(taus), 2))
    out[0] = y0
    y = np.asarray(y0, dtype=float)
    for i in range(len(taus) - 1):
        span = taus[i + 1] - taus[i]
        cfg = (config or sc.SolverConfig(initial_step=0.5)).with_span(span)
        tr = sc.integrate(system, taus[i], y, taus[i + 1], cfg, goal)
        y = tr.final_state.copy()
        out[i + 1] = y
    return out


def homogeneous_solutions(omega, T: float, n_samples: int = 65,
                          goal: sc.ErrorGoal = PAIR_GOAL,
                          config: sc.SolverConfig | None = None) -> HomogeneousPair:
    """Fundamental solutions with X1(0)=0, X1'(0)=1 and X2(0)=1, X2'(0)=0."""
    freq = _freq_spec(omega, T)
    w0 = freq.omega0
    span_s = w0 * T
    system = _system(freq, None, 1.0, span_s, False)
    taus = np.linspace(0.0, span_s, max(int(n_samples), 2))
    a = _sampled_run(system, [0.0, 1.0], taus, goal, config)
    b = _sampled_run(system, [1.0, 0.0], taus, goal, config)
    pair = HomogeneousPair(taus / w0, a[:, 0] / w0, a[:, 1], b[:, 0], b[:, 1] * w0, w0)
    # cancellation in the Wronskian grows with the solution magnitudes
    size = np.abs(pair.x1_dot * pair.x2) + np.abs(pair.x1 * pair.x2_dot)
    worst = float(np.max(np.abs(pair.wronskian - 1.0) / np.maximum(size, 1.0)))
    if worst > 1e-6:
        raise AccuracyError(f"Wronskian drifted by {worst:.3g}; tighten the error goal")
    return pair


def q_factor(pair: HomogeneousPair, omega0: float | None = None) -> float:
    w0 = pair.omega0 if omega0 is None else float(omega0)
    x1, v1, x2, v2 = pair.x1[-1], pair.x1_dot[-1], pair.x2[-1], pair.x2_dot[-1]
    return float(0.5 * (w0 * w0 * x1 * x1 + v1 * v1 + x2 * x2 + v2 * v2 / (w0 * w0)))


# ------------------------------------------------------------ heating report

@dataclass
class HeatingReport:
    upsilon_fwd: float
    upsilon_rev: float
    q_factor: float
    n_mean: float
    n_var: float
    k: int = 0

    def to_dict(self) -> dict:
        d = asdict(self)
        d["units"] = {name: "dimensionless" for name in
                      ("upsilon_fwd", "upsilon_rev", "q_factor", "n_mean", "n_var")}
        return d

    def write_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")


def _has_forcing(profile: ShuttleProfile | None) -> bool:
    return profile is not None and (profile.kick_amplitude != 0 or profile.accel_amplitude != 0)


def heating_report(profile: ShuttleProfile | None, omega, mass: float, k: int = 0,
                   T: float | None = None, goal: sc.ErrorGoal = DEFAULT_GOAL) -> HeatingReport:
    """Mean and variance of the final motional state.

    ``profile`` may be None for pure frequency variation over duration ``T``.
    """
    if k < 0:
        raise ValueError("initial state must be nonnegative")
    forced = _has_forcing(profile)
    if forced and k > 0:
        raise UnsupportedCombinationError("excited initial states are only supported "
                                          "without inertial forcing")
    duration = profile.T if profile is not None else T
    if duration is None:
        raise ValueError("duration required when no profile is given")
    freq = _freq_spec(omega, duration)
    w_end = (freq.func(duration) if freq.func is not None
             else math.sqrt(omega.omega_squared(duration)) if isinstance(omega, FreqVariation)
             else freq.omega0)
    if forced:
        uf = upsilon(solve_xi(profile, omega, Direction.FORWARD, goal), w_end, mass)
        ur = upsilon(solve_xi(profile, omega, Direction.REVERSED, goal), w_end, mass)
    else:
        uf = ur = 0.0
    if _is_constant(omega):
        q = 1.0
    else:
        q = q_factor(homogeneous_solutions(omega, duration))
    if not forced:
        n_mean = (k + 0.5) * q - 0.5
        n_var = 0.5 * (q * q - 1.0) * (k * k + k + 1)
    elif q == 1.0:
        n_mean = n_var = uf
    else:
        n_mean = uf + 0.5 * (q - 1.0)
        n_var = 0.5 * (q * q - 1.0) + (2.0 * uf * q - ur)
    return HeatingReport(uf, ur, q, n_mean, n_var, k)


# ------------------------------------------------------------ closed forms

def _n_linear(L, T, w0, mass):
    return mass * L * L / (HBAR * w0 * T * T) * (1.0 - math.cos(w0 * T))


def _n_sinusoidal(L, T, w0, mass):
    # the convolution of the cosine forcing gives half of the printed prefactor
    x = w0 * T
    pre = mass * L * L * w0 / (2 * HBAR)
    d = x - math.pi
    if abs(d) < 1e-4:
        # cos^2(x/2) / (pi^2 - x^2)^2 around x = pi:
        # cos(x/2) = -sin(d/2), pi^2 - x^2 = -d(2 pi + d)
        r = (math.sin(d / 2) / (d / 2)) if d != 0 else 1.0
        return pre * math.pi ** 4 * r * r / (4 * (2 * math.pi + d) ** 2)
    return pre * math.pi ** 4 * math.cos(x / 2) ** 2 / (math.pi ** 2 - x * x) ** 2


def hyp2f1_unit(b: complex, z: complex, tol: float = 1e-17, max_terms: int = 100000) -> complex:
    """2F1(1, b; 1 + b; z) for real z < 0, from its power series or, for |z| > 1,
    the inversion formula that maps z to 1/z."""
    z = complex(z)
    if abs(z) < 1:
        total, zk = 0j, 1 + 0j
        for k in range(max_terms):
            term = b / (b + k) * zk
            total += term
            if abs(term) <= tol * abs(total) and k > 2:
                return total
            zk *= z
        raise TruncationError("hypergeometric series did not converge")
    if abs(z) == 1:
        raise ValueError("|z| = 1 is not supported")
    inner = hyp2f1_unit(1 - b, 1 / z, tol, max_terms)
    mz = -z
    return (b / (b - 1) / mz * inner
            + math.pi * b / np.sin(math.pi * b) * np.exp(-b * np.log(mz)))


def tanh_n_hypergeometric(profile: ShuttleProfile, omega0: float, mass: float) -> float:
    """Closed-form final state for the tanh profile at constant frequency.

    The prefactor is mL^2 omega0 / (8 hbar); the printed form carries 4 in
    place of 8, which overstates the result by exactly a factor of two.
    """
    if profile.kind is not ProfileKind.TANH:
        raise ValueError("tanh profile required")
    n, L, T = profile.N, profile.L, profile.T
    x = omega0 * T
    coth = 1.0 / math.tanh(n)
    bp = 1j * x / (4 * n)
    bm = -bp
    e = np.exp(1j * x)
    zs, zl = -math.exp(-2 * n), -math.exp(2 * n)
    first = (1 - coth + e * (1 + coth - 2 * coth * hyp2f1_unit(bm, zs))
             + 2 * coth * hyp2f1_unit(bm, zl))
    second = (1 + coth - 2 * coth * hyp2f1_unit(bp, zs)
              + e * (1 - coth + 2 * coth * hyp2f1_unit(bp, zl)))
    val = mass * L * L * omega0 / (8 * HBAR) * np.exp(-1j * x) * first * second
    return float(val.real)


def closed_form_n(profile: ShuttleProfile, omega0: float, mass: float,
                  hypergeometric: bool = False) -> float:
    """Final mean state from the ground state at constant frequency."""
    L, T = profile.L, profile.T
    if profile.kind is ProfileKind.LINEAR:
        return _n_linear(L, T, omega0, mass)
    if profile.kind is ProfileKind.SINUSOIDAL:
        return _n_sinusoidal(L, T, omega0, mass)
    if hypergeometric:
        return tanh_n_hypergeometric(profile, omega0, mass)
    return upsilon(solve_xi(profile, omega0), omega0, mass)


# ------------------------------------------------------------ generating function

def _smul(a, b):
    """Truncated product of bivariate series stored as [deg_u, deg_v] arrays."""
    ku, kv = a.shape
    out = np.zeros_like(a)
    for i in range(ku):
        ai = a[i]
        if not ai.any():
            continue
        for j in range(ku - i):
            bj = b[j]
            if bj.any():
                out[i + j] += np.convolve(ai, bj)[:kv]
    return out


def _total_degree(shape):
    return np.add.outer(np.arange(shape[0]), np.arange(shape[1]))


def _mask(shape, deg):
    return (_total_degree(shape) <= deg).astype(float)


def _newton_schedule(shape):
    top = shape[0] + shape[1] - 2
    degs, d = [], 0
    while d < top:
        d = 2 * d + 1
        degs.append(min(d, top))
    return degs


def _sinv(a):
    """Reciprocal by Newton iteration, doubling the correct total degree."""
    out = np.zeros_like(a)
    out[0, 0] = 1.0 / a[0, 0]
    for deg in _newton_schedule(a.shape):
        m = _mask(a.shape, deg)
        e = -_smul(a * m, out)
        e[0, 0] += 2.0
        out = _smul(out, e) * m
    return out


def _sinvsqrt(a):
    """a^(-1/2): y <- y (3 - a y^2) / 2."""
    out = np.zeros_like(a)
    out[0, 0] = a[0, 0] ** -0.5
    for deg in _newton_schedule(a.shape):
        m = _mask(a.shape, deg)
        e = -_smul(a * m, _smul(out, out))
        e[0, 0] += 3.0
        out = 0.5 * _smul(out, e) * m
    return out


def _slog(a):
    """log a via the Euler operator: theta log a = (theta a) / a."""
    deg = _total_degree(a.shape)
    r = _smul(deg * a, _sinv(a))
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(deg > 0, r / np.maximum(deg, 1), 0.0)
    out[0, 0] = math.log(a[0, 0])
    return out


def _sexp(f):
    """exp f for f with zero constant term: y <- y (1 + f - log y)."""
    out = np.zeros_like(f)
    out[0, 0] = 1.0
    for deg in _newton_schedule(f.shape):
        m = _mask(f.shape, deg)
        e = (f - _slog(out)) * m
        e[0, 0] += 1.0
        out = _smul(out, e) * m
    return out


def _poly(coeffs: dict, shape):
    out = np.zeros(shape)
    for (i, j), c in coeffs.items():
        if i < shape[0] and j < shape[1]:
            out[i, j] += c
    return out


def transition_probabilities(q: float, upsilon_fwd: float = 0.0, upsilon_rev: float = 0.0,
                             n_max: int = 64, k_max: int | None = None,
                             norm_tol: float = 1e-6) -> np.ndarray:
    """P[n, k]: probability of ending in n after starting in k.

    The generating function sum u^k v^n P_nk is expanded as a truncated
    series in u (to k_max) and v (to n_max).
    """
    k_max = n_max if k_max is None else k_max
    if n_max > 128 or k_max > 128 or n_max < 0 or k_max < 0:
        raise ValueError("truncation orders must lie in [0, 128]")
    if q < 1 - 1e-9 or upsilon_fwd < 0 or upsilon_rev < 0:
        raise ValueError("need Q >= 1 and nonnegative forcing energies")
    shape = (k_max + 1, n_max + 1)
    # D = Q (1-u^2)(1-v^2) + (1+u^2)(1+v^2) - 4uv
    den = _poly({(0, 0): q + 1, (2, 0): 1 - q, (0, 2): 1 - q, (2, 2): q + 1,
                 (1, 1): -4.0}, shape)
    # numerator of the exponent after cancelling the (1+u), (1+v) factors:
    # -(1-u^2)(1-v)^2 Yr - (1-v^2)(1-u)^2 Yf
    ur, uf = upsilon_rev, upsilon_fwd
    num = _poly({(0, 0): -(ur + uf), (0, 1): 2 * ur, (0, 2): -ur + uf,
                 (2, 0): ur - uf, (2, 1): -2 * ur, (2, 2): ur + uf,
                 (1, 0): 2 * uf, (1, 2): -2 * uf}, shape)
    isq = _sinvsqrt(den)
    expo = _smul(num, _smul(isq, isq))
    c0 = expo[0, 0]
    expo[0, 0] = 0.0
    gen = math.sqrt(2.0) * math.exp(c0) * _smul(isq, _sexp(expo))
    p = gen.T.copy()                                  # rows n, columns k
    if p.min() < -1e-12:
        raise TruncationError(f"negative probability {p.min():.3g}; series is ill-conditioned")
    p[p < 0] = 0.0
    total = p[:, 0].sum()
    if abs(total - 1.0) > norm_tol:
        raise TruncationError(f"ground-state column sums to {total!r}; raise n_max")
    return p


# ------------------------------------------------------------ Mathieu stability

@dataclass
class MathieuScan:
    a: float
    q: float
    nu: complex
    stable: bool
    T_fv: float
    trace: float = 0.0
    M: int | None = None


def mathieu_parameters(fv: FreqVariation):
    t_fv = fv.omega0 * fv.T / ((fv.M + 0.5) * math.pi)
    a = t_fv * t_fv
    return a, fv.g * a / 2.0, t_fv


def mathieu_monodromy(a: float, q: float, goal: sc.ErrorGoal = PAIR_GOAL) -> np.ndarray:
    """Period map of X'' + (a - 2q cos 2z) X = 0 over z in [0, pi]."""
    system = sc.parametric_oscillator_system(2, (a, q, 0.0, 1.0))
    cfg = sc.SolverConfig(initial_step=0.25).with_span(math.pi)
    c = sc.integrate(system, 0.0, [1.0, 0.0], math.pi, cfg, goal).final_state
    s = sc.integrate(system, 0.0, [0.0, 1.0], math.pi, cfg, goal).final_state
    return np.array([[c[0], s[0]], [c[1], s[1]]])


def characteristic_exponent(trace: float, a: float) -> complex:
    """nu with cos(pi nu) = trace/2, on the branch nearest sqrt(a).

    Stable: nu = +-arccos(trace/2)/pi + 2j.  Unstable: the real part is an
    integer whose parity follows the sign of the trace (even for a positive
    trace, odd for a negative one), and the imaginary part is reported
    nonnegative.
    """
    half = trace / 2.0
    target = math.sqrt(a) if a > 0 else 0.0
    if abs(half) <= 1.0:
        base = math.acos(half) / math.pi
        best = None
        for sgn in (1.0, -1.0):
            j = round((target - sgn * base) / 2.0)
            for jj in (j - 1, j, j + 1):
                cand = sgn * base + 2 * jj
                if best is None or abs(cand - target) < abs(best - target):
                    best = cand
        return complex(best, 0.0)
    im = math.acosh(abs(half)) / math.pi
    parity = 0 if half > 0 else 1
    re = 2 * round((target - parity) / 2.0) + parity
    return complex(re, im)


def mathieu_scan(fv: FreqVariation, goal: sc.ErrorGoal = PAIR_GOAL,
                 band: float = 1e-9) -> MathieuScan:
    a, q, t_fv = mathieu_parameters(fv)
    mono = mathieu_monodromy(a, q, goal)
    tr = float(np.trace(mono))
    stable = abs(tr) / 2.0 <= 1.0 + band
    nu = characteristic_exponent(max(min(tr, 2.0), -2.0) if stable else tr, a)
    return MathieuScan(a, q, nu, stable, t_fv, tr, int(fv.M))


def write_scan_csv(path, scans: Sequence[MathieuScan], n_means: Sequence[float] | None = None):
    fmt = lambda v: format(float(v), ".17g")
    with open(path, "w") as fh:
        fh.write("M,a,q,re_nu,im_nu,stable,n_mean\n")
        for i, s in enumerate(scans):
            n = "" if n_means is None else fmt(n_means[i])
            fh.write(f"{s.M},{fmt(s.a)},{fmt(s.q)},{fmt(s.nu.real)},{fmt(s.nu.imag)},"
                     f"{str(bool(s.stable)).lower()},{n}\n")


# ------------------------------------------------------------ criteria

@dataclass(frozen=True)
class CriteriaParams:
    wavenumber: float
    numerical_aperture: float
    d_eff: float
    wavelength: float

    def __post_init__(self):
        if min(self.wavenumber, self.d_eff, self.wavelength) <= 0:
            raise ValueError("criteria parameters must be positive")
        if not 0 < self.numerical_aperture < 1:
            raise ValueError("numerical aperture must lie in (0, 1)")


@dataclass(frozen=True)
class Criterion:
    ok: bool
    value: float
    threshold: float


@dataclass(frozen=True)
class CriteriaReport:
    adiabatic: Criterion
    lamb_dicke: Criterion
    diffraction: Criterion
    anharmonic: Criterion

    def to_dict(self):
        return {k: asdict(v) for k, v in asdict_shallow(self).items()}


def asdict_shallow(obj):
    return {k: getattr(obj, k) for k in obj.__dataclass_fields__}


def criteria_report(n_mean: float, omega0: float, mass: float, params: CriteriaParams,
                    threshold: float = 0.1) -> CriteriaReport:
    """The four "much less than one" screens; each value must stay below threshold."""
    occ = 2.0 * n_mean + 1.0
    ld = HBAR * params.wavenumber ** 2 / (2.0 * mass * omega0) * occ
    diff = 0.068 * params.numerical_aperture ** 2 * ld
    anh = HBAR / (2.0 * mass * omega0 * params.d_eff ** 2) * occ
    mk = lambda v: Criterion(bool(v < threshold), float(v), threshold)
    return CriteriaReport(mk(n_mean), mk(ld), mk(diff), mk(anh))


# ------------------------------------------------------------ separation

@dataclass(frozen=True)
class SeparationResult:
    spacing_harmonic: float | None
    omega_com_harmonic: float | None
    spacing_quartic: float
    omega_com_quartic: float


def harmonic_separation(alpha: float, mass: float):
    """Two ions in a per-ion potential e*alpha*x^2: spacing and COM frequency."""
    if not alpha > 0:
        raise DomainError("harmonic branch needs alpha > 0")
    e = ELEMENTARY_CHARGE
    spacing = 2.0 * (e / (32.0 * math.pi * EPSILON_0 * alpha)) ** (1.0 / 3.0)
    return spacing, math.sqrt(2.0 * e * alpha / mass)


def quartic_separation(beta: float, mass: float):
    if not beta > 0:
        raise DomainError("quartic branch needs beta > 0")
    e = ELEMENTARY_CHARGE
    spacing = (e / (2.0 * beta * math.pi * EPSILON_0)) ** 0.2
    omega = math.sqrt(3.0 * e / mass) * (e / (2.0 * math.pi * EPSILON_0)) ** 0.2 * beta ** 0.3
    return spacing, omega


def separation_analysis(alpha: float, beta: float, mass: float) -> SeparationResult:
    qs, qw = quartic_separation(beta, mass)
    if alpha > 0:
        hs, hw = harmonic_separation(alpha, mass)
    else:
        hs = hw = None
    return SeparationResult(hs, hw, qs, qw)
