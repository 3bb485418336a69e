"""Electrode basis functions, trap potentials and forces.

A basis is anything exposing ``electrode_ids``, ``bounds`` and
``evaluate(x, hessian=False)`` returning per-electrode values and gradients
(and Hessians on request).  Two families ship here: sampled grids with
tricubic Hermite interpolation and closed-form analytic stand-ins.
"""
from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numba
import numpy as np
from scipy.interpolate import CubicHermiteSpline

# pinned SI constants
ELEMENTARY_CHARGE = 1.602176634e-19
EPSILON_0 = 8.8541878128e-12
HBAR = 1.054571817e-34
ATOMIC_MASS_UNIT = 1.66053906660e-27
COULOMB_K = 1.0 / (4.0 * math.pi * EPSILON_0)


def amu_to_kg(mass_u: float) -> float:
    return float(mass_u) * ATOMIC_MASS_UNIT


class DomainError(ValueError):
    """A position fell outside the region where a basis may be evaluated."""


class GeometryError(ValueError):
    pass


class ConfigurationError(ValueError):
    pass


class SingularityError(ValueError):
    pass


class Mode(str, enum.Enum):
    FULL_RF = "FullRf"
    PSEUDO = "Pseudo"


_AXES = "xyz"


# ============================================================ tricubic grids

@numba.njit(cache=True)
def _hermite_basis(u):
    u2 = u * u
    u3 = u2 * u
    b = np.array([2 * u3 - 3 * u2 + 1, u3 - 2 * u2 + u, -2 * u3 + 3 * u2, u3 - u2])
    db = np.array([6 * u2 - 6 * u, 3 * u2 - 4 * u + 1, -6 * u2 + 6 * u, 3 * u2 - 2 * u])
    d2b = np.array([12 * u - 6, 6 * u - 4, -12 * u + 6, 6 * u - 2])
    return b, db, d2b


@numba.njit(cache=True)
def _tricubic(stack, i, j, k, u, v, w):
    # stack[p + 2q + 4r] holds d^(p,q,r) f in index units
    bx, dbx, d2bx = _hermite_basis(u)
    by, dby, d2by = _hermite_basis(v)
    bz, dbz, d2bz = _hermite_basis(w)
    val = 0.0
    g = np.zeros(3)
    h = np.zeros((3, 3))
    for a in range(2):
        for p in range(2):
            ix = 2 * a + p
            for b in range(2):
                for q in range(2):
                    iy = 2 * b + q
                    for c in range(2):
                        for r in range(2):
                            iz = 2 * c + r
                            co = stack[p + 2 * q + 4 * r, i + a, j + b, k + c]
                            if co == 0.0:
                                continue
                            val += co * bx[ix] * by[iy] * bz[iz]
                            g[0] += co * dbx[ix] * by[iy] * bz[iz]
                            g[1] += co * bx[ix] * dby[iy] * bz[iz]
                            g[2] += co * bx[ix] * by[iy] * dbz[iz]
                            h[0, 0] += co * d2bx[ix] * by[iy] * bz[iz]
                            h[1, 1] += co * bx[ix] * d2by[iy] * bz[iz]
                            h[2, 2] += co * bx[ix] * by[iy] * d2bz[iz]
                            h[0, 1] += co * dbx[ix] * dby[iy] * bz[iz]
                            h[0, 2] += co * dbx[ix] * by[iy] * dbz[iz]
                            h[1, 2] += co * bx[ix] * dby[iy] * dbz[iz]
    h[1, 0] = h[0, 1]
    h[2, 0] = h[0, 2]
    h[2, 1] = h[1, 2]
    return val, g, h


def _index_derivative(f: np.ndarray, axis: int) -> np.ndarray:
    """d f / d index: fourth-order central differences where the stencil
    fits, second order near the faces."""
    f = np.moveaxis(f, axis, 0)
    n = f.shape[0]
    d = np.empty_like(f)
    d[0] = (-3 * f[0] + 4 * f[1] - f[2]) / 2
    d[-1] = (3 * f[-1] - 4 * f[-2] + f[-3]) / 2
    d[1:-1] = (f[2:] - f[:-2]) / 2
    if n >= 5:
        d[2:-2] = (-f[4:] + 8 * f[3:-1] - 8 * f[1:-3] + f[:-4]) / 12
    return np.moveaxis(d, 0, axis)


@dataclass(eq=False)
class ScalarFieldGrid:
    """One electrode's potential per applied volt sampled on a regular grid."""

    electrode_id: str
    origin: np.ndarray
    spacing: np.ndarray
    dims: tuple
    values: np.ndarray
    _stack: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.origin = np.asarray(self.origin, dtype=float).reshape(3)
        self.spacing = np.asarray(self.spacing, dtype=float).reshape(3)
        self.values = np.ascontiguousarray(self.values, dtype=float)
        self.dims = tuple(int(n) for n in self.values.shape)
        if len(self.dims) != 3 or min(self.dims) < 4:
            raise GeometryError("grid needs at least 4 samples along every axis")
        if np.any(self.spacing <= 0):
            raise GeometryError("grid spacing must be positive")
        if not np.all(np.isfinite(self.values)):
            raise GeometryError("grid values must be finite")
        f = self.values
        fx, fy, fz = (_index_derivative(f, a) for a in range(3))
        fxy = _index_derivative(fx, 1)
        fxz = _index_derivative(fx, 2)
        fyz = _index_derivative(fy, 2)
        fxyz = _index_derivative(fxy, 2)
        self._stack = np.ascontiguousarray(np.stack([f, fx, fy, fxy, fz, fxz, fyz, fxyz]))

    @property
    def electrode_ids(self):
        return (self.electrode_id,)

    @property
    def bounds(self):
        # tricubic-valid interior keeps one cell clear of every face
        lo = self.origin + self.spacing
        hi = self.origin + (np.array(self.dims) - 2) * self.spacing
        return lo, hi

    def axis(self, a: int) -> np.ndarray:
        return self.origin[a] + self.spacing[a] * np.arange(self.dims[a])

    def contains(self, x) -> bool:
        lo, hi = self.bounds
        x = np.asarray(x, dtype=float)
        return bool(np.all(x >= lo) and np.all(x <= hi))

    def _locate(self, x):
        x = np.asarray(x, dtype=float).reshape(3)
        lo, hi = self.bounds
        for a in range(3):
            if not lo[a] <= x[a] <= hi[a]:
                raise DomainError(f"{self.electrode_id}: {_AXES[a]}={float(x[a])!r} outside "
                                  f"interior [{float(lo[a])!r}, {float(hi[a])!r}]")
        r = (x - self.origin) / self.spacing
        idx = np.minimum(np.floor(r).astype(int), np.array(self.dims) - 3)
        return idx, r - idx

    def interpolate(self, x):
        """Tricubic value and gradient (per metre) at x."""
        idx, loc = self._locate(x)
        val, g, _ = _tricubic(self._stack, idx[0], idx[1], idx[2], loc[0], loc[1], loc[2])
        return float(val), g / self.spacing

    def evaluate(self, x, hessian=False):
        idx, loc = self._locate(x)
        val, g, h = _tricubic(self._stack, idx[0], idx[1], idx[2], loc[0], loc[1], loc[2])
        g = g / self.spacing
        if hessian:
            return np.array([val]), g[None, :], (h / np.outer(self.spacing, self.spacing))[None]
        return np.array([val]), g[None, :]

    @classmethod
    def from_function(cls, electrode_id, func, origin, spacing, dims):
        origin = np.asarray(origin, dtype=float)
        spacing = np.asarray(spacing, dtype=float)
        axes = [origin[a] + spacing[a] * np.arange(dims[a]) for a in range(3)]
        xx, yy, zz = np.meshgrid(*axes, indexing="ij")
        return cls(electrode_id, origin, spacing, tuple(dims), func(xx, yy, zz))


GRID_FORMAT = "iontide-grid/1"


def write_grid(path, grid: ScalarFieldGrid) -> None:
    fmt = lambda v: ",".join(format(float(a), ".17g") for a in v)
    header = [f"format={GRID_FORMAT}", f"electrode={grid.electrode_id}",
              f"origin={fmt(grid.origin)}", f"spacing={fmt(grid.spacing)}",
              "dims=" + ",".join(str(n) for n in grid.dims), "order=row-major",
              "dtype=f64-le", "", ""]
    with open(path, "wb") as fh:
        fh.write("\n".join(header).encode("ascii"))
        fh.write(np.ascontiguousarray(grid.values, dtype="<f8").tobytes(order="C"))


def read_grid(path) -> ScalarFieldGrid:
    raw = Path(path).read_bytes()
    cut = raw.find(b"\n\n")
    if cut < 0:
        raise ConfigurationError(f"{path}: grid header is not terminated by a blank line")
    meta = {}
    for line in raw[:cut].decode("ascii").splitlines():
        key, _, val = line.partition("=")
        meta[key.strip()] = val.strip()
    if meta.get("format") != GRID_FORMAT:
        raise ConfigurationError(f"{path}: unsupported grid format {meta.get('format')!r}")
    if meta.get("order", "row-major") != "row-major" or meta.get("dtype", "f64-le") != "f64-le":
        raise ConfigurationError(f"{path}: only row-major f64-le grids are supported")
    try:
        dims = tuple(int(v) for v in meta["dims"].split(","))
        origin = [float(v) for v in meta["origin"].split(",")]
        spacing = [float(v) for v in meta["spacing"].split(",")]
        ident = meta["electrode"]
    except KeyError as exc:
        raise ConfigurationError(f"{path}: missing header key {exc}") from None
    body = raw[cut + 2:]
    count = dims[0] * dims[1] * dims[2]
    if len(body) != 8 * count:
        raise ConfigurationError(f"{path}: expected {count} values, found {len(body) // 8}")
    values = np.frombuffer(body, dtype="<f8").reshape(dims).astype(float)
    return ScalarFieldGrid(ident, origin, spacing, dims, values)


# ============================================================ analytic bases

class PointQuadrupole:
    """Quadrupole rf basis.  ``linear``: (k/2)(y^2 - z^2), rf-free along x;
    ``point``: (k/2)(x^2 + y^2 - 2 z^2).  kappa in 1/m^2."""

    def __init__(self, kappa: float, center=(0.0, 0.0, 0.0), geometry: str = "linear",
                 electrode_id: str = "rf"):
        if geometry not in ("linear", "point"):
            raise ValueError("geometry must be 'linear' or 'point'")
        self.kappa = float(kappa)
        self.center = np.asarray(center, dtype=float)
        self.geometry = geometry
        self.electrode_ids = (electrode_id,)
        self.bounds = (np.full(3, -np.inf), np.full(3, np.inf))
        self._diag = np.array([0.0, 1.0, -1.0] if geometry == "linear" else [1.0, 1.0, -2.0])

    def contains(self, x) -> bool:
        return True

    def evaluate(self, x, hessian=False):
        d = np.asarray(x, dtype=float) - self.center
        g = self.kappa * self._diag * d
        val = 0.5 * self.kappa * float(np.dot(self._diag, d * d))
        if hessian:
            return np.array([val]), g[None, :], np.diag(self.kappa * self._diag)[None]
        return np.array([val]), g[None, :]


class UniformField:
    """Theta = (n . x) / length: a unit volt produces a uniform field."""

    def __init__(self, direction=(1.0, 0.0, 0.0), length: float = 1.0,
                 electrode_id: str = "uniform"):
        n = np.asarray(direction, dtype=float)
        self.direction = n / np.linalg.norm(n)
        self.length = float(length)
        self.electrode_ids = (electrode_id,)
        self.bounds = (np.full(3, -np.inf), np.full(3, np.inf))

    def contains(self, x) -> bool:
        return True

    def evaluate(self, x, hessian=False):
        x = np.asarray(x, dtype=float)
        g = self.direction / self.length
        val = np.array([float(np.dot(g, x))])
        if hessian:
            return val, g[None, :], np.zeros((1, 3, 3))
        return val, g[None, :]


def gaussian_lobe(s):
    """Default axial shape of one segment: exp(-s^2/2) and three derivatives."""
    e = np.exp(-0.5 * s * s)
    return e, -s * e, (s * s - 1.0) * e, (3.0 * s - s ** 3) * e


class SegmentedLinearTrap:
    """Row of identical control segments along x.

    Each segment's unit-volt potential is lobe((x - c)/w) near the axis with
    the lowest-order transverse correction that keeps it harmonic on axis:
    phi(x) - phi''(x) (y^2 + z^2) / 4.  The Gaussian lobe is a stand-in; a
    user lobe returns (phi, phi', phi'', phi''') in the scaled coordinate.
    """

    def __init__(self, centers: Sequence[float], d: float, width: float | None = None,
                 lobe: Callable = gaussian_lobe, electrode_ids: Sequence[str] | None = None,
                 radial_extent: float | None = None):
        self.centers = np.asarray(centers, dtype=float)
        self.d = float(d)
        self.width = float(width) if width is not None else 0.6 * self.d
        self.lobe = lobe
        ids = electrode_ids or [f"dc{i}" for i in range(len(self.centers))]
        if len(ids) != len(self.centers):
            raise ValueError("one id per segment")
        self.electrode_ids = tuple(ids)
        r = radial_extent if radial_extent is not None else self.d
        self.bounds = (np.array([self.centers.min() - 4 * self.d, -r, -r]),
                       np.array([self.centers.max() + 4 * self.d, r, r]))

    def contains(self, x) -> bool:
        x = np.asarray(x, dtype=float)
        return bool(np.all(x >= self.bounds[0]) and np.all(x <= self.bounds[1]))

    def evaluate(self, x, hessian=False):
        if hessian:
            raise TypeError("segment electrodes do not provide Hessians")
        x = np.asarray(x, dtype=float)
        w = self.width
        s = (x[0] - self.centers) / w
        p0, p1, p2, p3 = self.lobe(s)
        rho2 = x[1] * x[1] + x[2] * x[2]
        vals = p0 - p2 / w ** 2 * rho2 / 4.0
        grads = np.empty((len(s), 3))
        grads[:, 0] = p1 / w - p3 / w ** 3 * rho2 / 4.0
        grads[:, 1] = -p2 / w ** 2 * x[1] / 2.0
        grads[:, 2] = -p2 / w ** 2 * x[2] / 2.0
        return vals, grads

    def axial(self, x: float):
        """On-axis unit potentials and their x-derivatives for every segment."""
        s = (float(x) - self.centers) / self.width
        p0, p1, p2, _ = self.lobe(s)
        return p0, p1 / self.width, p2 / self.width ** 2

    def eta(self, x: float, left: int, right: int) -> float:
        """Field per unit voltage difference (+dV/2 left, -dV/2 right), times d."""
        _, d1, _ = self.axial(x)
        return -0.5 * self.d * (d1[left] - d1[right])


# ============================================================ model

@dataclass(eq=False)
class TrapModel:
    rf_basis: object
    control_bases: list
    v_rf: float
    omega_rf: float
    charge: float
    mass: float

    def __post_init__(self):
        if not self.omega_rf > 0:
            raise ConfigurationError("rf drive frequency must be positive")
        if not self.mass > 0:
            raise ConfigurationError("ion mass must be positive")
        if self.charge == 0:
            raise ConfigurationError("ion charge must be nonzero")
        self.control_bases = list(self.control_bases)
        ids = [i for b in self.control_bases for i in b.electrode_ids]
        if len(set(ids)) != len(ids):
            raise ConfigurationError("duplicate control electrode ids")
        self.control_ids = tuple(ids)
        bases = [self.rf_basis] + self.control_bases
        lo = np.max([b.bounds[0] for b in bases], axis=0)
        hi = np.min([b.bounds[1] for b in bases], axis=0)
        if np.any(lo > hi):
            raise ConfigurationError("basis domains do not overlap")
        self.bounds = (lo, hi)

    @property
    def pseudo_prefactor(self) -> float:
        return (self.charge * self.v_rf) ** 2 / (4.0 * self.mass * self.omega_rf ** 2)

    def contains(self, x) -> bool:
        x = np.asarray(x, dtype=float)
        return bool(np.all(x >= self.bounds[0]) and np.all(x <= self.bounds[1])
                    and all(b.contains(x) for b in [self.rf_basis] + self.control_bases))

    def check_domain(self, x) -> None:
        x = np.asarray(x, dtype=float)
        lo, hi = self.bounds
        for a in range(3):
            if not lo[a] <= x[a] <= hi[a]:
                raise DomainError(f"{_AXES[a]}={float(x[a])!r} outside model domain "
                                  f"[{float(lo[a])!r}, {float(hi[a])!r}]")

    def rf_terms(self, x):
        self.check_domain(x)
        v, g, h = self.rf_basis.evaluate(x, hessian=True)
        return float(v[0]), g[0], h[0]

    def control_terms(self, x):
        self.check_domain(x)
        if not self.control_bases:
            return np.zeros(0), np.zeros((0, 3))
        parts = [b.evaluate(x) for b in self.control_bases]
        return (np.concatenate([p[0] for p in parts]),
                np.concatenate([p[1] for p in parts], axis=0))

    def energy_and_gradient(self, x, voltages, t: float, mode: Mode):
        """Potential energy (J) of one ion and its gradient (J/m)."""
        mode = Mode(mode)
        theta, grad, hess = self.rf_terms(x)
        if mode is Mode.PSEUDO:
            pre = self.pseudo_prefactor
            energy = pre * float(grad @ grad)
            dgrad = 2.0 * pre * (hess @ grad)
        else:
            c = self.charge * self.v_rf * math.cos(self.omega_rf * t)
            energy = c * theta
            dgrad = c * grad
        if len(self.control_ids):
            vals, grads = self.control_terms(x)
            energy += self.charge * float(voltages @ vals)
            dgrad = dgrad + self.charge * (voltages @ grads)
        return energy, dgrad


def rf_pseudopotential(model: TrapModel, x) -> float:
    """e^2 V_rf^2 |grad Theta_rf|^2 / (4 m Omega^2), in joules."""
    _, g, _ = model.rf_terms(np.asarray(x, dtype=float))
    return model.pseudo_prefactor * float(g @ g)


# ============================================================ schedules

@dataclass(eq=False)
class VoltageSchedule:
    electrode_ids: tuple
    times: np.ndarray
    voltages: np.ndarray
    interpolation: str = "PiecewiseLinear"

    def __post_init__(self):
        self.electrode_ids = tuple(str(i) for i in self.electrode_ids)
        self.times = np.asarray(self.times, dtype=float).reshape(-1)
        self.voltages = np.asarray(self.voltages, dtype=float).reshape(len(self.times), -1)
        if self.voltages.shape[1] != len(self.electrode_ids):
            raise ConfigurationError("voltage matrix width differs from electrode count")
        if len(self.times) > 1 and np.any(np.diff(self.times) <= 0):
            raise ConfigurationError("schedule times must be strictly increasing")
        if not (np.all(np.isfinite(self.times)) and np.all(np.isfinite(self.voltages))):
            raise ConfigurationError("schedule entries must be finite")
        if self.interpolation not in ("PiecewiseLinear", "CubicHermite"):
            raise ConfigurationError(f"unknown interpolation {self.interpolation!r}")
        self._spline = None
        if self.interpolation == "CubicHermite" and len(self.times) > 1:
            slopes = np.gradient(self.voltages, self.times, axis=0)
            self._spline = CubicHermiteSpline(self.times, self.voltages, slopes, axis=0)

    @classmethod
    def static(cls, electrode_ids, voltages):
        return cls(tuple(electrode_ids), [0.0], np.atleast_2d(np.asarray(voltages, float)))

    @property
    def span(self):
        if len(self.times) == 1:
            return -math.inf, math.inf
        return float(self.times[0]), float(self.times[-1])

    def at(self, t: float) -> np.ndarray:
        if len(self.times) == 1:
            return self.voltages[0].copy()
        lo, hi = self.span
        if not lo <= t <= hi:
            raise ConfigurationError(f"t={t!r} outside schedule span [{lo!r}, {hi!r}]")
        if self._spline is not None:
            return np.asarray(self._spline(t), dtype=float)
        i = min(int(np.searchsorted(self.times, t, side="right")) - 1, len(self.times) - 2)
        w = (t - self.times[i]) / (self.times[i + 1] - self.times[i])
        return (1.0 - w) * self.voltages[i] + w * self.voltages[i + 1]

    def frozen(self, t: float) -> "VoltageSchedule":
        return VoltageSchedule.static(self.electrode_ids, self.at(t))

    def aligned(self, ids: Sequence[str]) -> "VoltageSchedule":
        """Columns reordered to ``ids``; every id must be present exactly."""
        if set(ids) != set(self.electrode_ids) or len(ids) != len(self.electrode_ids):
            missing = sorted(set(ids) ^ set(self.electrode_ids))
            raise ConfigurationError(f"schedule/electrode mismatch: {missing}")
        order = [self.electrode_ids.index(i) for i in ids]
        return VoltageSchedule(tuple(ids), self.times, self.voltages[:, order],
                               self.interpolation)

    def with_offset(self, electrode_id: str, offset: float, window=None) -> "VoltageSchedule":
        """Copy with ``offset`` volts added to one electrode (optionally only on
        the sample rows whose times fall inside ``window``)."""
        v = self.voltages.copy()
        col = self.electrode_ids.index(electrode_id)
        rows = np.ones(len(self.times), bool)
        if window is not None:
            rows = (self.times >= window[0]) & (self.times <= window[1])
        v[rows, col] += offset
        return VoltageSchedule(self.electrode_ids, self.times, v, self.interpolation)

    def __add__(self, other: "VoltageSchedule") -> "VoltageSchedule":
        other = other.aligned(self.electrode_ids)
        if not np.array_equal(self.times, other.times):
            raise ConfigurationError("schedules must share sample times to be added")
        return VoltageSchedule(self.electrode_ids, self.times, self.voltages + other.voltages,
                               self.interpolation)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t", *self.electrode_ids])
            for t, row in zip(self.times, self.voltages):
                w.writerow([format(float(t), ".17g")] + [format(float(v), ".17g") for v in row])

    @classmethod
    def read_csv(cls, path, interpolation="PiecewiseLinear") -> "VoltageSchedule":
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        if not rows or rows[0][0].strip() != "t":
            raise ConfigurationError(f"{path}: first column must be 't'")
        data = np.array([[float(v) for v in r] for r in rows[1:] if r], dtype=float)
        return cls(tuple(c.strip() for c in rows[0][1:]), data[:, 0], data[:, 1:],
                   interpolation)


def _voltages(model: TrapModel, schedule: VoltageSchedule | None, t: float) -> np.ndarray:
    if not model.control_ids:
        return np.zeros(0)
    if schedule is None:
        return np.zeros(len(model.control_ids))
    if schedule.electrode_ids != model.control_ids:
        schedule = schedule.aligned(model.control_ids)
    return schedule.at(t)


def total_potential(model: TrapModel, schedule: VoltageSchedule | None, x, t: float,
                    mode: Mode = Mode.PSEUDO) -> float:
    """Potential energy (J) of one ion at x and time t."""
    v = _voltages(model, schedule, t)
    energy, _ = model.energy_and_gradient(np.asarray(x, dtype=float), v, t, mode)
    return energy


def coulomb_forces(positions) -> np.ndarray:
    """Pairwise Coulomb repulsion between singly charged ions."""
    pos = np.asarray(positions, dtype=float).reshape(-1, 3)
    out = np.zeros_like(pos)
    q2 = ELEMENTARY_CHARGE ** 2 * COULOMB_K
    for i in range(len(pos)):
        for j in range(i + 1, len(pos)):
            r = pos[j] - pos[i]
            dist = math.sqrt(float(r @ r))
            if dist == 0.0:
                raise SingularityError(f"ions {i} and {j} coincide")
            fj = q2 * r / dist ** 3
            out[j] += fj
            out[i] -= fj
    return out


def force(model: TrapModel, schedule: VoltageSchedule | None, positions, t: float,
          mode: Mode = Mode.PSEUDO) -> np.ndarray:
    """Force (N) on every ion: trap gradient plus mutual Coulomb repulsion."""
    pos = np.asarray(positions, dtype=float).reshape(-1, 3)
    v = _voltages(model, schedule, t)
    out = coulomb_forces(pos) if len(pos) > 1 else np.zeros_like(pos)
    for i, x in enumerate(pos):
        _, g = model.energy_and_gradient(x, v, t, mode)
        out[i] -= g
    return out


# ============================================================ grid utilities

def symmetry_combine(tt: ScalarFieldGrid, nn: ScalarFieldGrid, tn: ScalarFieldGrid,
                     nt: ScalarFieldGrid, electrode_id: str = "combined") -> ScalarFieldGrid:
    """Single-electrode basis from the four symmetric/antisymmetric solutions."""
    grids = (tt, nn, tn, nt)
    for g in grids[1:]:
        if (g.dims != tt.dims or not np.array_equal(g.origin, tt.origin)
                or not np.array_equal(g.spacing, tt.spacing)):
            raise GeometryError("symmetry solutions must share grid geometry")
    values = (tt.values + nn.values + tn.values + nt.values) / 4.0
    return ScalarFieldGrid(electrode_id, tt.origin, tt.spacing, tt.dims, values)


def mesh_error_bound(coarse, refined) -> np.ndarray:
    """(4/3)|E - E'| per sample; vector samples (last axis 3) use the norm."""
    e = np.asarray(coarse, dtype=float)
    e2 = np.asarray(refined, dtype=float)
    if e.shape != e2.shape:
        raise GeometryError(f"sample sets differ in shape: {e.shape} vs {e2.shape}")
    diff = np.abs(e - e2)
    if e.ndim >= 2 and e.shape[-1] == 3:
        diff = np.linalg.norm(e - e2, axis=-1)
    return 4.0 / 3.0 * diff


def golden_minimize(func, a: float, b: float, tol: float = 1e-10, max_iter: int = 200):
    """Golden-section search for a minimum of func on [a, b]."""
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    c, d = b - invphi * (b - a), a + invphi * (b - a)
    fc, fd = func(c), func(d)
    for _ in range(max_iter):
        if abs(b - a) <= tol * (abs(a) + abs(b) + 1e-300) or abs(b - a) < 1e-300:
            break
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = func(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = func(d)
    x = 0.5 * (a + b)
    return x, func(x)


@dataclass
class BarrierReport:
    arclength: np.ndarray
    energy: np.ndarray
    barrier_height: float
    barrier_location: np.ndarray
    perpendicular_depth: float

    @property
    def depth_ratio(self) -> float:
        if self.barrier_height == 0:
            return math.inf
        return self.perpendicular_depth / self.barrier_height


def _resample_path(path, n):
    pts = np.asarray(path, dtype=float).reshape(-1, 3)
    seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    s = np.concatenate(([0.0], np.cumsum(seg)))
    if s[-1] == 0:
        raise ValueError("path has zero length")
    grid = np.linspace(0.0, s[-1], n)
    out = np.column_stack([np.interp(grid, s, pts[:, a]) for a in range(3)])
    return grid, out


def barrier_profile(model: TrapModel, path, schedule: VoltageSchedule | None = None,
                    t: float = 0.0, n_samples: int = 401,
                    channel_width: float | None = None) -> BarrierReport:
    """Pseudo-energy along a path, the largest barrier, and the transverse depth there."""
    if len(np.asarray(path).reshape(-1, 3)) < 2 or n_samples < 3:
        raise ValueError("path must yield at least 3 samples")
    s, pts = _resample_path(path, n_samples)
    energy = np.array([total_potential(model, schedule, p, t, Mode.PSEUDO) for p in pts])
    running_min = np.minimum.accumulate(energy)
    rise = energy - running_min
    k = int(np.argmax(rise))
    height = float(rise[k])
    loc = pts[k]
    tangent = pts[min(k + 1, len(pts) - 1)] - pts[max(k - 1, 0)]
    tangent /= np.linalg.norm(tangent)
    ref = np.array([0.0, 0.0, 1.0]) if abs(tangent[2]) < 0.9 else np.array([0.0, 1.0, 0.0])
    n1 = np.cross(ref, tangent)
    n1 /= np.linalg.norm(n1)
    n2 = np.cross(tangent, n1)
    width = channel_width if channel_width is not None else 0.05 * s[-1]
    depth = min(_transverse_depth(model, schedule, t, loc, n, width) for n in (n1, n2))
    return BarrierReport(s, energy, height, loc, depth)


def _transverse_depth(model, schedule, t, center, direction, width, n=201):
    offs = np.linspace(-5 * width, 5 * width, n)
    keep = np.array([model.contains(center + o * direction) for o in offs])
    offs = offs[keep]
    if len(offs) < 3:
        return 0.0
    u = np.array([total_potential(model, schedule, center + o * direction, t, Mode.PSEUDO)
                  for o in offs])
    # local minimum closest to the path, refined by golden section
    i = int(np.argmin(u))
    lo, hi = offs[max(i - 1, 0)], offs[min(i + 1, len(offs) - 1)]
    _, umin = golden_minimize(
        lambda o: total_potential(model, schedule, center + o * direction, t, Mode.PSEUDO),
        lo, hi, tol=1e-8)
    umin = min(umin, u[i])
    escape = min(np.max(u[:i + 1]), np.max(u[i:]))
    return float(max(escape - umin, 0.0))
