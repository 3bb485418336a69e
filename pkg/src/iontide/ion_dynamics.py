"""Classical ion trajectories in a trap model, energy bookkeeping,
perturbation sweeps and Coulomb-crystal equilibria."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.optimize import minimize

from . import solver_core as sc
from .field_model import (COULOMB_K, ELEMENTARY_CHARGE, DomainError, Mode, SingularityError,
                          TrapModel, VoltageSchedule, _voltages, coulomb_forces)

EV = ELEMENTARY_CHARGE


@dataclass
class IonState:
    position: np.ndarray
    velocity: np.ndarray

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=float).reshape(3)
        self.velocity = np.asarray(self.velocity, dtype=float).reshape(3)
        if not (np.all(np.isfinite(self.position)) and np.all(np.isfinite(self.velocity))):
            raise ValueError("ion state must be finite")


@dataclass(frozen=True)
class Outcome:
    kind: str                  # Confined, Escaped or SolverFailed
    t: float | None = None
    boundary: str | None = None

    def __str__(self):
        if self.kind == "Confined":
            return "Confined"
        if self.kind == "Escaped":
            return f"Escaped(t={self.t!r}, {self.boundary})"
        return f"SolverFailed(t={self.t!r})"


@dataclass
class SimulationResult:
    times: np.ndarray
    positions: np.ndarray              # (samples, ions, 3)
    velocities: np.ndarray
    kinetic_energy: np.ndarray         # eV, (samples, ions)
    secular_kinetic_energy: np.ndarray
    secular_times: np.ndarray
    outcome: Outcome
    trace_summary: dict
    mode: Mode = Mode.PSEUDO

    @property
    def n_ions(self) -> int:
        return self.positions.shape[1]

    def write_csv(self, path) -> None:
        fmt = lambda v: format(float(v), ".17g")
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t", "ion", "px", "py", "pz", "vx", "vy", "vz", "ke_ev"])
            for i, t in enumerate(self.times):
                for j in range(self.n_ions):
                    p = self.positions[i, j] * 1e6
                    v = self.velocities[i, j]
                    w.writerow([fmt(t), j, *map(fmt, p), *map(fmt, v),
                                fmt(self.kinetic_energy[i, j])])


def _pack(initial: Sequence[IonState]) -> np.ndarray:
    pos = np.array([s.position for s in initial])
    vel = np.array([s.velocity for s in initial])
    return np.concatenate([pos.ravel(), vel.ravel()])


def _check_distinct(pos):
    for i in range(len(pos)):
        for j in range(i + 1, len(pos)):
            if np.array_equal(pos[i], pos[j]):
                raise SingularityError(f"ions {i} and {j} start at the same position")


def trap_energy(model: TrapModel, schedule, positions, t: float, mode: Mode) -> float:
    """Trap energy of all ions plus their mutual Coulomb energy (J)."""
    pos = np.asarray(positions, dtype=float).reshape(-1, 3)
    v = _voltages(model, schedule, t)
    total = sum(model.energy_and_gradient(x, v, t, mode)[0] for x in pos)
    for i in range(len(pos)):
        for j in range(i + 1, len(pos)):
            total += COULOMB_K * ELEMENTARY_CHARGE ** 2 / np.linalg.norm(pos[i] - pos[j])
    return float(total)


def _accelerations(model, schedule, pos, t, mode, frozen_v):
    v = frozen_v if frozen_v is not None else _voltages(model, schedule, t)
    f = coulomb_forces(pos) if len(pos) > 1 else np.zeros_like(pos)
    for i, x in enumerate(pos):
        f[i] -= model.energy_and_gradient(x, v, t, mode)[1]
    return f / model.mass


def secular_frequency_estimate(model, schedule, x, t, mode=Mode.PSEUDO) -> float:
    """Largest harmonic frequency at x from a finite-difference Hessian of the trap energy."""
    x = np.asarray(x, dtype=float)
    v = _voltages(model, schedule, t)
    h = 1e-7
    hess = np.empty((3, 3))
    for a in range(3):
        dx = np.zeros(3)
        dx[a] = h
        gp = model.energy_and_gradient(x + dx, v, t, Mode.PSEUDO)[1]
        gm = model.energy_and_gradient(x - dx, v, t, Mode.PSEUDO)[1]
        hess[a] = (gp - gm) / (2 * h)
    ev = np.linalg.eigvalsh(0.5 * (hess + hess.T))
    top = float(ev.max())
    if top <= 0:
        raise ValueError("no confinement at the initial position")
    return math.sqrt(top / model.mass)


def simulate(model: TrapModel, schedule: VoltageSchedule | None, initial: Sequence[IonState],
             t_span, config: sc.SolverConfig | None = None,
             goal: sc.ErrorGoal = sc.ErrorGoal(10, 10), mode: Mode = Mode.PSEUDO,
             sample_interval: float | None = None, energy_cap_ev: float | None = None,
             frozen_voltages: bool = False) -> SimulationResult:
    """Integrate Newton's equations for every ion and sample the motion.

    The run advances sample by sample; an ion leaving the model domain (or
    a potential energy above ``energy_cap_ev``) ends the run as Escaped.
    ``frozen_voltages`` holds the control voltages at their t_span[0] values.
    """
    mode = Mode(mode)
    initial = list(initial)
    if not initial:
        raise ValueError("need at least one ion")
    t0, t1 = map(float, t_span)
    if not t1 > t0:
        raise ValueError("t_span must be increasing")
    if schedule is not None and not frozen_voltages:
        lo, hi = schedule.span
        if t0 < lo or t1 > hi:
            raise ValueError("t_span lies outside the schedule")
    y = _pack(initial)
    k = len(initial)
    _check_distinct(y[:3 * k].reshape(k, 3))
    frozen_v = _voltages(model, schedule, t0) if frozen_voltages else None
    if sample_interval is None:
        if mode is Mode.FULL_RF:
            sample_interval = 2 * math.pi / model.omega_rf / 16
        else:
            w = secular_frequency_estimate(model, schedule, initial[0].position, t0)
            sample_interval = 2 * math.pi / w / 32
    n_seg = max(1, int(math.ceil((t1 - t0) / sample_interval - 1e-9)))
    grid = np.linspace(t0, t1, n_seg + 1)

    def deriv(t, state):
        pos = state[:3 * k].reshape(k, 3)
        acc = _accelerations(model, schedule, pos, t, mode, frozen_v)
        return np.concatenate([state[3 * k:], acc.ravel()])

    system = sc.OdeSystem(deriv, 6 * k, "ions")
    base = config or sc.SolverConfig()
    states = [y.copy()]
    times = [t0]
    outcome = Outcome("Confined")
    counters = {"n_steps": 0, "n_rejected": 0, "n_f_evals": 0, "method": base.method.value}
    h_next = base.initial_step if config is not None else sample_interval
    for a, b in zip(grid[:-1], grid[1:]):
        span = b - a
        cfg = sc.SolverConfig(base.method, min(h_next, span), min(base.min_step, span * 1e-3),
                              max(base.max_step, span), base.bs_substep_sequence,
                              base.step_reduction_factor, base.implicit_newton_tol,
                              base.implicit_max_iters, base.bs_target_substeps, base.max_steps)
        try:
            tr = sc.integrate(system, a, y, b, cfg, goal)
        except DomainError as exc:
            outcome = Outcome("Escaped", float(a), str(exc))
            break
        except sc.SolverError as exc:
            outcome = Outcome("SolverFailed", float(exc.t if exc.t is not None else a))
            break
        counters["n_steps"] += tr.n_steps
        counters["n_rejected"] += tr.n_rejected
        counters["n_f_evals"] += tr.n_f_evals
        if tr.n_steps:
            h_next = max(float(np.diff(tr.times).max()), cfg.min_step)
        y = tr.final_state.copy()
        pos = y[:3 * k].reshape(k, 3)
        escaped = next((i for i, x in enumerate(pos) if not model.contains(x)), None)
        if escaped is not None:
            outcome = Outcome("Escaped", float(b), f"ion {escaped} left the model domain")
        elif energy_cap_ev is not None:
            v = frozen_v if frozen_v is not None else _voltages(model, schedule, b)
            pe = [model.energy_and_gradient(x, v, b, mode)[0] / EV for x in pos]
            if max(pe) > energy_cap_ev:
                outcome = Outcome("Escaped", float(b), "potential energy cap")
        states.append(y)
        times.append(float(b))
        if outcome.kind != "Confined":
            break
    arr = np.array(states)
    pos = arr[:, :3 * k].reshape(-1, k, 3)
    vel = arr[:, 3 * k:].reshape(-1, k, 3)
    ke = 0.5 * model.mass * np.sum(vel * vel, axis=2) / EV
    t_arr = np.array(times)
    if mode is Mode.FULL_RF:
        try:
            sec_t, sec = secular_average_series(t_arr, ke, model.omega_rf)
        except ValueError:
            sec_t, sec = t_arr[:1], ke[:1]
    else:
        sec_t, sec = t_arr, ke.copy()
    return SimulationResult(t_arr, pos, vel, ke, sec, sec_t, outcome, counters, mode)


def secular_average_series(times, energies, omega_rf: float):
    """Sliding average over exactly one rf period on uniformly sampled input."""
    times = np.asarray(times, dtype=float)
    e = np.asarray(energies, dtype=float)
    if len(times) < 2:
        raise ValueError("need at least two samples")
    dt = np.diff(times)
    if np.ptp(dt) > 1e-9 * dt.mean():
        raise ValueError("samples must be uniformly spaced")
    period = 2 * math.pi / omega_rf
    n = period / dt.mean()
    w = int(round(n))
    if w < 8:
        raise ValueError(f"undersampled: {n:.3g} samples per rf period, need >= 8")
    if abs(n - w) > 1e-6 * n:
        raise ValueError("sample spacing must divide the rf period")
    if w > len(e):
        raise ValueError("series shorter than one rf period")
    if w == len(e):
        # the window spans every sample: one value, the global mean
        return np.array([times.mean()]), e.mean(axis=0, keepdims=True)
    c = np.cumsum(np.concatenate([np.zeros((1,) + e.shape[1:]), e]), axis=0)
    avg = (c[w:] - c[:-w]) / w
    centers = times[: len(avg)] + 0.5 * (w - 1) * dt.mean()
    return centers, avg


def secular_average(result, omega_rf: float):
    """Per-ion secular kinetic energy (eV) of a SimulationResult."""
    if isinstance(result, SimulationResult):
        return secular_average_series(result.times, result.kinetic_energy, omega_rf)[1]
    times, energies = result
    return secular_average_series(times, energies, omega_rf)[1]


# ------------------------------------------------------------ sweeps

@dataclass
class PerturbationSpec:
    electrode_id: str
    offsets: Sequence[float]
    window: tuple | None = None        # (t_start, t_end) of the perturbed schedule rows

    def __post_init__(self):
        self.offsets = [float(o) for o in self.offsets]
        if not self.offsets or not all(math.isfinite(o) for o in self.offsets):
            raise ValueError("offset grid must be nonempty and finite")


@dataclass(frozen=True)
class RegionBox:
    lo: tuple
    hi: tuple

    def contains(self, x) -> bool:
        x = np.asarray(x, dtype=float)
        return bool(np.all(x >= np.asarray(self.lo)) and np.all(x <= np.asarray(self.hi)))


@dataclass
class SweepRow:
    offset: float
    outcome: str
    final_ke_ev: float
    result: SimulationResult | None = field(default=None, repr=False)


FAILURE_MODES = ("StuckBeforeBarrier", "EjectedTransverse", "WrongChannel")


def classify(result: SimulationResult, regions: dict) -> str:
    """'Confined' when every ion ends in the ``target`` box, otherwise the first
    failure-mode box holding an ion; escapes count as EjectedTransverse."""
    if result.outcome.kind == "SolverFailed":
        return "SolverFailed"
    if result.outcome.kind == "Escaped":
        return "EjectedTransverse"
    final = result.positions[-1]
    target = regions.get("target")
    if target is not None and all(target.contains(x) for x in final):
        return "Confined"
    for name in FAILURE_MODES:
        box = regions.get(name)
        if box is not None and any(box.contains(x) for x in final):
            return name
    return "EjectedTransverse" if target is not None else "Confined"


def stability_sweep(model, base_schedule: VoltageSchedule, spec: PerturbationSpec,
                    initial, t_span, config=None, goal=sc.ErrorGoal(10, 10),
                    mode=Mode.PSEUDO, regions: dict | None = None,
                    **sim_kwargs) -> list:
    rows = []
    for off in spec.offsets:
        sched = base_schedule.with_offset(spec.electrode_id, off, spec.window)
        res = simulate(model, sched, initial, t_span, config, goal, mode, **sim_kwargs)
        label = classify(res, regions or {})
        final_ke = float(np.sum(res.secular_kinetic_energy[-1]))
        rows.append(SweepRow(off, label, final_ke, res))
    return rows


def write_sweep_csv(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["offset_v", "outcome", "final_ke_ev"])
        for r in rows:
            w.writerow([format(r.offset, ".17g"), r.outcome, format(r.final_ke_ev, ".17g")])


# ------------------------------------------------------------ crystals

class ConvergenceError(RuntimeError):
    pass


def crystal_equilibrium(model: TrapModel, schedule, t: float, k: int, initial_guess,
                        mode: Mode = Mode.PSEUDO, length_scale: float = 1e-6,
                        force_scale: float | None = None, rel_tol: float = 1e-10):
    """Local minimum of the k-ion energy (trap plus Coulomb).

    A quasi-Newton minimization in micrometre units gets close, then Newton
    steps with a finite-difference Hessian of the analytic gradient polish
    the result.  Converged when the largest force is below ``rel_tol`` times
    ``force_scale`` (default: the Coulomb force between two charges ten
    length scales apart).
    """
    if k < 1:
        raise ValueError("need at least one ion")
    guess = np.asarray(initial_guess, dtype=float).reshape(k, 3)
    ell = float(length_scale)
    fscale = (force_scale if force_scale is not None
              else COULOMB_K * ELEMENTARY_CHARGE ** 2 / (10 * ell) ** 2)
    escale = fscale * ell
    v = _voltages(model, schedule, t)

    def energy_grad(z):
        pos = z.reshape(k, 3) * ell
        for x in pos:
            model.check_domain(x)
        e = trap_energy(model, schedule, pos, t, mode)
        f = coulomb_forces(pos) if k > 1 else np.zeros_like(pos)
        for i, x in enumerate(pos):
            f[i] -= model.energy_and_gradient(x, v, t, mode)[1]
        return e / escale, (-f * ell / escale).ravel()

    z = guess.ravel() / ell
    res = minimize(energy_grad, z, jac=True, method="BFGS",
                   options={"gtol": 1e-9, "maxiter": 2000})
    z = res.x
    for _ in range(50):
        _, g = energy_grad(z)
        if np.max(np.abs(g)) < rel_tol:
            return z.reshape(k, 3) * ell
        n = len(z)
        hess = np.empty((n, n))
        h = 1e-5
        for i in range(n):
            dz = np.zeros(n)
            dz[i] = h
            hess[i] = (energy_grad(z + dz)[1] - energy_grad(z - dz)[1]) / (2 * h)
        hess = 0.5 * (hess + hess.T)
        # directions with no restoring force (free axes) are left alone
        w, vecs = np.linalg.eigh(hess)
        keep = np.abs(w) > 1e-12 * max(np.abs(w).max(), 1e-300)
        step = -vecs[:, keep] @ ((vecs[:, keep].T @ g) / w[keep])
        z = z + step
    _, g = energy_grad(z)
    if np.max(np.abs(g)) < rel_tol:
        return z.reshape(k, 3) * ell
    raise ConvergenceError(f"crystal search stalled with residual force {np.max(np.abs(g)):.3g}"
                           " (in units of the force scale)")
