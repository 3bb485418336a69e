"""Command-line front end.

Every subcommand reads a TOML scenario file, validates it against a schema
before computing anything, writes its outputs into ``--out`` and finishes
with ``manifest.json``.  Exit codes: 0 success, 2 invalid configuration,
3 failure during computation.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import math
import sys
import time
from pathlib import Path

import jsonschema
import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import __version__
from . import field_model as fm
from . import ion_dynamics as dyn
from . import motional_theory as mt
from . import shuttle_protocols as sp
from . import solver_core as sc

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER = 0, 2, 3


class ConfigError(ValueError):
    pass


def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, str):
        return x
    return format(float(x), ".17g")


# ------------------------------------------------------------ schemas

NUM = {"type": "number"}
POS = {"type": "number", "exclusiveMinimum": 0}
INT = {"type": "integer"}
STR = {"type": "string"}
BOOL = {"type": "boolean"}


def _obj(props, required=()):
    return {"type": "object", "properties": props, "required": list(required),
            "additionalProperties": False}


def _arr(item, min_items=0):
    return {"type": "array", "items": item, "minItems": min_items}


SOLVER = _obj({
    "method": {"enum": [m.value for m in sc.Method]},
    "methods": _arr({"enum": [m.value for m in sc.Method]}, 1),
    "a": NUM, "p": NUM, "initial_step": POS, "min_step": POS, "max_step": POS,
    "max_steps": INT,
})

BASIS = {"oneOf": [
    _obj({"kind": {"const": "PointQuadrupole"}, "kappa": NUM, "center_um": _arr(NUM),
          "geometry": {"enum": ["linear", "point"]}, "id": STR}, ["kind", "kappa"]),
    _obj({"kind": {"const": "UniformField"}, "direction": _arr(NUM), "length_um": POS,
          "id": STR}, ["kind"]),
    _obj({"kind": {"const": "SegmentedLinearTrap"}, "centers_um": _arr(NUM, 3),
          "d_um": POS, "width_um": POS, "radial_extent_um": POS, "ids": _arr(STR)},
         ["kind", "centers_um", "d_um"]),
    _obj({"kind": {"const": "Grid"}, "path": STR}, ["kind", "path"]),
]}

TRAP = _obj({"rf": BASIS, "controls": _arr(BASIS), "v_rf": NUM, "omega_rf_hz": POS,
             "species_amu": POS, "charge_e": NUM},
            ["rf", "v_rf", "omega_rf_hz", "species_amu"])

PROFILE = _obj({"kind": {"enum": [k.value for k in sp.ProfileKind]}, "L_um": POS,
                "T_us": POS, "N": NUM, "g": NUM, "M": INT, "omega0_hz": POS},
               ["kind", "L_um", "T_us"])

ION = _obj({"position_um": _arr(NUM), "velocity": _arr(NUM)}, ["position_um"])
BOX = _obj({"lo_um": _arr(NUM), "hi_um": _arr(NUM)}, ["lo_um", "hi_um"])

RUN_SIM = _obj({"t_start_us": NUM, "t_end_us": NUM, "mode": {"enum": ["FullRf", "Pseudo"]},
                "sample_interval_us": POS, "energy_cap_ev": POS, "frozen_voltages": BOOL},
               ["t_end_us"])

SCHEDULE = _obj({"path": STR, "interpolation": {"enum": ["PiecewiseLinear", "CubicHermite"]},
                 "static": {"type": "object", "additionalProperties": NUM}})

SCHEMAS = {
    "integrate": _obj({
        "system": _obj({"name": {"enum": ["oscillator", "stiff-demo"]}, "frequency_hz": POS,
                        "y0": _arr(NUM, 1)}, ["name"]),
        "solver": SOLVER,
        "run": _obj({"t_end": POS, "write_trace": BOOL, "trace_every": INT,
                     "divergence_factor": POS}, ["t_end"]),
    }, ["system", "solver", "run"]),
    "heating": _obj({
        "ion": _obj({"species_amu": POS}, ["species_amu"]),
        "protocol": PROFILE,
        "sweep": _obj({"L_um": POS, "omega0_hz": POS, "N": NUM, "T_us_min": POS,
                       "T_us_max": POS, "points": INT}, ["T_us_min", "T_us_max", "points"]),
    }, ["ion", "protocol"]),
    "mathieu-scan": _obj({
        "scan": _obj({"T_us": POS, "g": NUM, "omega0_hz": POS, "M_min": INT, "M_max": INT,
                      "with_n": BOOL}, ["T_us", "g", "omega0_hz", "M_min", "M_max"]),
    }, ["scan"]),
    "protocol-design": _obj({
        "trap": TRAP,
        "design": _obj({"start_um": NUM, "end_um": NUM, "n_steps": INT, "target_hz": POS,
                        "freq_tol": POS, "step_time_us": POS},
                       ["start_um", "end_um", "n_steps", "target_hz"]),
    }, ["trap", "design"]),
    "shuttle-sim": _obj({
        "trap": TRAP, "schedule": SCHEDULE, "ions": _arr(ION, 1), "solver": SOLVER,
        "run": RUN_SIM,
    }, ["trap", "ions", "run"]),
    "sweep": _obj({
        "trap": TRAP, "schedule": SCHEDULE, "ions": _arr(ION, 1), "solver": SOLVER,
        "run": RUN_SIM,
        "perturbation": _obj({"electrode_id": STR, "offsets": _arr(NUM, 1),
                              "window_us": _arr(NUM)}, ["electrode_id", "offsets"]),
        "regions": {"type": "object", "additionalProperties": BOX},
    }, ["trap", "schedule", "ions", "run", "perturbation"]),
    "separation": _obj({
        "separation": _obj({"alpha": NUM, "beta": POS, "species_amu": POS},
                           ["alpha", "beta", "species_amu"]),
    }, ["separation"]),
    "barrier-scan": _obj({
        "trap": TRAP, "schedule": SCHEDULE,
        "path": _obj({"points_um": _arr(_arr(NUM), 2), "samples": INT,
                      "channel_width_um": POS, "t_us": NUM}, ["points_um"]),
    }, ["trap", "path"]),
}


def load_config(path: Path, command: str) -> dict:
    try:
        with open(path, "rb") as fh:
            cfg = tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    try:
        jsonschema.validate(cfg, SCHEMAS[command])
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"{path}: {where}: {exc.message}") from None
    return cfg


# ------------------------------------------------------------ builders

def _basis(spec: dict, base_dir: Path):
    kind = spec["kind"]
    if kind == "PointQuadrupole":
        return fm.PointQuadrupole(spec["kappa"], np.array(spec.get("center_um", [0, 0, 0])) * 1e-6,
                                  spec.get("geometry", "linear"), spec.get("id", "rf"))
    if kind == "UniformField":
        return fm.UniformField(spec.get("direction", [1, 0, 0]),
                               spec.get("length_um", 1e6) * 1e-6, spec.get("id", "uniform"))
    if kind == "SegmentedLinearTrap":
        width = spec.get("width_um")
        ext = spec.get("radial_extent_um")
        return fm.SegmentedLinearTrap(np.array(spec["centers_um"]) * 1e-6, spec["d_um"] * 1e-6,
                                      None if width is None else width * 1e-6,
                                      electrode_ids=spec.get("ids"),
                                      radial_extent=None if ext is None else ext * 1e-6)
    return fm.read_grid(base_dir / spec["path"])


def build_trap(cfg: dict, base_dir: Path) -> fm.TrapModel:
    rf = _basis(cfg["rf"], base_dir)
    controls = [_basis(c, base_dir) for c in cfg.get("controls", [])]
    return fm.TrapModel(rf, controls, cfg["v_rf"], 2 * math.pi * cfg["omega_rf_hz"],
                        cfg.get("charge_e", 1.0) * fm.ELEMENTARY_CHARGE,
                        fm.amu_to_kg(cfg["species_amu"]))


def build_schedule(cfg: dict | None, model: fm.TrapModel, base_dir: Path):
    if cfg is None:
        return None
    if "path" in cfg:
        s = fm.VoltageSchedule.read_csv(base_dir / cfg["path"],
                                        cfg.get("interpolation", "PiecewiseLinear"))
        return s.aligned(model.control_ids)
    static = cfg.get("static", {})
    unknown = set(static) - set(model.control_ids)
    if unknown:
        raise fm.ConfigurationError(f"unknown electrodes in schedule: {sorted(unknown)}")
    return fm.VoltageSchedule.static(model.control_ids,
                                     [static.get(i, 0.0) for i in model.control_ids])


def build_solver(cfg: dict | None):
    cfg = cfg or {}
    goal = sc.ErrorGoal(cfg.get("a", 10), cfg.get("p", 10))
    kwargs = {"method": cfg.get("method", "BulirschStoer")}
    for key in ("initial_step", "min_step", "max_step", "max_steps"):
        if key in cfg:
            kwargs[key] = cfg[key]
    return sc.SolverConfig(**kwargs), goal


# ------------------------------------------------------------ output helpers

class Outputs:
    def __init__(self, out_dir: Path, fmt: str):
        self.dir = out_dir
        self.fmt = fmt
        self.files: list[Path] = []

    def path(self, name: str) -> Path:
        p = self.dir / name
        self.files.append(p)
        return p

    def table(self, stem: str, header, rows) -> None:
        if self.fmt == "json":
            data = [dict(zip(header, (_jsonable(v) for v in r))) for r in rows]
            self.json(stem + ".json", data)
            return
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(v) for v in r])
        self.path(stem + ".csv").write_text(buf.getvalue())

    def json(self, name: str, data) -> None:
        self.path(name).write_text(json.dumps(_jsonable(data), indent=2, sort_keys=True) + "\n")


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return [_jsonable(v) for v in x.tolist()]
    if isinstance(x, (np.bool_, bool)):
        return bool(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        v = float(x)
        return v if math.isfinite(v) else str(v)
    if isinstance(x, complex):
        return {"re": x.real, "im": x.imag}
    return x


def _sha256(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


# ------------------------------------------------------------ commands

def cmd_integrate(cfg, out: Outputs, base_dir):
    sysc = cfg["system"]
    if sysc["name"] == "oscillator":
        omega = 2 * math.pi * sysc.get("frequency_hz", 1e6)
        system = sc.oscillator_system(omega)
        y0 = sysc.get("y0", [1e-6, 0.0])      # (x, v) = (1 um, 0)
    else:
        system = sc.stiff_demo_system()
        y0 = sysc.get("y0", [1.0, 0.0])
    solver = cfg["solver"]
    methods = solver.get("methods", [solver.get("method", "BulirschStoer")])
    run = cfg["run"]
    every = max(1, run.get("trace_every", 1))
    factor = run.get("divergence_factor", 1e6)
    summary = {}
    failure = None
    for name in methods:
        sub = dict(solver)
        sub.pop("methods", None)
        sub["method"] = name
        config, goal = build_solver(sub)
        fixed = name in ("ExplicitEuler", "RK4Fixed")
        entry = {}
        try:
            trace = sc.integrate(system, 0.0, y0, run["t_end"], config, goal)
        except sc.EvaluationError as exc:
            if not fixed:
                failure = exc
                break
            trace = exc.trace
            entry["diverged"] = True
            if trace is None:
                entry.update(method=name, failed_at=exc.t)
                summary[name] = entry
                continue
        except sc.SolverError as exc:
            failure = exc
            break
        entry.update(trace.summary())
        peak = float(np.max(np.abs(trace.states)))
        entry["max_abs_state"] = peak
        entry.setdefault("diverged", bool(not math.isfinite(peak)
                                          or peak > factor * max(np.max(np.abs(y0)), 1.0)))
        entry["final_state"] = trace.final_state
        summary[name] = entry
        if run.get("write_trace", True):
            rows = []
            n = len(trace.times)
            for i in list(range(0, n, every)) + ([n - 1] if (n - 1) % every else []):
                err = 0.0 if i == 0 else trace.local_error_estimates[i - 1]
                rows.append([trace.times[i], *trace.states[i], err])
            dims = trace.states.shape[1]
            out.table(f"trace_{name}", ["t", *[f"y{j}" for j in range(dims)], "local_err"],
                      rows)
    out.json("summary.json", summary)
    if failure is not None:
        raise failure


def _profile(cfg: dict) -> sp.ShuttleProfile:
    return sp.ShuttleProfile.from_config({k: cfg[k] for k in ("kind", "L_um", "T_us", "N")
                                          if k in cfg})


def cmd_heating(cfg, out: Outputs, base_dir):
    mass = fm.amu_to_kg(cfg["ion"]["species_amu"])
    pc = cfg["protocol"]
    prof = _profile(pc)
    omega0 = 2 * math.pi * pc.get("omega0_hz", 1.173e6)
    if pc.get("g", 0.0) != 0.0:
        omega = sp.FreqVariation(pc["g"], pc.get("M", 0), omega0, prof.T)
    else:
        omega = omega0
    report = mt.heating_report(prof, omega, mass)
    out.json("heating_report.json", report.to_dict())
    sw = cfg.get("sweep")
    if sw:
        L = sw.get("L_um", pc["L_um"]) * 1e-6
        w0 = 2 * math.pi * sw.get("omega0_hz", pc.get("omega0_hz", 1.173e6))
        n_tanh = sw.get("N", pc.get("N", 3.0))
        rows = []
        for t_us in np.linspace(sw["T_us_min"], sw["T_us_max"], sw["points"]):
            T = float(t_us) * 1e-6
            lin = mt.closed_form_n(sp.ShuttleProfile("Linear", L, T), w0, mass)
            sin = mt.closed_form_n(sp.ShuttleProfile("Sinusoidal", L, T), w0, mass)
            tan = mt.closed_form_n(sp.ShuttleProfile("Tanh", L, T, n_tanh), w0, mass)
            rows.append([float(t_us), lin, sin, tan])
        out.table("n_vs_T", ["T_us", "n_linear", "n_sin", "n_tanh"], rows)


def cmd_mathieu_scan(cfg, out: Outputs, base_dir):
    s = cfg["scan"]
    T = s["T_us"] * 1e-6
    w0 = 2 * math.pi * s["omega0_hz"]
    rows = []
    for M in range(s["M_min"], s["M_max"] + 1):
        fv = sp.FreqVariation(s["g"], M, w0, T)
        scan = mt.mathieu_scan(fv)
        n = ""
        if s.get("with_n", True):
            q = mt.q_factor(mt.homogeneous_solutions(fv, T))
            n = 0.5 * (q - 1.0)
        rows.append([M, scan.a, scan.q, scan.nu.real, scan.nu.imag, bool(scan.stable), n])
    out.table("mathieu_scan", ["M", "a", "q", "re_nu", "im_nu", "stable", "n_mean"], rows)


def cmd_protocol_design(cfg, out: Outputs, base_dir):
    model = build_trap(cfg["trap"], base_dir)
    d = cfg["design"]
    sched = sp.design_linear_protocol(model, d["start_um"] * 1e-6, d["end_um"] * 1e-6,
                                      d["n_steps"], 2 * math.pi * d["target_hz"],
                                      d.get("freq_tol", 0.005), d.get("step_time_us", 5.0) * 1e-6)
    rows = [[t, *v] for t, v in zip(sched.times, sched.voltages)]
    out.table("schedule", ["t", *sched.electrode_ids], rows)


def _ions(cfg):
    return [dyn.IonState(np.array(i["position_um"]) * 1e-6, i.get("velocity", [0, 0, 0]))
            for i in cfg]


def _simulate(cfg, base_dir, schedule=None):
    model = build_trap(cfg["trap"], base_dir)
    sched = schedule if schedule is not None else build_schedule(cfg.get("schedule"), model,
                                                                 base_dir)
    config, goal = build_solver(cfg.get("solver"))
    run = cfg["run"]
    kwargs = dict(mode=fm.Mode(run.get("mode", "Pseudo")),
                  sample_interval=(run["sample_interval_us"] * 1e-6
                                   if "sample_interval_us" in run else None),
                  energy_cap_ev=run.get("energy_cap_ev"),
                  frozen_voltages=run.get("frozen_voltages", False))
    span = (run.get("t_start_us", 0.0) * 1e-6, run["t_end_us"] * 1e-6)
    solver_cfg = config if cfg.get("solver", {}).get("initial_step") else None
    return model, sched, solver_cfg, goal, span, kwargs


def cmd_shuttle_sim(cfg, out: Outputs, base_dir):
    model, sched, config, goal, span, kwargs = _simulate(cfg, base_dir)
    res = dyn.simulate(model, sched, _ions(cfg["ions"]), span, config, goal, **kwargs)
    if out.fmt == "json":
        rows = [[t, j, *(res.positions[i, j] * 1e6), *res.velocities[i, j],
                 res.kinetic_energy[i, j]] for i, t in enumerate(res.times)
                for j in range(res.n_ions)]
        out.table("trajectory", ["t", "ion", "px", "py", "pz", "vx", "vy", "vz", "ke_ev"], rows)
    else:
        res.write_csv(out.path("trajectory.csv"))
    out.json("simulation.json", {"outcome": str(res.outcome), "counters": res.trace_summary,
                                 "final_secular_ke_ev": res.secular_kinetic_energy[-1]})
    if res.outcome.kind == "SolverFailed":
        raise sc.SolverError(f"simulation failed: {res.outcome}")


def cmd_sweep(cfg, out: Outputs, base_dir):
    model, sched, config, goal, span, kwargs = _simulate(cfg, base_dir)
    p = cfg["perturbation"]
    window = p.get("window_us")
    spec = dyn.PerturbationSpec(p["electrode_id"], p["offsets"],
                                None if not window else (window[0] * 1e-6, window[1] * 1e-6))
    regions = {name: dyn.RegionBox(tuple(np.array(b["lo_um"]) * 1e-6),
                                   tuple(np.array(b["hi_um"]) * 1e-6))
               for name, b in cfg.get("regions", {}).items()}
    rows = dyn.stability_sweep(model, sched, spec, _ions(cfg["ions"]), span, config, goal,
                               regions=regions, **kwargs)
    out.table("sweep", ["offset_v", "outcome", "final_ke_ev"],
              [[r.offset, r.outcome, r.final_ke_ev] for r in rows])


def cmd_separation(cfg, out: Outputs, base_dir):
    s = cfg["separation"]
    res = mt.separation_analysis(s["alpha"], s["beta"], fm.amu_to_kg(s["species_amu"]))
    out.json("separation.json", {
        "spacing_harmonic": res.spacing_harmonic, "omega_com_harmonic": res.omega_com_harmonic,
        "spacing_quartic": res.spacing_quartic, "omega_com_quartic": res.omega_com_quartic,
        "units": {"spacing_harmonic": "m", "spacing_quartic": "m",
                  "omega_com_harmonic": "rad/s", "omega_com_quartic": "rad/s"}})


def cmd_barrier_scan(cfg, out: Outputs, base_dir):
    model = build_trap(cfg["trap"], base_dir)
    sched = build_schedule(cfg.get("schedule"), model, base_dir)
    pc = cfg["path"]
    width = pc.get("channel_width_um")
    rep = fm.barrier_profile(model, np.array(pc["points_um"]) * 1e-6, sched,
                             pc.get("t_us", 0.0) * 1e-6, pc.get("samples", 401),
                             None if width is None else width * 1e-6)
    ev = fm.ELEMENTARY_CHARGE
    out.table("barrier_profile", ["s_um", "energy_ev"],
              [[s * 1e6, e / ev] for s, e in zip(rep.arclength, rep.energy)])
    out.json("barrier.json", {"barrier_height_ev": rep.barrier_height / ev,
                              "barrier_location_um": rep.barrier_location * 1e6,
                              "perpendicular_depth_ev": rep.perpendicular_depth / ev,
                              "depth_ratio": rep.depth_ratio})


COMMANDS = {
    "integrate": cmd_integrate,
    "heating": cmd_heating,
    "mathieu-scan": cmd_mathieu_scan,
    "protocol-design": cmd_protocol_design,
    "shuttle-sim": cmd_shuttle_sim,
    "sweep": cmd_sweep,
    "separation": cmd_separation,
    "barrier-scan": cmd_barrier_scan,
}

_COMPUTE_FAILURES = (sc.SolverError, mt.AccuracyError, mt.TruncationError, sp.DesignError,
                     dyn.ConvergenceError, ArithmeticError)
_CONFIG_FAILURES = (ConfigError, fm.ConfigurationError, fm.GeometryError, fm.DomainError,
                    FileNotFoundError, KeyError, ValueError, TypeError)


def _input_digests(config_path: Path, cfg: dict, base_dir: Path) -> dict:
    digests = {str(config_path): _sha256(config_path)}

    def walk(node):
        if isinstance(node, dict):
            for k, v in node.items():
                if k == "path" and isinstance(v, str):
                    p = base_dir / v
                    if p.exists():
                        digests[v] = _sha256(p)
                else:
                    walk(v)
        elif isinstance(node, list):
            for v in node:
                walk(v)

    walk(cfg)
    return digests


def run(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="iontide", description=__doc__.splitlines()[0])
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", required=True, type=Path)
    parser.add_argument("--out", required=True, type=Path)
    parser.add_argument("--threads", type=int, default=1,
                        help="worker count for sweeps (runs are sequential; reserved)")
    parser.add_argument("--seed", type=int, default=0, help="reserved; every algorithm is deterministic")
    parser.add_argument("--format", choices=["csv", "json"], default="csv")
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    try:
        cfg = load_config(args.config, args.command)
    except ConfigError as exc:
        print(f"iontide: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    base_dir = args.config.resolve().parent
    args.out.mkdir(parents=True, exist_ok=True)
    out = Outputs(args.out, args.format)
    started = time.perf_counter()
    status, message = EXIT_OK, None
    try:
        COMMANDS[args.command](cfg, out, base_dir)
    except _COMPUTE_FAILURES as exc:
        status, message = EXIT_SOLVER, f"{type(exc).__name__}: {exc}"
    except _CONFIG_FAILURES as exc:
        status, message = EXIT_CONFIG, f"{type(exc).__name__}: {exc}"
    except Exception as exc:  # noqa: BLE001 - the exit-code contract is {0, 2, 3}
        status, message = EXIT_SOLVER, f"{type(exc).__name__}: {exc}"
    if message:
        print(f"iontide: {message}", file=sys.stderr)
    files = [f for f in out.files if f.exists()]
    manifest = {
        "tool": "iontide", "version": __version__, "command": args.command,
        "config": cfg, "inputs": _input_digests(args.config, cfg, base_dir),
        "outputs": {f.name: _sha256(f) for f in files},
        "status": status, "partial": status != EXIT_OK, "error": message,
        "wall_clock_s": time.perf_counter() - started,
        "options": {"threads": args.threads, "seed": args.seed, "format": args.format},
    }
    (args.out / "manifest.json").write_text(json.dumps(_jsonable(manifest), indent=2,
                                                       sort_keys=True) + "\n")
    return status


def main(argv=None):
    sys.exit(run(argv))


if __name__ == "__main__":
    main()
