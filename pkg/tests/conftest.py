import math

import numpy as np
import pytest

from iontide import field_model as fm

CD_MASS = fm.amu_to_kg(110.904)
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def point_trap():
    """Point-geometry rf quadrupole giving a 1 MHz secular frequency for Cd+."""
    omega_rf = 2 * math.pi * 30e6
    v_rf = 100.0
    w = 2 * math.pi * 1e6
    kappa = w * math.sqrt(2) * CD_MASS * omega_rf / (fm.ELEMENTARY_CHARGE * v_rf)
    return fm.TrapModel(fm.PointQuadrupole(kappa, geometry="point"), [], v_rf, omega_rf,
                        fm.ELEMENTARY_CHARGE, CD_MASS)


@pytest.fixture(scope="session")
def segmented_trap():
    seg = fm.SegmentedLinearTrap(np.arange(10) * 100e-6, 100e-6)
    return fm.TrapModel(fm.PointQuadrupole(5e7), [seg], 100.0, 2 * math.pi * 30e6,
                        fm.ELEMENTARY_CHARGE, CD_MASS)


CONFIG_DIR = __import__("pathlib").Path(__file__).resolve().parents[1] / "configs"
DEMOS = {
    "integrate_oscillator.toml": "integrate", "integrate_stiff.toml": "integrate",
    "heating_headline.toml": "heating", "heating_sweep.toml": "heating",
    "mathieu_scan.toml": "mathieu-scan", "mathieu_low_m.toml": "mathieu-scan",
    "protocol_design.toml": "protocol-design", "separation.toml": "separation",
    "barrier_scan.toml": "barrier-scan", "shuttle_sim.toml": "shuttle-sim",
    "sweep.toml": "sweep",
}


@pytest.fixture(scope="session")
def demo_runs(tmp_path_factory):
    """Every shipped demo config run twice in-process: {name: (status, dir1, dir2)}."""
    from iontide.cli_harness import run

    root = tmp_path_factory.mktemp("demos")
    out = {}
    for name, command in sorted(DEMOS.items()):
        stem = name.removesuffix(".toml")
        dirs = [root / f"{stem}_{i}" for i in (1, 2)]
        codes = [run([command, "--config", str(CONFIG_DIR / name), "--out", str(d)]) for d in dirs]
        out[stem] = (codes, dirs[0], dirs[1])
    return out
