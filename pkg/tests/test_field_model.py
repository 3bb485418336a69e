import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from iontide import field_model as fm


def poly_grid(h, n=12, ident="p"):
    f = lambda x, y, z: np.sin(2 * x) * np.cos(y) + 0.3 * z ** 2 * x
    return fm.ScalarFieldGrid.from_function(ident, f, (-1, -1, -1), (h, h, h), (n, n, n)), f


def test_tricubic_reproduces_low_order_polynomials():
    f = lambda x, y, z: 1 + 2 * x - y + 0.5 * z + x * y * z
    g = fm.ScalarFieldGrid.from_function("lin", f, (0, 0, 0), (0.1, 0.2, 0.1), (8, 8, 8))
    x = np.array([0.33, 0.71, 0.42])
    val, grad = g.interpolate(x)
    assert val == pytest.approx(f(*x), abs=1e-12)
    assert np.allclose(grad, [2 + x[1] * x[2], -1 + x[0] * x[2], 0.5 + x[0] * x[1]], atol=1e-10)


def test_tricubic_converges_at_fourth_order():
    x = np.array([0.137, -0.211, 0.093])
    errs = []
    for n in (12, 23, 45):
        h = 2.0 / (n - 1)
        g, f = poly_grid(h, n)
        errs.append(abs(g.interpolate(x)[0] - f(*x)))
    rates = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(rates > 3.3)


def test_domain_error_names_axis():
    g, _ = poly_grid(0.2)
    with pytest.raises(fm.DomainError, match="y="):
        g.interpolate([0.0, 5.0, 0.0])
    assert not g.contains([0.0, 5.0, 0.0])


def test_grid_roundtrip(tmp_path):
    g, _ = poly_grid(0.2)
    fm.write_grid(tmp_path / "g.bin", g)
    back = fm.read_grid(tmp_path / "g.bin")
    assert back.electrode_id == "p" and back.dims == g.dims
    assert np.array_equal(back.values, g.values)


def test_bad_grid_header(tmp_path):
    (tmp_path / "bad.bin").write_bytes(b"format=other\n\n")
    with pytest.raises(fm.ConfigurationError):
        fm.read_grid(tmp_path / "bad.bin")


def test_small_grid_rejected():
    with pytest.raises(fm.GeometryError):
        fm.ScalarFieldGrid("x", (0, 0, 0), (1, 1, 1), (3, 4, 4), np.zeros((3, 4, 4)))


def test_symmetry_combine_recovers_single_electrode():
    theta = lambda x, y, z: np.exp(-((x + 0.3) ** 2 + (y + 0.4) ** 2) / 0.1) * (1 + z)
    base = fm.ScalarFieldGrid.from_function("e", theta, (-1, -1, -0.5), (0.2, 0.2, 0.25), (11, 11, 5))
    ll = base.values
    lr, ul = ll[::-1], ll[:, ::-1]
    ur = ll[::-1, ::-1]
    mk = lambda v: fm.ScalarFieldGrid("s", base.origin, base.spacing, base.dims, v)
    tt = mk(ll + lr + ul + ur)
    nn = mk(-ul + ur + ll - lr)
    nt = mk(-ul - ur + ll + lr)
    tn = mk(ul - ur + ll - lr)
    out = fm.symmetry_combine(tt, nn, tn, nt, "e")
    assert np.allclose(out.values, ll, atol=1e-15)


def test_mesh_error_bound_tracks_true_error():
    k = 3.0
    exact = lambda x, y: np.array([k * np.exp(k * x) * np.cos(k * y),
                                   -k * np.exp(k * x) * np.sin(k * y), 0 * x])
    pot = lambda x, y: np.exp(k * x) * np.cos(k * y)
    pts = np.array([[0.1, 0.2], [0.3, -0.4], [-0.2, 0.5]])

    def field(h):
        out = []
        for x, y in pts:
            out.append([(pot(x + h, y) - pot(x - h, y)) / (2 * h),
                        (pot(x, y + h) - pot(x, y - h)) / (2 * h), 0.0])
        return np.array(out)

    coarse, fine = field(0.02), field(0.01)
    bound = fm.mesh_error_bound(coarse, fine)
    true = np.linalg.norm(coarse - np.array([exact(x, y) for x, y in pts]), axis=1)
    assert np.all(np.abs(bound / true - 1) < 0.01)
    with pytest.raises(fm.GeometryError):
        fm.mesh_error_bound(coarse, fine[:2])


def test_point_quadrupole_pseudopotential_frequency(point_trap):
    # U = (1/2) m w^2 r^2 with w = 2 pi MHz radially
    x = np.array([1e-6, 0.0, 0.0])
    u = fm.rf_pseudopotential(point_trap, x)
    w = math.sqrt(2 * u / (point_trap.mass * 1e-12))
    assert w == pytest.approx(2 * math.pi * 1e6, rel=1e-12)


def test_full_rf_and_pseudo_gradients_are_consistent(point_trap):
    x = np.array([2e-6, -1e-6, 0.5e-6])
    h = 1e-10
    for mode in fm.Mode:
        e, g = point_trap.energy_and_gradient(x, np.zeros(0), 3e-8, mode)
        num = [(point_trap.energy_and_gradient(x + h * d, np.zeros(0), 3e-8, mode)[0]
                - point_trap.energy_and_gradient(x - h * d, np.zeros(0), 3e-8, mode)[0]) / (2 * h)
               for d in np.eye(3)]
        assert np.allclose(g, num, rtol=1e-6, atol=1e-30)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.tuples(*[st.floats(-1e-5, 1e-5)] * 3), min_size=2, max_size=5, unique=True))
def test_coulomb_forces_sum_to_zero(points):
    pos = np.array(points)
    d = np.linalg.norm(pos[:, None] - pos[None], axis=-1) + np.eye(len(pos))
    if d.min() < 1e-9:
        return
    f = fm.coulomb_forces(pos)
    assert np.allclose(f.sum(axis=0), 0.0, atol=1e-12 * np.abs(f).max())


def test_coincident_ions_raise():
    with pytest.raises(fm.SingularityError):
        fm.coulomb_forces([[0, 0, 0], [0, 0, 0]])


def test_schedule_interpolation_and_offsets(tmp_path):
    s = fm.VoltageSchedule(("a", "b"), [0, 1, 2], [[0, 1], [1, 1], [0, 3]])
    assert np.allclose(s.at(0.5), [0.5, 1.0])
    with pytest.raises(fm.ConfigurationError):
        s.at(3.0)
    off = s.with_offset("b", 2.0, window=(0.5, 1.5))
    assert np.allclose(off.voltages[:, 1], [1, 3, 3])
    s.write_csv(tmp_path / "s.csv")
    back = fm.VoltageSchedule.read_csv(tmp_path / "s.csv")
    assert back.electrode_ids == ("a", "b") and np.array_equal(back.voltages, s.voltages)
    assert np.allclose(back.aligned(("b", "a")).voltages[:, 0], s.voltages[:, 1])
    herm = fm.VoltageSchedule(("a", "b"), [0, 1, 2], [[0, 1], [1, 1], [0, 3]], "CubicHermite")
    assert np.allclose(herm.at(1.0), [1, 1])


def test_schedule_validation():
    with pytest.raises(fm.ConfigurationError):
        fm.VoltageSchedule(("a",), [0, 0], [[1], [2]])
    with pytest.raises(fm.ConfigurationError):
        fm.VoltageSchedule(("a",), [0, 1], [[1], [2]]).aligned(("a", "b"))


def test_golden_minimize_parabola():
    x, fx = fm.golden_minimize(lambda x: (x - 0.3) ** 2 + 1, -1.0, 2.0, tol=1e-12)
    assert x == pytest.approx(0.3, abs=1e-6) and fx == pytest.approx(1.0)


def test_segmented_trap_hessian_unsupported():
    seg = fm.SegmentedLinearTrap(np.arange(4) * 1e-4, 1e-4)
    with pytest.raises(TypeError):
        seg.evaluate([1e-4, 0, 0], hessian=True)


def test_segmented_potential_is_harmonic_near_axis():
    seg = fm.SegmentedLinearTrap(np.arange(5) * 1e-4, 1e-4)
    x = np.array([1.7e-4, 0.0, 0.0])
    h = 1e-7
    second = [(seg.evaluate(x + h * d)[0] - 2 * seg.evaluate(x)[0]
               + seg.evaluate(x - h * d)[0]) / h ** 2 for d in np.eye(3)]
    lap = np.sum(second, axis=0)
    assert np.all(np.abs(lap) < 1e-4 * np.abs(second[0]).max())


def test_barrier_profile_finds_endcap(segmented_trap):
    sched = fm.VoltageSchedule.static(segmented_trap.control_ids,
                                      [0, 1, -1, 1, 0, 0, 0, 0, 0, 0])
    rep = fm.barrier_profile(segmented_trap, [[150e-6, 0, 0], [450e-6, 0, 0]], sched,
                             n_samples=301)
    assert rep.barrier_location[0] == pytest.approx(318e-6, abs=5e-6)
    assert rep.barrier_height > 0 and rep.perpendicular_depth > 0
    assert rep.depth_ratio == pytest.approx(rep.perpendicular_depth / rep.barrier_height)
