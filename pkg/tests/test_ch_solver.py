import numpy as np
import pytest

from divdivch.assembly import ConfigurationError
from divdivch.ch_solver import (CahnHilliardStepper, FieldState, RunConfig, _divdiv_sigma_load,
                                coalescence_init, exact_mean, mass_of, project_init, run, write_vtk)
from divdivch.manufactured import ManufacturedCase, Spatial, case_constant, case_square
from divdivch.verify import error_norms


class AffineCase(ManufacturedCase):
    """u = 0.3 + 0.5 x - 0.2 y: sigma = -f(u) I / eps^2 is a cubic in the tensor space."""

    def spatial(self, x, y):
        x = np.asarray(x, float) + 0 * np.asarray(y, float)
        z = np.zeros_like(x)
        return Spatial(0.3 + 0.5 * x - 0.2 * y, np.stack([0.5 + z, -0.2 + z], -1),
                       np.stack([z, z, z], -1), np.stack([z, z], -1), z)


def _homogeneous_stepper(ops, tau=0.05, eps=1.0, **kw):
    return CahnHilliardStepper(ops, tau, eps, None, **kw)


def test_projection_reproduces_members(ops_sq2):
    c = AffineCase(eps=0.9)
    st = project_init(ops_sq2, c, 0.0)
    e = error_norms(c, ops_sq2, st, 0.0)
    assert e["sigma"] < 1e-10 and e["u"] < 1e-10


def test_projection_preserves_mean(ops_sq2):
    c = case_square()
    st = project_init(ops_sq2, c, 0.2)
    assert st.mass == pytest.approx(exact_mean(ops_sq2, lambda x, y: c.u(x, y, 0.2)), abs=1e-11)


def test_divdiv_load_modes_agree(ops_sq3):
    c = case_square()
    a = _divdiv_sigma_load(ops_sq3, c, 0.1, "closed")
    b = _divdiv_sigma_load(ops_sq3, c, 0.1, "ibp")
    assert np.abs(a - b).max() < 1e-10 * np.abs(a).max()
    with pytest.raises(ConfigurationError):
        _divdiv_sigma_load(ops_sq3, c, 0.1, "other")


@pytest.mark.parametrize("c", [0.0, 1.0, -1.0])
def test_steady_states(ops_sq2, c):
    st = project_init(ops_sq2, case_constant(c), 0.0)
    stepper = _homogeneous_stepper(ops_sq2)
    for _ in range(5):
        st = stepper.step(st)
    assert np.abs(st.w - c).max() < 1e-12 and np.abs(st.s).max() < 1e-8


def test_mass_conservation_per_step(ops_sq3, rng):
    w = rng.uniform(-1, 1, ops_sq3.v_space.dim)
    st = FieldState(np.zeros(ops_sq3.sigma_space.dim), w, None, 0.0, 0, mass_of(ops_sq3, w))
    stepper = _homogeneous_stepper(ops_sq3, tau=1e-3, eps=0.3)
    for _ in range(10):
        new = stepper.step(st)
        assert abs(new.mass - st.mass) <= 1e-10
        st = new


def test_stabilized_step_conserves_mass(ops_sq3, rng):
    w = rng.uniform(-1, 1, ops_sq3.v_space.dim)
    st = FieldState(np.zeros(ops_sq3.sigma_space.dim), w, None, 0.0, 0, mass_of(ops_sq3, w))
    stepper = _homogeneous_stepper(ops_sq3, tau=1e-2, eps=0.05, stabilization=2.0)
    for _ in range(5):
        new = stepper.step(st)
        assert abs(new.mass - st.mass) <= 1e-10
        st = new
    assert np.abs(st.w).max() < 5.0
    with pytest.raises(ConfigurationError):
        _homogeneous_stepper(ops_sq3, stabilization=-1.0)


def test_zero_trajectory():
    res = run(RunConfig(level=2, tau=0.1, T=0.5, case=None, record_mass=False))
    assert np.all(res.final.w == 0) and np.all(res.final.s == 0)
    assert res.masses.shape == (6, 3)


def test_run_config_validation():
    with pytest.raises(ConfigurationError):
        RunConfig(tau=0.0)
    with pytest.raises(ConfigurationError):
        RunConfig(eps=-1.0)
    with pytest.raises(ConfigurationError):
        RunConfig(tau=1.0, T=0.5)
    cfg = RunConfig(tau=0.3, T=1.0)
    assert cfg.n_steps == 3 and cfg.tau_eff == pytest.approx(1 / 3)


def test_manufactured_run_and_outputs(tmp_path):
    cfg = RunConfig(level=2, tau=1e-5, T=5e-5, case="square", out_dir=str(tmp_path),
                    snapshot_times=(0.0, 5e-5), snapshot_csv=True)
    res = run(cfg)
    assert set(res.errors) == {"sigma", "u"}
    assert res.errors["u"] == pytest.approx(7.37e-2, rel=0.05)
    lines = (tmp_path / "mass_history.csv").read_text().splitlines()
    assert lines[0] == "step,time,mass" and len(lines) == 7
    assert len(res.snapshots) == 2
    vtk = res.snapshots[-1].read_text()
    assert vtk.startswith("# vtk DataFile") and "SCALARS u double" in vtk
    assert res.snapshots[-1].with_suffix(".csv").read_text().startswith("x,y,u")


def test_coalescence_init_is_consistent(ops_sq3):
    u0 = lambda x, y: np.cos(np.pi * x)
    st = coalescence_init(ops_sq3, u0, 0.5)
    assert np.abs(ops_sq3.C @ st.s).max() < 1e-12
    assert st.mass == pytest.approx(0.0, abs=1e-12)


def test_write_vtk(tmp_path, ops_sq1):
    st = FieldState(np.zeros(ops_sq1.sigma_space.dim), np.arange(6.0), None, 0.0, 0, 0.0)
    write_vtk(tmp_path / "a.vtk", ops_sq1, st)
    txt = (tmp_path / "a.vtk").read_text()
    assert "CELLS 2 8" in txt and "POINT_DATA 6" in txt and "CELL_DATA 2" in txt
