"""Acceptance criteria at their stated tolerances.

Each test prints exactly one ``PASS``/``FAIL`` line for its criterion and
fails when a gated criterion fails.  Run on its own with

    pytest tests/test_acceptance.py -s
"""
import math

import numpy as np
import pytest

from divdivch import benchmarks as bm
from divdivch import cli
from divdivch.assembly import build_operators
from divdivch.biharmonic import table5, table6
from divdivch.ch_solver import CahnHilliardStepper, FieldState, mass_of, project_init
from divdivch.linsolve import backend
from divdivch.manufactured import case_by_name, case_constant
from divdivch.mesh import build_mesh
from divdivch.verify import (conformity_audit, eoc, numerical_infsup, numerical_infsup_sparse,
                             projection_study)

from oracles import divdiv_ibp_gap, fd_deviations, quintic_reconstruction_gap, sample_points

pytestmark = [pytest.mark.slow, pytest.mark.acceptance]


@pytest.fixture
def emit(capsys):
    def out(num: int, title: str, passed: bool, detail: str, gated: bool = True) -> bool:
        tag = "PASS" if passed else "FAIL"
        if not gated:
            tag += " (reported, not gated)"
        with capsys.disabled():
            print(f"\n{tag} C{num} {title}: {detail}")
        return passed or not gated
    return out


def _tables(name):
    vs = bm.VerdictSet()
    for b in bm.TABLES[name]:
        bm.check_table(name, b, bm.run_block(name, b), vs)
    return vs


def _join(vs):
    return "; ".join(f"{v.name} {'ok' if v.passed else 'FAILED'} [{v.detail}]" for v in vs.verdicts)


@pytest.fixture(scope="module")
def coalescence_run():
    return cli.coalescence({})


def test_c01_table1(emit):
    vs = _tables("table1")
    assert emit(1, "table 1 rates and finest errors", vs.passed, _join(vs))


def test_c02_table2(emit):
    vs = _tables("table2")
    assert emit(2, "table 2 postprocessed rates", vs.passed, _join(vs))


def test_c03_table3(emit):
    vs = _tables("table3")
    assert emit(3, "table 3 L-shape rates", vs.passed, _join(vs))


def test_c04_table5(emit):
    levels = bm.TABLE5_LEVELS
    vs = bm.check_table5(table5(levels), levels)
    assert emit(4, "table 5 biharmonic comparison", vs.passed, _join(vs))


def test_c05_table6(emit):
    levels = bm.EIGEN_LEVELS
    if backend() != "pardiso":
        # the finest row needs a sparse direct solve that does not fit in memory with SuperLU
        levels = levels[:-1]
    vs = bm.check_table6(table6(levels), levels)
    detail = _join(vs) + f"; mesh levels {list(levels)} (row r on level r + {bm.EIGEN_LEVEL_OFFSET})"
    assert emit(5, "table 6 eigenvalues", vs.passed, detail)


def test_c06_mass_conservation(emit, coalescence_run):
    # plain scheme, random data: per-step drift
    ops = build_operators(build_mesh("square", 4))
    w = np.random.default_rng(0).uniform(-1, 1, ops.v_space.dim)
    st = FieldState(np.zeros(ops.sigma_space.dim), w, None, 0.0, 0, mass_of(ops, w))
    stepper = CahnHilliardStepper(ops, 1e-3, 0.3, None)
    plain = 0.0
    for _ in range(20):
        new = stepper.step(st)
        plain = max(plain, abs(new.mass - st.mass))
        st = new
    res, vs = coalescence_run
    gated = [v for v in vs.verdicts if v.gated]
    ok = plain <= 1e-10 and all(v.passed for v in gated)
    detail = (f"plain scheme per-step {plain:.1e} (<= 1e-10); coalescence ({res.config.n_steps} steps, "
              f"stabilization S={res.config.stabilization:g}, the unstabilized lagged scheme diverges "
              f"at this eps and tau): " + "; ".join(f"{v.name} {v.detail}" for v in gated))
    assert emit(6, "mass conservation", ok, detail)


def test_c07_steady_states(emit):
    ops = build_operators(build_mesh("square", 4))
    worst = {}
    for c in (0.0, 1.0, -1.0):
        st = project_init(ops, case_constant(c))
        stepper = CahnHilliardStepper(ops, 1e-2, 1.0, None)
        for _ in range(100):
            st = stepper.step(st)
        worst[c] = max(float(np.abs(st.s).max()), float(np.abs(st.w - c).max()))
    ok = max(worst.values()) <= 1e-8
    detail = ", ".join(f"c={c:+g}: {v:.1e}" for c, v in worst.items()) + " after 100 steps (<= 1e-8)"
    assert emit(7, "steady states", ok, detail)


def test_c08_conformity_audit(emit):
    parts, ok = [], True
    for dom, lev in (("square", 1), ("square", 2), ("square", 3), ("lshape", 2)):
        ops = build_operators(build_mesh(dom, lev))
        good = conformity_audit(ops, 20, seed=0)["max_violation"]
        bad = conformity_audit(ops, 20, seed=0, constrained=False)["max_violation"]
        ok &= good <= 1e-10 and bad >= 1e-3
        parts.append(f"{dom} {lev}: members {good:.1e}, control {bad:.1e}")
    assert emit(8, "conformity audit", ok, "; ".join(parts) + " (<= 1e-10 / >= 1e-3)")


def test_c09_infsup(emit):
    betas = [numerical_infsup(build_operators(build_mesh("square", lev))) for lev in (1, 2, 3, 4)]
    var = (max(betas) - min(betas)) / max(betas)
    finer = [numerical_infsup_sparse(build_operators(build_mesh("square", lev))) for lev in (5, 6)]
    ok = min(betas) > 0 and var < 0.25
    detail = (f"levels 1-4 beta {', '.join(f'{b:.4f}' for b in betas)}, variation {var:.1%} (< 25%); "
              f"levels 5-6 {', '.join(f'{b:.4f}' for b in finer)}")
    assert emit(9, "numerical inf-sup", ok, detail)


def test_c10_projection_rates(emit):
    rep = projection_study([3, 4, 5, 6])
    tot = [a + b for a, b in zip(rep.err_sigma, rep.err_u)]
    rates = eoc(tot)[1:]
    ok = abs(rates[-1] - 2.0) <= 0.15
    detail = (f"combined error rates {', '.join(f'{r:.2f}' for r in rates)} on levels 3-6, "
              f"finest pair {rates[-1]:.2f} (2.0 +- 0.15)")
    assert emit(10, "projection rates", ok, detail)


def test_c11_oracles(emit):
    ops = build_operators(build_mesh("lshape", 2))
    rng = np.random.default_rng(11)
    ibp = max(divdiv_ibp_gap(ops, rng.standard_normal(ops.sigma_space.dim)) for _ in range(3))
    fd = 0.0
    for name in ("square", "lshape"):
        x, y = sample_points(name, rng)
        fd = max(fd, max(fd_deviations(case_by_name(name, eps=0.7), x, y).values()))
    p5 = quintic_reconstruction_gap(build_operators(build_mesh("square", 2)))
    ok = ibp <= 1e-11 and fd <= 1e-5 and p5 <= 1e-10
    detail = (f"divDiv vs integration by parts {ibp:.1e} (<= 1e-11), derivatives vs finite "
              f"differences {fd:.1e} (<= 1e-5), quintic reconstruction {p5:.1e} (<= 1e-10)")
    assert emit(11, "oracle equivalences", ok, detail)


def test_c12_coalescence_topology(emit, coalescence_run):
    res, vs = coalescence_run
    v = next(v for v in vs.verdicts if not v.gated)
    assert math.isfinite(res.final.mass)
    emit(12, "coalescence zero-level set", v.passed, v.detail, gated=False)
