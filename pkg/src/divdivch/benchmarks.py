"""Reference settings, reference values and tolerance verdicts.

Each table command runs one or more *blocks* (a time-step rule and final
time on a fixed domain) and compares the finest computed levels against the
tolerances below.  Reference errors are listed per mesh level, starting at 1.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class Block:
    name: str
    domain: str
    tau_rule: str
    T: float
    tau: float | None = None
    postprocess: bool = False
    levels: tuple = (1, 2, 3, 4)
    ref_sigma: tuple = ()
    ref_u: tuple = ()
    ref_upost: tuple = ()


TABLE1 = (
    Block("fixed", "square", "fixed", 2e-4, tau=1e-5, levels=(1, 2, 3, 4, 5, 6),
          ref_sigma=(3.26, 2.61e-1, 2.62e-2, 4.46e-3, 1.07e-3, 2.68e-4),
          ref_u=(2.69e-1, 7.37e-2, 1.95e-2, 4.95e-3, 1.24e-3, 3.11e-4)),
    Block("h2", "square", "h2", 1.0, levels=(1, 2, 3, 4, 5),
          ref_sigma=(1.18, 1.02e-1, 1.23e-2, 2.69e-3, 6.71e-4),
          ref_u=(1.06e-1, 2.71e-2, 7.17e-3, 1.82e-3, 4.58e-4)),
)

TABLE2 = (
    Block("fixed", "square", "fixed", 4e-5, tau=1e-6, postprocess=True,
          ref_sigma=(3.27, 2.64e-1, 2.05e-2, 1.37e-3),
          ref_u=(2.69e-1, 7.37e-2, 1.95e-2, 4.95e-3),
          ref_upost=(1.32e-1, 9.86e-3, 7.47e-4, 4.83e-5)),
    Block("h4", "square", "h4", 1.0, postprocess=True,
          ref_sigma=(1.95, 1.57e-1, 1.16e-2, 7.68e-4),
          ref_u=(1.79e-1, 4.48e-2, 1.18e-2, 3.00e-3),
          ref_upost=(1.09e-1, 6.63e-3, 4.34e-4, 2.89e-5)),
)

TABLE3 = (
    Block("fixed", "lshape", "fixed", 2e-4, tau=1e-5, levels=(1, 2, 3, 4, 5),
          ref_sigma=(2.81, 1.96, 1.44, 1.09, 8.44e-1),
          ref_u=(5.53e-1, 3.78e-1, 2.52e-1, 1.62e-1, 1.00e-1)),
    Block("h2", "lshape", "h2", 1.0, levels=(1, 2, 3, 4, 5),
          ref_sigma=(7.05e-1, 5.89e-1, 4.71e-1, 3.75e-1, 2.98e-1),
          ref_u=(2.64e-1, 1.85e-1, 1.20e-1, 7.50e-2, 4.56e-2)),
)

TABLES = {"table1": TABLE1, "table2": TABLE2, "table3": TABLE3}

TABLE5_LEVELS = (1, 2, 3, 4, 5, 6)
TABLE5_REF = {
    "mixed": {"sigma": (1.75, 1.45, 1.19, 9.75e-1, 7.90e-1, 6.38e-1),
              "u": (5.78e-1, 3.86e-1, 2.57e-1, 1.66e-1, 1.04e-1, 6.34e-2)},
    "morley": {"sigma": (1.86, 1.61, 1.36, 1.12, 9.11e-1, 7.33e-1),
               "u": (5.76e-1, 4.56e-1, 3.25e-1, 2.22e-1, 1.47e-1, 9.53e-2)},
    "cr": {"sigma": (3.10, 3.36, 3.49, 3.55, 3.58, 3.60),
           "u": (1.40, 1.88, 2.07, 2.15, 2.18, 2.19)},
}

# Eigenvalue rows start two red refinements above the base mesh: row r is
# computed on mesh level r + EIGEN_LEVEL_OFFSET.
EIGEN_LEVEL_OFFSET = 2
EIGEN_REF = {
    "mixed": ((7.1399, 11.7918, 97.4396, 97.4396, 128.7678),
              (8.0275, 12.0402, 97.4113, 97.4113, 129.0807),
              (8.7681, 12.2025, 97.4103, 97.4103, 129.3118),
              (9.3379, 12.3072, 97.4132, 97.4132, 129.4666),
              (9.7498, 12.3742, 97.4252, 97.4252, 129.5834)),
    "morley": ((6.6167, 10.8045, 81.4404, 84.6007, 107.3816),
               (7.5927, 11.6734, 92.7873, 93.7330, 122.6000),
               (8.4162, 12.0429, 96.2045, 96.4536, 127.5163),
               (9.0711, 12.2249, 97.1047, 97.1678, 128.9456),
               (9.5588, 12.3266, 97.3328, 97.3486, 129.3880)),
    "cr": ((2.3897, 13.0454, 107.4661, 107.5314, 146.6509),
           (2.2528, 12.6333, 99.9091, 99.9153, 133.9467),
           (2.2055, 12.5260, 98.0344, 98.0349, 130.7807),
           (2.1881, 12.4986, 97.5655, 97.5655, 129.9860),
           (2.1816, 12.4917, 97.4482, 97.4482, 129.7868)),
}
EIGEN_LEVELS = tuple(r + 1 + EIGEN_LEVEL_OFFSET for r in range(5))

COALESCENCE_RUN = dict(structured=20, eps=0.01, tau=0.01, T=10.0,
                       snapshot_times=(0.0, 1.0, 2.0, 10.0), stabilization=2.0)


@dataclass
class Verdict:
    name: str
    passed: bool
    detail: str = ""
    gated: bool = True

    def line(self) -> str:
        tag = "PASS" if self.passed else "FAIL"
        if not self.gated:
            tag += " (reported, not gated)"
        return f"{tag} {self.name}: {self.detail}"


@dataclass
class VerdictSet:
    verdicts: list = field(default_factory=list)

    def add(self, name: str, passed: bool, detail: str = "", gated: bool = True) -> Verdict:
        v = Verdict(name, bool(passed), detail, gated)
        self.verdicts.append(v)
        return v

    @property
    def passed(self) -> bool:
        return all(v.passed for v in self.verdicts if v.gated)

    def lines(self) -> list[str]:
        return [v.line() for v in self.verdicts]


def run_block(table: str, block: Block, eps: float = 1.0, progress=None):
    """Convergence study for one block of a time-dependent table."""
    from .verify import eoc_study

    return eoc_study(block.domain, block.levels, block.T, block.tau_rule, block.tau, eps=eps,
                     postprocess=block.postprocess, label=f"{table}/{block.name}",
                     progress=progress)


def _fmt(r) -> str:
    return "n/a" if r is None else f"{r:.2f}"


def _rate_ok(r, target: float, tol: float) -> bool:
    return r is not None and abs(r - target) <= tol


def check_table(name: str, block: Block, report, out: VerdictSet | None = None) -> VerdictSet:
    """Tolerances for the time-dependent tables, on the finest computed pair."""
    out = out or VerdictSet()
    rs, ru = report.rate_sigma[-1], report.rate_u[-1]
    tag = f"{name}/{block.name}"
    if name == "table1":
        out.add(f"{tag} rates", _rate_ok(rs, 2.0, 0.10) and _rate_ok(ru, 2.0, 0.10),
                f"sigma {_fmt(rs)}, u {_fmt(ru)} (target 2.00 +- 0.10)")
        lev = report.levels[-1]
        es, eu = report.err_sigma[-1], report.err_u[-1]
        rfs, rfu = block.ref_sigma[lev - 1], block.ref_u[lev - 1]
        ok = 1 / 1.5 <= es / rfs <= 1.5 and 1 / 1.5 <= eu / rfu <= 1.5
        out.add(f"{tag} level {lev} errors", ok,
                f"sigma {es:.3e} vs {rfs:.3e}, u {eu:.3e} vs {rfu:.3e} (within x1.5)")
    elif name == "table2":
        rp = report.rate_upost[-1] if report.rate_upost else None
        ok = (_rate_ok(rs, 3.9, 0.2) and _rate_ok(rp, 3.95, 0.2) and _rate_ok(ru, 1.98, 0.1))
        out.add(f"{tag} rates", ok,
                f"sigma {_fmt(rs)} (3.9 +- 0.2), upost {_fmt(rp)} (3.95 +- 0.2), "
                f"u {_fmt(ru)} (1.98 +- 0.1)")
    elif name == "table3":
        ok = _rate_ok(rs, 0.33, 0.05) and ru is not None and 0.64 <= ru <= 0.80
        out.add(f"{tag} rates", ok, f"sigma {_fmt(rs)} (0.33 +- 0.05), u {_fmt(ru)} (0.64..0.80)")
    else:
        raise ValueError(f"no tolerances for {name}")
    return out


def check_table5(errors: dict, levels, out: VerdictSet | None = None) -> VerdictSet:
    """``errors[method]`` is a list of {'sigma', 'u'} dicts over ``levels``."""
    from .verify import eoc

    out = out or VerdictSet()
    for m in ("mixed", "morley"):
        rs = eoc([e["sigma"] for e in errors[m]])[-1]
        ru = eoc([e["u"] for e in errors[m]])[-1]
        ok = _rate_ok(rs, 0.31, 0.05) and ru is not None and 0.62 - 0.07 <= ru <= 0.72 + 0.07
        out.add(f"table5/{m} rates", ok, f"sigma {_fmt(rs)} (0.31 +- 0.05), u {_fmt(ru)} (0.55..0.79)")
    cu = [e["u"] for e in errors["cr"]]
    mono = all(b >= a for a, b in zip(cu[:-1], cu[1:]))
    last = list(levels)[-1]
    ok = mono and last >= 6 and cu[-1] > 2.0
    out.add("table5/cr u-error", ok,
            f"non-decreasing {mono}, level {last} value {cu[-1]:.3f} (needs > 2.0 at level 6)")
    return out


def check_table6(eigs: dict, levels, out: VerdictSet | None = None) -> VerdictSet:
    """``eigs[method]`` lists five eigenvalues per level in ``levels``."""
    out = out or VerdictSet()
    for m, rows in eigs.items():
        worst, compared = 0.0, 0
        for lev, lam in zip(levels, rows):
            r = lev - EIGEN_LEVEL_OFFSET - 1
            if 0 <= r < len(EIGEN_REF[m]):
                ref = np.array(EIGEN_REF[m][r])
                worst = max(worst, float(np.max(np.abs(np.asarray(lam) - ref) / ref)))
                compared += 1
        out.add(f"table6/{m} eigenvalues", compared == len(EIGEN_REF[m]) and worst <= 1e-2,
                f"{compared}/{len(EIGEN_REF[m])} rows compared, max relative deviation {worst:.2e}")
    if "mixed" in eigs:
        gaps = [abs(lam[3] - lam[2]) / lam[2] for lam in eigs["mixed"]]
        out.add("table6/mixed degenerate pair", max(gaps) <= 1e-6,
                f"max relative gap {max(gaps):.1e} (<= 1e-6)")
    return out
