"""Shared fixtures and independent oracle implementations.

The oracles here deliberately avoid the package's own algorithms: the hull
oracle is the O(n^3) pairwise half-plane construction, the two-bus voltage
oracle bisects the scalar power-balance equation, and the minimiser oracles
are grid or golden-section searches.
"""

import math
from pathlib import Path

import numpy as np
import pytest

from doesim import (
    BaseValues,
    CustomerClass,
    HouseholdSpec,
    ThermalParams,
    build_feeder,
    load_feeder,
)

CONFIG_DIR = Path(__file__).resolve().parent.parent / "configs"


@pytest.fixture(scope="session")
def configs_dir():
    return CONFIG_DIR


@pytest.fixture(scope="session")
def feeder2():
    return load_feeder(CONFIG_DIR / "feeder2.cfg")


@pytest.fixture(scope="session")
def feeder34():
    return load_feeder(CONFIG_DIR / "feeder34.cfg")


def make_pu_feeder(z_pu_scalar: complex, n_bus: int = 2):
    """Chain feeder whose per-phase decoupled impedance is z_pu_scalar (pu).

    Diagonal impedance blocks keep the phases independent, so balanced
    injections reproduce the single-phase-equivalent scalar problem.
    """
    base = BaseValues()
    z_ohm = np.eye(3, dtype=complex) * z_pu_scalar * base.impedance_ohm
    buses = [f"b{i}" for i in range(1, n_bus + 1)]
    lines = [(buses[i], buses[i + 1], z_ohm) for i in range(n_bus - 1)]
    households = {f"h{i}{ph}": (buses[i], ph) for i in range(1, n_bus) for ph in range(3)}
    return build_feeder({
        "buses": buses,
        "slack": buses[0],
        "lines": lines,
        "households": households,
    })


@pytest.fixture()
def pu_feeder2():
    return make_pu_feeder(0.05 + 0.05j)


def doe_thermal(dt_h=1.0 / 12.0):
    return ThermalParams(r_c_per_kw=2.0, c_kwh_per_c=2.0, cop=2.5, dt_h=dt_h)


@pytest.fixture()
def doe_spec():
    """The worked DOE example: 2 kW AC at pf 0.95, PV pf 0.8, UL pf 0.95."""
    return HouseholdSpec(
        id="h1",
        customer_class=CustomerClass.DOE,
        pv_kw_rating=3.0,
        pf_pv=0.8,
        pf_ul=0.95,
        ac_kw_rating=2.0,
        pf_ac=0.95,
        thermal=doe_thermal(),
    )


@pytest.fixture()
def passive_spec():
    return HouseholdSpec(
        id="hp",
        customer_class=CustomerClass.PASSIVE,
        pv_kw_rating=0.0,
        pf_pv=0.95,
        pf_ul=0.95,
    )


@pytest.fixture()
def nondoe_spec():
    return HouseholdSpec(
        id="hn",
        customer_class=CustomerClass.NON_DOE,
        pv_kw_rating=4.0,
        pf_pv=0.8,
        pf_ul=0.95,
    )


# ---------------------------------------------------------------------------
# Oracles
# ---------------------------------------------------------------------------

def bisect_two_bus_voltage(z_pu: complex, s_pu: complex, v1: float = 1.0) -> float:
    """|V2| from the scalar power balance |u - z conj(s)|^2 = u |V1|^2, u = |V2|^2.

    Scans for the high-voltage root and bisects it to machine precision.
    """
    def f(u):
        return abs(u - z_pu * s_pu.conjugate()) ** 2 - u * v1 ** 2

    us = np.linspace(1e-9, 2.0, 400001)
    vals = np.abs(us - z_pu * s_pu.conjugate()) ** 2 - us * v1 ** 2
    flips = np.where(np.sign(vals[:-1]) != np.sign(vals[1:]))[0]
    assert len(flips) >= 1, "no power-flow solution bracket found"
    a, b = us[flips[-1]], us[flips[-1] + 1]
    for _ in range(200):
        m = 0.5 * (a + b)
        if math.copysign(1.0, f(m)) == math.copysign(1.0, f(a)):
            a = m
        else:
            b = m
    return math.sqrt(0.5 * (a + b))


def brute_hull(points) -> np.ndarray:
    """O(n^3) hull: an ordered pair is an edge iff all points lie weakly left.

    Returns CCW vertices starting from the lexicographically smallest; assumes
    points in general position (no three distinct collinear), which random
    float draws satisfy.
    """
    uniq = sorted({(float(p[0]), float(p[1])) for p in np.atleast_2d(points)})
    if len(uniq) <= 2:
        return np.array(uniq)
    edges = {}
    for a in uniq:
        for b in uniq:
            if a == b:
                continue
            if all(
                (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0]) >= 0.0
                for p in uniq
            ):
                edges[a] = b
    start = min(edges)
    out = [start]
    cur = edges[start]
    guard = 0
    while cur != start:
        out.append(cur)
        cur = edges[cur]
        guard += 1
        assert guard <= len(uniq), "brute hull walk did not close"
    return np.array(out)


def point_in_hull_oracle(hull: np.ndarray, pt, tol: float = 1e-12) -> bool:
    """Membership via cross products against every CCW hull edge."""
    hull = np.atleast_2d(hull)
    k = hull.shape[0]
    if k == 1:
        return bool(np.allclose(hull[0], pt, atol=tol))
    if k == 2:
        a, b = hull
        d = b - a
        cross = d[0] * (pt[1] - a[1]) - d[1] * (pt[0] - a[0])
        if abs(cross) > tol * max(1.0, np.hypot(*d)):
            return False
        t = np.dot(np.asarray(pt) - a, d) / np.dot(d, d)
        return -tol <= t <= 1.0 + tol
    for i in range(k):
        a, b = hull[i], hull[(i + 1) % k]
        cross = (b[0] - a[0]) * (pt[1] - a[1]) - (b[1] - a[1]) * (pt[0] - a[0])
        if cross < -tol:
            return False
    return True


def golden_section(fun, lo: float, hi: float, iters: int = 300) -> float:
    ratio = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    for _ in range(iters):
        c1 = b - ratio * (b - a)
        c2 = a + ratio * (b - a)
        if fun(c1) < fun(c2):
            b = c2
        else:
            a = c1
    return 0.5 * (a + b)


def grid_minimize(fun, lo: float, hi: float, step: float = 1e-5) -> float:
    grid = np.arange(lo, hi + step / 2.0, step)
    return float(grid[np.argmin([fun(x) for x in grid])])


def refine_product_minimize(fun_batch, boxes, levels=6, points=12):
    """Exhaustive grid over a product of intervals, refined to ~1e-5.

    ``fun_batch`` maps an (m, n) array of candidate points to (m,) objective
    values.  Each level zooms the full joint grid into the best cell; with
    12 points per axis and 6 levels the final resolution is below 1e-5 of
    the original interval width for 2-4 dimensions.
    """
    boxes = [tuple(b) for b in boxes]
    best_x = None
    for _ in range(levels):
        axes = [np.linspace(lo, hi, points) for lo, hi in boxes]
        mesh = np.meshgrid(*axes, indexing="ij")
        candidates = np.stack([m.reshape(-1) for m in mesh], axis=1)
        vals = fun_batch(candidates)
        best_x = candidates[np.argmin(vals)]
        new_boxes = []
        for d, (lo, hi) in enumerate(boxes):
            half = (hi - lo) / (points - 1)
            new_boxes.append((max(lo, best_x[d] - half), min(hi, best_x[d] + half)))
        boxes = new_boxes
    return best_x
