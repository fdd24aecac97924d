"""Per-household operating envelopes in the P-Q plane.

The network side of the scheme: each household's reachable injection range is an
axis-aligned box spanned by its controllable air-conditioner under fixed
power factors.  Uniform samples from all boxes are screened with network-wide
three-phase load flows against the statutory voltage band, and the convex
hull of each DOE household's surviving samples, in half-space form, is the
envelope handed to its local controller.
"""

from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass

import numpy as np

from .errors import EnvelopeError
from .feeder import AdmittanceModel, FeederModel
from .powerflow import limits_mask, solve_batch
from .thermal import ThermalParams

log = logging.getLogger(__name__)

CONTAIN_TOL = 1e-9


class CustomerClass(enum.Enum):
    DOE = "doe"
    NON_DOE = "nondoe"
    PASSIVE = "passive"


def pf_tangent(power_factor: float) -> float:
    """tan(acos(pf)) for a lagging power factor in (0, 1]."""
    if not 0.0 < power_factor <= 1.0:
        raise ValueError(f"power factor must be in (0, 1], got {power_factor}")
    return math.tan(math.acos(power_factor))


@dataclass(frozen=True)
class HouseholdSpec:
    """Static parameters of one customer connection."""

    id: str
    customer_class: CustomerClass
    pv_kw_rating: float
    pf_pv: float
    pf_ul: float
    ac_kw_rating: float = 0.0
    pf_ac: float = 1.0
    thermal: ThermalParams | None = None
    comfort_lo_c: float = 22.0
    comfort_hi_c: float = 24.0
    import_limit_kw: float = 10.0
    export_limit_kw: float = 5.0

    def __post_init__(self):
        if self.ac_kw_rating < 0.0:
            raise ValueError(f"{self.id}: AC rating must be >= 0")
        if self.comfort_lo_c >= self.comfort_hi_c:
            raise ValueError(f"{self.id}: comfort band must satisfy lo < hi")
        for pf in (self.pf_pv, self.pf_ul, self.pf_ac):
            pf_tangent(pf)
        if self.customer_class is CustomerClass.PASSIVE and self.pv_kw_rating != 0.0:
            raise ValueError(f"{self.id}: passive customers carry no PV")
        if self.customer_class is CustomerClass.DOE and self.thermal is None:
            raise ValueError(f"{self.id}: DOE customers need thermal parameters")

    @property
    def controllable(self) -> bool:
        return self.customer_class is CustomerClass.DOE


@dataclass(frozen=True)
class InjectionLimits:
    p_min_kw: float
    p_max_kw: float
    q_min_kvar: float
    q_max_kvar: float

    @property
    def degenerate(self) -> bool:
        return self.p_min_kw == self.p_max_kw and self.q_min_kvar == self.q_max_kvar

    def as_box(self):
        return bounding_box(self)


@dataclass(frozen=True)
class BoundingBox:
    """Axis-aligned candidate region of operation in the P-Q plane (kW, kvar)."""

    p_min: float
    p_max: float
    q_min: float
    q_max: float

    @property
    def corners(self) -> np.ndarray:
        return np.array(
            [
                (self.p_min, self.q_min),
                (self.p_max, self.q_min),
                (self.p_max, self.q_max),
                (self.p_min, self.q_max),
            ]
        )

    @property
    def degenerate(self) -> bool:
        return self.p_min == self.p_max or self.q_min == self.q_max


@dataclass
class EnvelopePolytope:
    """One DOE household's envelope at one control step.

    Vertices are counter-clockwise (kW, kvar) pairs; rows of A have unit
    Euclidean norm and A @ x <= b within tolerance for every vertex and
    every feasible sampled point.
    """

    household_id: str
    t_index: int
    vertices: np.ndarray  # (k, 2)
    a: np.ndarray         # (m, 2)
    b: np.ndarray         # (m,)
    sampled: int
    feasible: int
    degenerate: bool = False

    def contains(self, points: np.ndarray, tol: float = CONTAIN_TOL) -> np.ndarray:
        pts = np.atleast_2d(points)
        return (pts @ self.a.T <= self.b + tol).all(axis=1)


def injection_limits(spec: HouseholdSpec, pv_avail_kw: float, ul_kw: float) -> InjectionLimits:
    """Extreme net P and Q injections reachable at the POC this step.

    For DOE customers the air-conditioner sweeps [0, rating]; everything
    else runs at fixed power factor, so the limits follow from evaluating
    the injection balance at the two AC endpoints.  Non-DOE and passive
    customers have no controllable device and collapse to a point.
    """
    if pv_avail_kw < 0.0 or ul_kw < 0.0:
        raise ValueError("pv availability and uncontrollable load must be >= 0")
    if spec.customer_class is CustomerClass.PASSIVE and pv_avail_kw != 0.0:
        raise ValueError(f"{spec.id}: passive customer cannot have PV available")

    q_pv = pv_avail_kw * pf_tangent(spec.pf_pv)
    q_ul = ul_kw * pf_tangent(spec.pf_ul)

    if spec.controllable:
        p_hi = pv_avail_kw - ul_kw                       # AC off
        p_lo = pv_avail_kw - spec.ac_kw_rating - ul_kw   # AC at rating
        q_hi = q_pv - q_ul
        q_lo = q_pv - spec.ac_kw_rating * pf_tangent(spec.pf_ac) - q_ul
        return InjectionLimits(p_lo, p_hi, q_lo, q_hi)

    p = pv_avail_kw - ul_kw
    q = q_pv - q_ul
    return InjectionLimits(p, p, q, q)


def bounding_box(lim: InjectionLimits) -> BoundingBox:
    return BoundingBox(lim.p_min_kw, lim.p_max_kw, lim.q_min_kvar, lim.q_max_kvar)


def sample_scenarios(boxes: dict[str, BoundingBox], n: int, seed) -> dict[str, np.ndarray]:
    """Draw n uniform (P, Q) pairs per household box; degenerate boxes stay fixed.

    Households are visited in dict order with independent P then Q draws,
    so a given seed reproduces the stream exactly.
    """
    if n < 1:
        raise ValueError("scenario count must be >= 1")
    rng = np.random.default_rng(seed)
    out = {}
    for hid, box in boxes.items():
        pts = np.empty((n, 2))
        pts[:, 0] = box.p_min if box.p_min == box.p_max else rng.uniform(box.p_min, box.p_max, n)
        pts[:, 1] = box.q_min if box.q_min == box.q_max else rng.uniform(box.q_min, box.q_max, n)
        out[hid] = pts
    return out


def feasible_set(feeder: FeederModel, adm: AdmittanceModel, scenarios: dict[str, np.ndarray],
                 doe_ids: list[str], v_lo: float, v_hi: float,
                 tol: float = 1e-8, maxiter: int = 100):
    """Screen sampled scenarios with network-wide load flows.

    One three-phase load flow runs per scenario with every household at its
    sampled point; the scenario's pairs count as feasible for all DOE
    households simultaneously when the flow converges and no node leaves
    the voltage band.  Returns ({household: (k, 2) feasible points},
    feasible_mask, diverged_count).
    """
    counts = {pts.shape[0] for pts in scenarios.values()}
    if len(counts) != 1:
        raise ValueError("all households must carry the same scenario count")
    n = counts.pop()

    s_pu = np.zeros((n, feeder.n_bus, 3), dtype=complex)
    for hid, pts in scenarios.items():
        bi, ph = feeder.household_node(hid)
        s_pu[:, bi, ph] += feeder.base.kw_to_pu(pts[:, 0] + 1j * pts[:, 1])

    v, _, _, converged = solve_batch(adm, s_pu, tol=tol, maxiter=maxiter)
    in_band = limits_mask(v, v_lo, v_hi)
    feasible_mask = converged & in_band
    diverged = int(n - converged.sum())

    if not feasible_mask.any():
        raise EnvelopeError(
            "no feasible load-flow scenario for households "
            f"{sorted(doe_ids)}: {diverged} diverged, "
            f"{int((~in_band & converged).sum())} violated the voltage band"
        )
    per_household = {hid: scenarios[hid][feasible_mask] for hid in doe_ids}
    return per_household, feasible_mask, diverged


# ---------------------------------------------------------------------------
# Planar hull geometry
# ---------------------------------------------------------------------------

def _cross(o, a, b):
    return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])


def convex_hull(points: np.ndarray) -> np.ndarray:
    """Monotone-chain hull: minimal CCW vertex list, collinear points dropped."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if pts.shape[0] < 1 or pts.shape[1] != 2:
        raise ValueError("need at least one 2-D point")
    uniq = sorted({(float(p[0]), float(p[1])) for p in pts})
    if len(uniq) == 1:
        return np.array(uniq)
    if len(uniq) == 2:
        return np.array(uniq)

    lower = []
    for p in uniq:
        while len(lower) > 1 and _cross(lower[-2], lower[-1], p) <= 0.0:
            lower.pop()
        lower.append(p)
    upper = []
    for p in reversed(uniq):
        while len(upper) > 1 and _cross(upper[-2], upper[-1], p) <= 0.0:
            upper.pop()
        upper.append(p)
    return np.array(lower[:-1] + upper[:-1])


def halfspace_rep(hull: np.ndarray):
    """Outward unit-normal rows (A, b) for a CCW hull; A @ x <= b.

    Point and segment hulls get axis-aligned (point) or edge-parallel plus
    endpoint (segment) inequalities and a degeneracy flag.
    Returns (A, b, degenerate).
    """
    hull = np.atleast_2d(np.asarray(hull, dtype=float))
    k = hull.shape[0]
    if k == 1:
        p, q = hull[0]
        a = np.array([[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]])
        b = np.array([p, -p, q, -q])
        return a, b, True
    if k == 2:
        d = hull[1] - hull[0]
        norm = np.hypot(*d)
        d = d / norm
        n_out = np.array([d[1], -d[0]])
        a = np.vstack([n_out, -n_out, d, -d])
        b = np.array([
            n_out @ hull[0],
            -n_out @ hull[0],
            d @ hull[1],
            -d @ hull[0],
        ])
        return a, b, True

    rows = []
    offs = []
    for i in range(k):
        v0 = hull[i]
        v1 = hull[(i + 1) % k]
        d = v1 - v0
        norm = np.hypot(*d)
        n_out = np.array([d[1], -d[0]]) / norm  # right of travel = outward for CCW
        rows.append(n_out)
        offs.append(n_out @ v0)
    return np.array(rows), np.array(offs), False


def envelope_from_points(household_id: str, t_index: int, points: np.ndarray,
                         sampled: int) -> EnvelopePolytope:
    feasible = int(np.atleast_2d(points).shape[0])
    hull = convex_hull(points)
    a, b, degenerate = halfspace_rep(hull)
    if degenerate:
        log.warning("household %s step %d: degenerate envelope from %d feasible points",
                    household_id, t_index, feasible)
    return EnvelopePolytope(
        household_id=household_id,
        t_index=t_index,
        vertices=hull,
        a=a,
        b=b,
        sampled=sampled,
        feasible=feasible,
        degenerate=degenerate,
    )


def build_envelopes(feeder: FeederModel, adm: AdmittanceModel,
                    specs: dict[str, HouseholdSpec],
                    pv_kw: dict[str, float], ul_kw: dict[str, float],
                    t_index: int, n_scenarios: int, seed,
                    v_lo: float, v_hi: float,
                    static_injections: dict[str, tuple[float, float]] | None = None,
                    pf_tol: float = 1e-8, pf_maxiter: int = 100) -> dict[str, EnvelopePolytope]:
    """Full Stage-I pipeline for one control step.

    ``static_injections`` optionally overrides the (P, Q) point used for
    non-DOE and passive households (e.g. after export curtailment); without
    it their degenerate injection limits are used directly.
    """
    boxes = {}
    for hid in feeder.household_map:
        spec = specs[hid]
        if not spec.controllable and static_injections and hid in static_injections:
            p, q = static_injections[hid]
            boxes[hid] = BoundingBox(p, p, q, q)
        else:
            lim = injection_limits(spec, pv_kw.get(hid, 0.0), ul_kw.get(hid, 0.0))
            boxes[hid] = bounding_box(lim)

    doe_ids = [hid for hid in feeder.household_map if specs[hid].controllable]
    scenarios = sample_scenarios(boxes, n_scenarios, seed)
    per_household, feasible_mask, diverged = feasible_set(
        feeder, adm, scenarios, doe_ids, v_lo, v_hi, tol=pf_tol, maxiter=pf_maxiter)
    if diverged:
        log.info("step %d: %d of %d scenarios diverged and were discarded",
                 t_index, diverged, n_scenarios)

    n_feasible = int(feasible_mask.sum())
    if n_feasible < 3:
        log.warning("step %d: only %d feasible scenarios survive; envelopes degenerate",
                    t_index, n_feasible)

    return {
        hid: envelope_from_points(hid, t_index, per_household[hid], n_scenarios)
        for hid in doe_ids
    }
