"""Three-phase unbalanced load flow on radial feeders.

The solver is a fixed-point current-injection sweep: nodal currents are
computed from the constant-PQ injections and the present voltage guess,
aggregated leaf-to-root along the tree, and voltages are then updated
root-to-leaf across each line's 3x3 series impedance.  Convergence is
declared on the power mismatch of the full nodal equations
S_i = V_i * conj(sum_k Y_ik V_k), evaluated with the assembled admittance
matrix, so the sweep and the convergence test take independent routes
through the network model.

Batched solving is first-class: a batch of injection sets shares one
admittance model and is swept in lock-step, which is what makes the
Monte-Carlo envelope stage cheap.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .errors import PowerFlowDivergence
from .feeder import AdmittanceModel, FeederModel

log = logging.getLogger(__name__)

DEFAULT_TOL = 1e-8
DEFAULT_MAXITER = 100


@dataclass
class InjectionSet:
    """Net complex injections per (bus, phase), export positive, in kW/kvar."""

    p_kw: np.ndarray   # (N, 3)
    q_kvar: np.ndarray  # (N, 3)

    def __post_init__(self):
        self.p_kw = np.asarray(self.p_kw, dtype=float)
        self.q_kvar = np.asarray(self.q_kvar, dtype=float)
        if self.p_kw.shape != self.q_kvar.shape or self.p_kw.ndim != 2 or self.p_kw.shape[1] != 3:
            raise ValueError("injections must be (N, 3) arrays of matching shape")
        if not (np.isfinite(self.p_kw).all() and np.isfinite(self.q_kvar).all()):
            raise ValueError("injections must be finite")


@dataclass
class VoltageSolution:
    v: np.ndarray          # (N, 3) complex, pu
    iterations: int
    max_mismatch: float    # pu
    converged: bool

    def magnitudes(self) -> np.ndarray:
        return np.abs(self.v)


@dataclass(frozen=True)
class VoltageViolation:
    bus: str
    phase: int
    v_mag: float
    bound: float
    kind: str  # "under" or "over"


def injections_from_households(feeder: FeederModel, per_household: dict) -> InjectionSet:
    """Build a dense injection set from {household_id: (p_kw, q_kvar)}."""
    p = np.zeros((feeder.n_bus, 3))
    q = np.zeros((feeder.n_bus, 3))
    for hid, (pk, qk) in per_household.items():
        bi, ph = feeder.household_node(hid)
        p[bi, ph] += pk
        q[bi, ph] += qk
    return InjectionSet(p, q)


def _power_mismatch(adm: AdmittanceModel, v_flat: np.ndarray, s_pu: np.ndarray,
                    slack_idx: int) -> np.ndarray:
    """Max |S_calc - S_spec| per batch element over non-slack nodes, pu."""
    i_node = v_flat @ adm.ybus.T
    s_calc = v_flat * np.conj(i_node)
    ds = s_calc - s_pu.reshape(v_flat.shape)
    ds[:, 3 * slack_idx:3 * slack_idx + 3] = 0.0
    return np.abs(ds).max(axis=1)


def solve_batch(adm: AdmittanceModel, s_pu: np.ndarray, tol: float = DEFAULT_TOL,
                maxiter: int = DEFAULT_MAXITER, trace: list | None = None):
    """Sweep-solve a batch of injection scenarios.

    s_pu: (B, N, 3) complex net injections in per-unit (slack entries ignored).
    Returns (v, iterations, mismatch, converged) with v of shape (B, N, 3),
    mismatch the per-scenario residual after the last sweep, and converged
    a boolean mask.  Non-convergence is reported, not raised.
    """
    feeder = adm.feeder
    n = feeder.n_bus
    b = s_pu.shape[0]
    slack_idx = feeder.bus_index[feeder.slack_bus]

    v = np.tile(feeder.slack_phasors(), (b, n, 1)).astype(complex)
    s = np.array(s_pu, dtype=complex)
    s[:, slack_idx, :] = 0.0

    order = adm.order
    parent = adm.parent
    z = adm.z_line_pu

    mism = _power_mismatch(adm, v.reshape(b, 3 * n), s, slack_idx)
    if trace is not None:
        trace.append(float(mism.max()))
    iterations = 0
    for iterations in range(1, maxiter + 1):
        if (mism < tol).all():
            iterations -= 1
            break
        # Backward: subtree injection currents accumulated toward the slack.
        i_inj = np.conj(s / v)
        d = -i_inj
        for bi in order[::-1]:
            d[:, parent[bi], :] += d[:, bi, :]
        # Forward: voltage drop across each feeding line.
        for bi in order:
            v[:, bi, :] = v[:, parent[bi], :] - d[:, bi, :] @ z[bi].T
        mism = _power_mismatch(adm, v.reshape(b, 3 * n), s, slack_idx)
        if trace is not None:
            trace.append(float(mism.max()))
        if log.isEnabledFor(logging.DEBUG):
            log.debug("sweep %d: max mismatch %.3e pu", iterations, mism.max())
    converged = mism < tol
    return v, iterations, mism, converged


def solve_power_flow(adm: AdmittanceModel, inj: InjectionSet, tol: float = DEFAULT_TOL,
                     maxiter: int = DEFAULT_MAXITER, trace: list | None = None) -> VoltageSolution:
    """Solve one injection set; raises PowerFlowDivergence on non-convergence."""
    if inj.p_kw.shape[0] != adm.n_bus:
        raise ValueError(f"injection set covers {inj.p_kw.shape[0]} buses, feeder has {adm.n_bus}")
    s_pu = adm.feeder.base.kw_to_pu(inj.p_kw + 1j * inj.q_kvar)[None, :, :]
    v, iterations, mism, converged = solve_batch(adm, s_pu, tol=tol, maxiter=maxiter, trace=trace)
    if not converged[0]:
        raise PowerFlowDivergence(
            f"load flow did not converge in {maxiter} iterations "
            f"(last mismatch {mism[0]:.3e} pu)",
            last_mismatch=float(mism[0]),
            iterations=iterations,
        )
    return VoltageSolution(v=v[0], iterations=iterations, max_mismatch=float(mism[0]), converged=True)


def check_limits(sol: VoltageSolution, feeder: FeederModel, v_lo: float, v_hi: float):
    """List every (bus, phase) whose voltage magnitude leaves [v_lo, v_hi]."""
    report = []
    mags = sol.magnitudes()
    for bi, bus in enumerate(feeder.buses):
        for ph in range(3):
            m = mags[bi, ph]
            if m < v_lo:
                report.append(VoltageViolation(bus, ph, float(m), v_lo, "under"))
            elif m > v_hi:
                report.append(VoltageViolation(bus, ph, float(m), v_hi, "over"))
    return report


def limits_mask(v: np.ndarray, v_lo: float, v_hi: float) -> np.ndarray:
    """Batch companion of check_limits: True where a scenario stays in band.

    v: (B, N, 3) complex voltages.
    """
    mags = np.abs(v)
    return ((mags >= v_lo) & (mags <= v_hi)).all(axis=(1, 2))
