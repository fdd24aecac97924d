"""Closed-loop study driver.

Each control step builds envelopes from probabilistic load flows, hands
them to the household controllers, runs the ADMM dispatch against the
market set-point, applies static limits
to the remaining customers, replays every 30-s grid sub-step through the
load-flow evaluator, advances the thermal states, and persists everything.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .controller import LocalProblemData, admm_track
from .envelopes import build_envelopes, pf_tangent
from .errors import ConfigError
from .feeder import assemble_admittance, load_feeder
from .powerflow import VoltageSolution, check_limits, solve_batch
from .scenarios import (
    ResultWriter,
    StudyConfig,
    apply_static_limits,
    build_reference,
    load_profiles,
    read_envelopes,
    simulate_baseline,
    synthesize_households,
)
from .thermal import step_temperature

log = logging.getLogger(__name__)


@dataclass
class RunSummary:
    control_steps: int
    grid_records: int
    max_tracking_error_kw: float
    v_min_pu: float
    v_max_pu: float
    t_in_min_c: float
    t_in_max_c: float
    failed_guarantee_events: int
    comfort_fallbacks: int
    envelope_relaxations: int
    mean_step_seconds: float
    total_seconds: float

    def deterministic_dict(self) -> dict:
        """Summary fields safe for the byte-stable summary file (no timings)."""
        return {
            "control_steps": self.control_steps,
            "grid_records": self.grid_records,
            "max_tracking_error_kw": repr(self.max_tracking_error_kw),
            "v_min_pu": repr(self.v_min_pu),
            "v_max_pu": repr(self.v_max_pu),
            "t_in_min_c": repr(self.t_in_min_c),
            "t_in_max_c": repr(self.t_in_max_c),
            "failed_guarantee_events": self.failed_guarantee_events,
            "comfort_fallbacks": self.comfort_fallbacks,
            "envelope_relaxations": self.envelope_relaxations,
        }


def _forecast_view(cfg: StudyConfig, value: float, rng) -> float:
    if cfg.forecast_noise <= 0.0:
        return value
    return max(0.0, value * (1.0 + cfg.forecast_noise * rng.standard_normal()))


def run_study(cfg: StudyConfig, out_dir, envelopes_only: bool = False,
              envelope_dir=None) -> RunSummary:
    """Run the full study and write artifacts to ``out_dir``.

    ``envelopes_only`` stops after envelope construction each step (no
    dispatch, no grid replay).  ``envelope_dir`` replays precomputed
    envelope files instead of rebuilding them.
    """
    feeder = load_feeder(cfg.feeder_path)
    adm = assemble_admittance(feeder)
    specs = synthesize_households(feeder, cfg.households, cfg.dt_control_h, cfg.seed)
    profiles = load_profiles(cfg, specs)

    baseline = simulate_baseline(specs, profiles, cfg)
    p_ref_profile = build_reference(
        baseline, cfg.regulation_fraction, cfg.reference_shape, cfg.seed,
        cfg.window_start_s, cfg.control_step_s, cfg.reference_period_s)

    doe_ids = [hid for hid in feeder.household_map if specs[hid].controllable]
    other_ids = [hid for hid in feeder.household_map if not specs[hid].controllable]
    temps = {hid: cfg.households.t_initial_c for hid in doe_ids}
    prev_dispatch = np.zeros(len(doe_ids))

    writer = ResultWriter(out_dir)
    writer.write_manifest(_config_echo(cfg), cfg.seed, "running")

    n_substeps = cfg.substeps_per_control
    tracking_errors = []
    v_min, v_max = np.inf, -np.inf
    t_min, t_max = np.inf, -np.inf
    failed_events = 0
    comfort_fallbacks = 0
    envelope_relaxations = 0
    step_seconds = []
    started = time.time()
    status = "aborted"

    try:
        for t_index, t_s in enumerate(cfg.control_times()):
            step_start = time.time()
            fc_rng = np.random.default_rng([cfg.seed, 402, t_index])
            pv_now = {hid: _forecast_view(cfg, profiles.pv[hid].value_at(t_s), fc_rng)
                      for hid in feeder.household_map}
            ul_now = {hid: _forecast_view(cfg, profiles.ul[hid].value_at(t_s), fc_rng)
                      for hid in feeder.household_map}
            t_out_now = profiles.t_out.value_at(t_s)
            price_now = profiles.price.value_at(t_s)

            static_now = {hid: apply_static_limits(specs[hid], pv_now[hid], ul_now[hid])
                          for hid in other_ids}

            # Envelope stage
            if envelope_dir is not None:
                envelopes = read_envelopes(Path(envelope_dir) / f"step_{t_index:03d}.csv")
                missing = sorted(set(doe_ids) - set(envelopes))
                if missing:
                    raise ConfigError(f"envelope file for step {t_index} misses {missing[:5]}")
            else:
                envelopes = build_envelopes(
                    feeder, adm, specs, pv_now, ul_now, t_index,
                    cfg.n_scenarios, [cfg.seed, 401, t_index],
                    cfg.v_lo, cfg.v_hi,
                    static_injections={hid: (s.p_inj_kw, s.q_inj_kvar)
                                       for hid, s in static_now.items()},
                    pf_tol=cfg.pf_tol, pf_maxiter=cfg.pf_maxiter)
                writer.write_envelopes(t_index, envelopes)
            if envelopes_only:
                step_seconds.append(time.time() - step_start)
                continue

            # Dispatch stage: the linear price term is revenue over this interval,
            # price (currency/kWh) times the step length in hours.
            problems = [
                LocalProblemData(
                    spec=specs[hid],
                    price=price_now * cfg.dt_control_h,
                    pv_avail_kw=pv_now[hid],
                    ul_kw=ul_now[hid],
                    envelope=envelopes[hid],
                    t_in_c=temps[hid],
                    t_out_c=t_out_now,
                )
                for hid in doe_ids
            ]
            p_ref = p_ref_profile.value_at(t_s)
            result = admm_track(problems, p_ref, cfg.admm, warm_start=prev_dispatch)
            prev_dispatch = result.p_ac.copy()
            tracking_errors.append(result.tracking_error_kw)
            writer.write_convergence(t_index, t_s, result)

            for iv in result.intervals:
                if iv.empty and iv.source == "comfort":
                    comfort_fallbacks += 1
                elif iv.source == "envelope":
                    envelope_relaxations += 1

            # Grid replay at 30-s cadence with dispatch held fixed.
            sub_times = [t_s + j * cfg.grid_step_s for j in range(n_substeps)]
            s_pu = np.zeros((n_substeps, feeder.n_bus, 3), dtype=complex)
            for j, tau in enumerate(sub_times):
                for hid in other_ids:
                    adj = apply_static_limits(
                        specs[hid], profiles.pv[hid].value_at(tau), profiles.ul[hid].value_at(tau))
                    writer.write_static(tau, hid,
                                        profiles.pv[hid].value_at(tau) - profiles.ul[hid].value_at(tau),
                                        adj)
                    bi, ph = feeder.household_node(hid)
                    s_pu[j, bi, ph] += feeder.base.kw_to_pu(adj.p_inj_kw + 1j * adj.q_inj_kvar)
                for i, hid in enumerate(doe_ids):
                    spec = specs[hid]
                    pv_tau = profiles.pv[hid].value_at(tau)
                    ul_tau = profiles.ul[hid].value_at(tau)
                    p_inj = pv_tau - result.p_ac[i] - ul_tau
                    q_inj = (pv_tau * pf_tangent(spec.pf_pv)
                             - result.p_ac[i] * pf_tangent(spec.pf_ac)
                             - ul_tau * pf_tangent(spec.pf_ul))
                    bi, ph = feeder.household_node(hid)
                    s_pu[j, bi, ph] += feeder.base.kw_to_pu(p_inj + 1j * q_inj)

            v, _, mism, converged = solve_batch(adm, s_pu, tol=cfg.pf_tol, maxiter=cfg.pf_maxiter)
            for j, tau in enumerate(sub_times):
                mags = np.abs(v[j])
                writer.write_voltages(tau, feeder, mags)
                v_min = min(v_min, float(mags.min()))
                v_max = max(v_max, float(mags.max()))
                sol = VoltageSolution(v=v[j], iterations=0, max_mismatch=float(mism[j]),
                                      converged=bool(converged[j]))
                violations = check_limits(sol, feeder, cfg.v_lo, cfg.v_hi)
                if not converged[j]:
                    log.error("grid sub-step t=%ds did not converge (mismatch %.2e)", tau, mism[j])
                    failed_events += 1
                for viol in violations:
                    writer.write_violation(tau, viol)
                    failed_events += 1

            # Thermal advance with the dispatched powers.
            for i, hid in enumerate(doe_ids):
                spec = specs[hid]
                t_next = step_temperature(temps[hid], spec.thermal, t_out_now, result.p_ac[i])
                p_inj, q_inj = problems[i].injection_at(result.p_ac[i])
                flag = "ok"
                if result.intervals[i].empty:
                    flag = "comfort_fallback"
                elif result.intervals[i].source == "envelope":
                    flag = "envelope_relaxed"
                writer.write_dispatch(t_index, t_s, hid, result.p_ac[i], p_inj, q_inj,
                                      t_next, flag)
                temps[hid] = t_next
                t_min = min(t_min, t_next)
                t_max = max(t_max, t_next)
            step_seconds.append(time.time() - step_start)
        status = "complete"
    finally:
        total = time.time() - started
        mean_step = float(np.mean(step_seconds)) if step_seconds else 0.0
        summary = RunSummary(
            control_steps=cfg.n_control_steps,
            grid_records=0 if envelopes_only else cfg.n_control_steps * n_substeps,
            max_tracking_error_kw=float(max(tracking_errors)) if tracking_errors else 0.0,
            v_min_pu=float(v_min) if v_min != np.inf else float("nan"),
            v_max_pu=float(v_max) if v_max != -np.inf else float("nan"),
            t_in_min_c=float(t_min) if t_min != np.inf else float("nan"),
            t_in_max_c=float(t_max) if t_max != -np.inf else float("nan"),
            failed_guarantee_events=failed_events,
            comfort_fallbacks=comfort_fallbacks,
            envelope_relaxations=envelope_relaxations,
            mean_step_seconds=mean_step,
            total_seconds=total,
        )
        writer.write_summary(summary.deterministic_dict())
        writer.write_manifest(_config_echo(cfg), cfg.seed, status, mean_step_seconds=mean_step)
        writer.close()
    return summary


def _config_echo(cfg: StudyConfig) -> str:
    lines = []
    for key, value in sorted(vars(cfg).items()):
        lines.append(f"{key} = {value}\n")
    return "".join(lines)
