"""Exogenous time series, household synthesis, static-limit rules and result files.

Everything stochastic in this module is a pure function of (config, seed):
household parameter draws, profile noise and the reference-signal shape all
derive from one root seed through fixed-order streams, so runs repeat
byte-for-byte.  File formats are delimited text with frozen column orders;
floats are written with ``repr`` for exact round-trips.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .controller import AdmmConfig
from .envelopes import CustomerClass, EnvelopePolytope, HouseholdSpec, pf_tangent
from .errors import ConfigError, ProfileError
from .feeder import FeederModel
from .thermal import ThermalParams, step_temperature, thermostat_power

SIGNAL_KINDS = ("pv", "ul", "price", "t_out", "p_ref")


@dataclass
class TimeSeriesProfile:
    """Uniformly sampled exogenous signal."""

    kind: str
    start_s: int
    step_s: int
    values: np.ndarray

    def __post_init__(self):
        if self.kind not in SIGNAL_KINDS:
            raise ProfileError(f"unknown signal kind '{self.kind}'")
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 1 or self.values.size == 0:
            raise ProfileError(f"{self.kind}: values must be a non-empty vector")
        if not np.isfinite(self.values).all():
            raise ProfileError(f"{self.kind}: values must be finite")
        if self.step_s <= 0:
            raise ProfileError(f"{self.kind}: step must be positive")
        if self.kind in ("pv", "ul") and (self.values < 0.0).any():
            raise ProfileError(f"{self.kind}: values must be non-negative")

    @property
    def end_s(self) -> int:
        return self.start_s + self.step_s * len(self.values)

    def covers(self, t_lo: int, t_hi: int) -> bool:
        return self.start_s <= t_lo and t_hi <= self.end_s

    def value_at(self, t_s: int) -> float:
        """Sample-and-hold lookup."""
        if not self.start_s <= t_s < self.end_s:
            raise ProfileError(
                f"{self.kind}: t={t_s}s outside coverage [{self.start_s}, {self.end_s})")
        return float(self.values[(t_s - self.start_s) // self.step_s])


@dataclass
class ProfileSet:
    pv: dict[str, TimeSeriesProfile]
    ul: dict[str, TimeSeriesProfile]
    price: TimeSeriesProfile
    t_out: TimeSeriesProfile
    p_ref: TimeSeriesProfile | None = None


@dataclass
class HouseholdSynthesis:
    """Ranges for the seeded household-parameter generator."""

    n_doe: int = 30
    n_nondoe: int = 16
    n_passive: int = 56
    pv_ratings_kw: tuple = (3.0, 3.6, 4.0, 5.0, 6.0, 8.0)
    ac_rating_range_kw: tuple = (2.5, 3.5)
    r_range: tuple = (1.5, 2.5)
    c_range: tuple = (1.5, 2.5)
    cop: float = 2.5
    pf_ac: float = 0.95
    pf_pv: float = 0.8
    pf_ul: float = 0.95
    comfort_c: tuple = (22.0, 24.0)
    import_limit_kw: float = 10.0
    export_limit_kw: float = 5.0
    t_initial_c: float = 23.0


@dataclass
class SyntheticProfileSpec:
    """Shape parameters for the seeded signal generators."""

    sunrise_s: int = 6 * 3600
    sunset_s: int = 18 * 3600 + 1800
    pv_efficiency: float = 0.9
    pv_noise: float = 0.05
    ul_base_range_kw: tuple = (0.25, 0.9)
    ul_noise: float = 0.25
    price_base: float = 0.08          # currency/kWh
    price_swing: float = 0.02
    price_noise: float = 0.01
    t_out_mean_c: float = 26.0
    t_out_amplitude_c: float = 6.0
    t_out_peak_s: int = 14 * 3600 + 1800


@dataclass
class StudyConfig:
    feeder_path: str
    seed: int = 7
    v_lo: float = 0.94
    v_hi: float = 1.10
    control_step_s: int = 300
    grid_step_s: int = 30
    window_start_s: int = 10 * 3600
    window_end_s: int = 12 * 3600
    n_scenarios: int = 500
    admm: AdmmConfig = field(default_factory=AdmmConfig)
    households: HouseholdSynthesis = field(default_factory=HouseholdSynthesis)
    profiles: SyntheticProfileSpec = field(default_factory=SyntheticProfileSpec)
    profile_dir: str | None = None     # load signals from files instead of synthesis
    regulation_fraction: float = 0.2
    reference_shape: str = "square"    # square | ramp | smooth
    reference_period_s: int = 1800
    forecast_noise: float = 0.0        # envelope-stage profile perturbation hook
    pf_tol: float = 1e-8
    pf_maxiter: int = 100

    def __post_init__(self):
        if self.control_step_s % self.grid_step_s != 0:
            raise ConfigError("control step must be an integer multiple of the grid step")
        if (self.window_end_s - self.window_start_s) % self.control_step_s != 0:
            raise ConfigError("DR window must be a whole number of control steps")
        if self.window_end_s <= self.window_start_s:
            raise ConfigError("DR window must have positive length")

    @property
    def dt_control_h(self) -> float:
        return self.control_step_s / 3600.0

    @property
    def n_control_steps(self) -> int:
        return (self.window_end_s - self.window_start_s) // self.control_step_s

    @property
    def substeps_per_control(self) -> int:
        return self.control_step_s // self.grid_step_s

    def control_times(self):
        return [self.window_start_s + k * self.control_step_s
                for k in range(self.n_control_steps)]


def _parse_hms(text: str) -> int:
    parts = text.strip().split(":")
    if len(parts) not in (2, 3) or not all(p.isdigit() for p in parts):
        raise ConfigError(f"expected HH:MM or HH:MM:SS time, got '{text}'")
    parts = [int(p) for p in parts] + [0] * (3 - len(parts))
    return parts[0] * 3600 + parts[1] * 60 + parts[2]


def _floats(text):
    return tuple(float(x) for x in text.split())


def load_study_config(path) -> StudyConfig:
    """Parse the study file; sections [study], [admm], [households], [profiles]."""
    from .feeder import _kv, _read_sections  # same key=value framing as feeder files

    path = Path(path)
    sections = _read_sections(path)
    if "study" not in sections:
        raise ConfigError(f"{path}: missing [study] section")
    sv = _kv(sections["study"], path, "study")
    if "feeder" not in sv:
        raise ConfigError(f"{path}: [study] must set 'feeder'")

    feeder_path = str((path.parent / sv["feeder"]).resolve())
    kwargs: dict = {"feeder_path": feeder_path}
    simple = {
        "seed": int, "v_lo": float, "v_hi": float,
        "control_step_s": int, "grid_step_s": int, "scenarios": int,
        "regulation_fraction": float, "reference_shape": str,
        "reference_period_s": int, "forecast_noise": float,
        "pf_tol": float, "pf_maxiter": int,
    }
    rename = {"scenarios": "n_scenarios"}
    for key, cast in simple.items():
        if key in sv:
            kwargs[rename.get(key, key)] = cast(sv[key])
    if "window_start" in sv:
        kwargs["window_start_s"] = _parse_hms(sv["window_start"])
    if "window_end" in sv:
        kwargs["window_end_s"] = _parse_hms(sv["window_end"])
    if "profile_dir" in sv:
        kwargs["profile_dir"] = str((path.parent / sv["profile_dir"]).resolve())

    if "admm" in sections:
        av = _kv(sections["admm"], path, "admm")
        kwargs["admm"] = AdmmConfig(
            rho=float(av.get("rho", 1.0)),
            eps_prim=float(av.get("eps_prim", 1e-3)),
            eps_dual=float(av.get("eps_dual", 1e-3)),
            maxiter=int(av.get("maxiter", 15)),
        )

    if "households" in sections:
        hv = _kv(sections["households"], path, "households")
        hs = HouseholdSynthesis()
        hs = replace(
            hs,
            n_doe=int(hv.get("doe", hs.n_doe)),
            n_nondoe=int(hv.get("nondoe", hs.n_nondoe)),
            n_passive=int(hv.get("passive", hs.n_passive)),
            pv_ratings_kw=_floats(hv["pv_ratings"]) if "pv_ratings" in hv else hs.pv_ratings_kw,
            ac_rating_range_kw=_floats(hv["ac_rating_range"]) if "ac_rating_range" in hv else hs.ac_rating_range_kw,
            r_range=_floats(hv["r_range"]) if "r_range" in hv else hs.r_range,
            c_range=_floats(hv["c_range"]) if "c_range" in hv else hs.c_range,
            cop=float(hv.get("cop", hs.cop)),
            pf_ac=float(hv.get("pf_ac", hs.pf_ac)),
            pf_pv=float(hv.get("pf_pv", hs.pf_pv)),
            pf_ul=float(hv.get("pf_ul", hs.pf_ul)),
            comfort_c=_floats(hv["comfort"]) if "comfort" in hv else hs.comfort_c,
            import_limit_kw=float(hv.get("import_limit", hs.import_limit_kw)),
            export_limit_kw=float(hv.get("export_limit", hs.export_limit_kw)),
            t_initial_c=float(hv.get("t_initial", hs.t_initial_c)),
        )
        kwargs["households"] = hs

    if "profiles" in sections:
        pv = _kv(sections["profiles"], path, "profiles")
        ps = SyntheticProfileSpec()
        ps = replace(
            ps,
            sunrise_s=_parse_hms(pv["sunrise"]) if "sunrise" in pv else ps.sunrise_s,
            sunset_s=_parse_hms(pv["sunset"]) if "sunset" in pv else ps.sunset_s,
            pv_efficiency=float(pv.get("pv_efficiency", ps.pv_efficiency)),
            pv_noise=float(pv.get("pv_noise", ps.pv_noise)),
            ul_base_range_kw=_floats(pv["ul_base_range"]) if "ul_base_range" in pv else ps.ul_base_range_kw,
            ul_noise=float(pv.get("ul_noise", ps.ul_noise)),
            price_base=float(pv.get("price_base", ps.price_base)),
            price_swing=float(pv.get("price_swing", ps.price_swing)),
            price_noise=float(pv.get("price_noise", ps.price_noise)),
            t_out_mean_c=float(pv.get("t_out_mean", ps.t_out_mean_c)),
            t_out_amplitude_c=float(pv.get("t_out_amplitude", ps.t_out_amplitude_c)),
            t_out_peak_s=_parse_hms(pv["t_out_peak"]) if "t_out_peak" in pv else ps.t_out_peak_s,
        )
        kwargs["profiles"] = ps

    return StudyConfig(**kwargs)


# ---------------------------------------------------------------------------
# Household synthesis
# ---------------------------------------------------------------------------

def synthesize_households(feeder: FeederModel, synth: HouseholdSynthesis,
                          dt_control_h: float, seed) -> dict[str, HouseholdSpec]:
    """Assign classes and draw parameters for every mapped household.

    Roster order follows the feeder's household map; a seeded shuffle picks
    which connections become DOE, non-DOE and passive customers.
    """
    ids = list(feeder.household_map)
    total = synth.n_doe + synth.n_nondoe + synth.n_passive
    if total != len(ids):
        raise ConfigError(
            f"class counts sum to {total} but the feeder maps {len(ids)} households")

    rng = np.random.default_rng([int(seed), 101])
    shuffled = list(ids)
    rng.shuffle(shuffled)
    klass = {}
    for i, hid in enumerate(shuffled):
        if i < synth.n_doe:
            klass[hid] = CustomerClass.DOE
        elif i < synth.n_doe + synth.n_nondoe:
            klass[hid] = CustomerClass.NON_DOE
        else:
            klass[hid] = CustomerClass.PASSIVE

    specs = {}
    for hid in ids:
        cls = klass[hid]
        pv_rating = float(rng.choice(synth.pv_ratings_kw)) if cls is not CustomerClass.PASSIVE else 0.0
        ac_rating = float(rng.uniform(*synth.ac_rating_range_kw))
        thermal = None
        if cls is CustomerClass.DOE:
            thermal = ThermalParams(
                r_c_per_kw=float(rng.uniform(*synth.r_range)),
                c_kwh_per_c=float(rng.uniform(*synth.c_range)),
                cop=synth.cop,
                dt_h=dt_control_h,
            )
        specs[hid] = HouseholdSpec(
            id=hid,
            customer_class=cls,
            pv_kw_rating=pv_rating,
            pf_pv=synth.pf_pv,
            pf_ul=synth.pf_ul,
            ac_kw_rating=ac_rating if cls is CustomerClass.DOE else 0.0,
            pf_ac=synth.pf_ac,
            thermal=thermal,
            comfort_lo_c=synth.comfort_c[0],
            comfort_hi_c=synth.comfort_c[1],
            import_limit_kw=synth.import_limit_kw,
            export_limit_kw=synth.export_limit_kw,
        )
    return specs


# ---------------------------------------------------------------------------
# Profile synthesis and file ingestion
# ---------------------------------------------------------------------------

def _smooth_noise(rng, n: int, half_window: int) -> np.ndarray:
    """Zero-mean unit-ish noise smoothed with a moving average."""
    raw = rng.standard_normal(n + 2 * half_window)
    kernel = np.ones(2 * half_window + 1) / (2 * half_window + 1)
    return np.convolve(raw, kernel, mode="valid")


def synthesize_profiles(cfg: StudyConfig, specs: dict[str, HouseholdSpec]) -> ProfileSet:
    """Seeded synthetic PV, uncontrollable load, price and outdoor temperature.

    Coverage spans the DR window plus one control step on each side; pv and
    ul run at grid cadence, price at control cadence (market clearing),
    t_out at grid cadence.
    """
    ps = cfg.profiles
    start = cfg.window_start_s - cfg.control_step_s
    end = cfg.window_end_s + cfg.control_step_s
    n_grid = (end - start) // cfg.grid_step_s
    t_grid = start + cfg.grid_step_s * np.arange(n_grid)

    bell = np.sin(math.pi * np.clip(
        (t_grid - ps.sunrise_s) / (ps.sunset_s - ps.sunrise_s), 0.0, 1.0)) ** 1.3

    pv: dict[str, TimeSeriesProfile] = {}
    ul: dict[str, TimeSeriesProfile] = {}
    for hid in specs:  # roster order keeps the draw stream reproducible
        spec = specs[hid]
        rng = np.random.default_rng([cfg.seed, 201, _stable_id(hid)])
        if spec.pv_kw_rating > 0.0:
            noise = _smooth_noise(rng, n_grid, 10)
            vals = spec.pv_kw_rating * ps.pv_efficiency * bell * (1.0 + ps.pv_noise * noise)
        else:
            rng.standard_normal(1)  # keep the stream aligned across classes
            vals = np.zeros(n_grid)
        pv[hid] = TimeSeriesProfile("pv", start, cfg.grid_step_s, np.clip(vals, 0.0, None))

        base = rng.uniform(*ps.ul_base_range_kw)
        diurnal = 1.0 + 0.25 * np.sin(2.0 * math.pi * (t_grid - 7 * 3600) / 86400.0)
        vals = base * diurnal + ps.ul_noise * _smooth_noise(rng, n_grid, 6)
        ul[hid] = TimeSeriesProfile("ul", start, cfg.grid_step_s, np.clip(vals, 0.02, None))

    rng = np.random.default_rng([cfg.seed, 202])
    n_ctrl = (end - start) // cfg.control_step_s
    t_ctrl = start + cfg.control_step_s * np.arange(n_ctrl)
    swing = np.sin(2.0 * math.pi * (t_ctrl - 6 * 3600) / 86400.0)
    price_vals = ps.price_base + ps.price_swing * swing + ps.price_noise * _smooth_noise(rng, n_ctrl, 2)
    price = TimeSeriesProfile("price", start, cfg.control_step_s, np.clip(price_vals, 0.0, None))

    t_vals = ps.t_out_mean_c + ps.t_out_amplitude_c * np.cos(
        2.0 * math.pi * (t_grid - ps.t_out_peak_s) / 86400.0)
    t_out = TimeSeriesProfile("t_out", start, cfg.grid_step_s, t_vals)

    return ProfileSet(pv=pv, ul=ul, price=price, t_out=t_out)


def _stable_id(hid: str) -> int:
    """Deterministic small integer from a household id (not Python hash)."""
    acc = 0
    for ch in hid:
        acc = (acc * 131 + ord(ch)) % 1_000_003
    return acc


def write_profiles(profiles: ProfileSet, out_dir) -> None:
    """One file per signal kind; per-household signals in id-sorted columns."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for kind in ("pv", "ul"):
        series: dict[str, TimeSeriesProfile] = getattr(profiles, kind)
        ids = sorted(series)
        first = series[ids[0]]
        with open(out / f"{kind}.dat", "w", encoding="utf-8") as fh:
            fh.write(f"# kind={kind} units=kW step_s={first.step_s} start_s={first.start_s}\n")
            fh.write("time_s " + " ".join(ids) + "\n")
            for i in range(len(first.values)):
                t = first.start_s + i * first.step_s
                fh.write(f"{t} " + " ".join(repr(float(series[h].values[i])) for h in ids) + "\n")
    for kind, units in (("price", "currency_per_kWh"), ("t_out", "degC"), ("p_ref", "kW")):
        prof = getattr(profiles, kind)
        if prof is None:
            continue
        with open(out / f"{kind}.dat", "w", encoding="utf-8") as fh:
            fh.write(f"# kind={kind} units={units} step_s={prof.step_s} start_s={prof.start_s}\n")
            fh.write("time_s value\n")
            for i, v in enumerate(prof.values):
                fh.write(f"{prof.start_s + i * prof.step_s} {float(v)!r}\n")


def _read_profile_file(path, kind):
    with open(path, "r", encoding="utf-8") as fh:
        lines = [ln.rstrip("\n") for ln in fh if ln.strip()]
    if len(lines) < 3 or not lines[0].startswith("#"):
        raise ProfileError(f"{path}: malformed profile file")
    meta = dict(item.split("=") for item in lines[0][1:].split() if "=" in item)
    step = int(meta["step_s"])
    start = int(meta["start_s"])
    header = lines[1].split()
    columns = header[1:]
    rows = []
    expected_t = start
    for ln in lines[2:]:
        fields = ln.split()
        if len(fields) != len(header):
            raise ProfileError(f"{path}: row width {len(fields)} != header width {len(header)}")
        t = int(fields[0])
        if t != expected_t:
            raise ProfileError(f"{path}: gap or misordered row at t={t}s (expected {expected_t}s)")
        expected_t += step
        rows.append([float(x) for x in fields[1:]])
    data = np.array(rows)
    if columns == ["value"]:
        return TimeSeriesProfile(kind, start, step, data[:, 0])
    return {col: TimeSeriesProfile(kind, start, step, data[:, j])
            for j, col in enumerate(columns)}


def load_profiles(cfg: StudyConfig, specs: dict[str, HouseholdSpec]) -> ProfileSet:
    """Ingest profile files when configured, otherwise synthesize from seed."""
    if cfg.profile_dir is None:
        profiles = synthesize_profiles(cfg, specs)
    else:
        pdir = Path(cfg.profile_dir)
        pv = _read_profile_file(pdir / "pv.dat", "pv")
        ul = _read_profile_file(pdir / "ul.dat", "ul")
        price = _read_profile_file(pdir / "price.dat", "price")
        t_out = _read_profile_file(pdir / "t_out.dat", "t_out")
        missing = sorted(set(specs) - set(pv)) or sorted(set(specs) - set(ul))
        if missing:
            raise ProfileError(f"profiles missing households: {missing[:5]}")
        profiles = ProfileSet(pv=pv, ul=ul, price=price, t_out=t_out)

    lo = cfg.window_start_s
    hi = cfg.window_end_s + cfg.control_step_s
    for name, prof in (("price", profiles.price), ("t_out", profiles.t_out)):
        if not prof.covers(lo, hi):
            raise ProfileError(
                f"{name} profile covers [{prof.start_s}, {prof.end_s})s, "
                f"study needs [{lo}, {hi})s")
    for hid in specs:
        for name, table in (("pv", profiles.pv), ("ul", profiles.ul)):
            if hid not in table:
                raise ProfileError(f"{name} profile missing household '{hid}'")
            if not table[hid].covers(lo, hi):
                raise ProfileError(f"{name}[{hid}] does not cover the DR window plus one step")
    return profiles


# ---------------------------------------------------------------------------
# Reference signal
# ---------------------------------------------------------------------------

def simulate_baseline(specs: dict[str, HouseholdSpec], profiles: ProfileSet,
                      cfg: StudyConfig) -> np.ndarray:
    """Aggregate DOE air-conditioner power under plain thermostat control.

    Pre-pass at control cadence holding each DOE household at the comfort
    set-point (no DR); this is the consumption the market signal modulates.
    """
    setpoint = cfg.households.t_initial_c
    temps = {hid: setpoint for hid, s in specs.items() if s.controllable}
    baseline = np.zeros(cfg.n_control_steps)
    for k, t_s in enumerate(cfg.control_times()):
        t_out = profiles.t_out.value_at(t_s)
        total = 0.0
        for hid in temps:
            spec = specs[hid]
            p = thermostat_power(temps[hid], spec.thermal, t_out, setpoint, spec.ac_kw_rating)
            temps[hid] = step_temperature(temps[hid], spec.thermal, t_out, p)
            total += p
        baseline[k] = total
    return baseline


def build_reference(baseline: np.ndarray, fraction: float, shape: str, seed,
                    start_s: int, step_s: int, period_s: int = 1800) -> TimeSeriesProfile:
    """Modulate the baseline by the regulation capacity: ref = base * (1 + f*u).

    u(t) in [-1, 1] comes from the chosen shape: alternating square wave,
    a single full-window ramp, or seeded smooth noise.
    """
    if not 0.0 <= fraction <= 1.0:
        raise ConfigError(f"regulation fraction must be in [0, 1], got {fraction}")
    n = len(baseline)
    k = np.arange(n)
    if shape == "square":
        u = np.where(((k * step_s) // period_s) % 2 == 0, -1.0, 1.0)
    elif shape == "ramp":
        u = -1.0 + 2.0 * k / max(n - 1, 1)
    elif shape == "smooth":
        rng = np.random.default_rng([int(seed), 301])
        u = np.clip(1.2 * _smooth_noise(rng, n, 3), -1.0, 1.0)
    else:
        raise ConfigError(f"unknown reference shape '{shape}'")
    values = baseline * (1.0 + fraction * u)
    return TimeSeriesProfile("p_ref", start_s, step_s, values)


# ---------------------------------------------------------------------------
# Static limits for non-DOE and passive customers
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class StaticInjection:
    p_inj_kw: float
    q_inj_kvar: float
    curtailed_kw: float = 0.0
    import_violation_kw: float = 0.0


def apply_static_limits(spec: HouseholdSpec, pv_kw: float, ul_kw: float) -> StaticInjection:
    """DNSP rule for customers without envelopes.

    Exports above the static limit are removed by curtailing PV (reactive
    output follows the curtailed active power at fixed power factor).
    Imports beyond the limit are recorded, not shed.
    """
    if spec.controllable:
        raise ValueError(f"{spec.id}: static limits apply to non-DOE and passive customers only")
    p_inj = pv_kw - ul_kw
    q_inj = pv_kw * pf_tangent(spec.pf_pv) - ul_kw * pf_tangent(spec.pf_ul)
    curtailed = 0.0
    violation = 0.0
    if p_inj > spec.export_limit_kw:
        curtailed = p_inj - spec.export_limit_kw
        pv_kept = pv_kw - curtailed
        p_inj = spec.export_limit_kw
        q_inj = pv_kept * pf_tangent(spec.pf_pv) - ul_kw * pf_tangent(spec.pf_ul)
    if p_inj < -spec.import_limit_kw:
        violation = -spec.import_limit_kw - p_inj
    return StaticInjection(p_inj, q_inj, curtailed, violation)


# ---------------------------------------------------------------------------
# Result persistence
# ---------------------------------------------------------------------------

def _fmt(x) -> str:
    return repr(float(x))


def _pairs(arr) -> str:
    return ";".join(f"{_fmt(p)} {_fmt(q)}" for p, q in np.atleast_2d(arr))


class ResultWriter:
    """Owns the result-directory layout; one writer per run.

    Layout: envelopes/step_***.csv, dispatch/dispatch.csv,
    dispatch/convergence.csv, gridlog/voltages.csv, gridlog/violations.csv,
    static_limits.csv, summary.txt and manifest.txt.  Wall-clock timestamps
    appear only in the manifest so every other file is reproducible.
    """

    def __init__(self, out_dir):
        self.root = Path(out_dir)
        for sub in ("envelopes", "dispatch", "gridlog"):
            (self.root / sub).mkdir(parents=True, exist_ok=True)
        self._dispatch = open(self.root / "dispatch" / "dispatch.csv", "w", encoding="utf-8")
        self._dispatch.write("t_index,t_s,household,p_ac_kw,p_inj_kw,q_inj_kvar,t_in_next_c,flag\n")
        self._conv = open(self.root / "dispatch" / "convergence.csv", "w", encoding="utf-8")
        self._conv.write("t_index,t_s,iterations,r_norm,s_norm,stop_reason,p_ref_kw,p_total_kw,tracking_error_kw\n")
        self._volt = open(self.root / "gridlog" / "voltages.csv", "w", encoding="utf-8")
        self._volt.write("t_s,bus,phase,v_mag_pu\n")
        self._viol = open(self.root / "gridlog" / "violations.csv", "w", encoding="utf-8")
        self._viol.write("t_s,bus,phase,v_mag_pu,bound,kind\n")
        self._static = open(self.root / "static_limits.csv", "w", encoding="utf-8")
        self._static.write("t_s,household,p_raw_kw,p_inj_kw,curtailed_kw,import_violation_kw\n")
        self._started = time.time()

    def write_envelopes(self, t_index: int, envelopes: dict[str, EnvelopePolytope]):
        path = self.root / "envelopes" / f"step_{t_index:03d}.csv"
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("household,t_index,sampled,feasible,degenerate,vertices,A,b\n")
            for hid in sorted(envelopes):
                e = envelopes[hid]
                fh.write(
                    f"{hid},{e.t_index},{e.sampled},{e.feasible},{int(e.degenerate)},"
                    f"{_pairs(e.vertices)},{_pairs(e.a)},"
                    f"{';'.join(_fmt(x) for x in e.b)}\n")

    def write_dispatch(self, t_index, t_s, household, p_ac, p_inj, q_inj, t_next, flag):
        self._dispatch.write(
            f"{t_index},{t_s},{household},{_fmt(p_ac)},{_fmt(p_inj)},{_fmt(q_inj)},"
            f"{_fmt(t_next)},{flag}\n")

    def write_convergence(self, t_index, t_s, result):
        self._conv.write(
            f"{t_index},{t_s},{result.iterations},{_fmt(result.r_norm)},{_fmt(result.s_norm)},"
            f"{result.stop_reason},{_fmt(result.p_ref_kw)},"
            f"{_fmt(result.p_ac.sum())},{_fmt(result.tracking_error_kw)}\n")

    def write_voltages(self, t_s, feeder: FeederModel, v_mag: np.ndarray):
        for bi, bus in enumerate(feeder.buses):
            for ph in range(3):
                self._volt.write(f"{t_s},{bus},{ph},{_fmt(v_mag[bi, ph])}\n")

    def write_violation(self, t_s, violation):
        self._viol.write(
            f"{t_s},{violation.bus},{violation.phase},{_fmt(violation.v_mag)},"
            f"{_fmt(violation.bound)},{violation.kind}\n")

    def write_static(self, t_s, household, p_raw, adj: StaticInjection):
        if adj.curtailed_kw > 0.0 or adj.import_violation_kw > 0.0:
            self._static.write(
                f"{t_s},{household},{_fmt(p_raw)},{_fmt(adj.p_inj_kw)},"
                f"{_fmt(adj.curtailed_kw)},{_fmt(adj.import_violation_kw)}\n")

    def write_summary(self, summary: dict):
        with open(self.root / "summary.txt", "w", encoding="utf-8") as fh:
            for key in sorted(summary):
                fh.write(f"{key} = {summary[key]}\n")

    def write_manifest(self, config_text: str, seed: int, status: str,
                       mean_step_seconds: float | None = None):
        with open(self.root / "manifest.txt", "w", encoding="utf-8") as fh:
            fh.write(f"status = {status}\n")
            fh.write(f"seed = {seed}\n")
            fh.write(f"started_unix = {self._started}\n")
            fh.write(f"finished_unix = {time.time()}\n")
            if mean_step_seconds is not None:
                fh.write(f"mean_step_seconds = {mean_step_seconds}\n")
                fh.write(f"total_seconds = {time.time() - self._started}\n")
            fh.write("--- config ---\n")
            fh.write(config_text)

    def close(self):
        for fh in (self._dispatch, self._conv, self._volt, self._viol, self._static):
            fh.close()


def read_envelopes(path) -> dict[str, EnvelopePolytope]:
    """Read one per-step envelope file written by ResultWriter."""
    out = {}
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline()
        if not header.startswith("household,"):
            raise ProfileError(f"{path}: not an envelope file")
        for ln in fh:
            hid, t_index, sampled, feasible, degenerate, verts, a_txt, b_txt = ln.rstrip("\n").split(",")
            vertices = np.array([[float(x) for x in pair.split()] for pair in verts.split(";")])
            a = np.array([[float(x) for x in pair.split()] for pair in a_txt.split(";")])
            b = np.array([float(x) for x in b_txt.split(";")])
            out[hid] = EnvelopePolytope(
                household_id=hid, t_index=int(t_index), vertices=vertices,
                a=a, b=b, sampled=int(sampled), feasible=int(feasible),
                degenerate=bool(int(degenerate)))
    return out
