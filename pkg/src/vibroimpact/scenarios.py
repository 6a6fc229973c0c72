"""Built-in scenarios: default configurations and the code that runs them.

A scenario run returns a :class:`ScenarioResult` holding named tables (written
as CSV), optional audio and a dictionary of summary values for the manifest.
"""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import analysis
from .contact import ContactLaw
from .lumped import (
    LumpedParams,
    LumpedState,
    Scheme,
    contact_interval,
    simulate,
)
from .stiffstring import (
    BarrierProfile,
    StringParams,
    StringSolver,
    build_operators,
    initial_condition,
    simulate_string,
)
from .tanpura import build_bridge, simulate_tanpura, tanpura_params


class ConfigError(ValueError):
    """Invalid or unknown configuration entry."""


@dataclass
class Table:
    columns: list
    data: np.ndarray  # shape (rows, len(columns))


@dataclass
class Audio:
    signal: np.ndarray
    sample_rate: int


@dataclass
class ScenarioResult:
    tables: dict = field(default_factory=dict)
    audio: dict = field(default_factory=dict)
    summary: dict = field(default_factory=dict)
    derived: dict = field(default_factory=dict)
    newton: np.ndarray | None = None
    energy_error_max: float | None = None


@dataclass(frozen=True)
class Scenario:
    name: str
    description: str
    params: dict
    outputs: dict
    runner: Callable


def newton_stats(iterations):
    it = np.asarray(iterations, dtype=int)
    if it.size == 0:
        return {"steps": 0, "max": 0, "mean": 0.0, "histogram": {}}
    counts = np.bincount(it)
    return {
        "steps": int(it.size),
        "max": int(it.max()),
        "mean": float(it.mean()),
        "histogram": {str(i): int(c) for i, c in enumerate(counts) if c},
    }


def _lumped_derived(params: LumpedParams):
    return {"xi": params.xi, "beta_c": params.beta_c, "beta2": None, "beta4": None, "zeta": None}


def _string_derived(params: StringParams, law: ContactLaw | None):
    return {
        "N": params.N,
        "dx": params.dx,
        "beta2": params.beta2,
        "beta4": params.beta4,
        "zeta": None if law is None else params.zeta(law),
        "theta": params.theta,
        "b": params.b,
    }


def _energy_table(t, run_or_traj, H=None):
    H = run_or_traj.H if H is None else H
    e = analysis.energy_error_series(H)
    return e, Table(["t", "H", "e"], np.column_stack([t, H, e]))


# -- lumped scenarios ------------------------------------------------------


def _run_fig2(cfg):
    p = cfg["params"]
    params = LumpedParams(m=p["m"], k=p["k"], law=ContactLaw(p["k_c"], p["alpha"]),
                          y_c=p["y_c"], g0=p["g0"], dt=1.0 / p["fs"])
    init = LumpedState.from_momentum(p["y0"], p["p0"], params)
    n = int(round(p["duration"] * p["fs"]))
    res = ScenarioResult(derived=_lumped_derived(params))
    cols_e, cols_y, maxima, iters = [], [], {}, []
    t = None
    for scheme in Scheme:
        tr = simulate(scheme, params, init, n)
        t = tr.t
        e = analysis.energy_error_series(tr.H)
        cols_e.append(e)
        cols_y.append(tr.y)
        maxima[scheme.value] = float(np.max(np.abs(e)))
        if scheme is Scheme.EC:
            iters = tr.iterations
            interval = contact_interval(tr)
        else:
            maxima[scheme.value + "_jump_step"] = int(np.argmax(np.abs(np.diff(e))))
    res.tables["energy_error"] = Table(["t", "EC", "TR", "MR", "PSE"], np.column_stack([t, *cols_e]))
    res.tables["displacement"] = Table(["t", "EC", "TR", "MR", "PSE"], np.column_stack([t, *cols_y]))
    res.summary = {"max_abs_e": maxima, "contact_interval": interval}
    res.newton = iters
    res.energy_error_max = maxima["EC"]
    return res


def _run_fig3(cfg):
    p = cfg["params"]
    alphas = np.linspace(p["alpha_min"], p["alpha_max"], p["alpha_count"])
    betas = np.logspace(math.log10(p["beta_min"]), math.log10(p["beta_max"]), p["beta_count"])
    _, _, grid, pts = analysis.preservation_sweep(alphas, betas, workers=p["workers"])
    rows = np.array([(q.alpha, q.beta_c, q.P, q.interval[0], q.interval[1]) for q in pts])
    res = ScenarioResult()
    res.tables["preservation"] = Table(["alpha", "beta_c", "P", "n1", "n2"], rows)
    res.summary = {"max_P": float(grid.max()), "points": len(pts)}
    res.newton = np.array([q.max_iterations for q in pts])
    return res


def _apexes(y):
    """Vertex heights of local maxima, from the parabola through three samples."""
    k = np.flatnonzero((y[1:-1] > y[:-2]) & (y[1:-1] >= y[2:])) + 1
    a, b, c = y[k - 1], y[k], y[k + 1]
    d = a - 2 * b + c
    return k, b - (a - c) ** 2 / (8 * d)


def _lumped_single(cfg, kind):
    p = cfg["params"]
    params = LumpedParams(m=p["m"], k=p["k"], law=ContactLaw(p["k_c"], p["alpha"]),
                          y_c=p["y_c"], g0=p["g0"], dt=1.0 / p["fs"])
    init = LumpedState.from_momentum(p["y0"], p["p0"], params)
    tr = simulate(Scheme.EC, params, init, int(round(p["duration"] * p["fs"])))
    e = analysis.energy_error_series(tr.H)
    res = ScenarioResult(derived=_lumped_derived(params))
    res.tables["trajectory"] = Table(
        ["t", "y", "p", "kinetic", "spring", "contact", "gravity", "H", "e"],
        np.column_stack([tr.t, tr.y, tr.p, tr.kinetic, tr.spring, tr.contact, tr.gravity, tr.H, e]))
    res.newton = tr.iterations
    res.energy_error_max = float(np.max(np.abs(e)))
    slope = float(np.polyfit(tr.t, e, 1)[0])
    res.summary = {"energy_error_slope_per_s": slope}
    if kind == "ball":
        k, apex = _apexes(tr.y)
        res.summary["apex_heights"] = apex.tolist()
        res.summary["max_apex_relative_error"] = (
            float(np.max(np.abs(apex - p["y0"]) / abs(p["y0"]))) if apex.size else None)
    else:
        if cfg["outputs"]["spectra"]:
            spec = analysis.magnitude_spectrum(tr.p, p["fs"])
            res.tables["momentum_spectrum"] = Table(["f", "dB"],
                                                    np.column_stack([spec.frequencies, spec.magnitudes]))
    return res


def _run_fig5(cfg):
    p = cfg["params"]
    template = analysis.AliasingTemplate(m=p["m"], k_c=p["k_c"], alpha=p["alpha"], y_c=p["y_c"],
                                         y0=p["y0"], p0=p["p0"], duration=p["duration"])
    ks = analysis.fig5_schedule(p["k_count"], p["k_base"], p["k_ratio"])[::p["k_stride"]]
    rates = [p["fs"], p["fs_oversampled"]]
    sweep = analysis.aliasing_sweep(ks, rates, template, workers=p["workers"])
    res = ScenarioResult()
    for fs in rates:
        runs = sweep[fs]
        tag = f"{int(round(fs))}"
        res.tables[f"aliasing_{tag}"] = Table(
            ["k", "f1", "aliased_energy", "total_energy"],
            np.array([(r.k, r.f1, r.aliased_energy, r.total_energy) for r in runs]))
        if cfg["outputs"]["spectra"]:
            fmax = p["spectrum_max_hz"]
            sel = runs[0].spectrum.frequencies <= fmax
            mat = np.array([r.spectrum.magnitudes[sel] for r in runs])
            res.tables[f"spectra_{tag}"] = Table(
                ["k"] + [f"{f:.6g}" for f in runs[0].spectrum.frequencies[sel]],
                np.column_stack([[r.k for r in runs], mat]))
    res.summary = {
        "aliased_fraction": {str(int(fs)): analysis.aliased_band_energy(sweep[fs]) for fs in rates},
        "reduction_db": analysis.aliasing_reduction_db(sweep[rates[0]], sweep[rates[1]]),
    }
    return res


# -- distributed scenarios -------------------------------------------------


def _string_params(p, fs=None):
    fs = p["fs"] if fs is None else fs
    return StringParams.from_dx(p["L"], p["dx"], rhoA=p["rhoA"], tau=p["tau"], EI=p["EI"],
                                dt=1.0 / fs, gamma=p["gamma"], eta=p["eta"],
                                bc_left=p["bc_left"], bc_right=p["bc_right"])


def _string_tables(res, run, params, extra=None):
    e = analysis.energy_error_series(run.H)
    cols = ["t", "kinetic", "tension", "bending", "contact", "H", "e"]
    data = [run.t, run.kinetic, run.tension, run.bending, run.contact, run.H, e]
    for k, v in (extra or {}).items():
        cols.append(k)
        data.append(v)
    res.tables["energy"] = Table(cols, np.column_stack(data))
    dH = np.diff(run.H) / run.H[0]
    res.summary["max_abs_step_energy_change"] = float(np.max(np.abs(dH))) if dH.size else 0.0
    res.summary["max_step_energy_increase"] = float(np.max(dH)) if dH.size else 0.0
    res.energy_error_max = float(np.max(np.abs(e)))
    return e


def _run_fig7(cfg):
    p = cfg["params"]
    params = _string_params(p)
    law = ContactLaw(p["k_c"], p["alpha"])
    ops = build_operators(params)
    n = int(round(p["duration"] * p["fs"]))
    mid = (params.N + 1) // 2 - 1
    res = ScenarioResult(derived=_string_derived(params, law))
    sig, iters, energies = {}, [], {}
    for name, barrier in (("free", None), ("impeded", BarrierProfile.flat(p["y_c"], params, law))):
        solver = StringSolver(params, ops, barrier)
        run = simulate_string(solver, initial_condition("sine_mode", p["amplitude"], params), n,
                              {"mid": lambda st: st.y[mid]})
        sig[name] = run.signals["mid"]
        iters.append(run.iterations)
        energies[name] = run
    run = energies["impeded"]
    _string_tables(res, run, params)
    res.tables["midpoint"] = Table(["t", "free", "impeded"],
                                   np.column_stack([run.t, sig["free"], sig["impeded"]]))
    f = {}
    for name in sig:
        try:
            f[name] = analysis.fundamental_frequency(sig[name], p["fs"])
        except analysis.NoPeriodicity as exc:
            f[name] = None
            res.summary[f"{name}_f0_error"] = str(exc)
    res.summary.update({
        "f0_free": f["free"],
        "f0_impeded": f["impeded"],
        "ratio_free_over_impeded": (f["free"] / f["impeded"]
                                    if f["free"] and f["impeded"] else None),
    })
    res.newton = np.concatenate(iters)
    return res


def _fig8_obstacle(p):
    return lambda x: p["obstacle_height"] - p["obstacle_curvature"] * (x - p["obstacle_center"]) ** 2


def _run_fig8(cfg):
    p = cfg["params"]
    params = _string_params(p)
    law = ContactLaw(p["k_c"], p["alpha"])
    barrier = BarrierProfile.from_function(_fig8_obstacle(p), params, law,
                                           extent=(0.0, p["obstacle_extent"]))
    solver = StringSolver(params, None, barrier)
    n = int(round(p["duration"] * p["fs"]))
    every = p["snapshot_every"]
    run = simulate_string(solver, initial_condition("sine_mode", p["amplitude"], params), n,
                          {"collision_force": lambda st: barrier.force(st.y, params)},
                          snapshot_every=every)
    res = ScenarioResult(derived=_string_derived(params, law))
    _string_tables(res, run, params, {"collision_force": run.signals["collision_force"]})
    if run.snapshots is not None and cfg["outputs"]["snapshots"]:
        res.tables["snapshots"] = Table(["t"] + [f"{x:.6g}" for x in params.x],
                                        np.column_stack([np.arange(len(run.snapshots)) * every * params.dt,
                                                         run.snapshots]))
    res.newton = run.iterations
    return res


def _cantilever_shape(L):
    return lambda x: (3 * L * x ** 2 - x ** 3) / (2 * L ** 3)


def _run_fig9(cfg):
    p = cfg["params"]
    params = _string_params(p)
    law = ContactLaw(p["k_c"], p["alpha"])
    barrier = BarrierProfile.flat(p["table_height"], params, law, extent=(0.0, p["table_extent"]))
    solver = StringSolver(params, None, barrier)
    n = int(round(p["duration"] * p["fs"]))
    mid = int(round(params.N / 2)) - 1
    init = initial_condition("custom", p["tip_amplitude"], params, shape=_cantilever_shape(params.L))
    run = simulate_string(solver, init, n, {"tip": lambda st: st.y[-1], "mid": lambda st: st.y[mid]})
    res = ScenarioResult(derived=_string_derived(params, law))
    _string_tables(res, run, params, {"y_tip": run.signals["tip"], "y_mid": run.signals["mid"]})
    onsets = _contact_onsets(run.contact, run.H[0])
    res.summary["contact_onsets_s"] = (onsets * params.dt).tolist()
    res.newton = run.iterations
    return res


def _contact_onsets(contact, H0, rel=1e-12):
    c = np.asarray(contact) > rel * H0
    return np.flatnonzero(c[1:] & ~c[:-1]) + 1


def _tanpura(cfg, shape):
    p = cfg["params"]
    params = tanpura_params(dt=1.0 / p["fs"], dx=p["dx"], gamma=p["gamma"], eta=p["eta"],
                            rhoA=p["rhoA"], tau=p["tau"], EI=p["EI"], L=p["L"])
    model = build_bridge(params, x_b=p["x_b"], dx_b=p["dx_b"], k_b=p["k_b"], enabled=p["bridge"])
    if shape == "mode1":
        init = initial_condition("sine_mode", p["amplitude"], params)
    else:
        init = initial_condition("triangle_pluck", p["amplitude"], params,
                                 p["pluck_position"] * params.L)
    n = int(round(p["duration"] * p["fs"]))
    run = simulate_tanpura(params, model, init, n, snapshot_every=p.get("snapshot_every", 0))
    res = ScenarioResult(derived=_string_derived(params, None))
    res.derived["beta_b"] = model.beta(params)
    res.derived["bridge_points"] = int(model.x.size)
    nut = run.signals["nut_force"]
    extra = {"nut_force": nut}
    if "compression" in run.signals:
        extra["bridge_compression"] = run.signals["compression"]
        res.summary["max_bridge_compression"] = float(np.max(run.signals["compression"]))
    _string_tables(res, run, params, extra)
    res.newton = run.iterations
    if cfg["outputs"]["audio"]:
        res.audio["nut_force"] = Audio(nut, int(round(p["fs"])))
    return res, run, params


def _run_tanpura_mode1(cfg):
    res, run, params = _tanpura(cfg, "mode1")
    if run.snapshots is not None and cfg["outputs"]["snapshots"]:
        every = cfg["params"]["snapshot_every"]
        res.tables["snapshots"] = Table(["t"] + [f"{x:.6g}" for x in params.x],
                                        np.column_stack([np.arange(len(run.snapshots)) * every * params.dt,
                                                         run.snapshots]))
    return res


def _run_tanpura_pluck(cfg):
    res, run, params = _tanpura(cfg, "pluck")
    p = cfg["params"]
    nut = run.signals["nut_force"]
    if cfg["outputs"]["spectra"] and nut.size >= p["window_len"]:
        sg = analysis.spectrogram(nut, p["fs"], p["window_len"], p["hop"])
        sel = sg.frequencies <= p["spectrum_max_hz"]
        res.tables["spectrogram"] = Table(
            ["t"] + [f"{f:.6g}" for f in sg.frequencies[sel]],
            np.column_stack([sg.times, sg.magnitudes[sel].T]))
        f0 = math.sqrt(params.tau / params.rhoA) / (2 * params.L)
        t_check = min(p["even_check_time"], float(sg.times[-1]))
        res.summary["nominal_f0"] = f0
        res.summary["second_harmonic_level_db"] = sg.relative_level(2 * f0, t_check, 0)
        res.summary["second_harmonic_check_time"] = t_check
    return res


# -- registry --------------------------------------------------------------

_LUMPED_OUT = {"trajectory": True, "energy": True, "spectra": False, "audio": False, "snapshots": False}
_STRING_OUT = {"trajectory": False, "energy": True, "spectra": False, "audio": False, "snapshots": False}

FIG7_STRING = dict(L=0.7, dx=0.007, rhoA=0.001, tau=100.0, EI=0.0, gamma=0.0, eta=0.0,
                   bc_left="simply_supported", bc_right="simply_supported", fs=44100.0,
                   oversample_dx=False)

TANPURA = dict(L=0.628, dx=3.1e-3, rhoA=5.58e-4, tau=31.47, EI=8.35e-5, gamma=0.1, eta=5e-8,
               fs=176400.0, x_b=5e-3, dx_b=2e-4, k_b=5e8, bridge=True, amplitude=0.002,
               oversample_dx=False)

SCENARIOS = {
    s.name: s for s in [
        Scenario("fig2-lumped-comparison",
                 "Mass hitting a barrier: energy error of EC, TR, MR and PSE",
                 dict(m=0.1, k=0.0, k_c=5000.0, alpha=1.0, y_c=0.0, g0=0.0, y0=0.1, p0=-0.2,
                      fs=44100.0, duration=1.0),
                 dict(_LUMPED_OUT), _run_fig2),
        Scenario("fig3-preservation-sweep",
                 "Energy preservation metric over contact exponent and stiffness",
                 dict(alpha_min=1.0, alpha_max=3.0, alpha_count=9, beta_min=1e-3, beta_max=1e3,
                      beta_count=13, workers=1),
                 dict(_LUMPED_OUT), _run_fig3),
        Scenario("fig4-bouncing-ball",
                 "Lossless ball bouncing under gravity on a stiff floor",
                 dict(m=1.0, k=0.0, k_c=1e11, alpha=3.5, y_c=0.0, g0=-9.81, y0=1.0, p0=0.0,
                      fs=44100.0, duration=9.5),
                 dict(_LUMPED_OUT), lambda cfg: _lumped_single(cfg, "ball")),
        Scenario("fig4-oscillator-barrier",
                 "Unit-mass 440 Hz oscillator repelled by a quadratic barrier",
                 dict(m=1.0, k=(2 * math.pi * 440) ** 2, k_c=2.5e10, alpha=2.0, y_c=0.93e-3, g0=0.0,
                      y0=1e-3, p0=0.0, fs=44100.0, duration=10.0),
                 dict(_LUMPED_OUT), lambda cfg: _lumped_single(cfg, "oscillator")),
        Scenario("fig5-aliasing-sweep",
                 "Spring stiffness sweep: aliased energy at 44.1 kHz vs 176.4 kHz",
                 dict(m=0.001, k_c=2e10, alpha=2.3, y_c=-0.05, y0=0.1, p0=-0.1, duration=1.0,
                      k_base=30000.0, k_ratio=1.01, k_count=200, k_stride=1, fs=44100.0,
                      fs_oversampled=176400.0, spectrum_max_hz=20000.0, workers=1),
                 dict(_LUMPED_OUT), _run_fig5),
        Scenario("fig7-impeded-string",
                 "Ideal string with and without a flat obstacle: fundamental ratio",
                 dict(FIG7_STRING, k_c=1e7, alpha=1.0, y_c=-0.001, amplitude=0.002, duration=0.03),
                 dict(_STRING_OUT), _run_fig7),
        Scenario("fig8-stiff-string-obstacle",
                 "Stiff string bouncing on a curved obstacle near one end",
                 dict(FIG7_STRING, EI=0.012, k_c=1e7, alpha=1.0, amplitude=0.002,
                      obstacle_height=-3e-4, obstacle_curvature=0.1, obstacle_center=0.1,
                      obstacle_extent=0.2, duration=100000 / 44100, snapshot_every=441),
                 dict(_STRING_OUT), _run_fig8),
        Scenario("fig9-cantilever",
                 "Damped cantilever beam beating against a table",
                 dict(L=0.2, dx=1 / 460, rhoA=0.03, tau=0.0, EI=0.03375, gamma=10.0, eta=1e-6,
                      bc_left="clamped", bc_right="free", fs=176400.0, oversample_dx=False,
                      k_c=5e6, alpha=1.0, table_height=0.0, table_extent=0.1,
                      tip_amplitude=0.01, duration=0.5),
                 dict(_STRING_OUT), _run_fig9),
        Scenario("tanpura-mode1",
                 "Tanpura string released in its first mode against the bridge",
                 dict(TANPURA, duration=0.18, snapshot_every=0),
                 dict(_STRING_OUT, audio=True), _run_tanpura_mode1),
        Scenario("tanpura-pluck",
                 "Tanpura string plucked at mid-point: nut force audio and spectrogram",
                 dict(TANPURA, duration=1.0, pluck_position=0.5, window_len=4096, hop=1024,
                      spectrum_max_hz=20000.0, even_check_time=0.2),
                 dict(_STRING_OUT, audio=True, spectra=True), _run_tanpura_pluck),
    ]
}


def default_config(name):
    if name not in SCENARIOS:
        raise ConfigError(f"unknown scenario {name!r}; valid names: {', '.join(sorted(SCENARIOS))}")
    sc = SCENARIOS[name]
    return {"scenario": name, "seed": 0, "oversample": 1,
            "params": copy.deepcopy(sc.params), "outputs": dict(sc.outputs)}


def _coerce(value, default, key):
    if isinstance(default, bool):
        if isinstance(value, bool):
            return value
        if isinstance(value, str) and value.lower() in ("true", "false", "1", "0", "yes", "no"):
            return value.lower() in ("true", "1", "yes")
        raise ConfigError(f"{key}: expected a boolean, got {value!r}")
    try:
        if isinstance(default, int):
            if isinstance(value, float) and not value.is_integer():
                raise ValueError
            return int(value)
        if isinstance(default, float):
            return float(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{key}: expected {type(default).__name__}, got {value!r}") from None
    return str(value)


def resolve_config(raw: dict) -> dict:
    """Merge ``raw`` onto the scenario defaults, rejecting unknown keys."""
    if not isinstance(raw, dict) or "scenario" not in raw:
        raise ConfigError("config must be a mapping with a 'scenario' key")
    cfg = default_config(raw["scenario"])
    for key, value in raw.items():
        if key == "scenario":
            continue
        if key not in cfg:
            raise ConfigError(f"unknown key {key!r}")
        if isinstance(cfg[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"{key}: expected a mapping")
            for sub, v in value.items():
                if sub not in cfg[key]:
                    raise ConfigError(f"unknown key {key}.{sub}")
                cfg[key][sub] = _coerce(v, cfg[key][sub], f"{key}.{sub}")
        else:
            cfg[key] = _coerce(value, cfg[key], key)
    if cfg["oversample"] < 1:
        raise ConfigError("oversample must be >= 1")
    return cfg


def apply_override(cfg: dict, assignment: str) -> None:
    """Apply a ``dotted.key=value`` override in place."""
    if "=" not in assignment:
        raise ConfigError(f"override {assignment!r} is not of the form key=value")
    key, value = assignment.split("=", 1)
    parts = key.strip().split(".")
    node = cfg
    for part in parts[:-1]:
        if part not in node or not isinstance(node[part], dict):
            raise ConfigError(f"unknown key {key!r}")
        node = node[part]
    leaf = parts[-1]
    if leaf not in node or leaf == "scenario":
        raise ConfigError(f"unknown key {key!r}")
    node[leaf] = _coerce(value.strip(), node[leaf], key)


def effective_params(cfg: dict) -> dict:
    """Scenario parameters with the oversampling factor applied."""
    p = copy.deepcopy(cfg["params"])
    factor = cfg["oversample"]
    if factor != 1:
        for key in ("fs", "fs_oversampled"):
            if key in p:
                p[key] = p[key] * factor
        if p.get("oversample_dx") and "dx" in p:
            p["dx"] = p["dx"] / factor
    return p


def run_scenario(cfg: dict) -> ScenarioResult:
    sc = SCENARIOS[cfg["scenario"]]
    eff = dict(cfg, params=effective_params(cfg))
    return sc.runner(eff)
