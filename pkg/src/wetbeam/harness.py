"""Seeded Monte-Carlo experiments, figure presets and result files.

Every (sweep point, realization) pair is an independent task whose device
deployment is drawn from a seed derived from ``(master seed, sweep index,
realization index)``.  Tasks run in a process pool and their results are
sorted before anything is written, so the files do not depend on the
number of workers.

Files written to the output directory
-------------------------------------
``results.csv``
    One row per (architecture, sweep value, realization) with columns
    ``RESULT_COLUMNS``.
``aggregates.csv``
    Mean and population standard deviation over realizations.
``traces.csv``
    Per-iteration objective of every optimization run.
``failures.csv``
    Realizations that raised an error (only when there are any).
``map_<plane>_<value>.csv``
    Normalized power maps of the ``fig8`` preset, columns ``x, y,
    normalized_power``.
``manifest.json``
    Configuration snapshot, preset, package version and timestamps.
"""
from __future__ import annotations

import csv
import dataclasses
import datetime as _dt
import json
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .architectures import build_model_from_config, make_solution
from .channel import RadiationParams, build_channels, its_to_device_matrix
from .config import ExperimentConfig, load_config, merge
from .errors import ConfigurationError, ExperimentError, WetbeamError
from .geometry import build_scenario
from .initialization import enumerate_assignments, init_its, initialize, allocate_rf_chains
from .power import DohertyParams, StaticPower
from .sca import ScaSettings, sca_optimize

log = logging.getLogger(__name__)

RESULT_COLUMNS = ("experiment", "architecture", "sweep_value", "realization", "seed",
                  "total_power_W", "total_power_dBW", "min_received_power_W", "iterations",
                  "wall_ms")
AGGREGATE_COLUMNS = ("experiment", "architecture", "sweep_value", "count",
                     "mean_total_power_W", "std_total_power_W", "mean_total_power_dBW")
TRACE_COLUMNS = ("experiment", "architecture", "sweep_value", "realization", "start",
                 "iteration", "objective_W", "max_violation", "branches")
FAILURE_COLUMNS = ("experiment", "architecture", "sweep_value", "realization", "seed", "error")

MAX_FAILURE_FRACTION = 0.2

PRESETS = {
    "fig4": {"architectures": ("ITS",), "realizations": 1, "sweep_axis": "none"},
    "fig5": {"sweep_axis": "N", "sweep_values": (4, 5, 6, 7, 8)},
    "fig6": {"sweep_axis": "M", "sweep_values": (100, 144, 196, 256, 324, 400)},
    "fig7": {"sweep_axis": "ell", "sweep_values": (1, 2, 3, 4, 5, 6)},
    "fig8": {"architectures": ("ITS",), "realizations": 1, "sweep_axis": "none",
             "N": 1, "K": 1, "r_a": 0.0, "M": 400},
}
FIG8_FEEDER_DISTANCES = (1.35, 0.2)
FIG8_DEVICE = (0.0, 0.0, -1.5)
FIG8_MAP_HALF_WIDTH = 1.0
FIG8_MAP_POINTS = 81


@dataclass
class ResultRecord:
    experiment: str
    architecture: str
    sweep_value: float
    realization: int
    seed: int
    total_power_W: float
    min_received_power_W: float
    iterations: int
    wall_ms: float
    received_powers: list = field(default_factory=list)
    trace: list = field(default_factory=list)
    start: int = 0

    @property
    def total_power_dBW(self) -> float:
        return 10 * math.log10(self.total_power_W)

    def row(self) -> list:
        return [self.experiment, self.architecture, self.sweep_value, self.realization, self.seed,
                self.total_power_W, self.total_power_dBW, self.min_received_power_W,
                self.iterations, self.wall_ms]

    def key(self):
        return (self.sweep_value, self.realization, self.architecture, self.start)


@dataclass
class FailureRecord:
    experiment: str
    architecture: str
    sweep_value: float
    realization: int
    seed: int
    error: str

    def key(self):
        return (self.sweep_value, self.realization, self.architecture)


@dataclass
class ResultSet:
    experiment: str
    config: ExperimentConfig
    records: list
    failures: list
    maps: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)

    def aggregates(self) -> list[list]:
        """Rows of ``AGGREGATE_COLUMNS`` grouped by architecture and sweep value."""
        groups: dict = {}
        for r in self.records:
            groups.setdefault((r.architecture, r.sweep_value), []).append(r.total_power_W)
        rows = []
        for (arch, value), vals in sorted(groups.items(), key=lambda kv: (kv[0][1], kv[0][0])):
            v = np.array(vals)
            mean = float(v.mean())
            rows.append([self.experiment, arch, value, v.size, mean, float(v.std()),
                         10 * math.log10(mean)])
        return rows

    def mean_power(self, arch: str, sweep_value=None) -> float:
        vals = [r.total_power_W for r in self.records if r.architecture == arch
                and (sweep_value is None or r.sweep_value == sweep_value)]
        return float(np.mean(vals)) if vals else math.nan


# -- configuration helpers ---------------------------------------------------

def apply_preset(config: ExperimentConfig, preset: str | None) -> ExperimentConfig:
    if preset is None:
        return config
    if preset not in PRESETS:
        raise ConfigurationError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
    return config.replace(**PRESETS[preset])


def apply_scale(config: ExperimentConfig, scale: float) -> ExperimentConfig:
    """Shrink element counts (rounded) and realization counts (ceiling) by ``scale``."""
    if not scale > 0:
        raise ConfigurationError("scale must be positive")
    if scale == 1:
        return config
    changes = {"M": max(config.N, int(round(config.M * scale))),
               "realizations": max(1, math.ceil(config.realizations * scale))}
    if config.sweep_axis == "M":
        vals = sorted({max(config.N, int(round(v * scale))) for v in config.sweep_values})
        changes["sweep_values"] = tuple(float(v) for v in vals)
    return config.replace(**changes)


def sweep_points(config: ExperimentConfig) -> list[float]:
    if config.sweep_axis == "none":
        return [0.0]
    return [float(v) for v in config.sweep_values]


def config_at(config: ExperimentConfig, value: float) -> ExperimentConfig:
    if config.sweep_axis == "none":
        return config
    return config.replace(**{config.sweep_axis: int(value)})


def realization_seed(master: int, sweep_index: int, realization: int) -> int:
    """Deterministic 32-bit seed of one realization."""
    ss = np.random.SeedSequence([master, sweep_index, realization])
    return int(ss.generate_state(1, dtype=np.uint32)[0])


def _settings(cfg: ExperimentConfig) -> ScaSettings:
    return ScaSettings(np.full(cfg.K, cfg.P_th), cfg.max_iterations, cfg.tolerance)


def _record(exp, arch, value, real, seed, sol, wall_ms, start=0) -> ResultRecord:
    return ResultRecord(exp, arch, value, real, seed, float(sol.total_power),
                        float(np.min(sol.received_powers)), int(sol.iterations), wall_ms,
                        [float(p) for p in sol.received_powers], list(sol.trace), start)


def optimize_architecture(arch: str, cfg: ExperimentConfig, channels):
    """Initialize and optimize one architecture on given channels."""
    dp = DohertyParams.from_config(cfg)
    st = StaticPower.from_config(cfg)
    model = build_model_from_config(arch, channels, cfg)
    settings = _settings(cfg)
    init = initialize(model, channels, settings.targets, dp, cfg.cluster_rule, cfg.permutation_cap)
    return sca_optimize(model, init.precoders, init.w, settings, dp, st)


# -- task bodies (module level so they can be pickled) ------------------------

def _standard_task(task):
    exp, cfg, value, sweep_idx, real = task
    seed = realization_seed(cfg.seed, sweep_idx, real)
    records, failures = [], []
    try:
        channels = build_channels(build_scenario(cfg, seed), RadiationParams.from_config(cfg))
    except WetbeamError as exc:
        return [], [FailureRecord(exp, a, value, real, seed, str(exc)) for a in cfg.architectures]
    for arch in cfg.architectures:
        tic = time.perf_counter()
        try:
            sol = optimize_architecture(arch, cfg, channels)
        except WetbeamError as exc:
            log.warning("%s %s sweep=%s realization=%d failed: %s", exp, arch, value, real, exc)
            failures.append(FailureRecord(exp, arch, value, real, seed, str(exc)))
            continue
        records.append(_record(exp, arch, value, real, seed, sol,
                               1e3 * (time.perf_counter() - tic)))
    return records, failures


def _fig4_task(task):
    """Every chain-to-device assignment as a separate SCA start."""
    exp, cfg, value, sweep_idx, real = task
    seed = realization_seed(cfg.seed, sweep_idx, real)
    channels = build_channels(build_scenario(cfg, seed), RadiationParams.from_config(cfg))
    dp = DohertyParams.from_config(cfg)
    st = StaticPower.from_config(cfg)
    model = build_model_from_config("ITS", channels, cfg)
    settings = _settings(cfg)
    best, candidates = init_its(model, channels, settings.targets, dp, cfg.cluster_rule,
                                cfg.permutation_cap, keep_all=True)
    order = enumerate_assignments(allocate_rf_chains(channels.H, cfg.N), cfg.permutation_cap)
    index = {pi: i for i, pi in enumerate(order)}
    records, failures = [], []
    for cand in candidates:
        i = index[cand.assignment]
        tic = time.perf_counter()
        try:
            sol = sca_optimize(model, cand.precoders, cand.w, settings, dp, st)
        except WetbeamError as exc:
            failures.append(FailureRecord(exp, "ITS", float(i), real, seed, str(exc)))
            continue
        records.append(_record(exp, "ITS", float(i), real, seed, sol,
                               1e3 * (time.perf_counter() - tic), start=i))
    chosen = {"assignment": list(best.assignment), "start": index[best.assignment],
              "permutations": len(order), "score_W": best.score}
    return records, failures, chosen


def _fig8_solution(cfg, channels, focus: str):
    dp = DohertyParams.from_config(cfg)
    st = StaticPower.from_config(cfg)
    model = build_model_from_config("ITS", channels, cfg)
    settings = _settings(cfg)
    if focus == "conjugate":
        phi = np.exp(1j * (np.angle(channels.H[0]) - np.angle(channels.A[:, 0])))
        w = np.conj(phi)
        gain = float(np.abs(model.effective_channels(w)[0, 0]) ** 2)
        b = np.array([[math.sqrt(cfg.P_th / (model.scale * gain))]], dtype=complex)
        return make_solution(model, b, w, dp, st, trace=[], iterations=0, converged=True)
    init = initialize(model, channels, settings.targets, dp, cfg.cluster_rule, cfg.permutation_cap)
    return sca_optimize(model, init.precoders, init.w, settings, dp, st)


def _fig8_task(task):
    exp, cfg, value, sweep_idx, real, focus = task
    cfg = cfg.replace(d_f=value)
    seed = realization_seed(cfg.seed, sweep_idx, real)
    geom = build_scenario(cfg, seed, device_positions=[FIG8_DEVICE])
    params = RadiationParams.from_config(cfg)
    channels = build_channels(geom, params)
    tic = time.perf_counter()
    sol = _fig8_solution(cfg, channels, focus)
    rec = _record(exp, "ITS", value, real, seed, sol, 1e3 * (time.perf_counter() - tic))
    # incident power on each element and received power over the device plane
    drive = channels.A @ sol.precoders                    # (M, Q)
    its_power = np.sum(np.abs(drive) ** 2, axis=1)
    axis = np.linspace(-FIG8_MAP_HALF_WIDTH, FIG8_MAP_HALF_WIDTH, FIG8_MAP_POINTS)
    gx, gy = np.meshgrid(axis, axis, indexing="xy")
    pts = np.column_stack([gx.ravel(), gy.ravel(), np.full(gx.size, FIG8_DEVICE[2])])
    Hmap = its_to_device_matrix(geom, params, targets=pts)          # (P, M)
    field_ = Hmap.conj() @ (sol.phi[:, None] * drive)
    dev_power = cfg.g * cfg.rho_its * np.sum(np.abs(field_) ** 2, axis=1)
    maps = {"its": (geom.its.positions[:, 0], geom.its.positions[:, 1], its_power),
            "device": (pts[:, 0], pts[:, 1], dev_power)}
    return [rec], [], {"value": value, "maps": maps}


def _dispatch(task):
    kind, payload = task
    if kind == "fig4":
        return _fig4_task(payload)
    if kind == "fig8":
        return _fig8_task(payload)
    return _standard_task(payload)


# -- experiment driver ---------------------------------------------------------

def _map_tasks(tasks, workers: int):
    if workers <= 1 or len(tasks) <= 1:
        return [_dispatch(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_dispatch, tasks))


def run_experiment(config: ExperimentConfig, preset: str | None = None,
                   workers: int | None = None, focus: str = "sca") -> ResultSet:
    """Run every sweep point and realization of ``config``.

    ``config`` must already include the preset and scale adjustments
    (see :func:`prepare_config`); ``preset`` only selects the task body.

    Raises
    ------
    ExperimentError
        More than 20 % of the optimization runs failed.
    """
    config.validate()
    exp = preset or "custom"
    workers = config.workers if workers is None else workers
    if preset == "fig8":
        if focus not in ("sca", "conjugate"):
            raise ConfigurationError("focus must be 'sca' or 'conjugate'")
        tasks = [("fig8", (exp, config, d, i, r, focus))
                 for i, d in enumerate(FIG8_FEEDER_DISTANCES) for r in range(config.realizations)]
    else:
        kind = "fig4" if preset == "fig4" else "standard"
        tasks = [(kind, (exp, config_at(config, v), v, i, r))
                 for i, v in enumerate(sweep_points(config)) for r in range(config.realizations)]
    outputs = _map_tasks(tasks, workers)
    records, failures, extra, maps = [], [], {}, {}
    for out in outputs:
        records.extend(out[0])
        failures.extend(out[1])
        if preset == "fig4" and len(out) > 2:
            extra.setdefault("fig4_chosen", []).append(out[2])
        if preset == "fig8" and len(out) > 2:
            maps[out[2]["value"]] = out[2]["maps"]
    records.sort(key=ResultRecord.key)
    failures.sort(key=FailureRecord.key)
    attempted = len(records) + len(failures)
    if attempted == 0 or len(failures) > MAX_FAILURE_FRACTION * attempted:
        raise ExperimentError(f"{len(failures)} of {attempted} runs failed")
    return ResultSet(exp, config, records, failures, normalize_maps(maps), extra)


def normalize_maps(maps: dict) -> dict:
    """Divide every plane's maps by the largest value over all feeder distances."""
    if not maps:
        return {}
    out = {value: {} for value in maps}
    for plane in ("its", "device"):
        peak = max(float(np.max(m[plane][2])) for m in maps.values())
        for value, m in maps.items():
            x, y, p = m[plane]
            out[value][plane] = (x, y, p / peak)
    return out


def spot_area(x, y, power, level_db: float = -3.0) -> float:
    """Area of the region whose power is within ``level_db`` of its own peak.

    Assumes a uniform rectangular grid.
    """
    xs, ys = np.unique(x), np.unique(y)
    cell = (xs[1] - xs[0]) * (ys[1] - ys[0])
    thresh = np.max(power) * 10 ** (level_db / 10)
    return float(np.count_nonzero(power >= thresh) * cell)


def prepare_config(preset: str | None = None, path=None, overrides=None,
                   seed: int | None = None, scale: float = 1.0,
                   base: ExperimentConfig | None = None) -> ExperimentConfig:
    """Layer defaults, preset, config file, overrides and seed, then scale."""
    cfg = apply_preset(base or ExperimentConfig(), preset)
    cfg = load_config(path, overrides, base=cfg)
    if seed is not None:
        cfg = merge(cfg, {"seed": seed})
    return apply_scale(cfg, scale)


# -- persistence -----------------------------------------------------------------

def _write_csv(path: Path, header, rows) -> None:
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([repr(v) if isinstance(v, float) else v for v in row])


def write_results(result: ResultSet, out_dir, started: str | None = None) -> list[Path]:
    """Write all result files; returns their paths."""
    if not result.records:
        raise ExperimentError("no records to write")
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ExperimentError(f"cannot create output directory {out}: {exc}") from exc
    paths = []
    p = out / "results.csv"
    _write_csv(p, RESULT_COLUMNS, (r.row() for r in result.records))
    paths.append(p)
    p = out / "aggregates.csv"
    _write_csv(p, AGGREGATE_COLUMNS, result.aggregates())
    paths.append(p)
    trace_rows = []
    for r in result.records:
        for t in r.trace:
            trace_rows.append([r.experiment, r.architecture, r.sweep_value, r.realization, r.start,
                               t["iteration"], float(t["objective_W"]),
                               float(t["max_violation"]), t["branches"]])
    p = out / "traces.csv"
    _write_csv(p, TRACE_COLUMNS, trace_rows)
    paths.append(p)
    if result.failures:
        p = out / "failures.csv"
        _write_csv(p, FAILURE_COLUMNS, (dataclasses.astuple(f) for f in result.failures))
        paths.append(p)
    for value, planes in sorted(result.maps.items()):
        for plane, (x, y, pw) in planes.items():
            p = out / f"map_{plane}_{value!r}.csv"
            _write_csv(p, ("x", "y", "normalized_power"),
                       ([float(a), float(b), float(c)] for a, b, c in zip(x, y, pw)))
            paths.append(p)
    manifest = {
        "experiment": result.experiment,
        "package_version": __version__,
        "started": started,
        "finished": _dt.datetime.now(_dt.timezone.utc).isoformat(),
        "records": len(result.records),
        "failures": len(result.failures),
        "config": result.config.to_dict(),
        "extra": result.extra,
        "files": [q.name for q in paths],
    }
    p = out / "manifest.json"
    p.write_text(json.dumps(manifest, indent=2, default=str))
    paths.append(p)
    return paths
