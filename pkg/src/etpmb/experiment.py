"""Scenario configuration, Monte-Carlo experiment driver and CSV output.

A scenario is a TOML document with ``[run]``, ``[[sensors]]``, ``[[targets]]``,
``[filter]`` (with ``[filter.gp]`` and ``[filter.birth]``), ``[fusion]`` and
``[gospa]`` tables. Every field has a default except the sensors and targets.
Angles in the file are in degrees.
"""
from __future__ import annotations

import copy
import csv
import io
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
import tomli
import tomli_w

from .densities import GammaDensity, GaussianDensity, PoissonIntensity, PppComponent
from .filter import EtPmbFilter, FilterModel
from .fusion import FusionConfig, fuse_pmbs_per_sensor, partition_fov
from .gp_extent import GpHyperParams, MotionParams, SensorPose
from .metrics import GospaParams, Polygon, associate, gospa, iou, shape_polygon
from .sim import SensorModel, TruthTarget, scan, step_truth

MODES = ("independent", "fusion", "centralized")

# purposes of the per-(run, sensor, step) random streams
NOISE, CLUTTER, TRUTH = 0, 1, 2


class ConfigError(ValueError):
    """Invalid scenario configuration; the message names the offending field."""


# --------------------------------------------------------------------------- schema

_DEFAULTS: Dict[str, Dict[str, Any]] = {
    "run": {
        "mode": "fusion",
        "fusion_interval": 1,
        "steps": 120,
        "mc_runs": 10,
        "seed": 1,
        "sample_time": 0.5,
        "truth_process_noise": False,
        "workers": 1,
    },
    "sensor": {
        "orientation_deg": 0.0,
        "opening_angle_deg": 90.0,
        "angular_resolution_deg": 0.15,
        "max_range": 300.0,
        "meas_cov": [[0.5, 0.0], [0.0, 0.5]],
        "clutter_rate": 2.0,
        "clutter_region": [[-200.0, 200.0], [-200.0, 200.0]],
    },
    "target": {
        "heading_deg": 0.0,
        "velocity": [0.0, 0.0],
        "turn_rate": 0.0,
        "length": 5.0,
        "width": 3.0,
        "birth_step": 0,
        "death_step": 1_000_000_000,
    },
    "filter": {
        "p_survival": 0.999,
        "p_detect": 0.99,
        "clutter_rate": 2.0,
        "clutter_region": [[-200.0, 200.0], [-200.0, 200.0]],
        "dbscan_eps": 4.0,
        "dbscan_minpts": 4,
        "recycle_threshold": 0.1,
        "existence_threshold": 0.5,
        "max_hypotheses": 100,
        "ekf_iterations": 5,
        "process_q": [0.01, 0.01, 0.001],
        "extent_decay": 0.001,
        "rate_forgetting": 1.11,
    },
    "gp": {
        "l2": math.pi / 8,
        "sigma_f2": 2.0,
        "sigma_r2": 2.0,
        "support_points": 20,
    },
    "birth": {
        "rate": 0.1,
        "center": [0.0, 100.0],
        "position_var": 30.0,
        "heading_var": 0.5,
        "velocity_var": 10.0,
        "turn_rate_var": 0.01,
        "extent_mean": 2.0,
        "extent_cov_scale": 0.25,
        "gamma_alpha": 5.0,
        "gamma_beta": 1.0,
    },
    "fusion": {
        "recycle_threshold": 0.1,
        "kld_gate": 50.0,
        "part_mass_cap": 0.9,
    },
    "gospa": {"c": 20.0, "p": 2.0, "alpha": 2.0},
}

_REQUIRED = {"sensor": ("position",), "target": ("center",)}


def _merge(section: str, given: Any, where: str) -> Dict[str, Any]:
    if given is None:
        given = {}
    if not isinstance(given, dict):
        raise ConfigError(f"{where}: expected a table")
    defaults = _DEFAULTS[section]
    allowed = set(defaults) | set(_REQUIRED.get(section, ()))
    nested = {"filter": ("gp", "birth")}.get(section, ())
    for key in given:
        if key not in allowed and key not in nested:
            raise ConfigError(f"{where}.{key}: unknown field")
    for key in _REQUIRED.get(section, ()):
        if key not in given:
            raise ConfigError(f"{where}.{key}: missing required field")
    out = copy.deepcopy(defaults)
    out.update({k: copy.deepcopy(v) for k, v in given.items() if k not in nested})
    for key in out:
        _check_type(out[key], defaults.get(key), f"{where}.{key}")
    return out


def _check_type(value, default, where):
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{where}: expected true or false, got {value!r}")
    elif isinstance(default, int) and not isinstance(default, bool):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where}: expected an integer, got {value!r}")
    elif isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where}: expected a number, got {value!r}")
    elif isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"{where}: expected a string, got {value!r}")
    elif isinstance(default, list) or default is None:  # arrays; required fields have no default
        try:
            np.asarray(value, dtype=float)
        except (TypeError, ValueError):
            raise ConfigError(f"{where}: expected a numeric array, got {value!r}") from None


def _vec(value, n, where) -> np.ndarray:
    arr = np.asarray(value, dtype=float)
    if arr.shape != (n,):
        raise ConfigError(f"{where}: expected {n} numbers, got {value!r}")
    return arr


@dataclass
class ScenarioConfig:
    """A fully resolved scenario. ``source`` is the normalized document it came from."""

    sensors: List[SensorModel]
    targets: List[TruthTarget]
    filter: FilterModel
    fusion: FusionConfig
    mode: str
    fusion_interval: int
    steps: int
    mc_runs: int
    seed: int
    gospa: GospaParams = field(default_factory=GospaParams)
    truth_process_noise: bool = False
    workers: int = 1
    source: Dict[str, Any] = field(default_factory=dict, repr=False)

    @classmethod
    def from_dict(cls, doc: Dict[str, Any]) -> "ScenarioConfig":
        return _build(doc)

    def to_dict(self) -> Dict[str, Any]:
        return copy.deepcopy(self.source)

    def replace(self, **run_fields) -> "ScenarioConfig":
        """Copy with fields of the ``[run]`` table overridden (e.g. ``mode``, ``seed``)."""
        doc = self.to_dict()
        for k, v in run_fields.items():
            if k not in _DEFAULTS["run"]:
                raise ConfigError(f"run.{k}: unknown field")
            doc["run"][k] = v
        return _build(doc)

    def with_sensors(self, indices: Sequence[int], **run_fields) -> "ScenarioConfig":
        """Copy restricted to a subset of the sensors (fusion weights become uniform)."""
        doc = self.to_dict()
        doc["sensors"] = [doc["sensors"][i] for i in indices]
        doc["fusion"].pop("weights", None)
        for k, v in run_fields.items():
            if k not in _DEFAULTS["run"]:
                raise ConfigError(f"run.{k}: unknown field")
            doc["run"][k] = v
        return _build(doc)


def _build(doc: Dict[str, Any]) -> ScenarioConfig:
    if not isinstance(doc, dict):
        raise ConfigError("scenario: expected a table at the top level")
    known = {"run", "sensors", "targets", "filter", "fusion", "gospa", "description"}
    for key in doc:
        if key not in known:
            raise ConfigError(f"{key}: unknown section")
    run = _merge("run", doc.get("run"), "run")
    raw_sensors = doc.get("sensors")
    if not isinstance(raw_sensors, list) or not raw_sensors:
        raise ConfigError("sensors: need at least one [[sensors]] entry")
    raw_targets = doc.get("targets", [])
    if not isinstance(raw_targets, list):
        raise ConfigError("targets: expected an array of tables")
    sensors_doc = [_merge("sensor", s, f"sensors[{i}]") for i, s in enumerate(raw_sensors)]
    targets_doc = [_merge("target", t, f"targets[{i}]") for i, t in enumerate(raw_targets)]
    raw_filter = doc.get("filter") or {}
    filt = _merge("filter", raw_filter, "filter")
    gp = _merge("gp", raw_filter.get("gp") if isinstance(raw_filter, dict) else None, "filter.gp")
    birth = _merge("birth", raw_filter.get("birth") if isinstance(raw_filter, dict) else None, "filter.birth")
    raw_fusion = doc.get("fusion") or {}
    fusion_given = dict(raw_fusion) if isinstance(raw_fusion, dict) else raw_fusion
    weights = fusion_given.pop("weights", None) if isinstance(fusion_given, dict) else None
    fus = _merge("fusion", fusion_given, "fusion")
    gos = _merge("gospa", doc.get("gospa"), "gospa")

    if run["mode"] not in MODES:
        raise ConfigError(f"run.mode: expected one of {', '.join(MODES)}, got {run['mode']!r}")
    if run["fusion_interval"] < 1:
        raise ConfigError("run.fusion_interval: must be at least 1")
    if run["steps"] < 1 or run["mc_runs"] < 1 or run["workers"] < 1:
        raise ConfigError("run: steps, mc_runs and workers must be positive")
    if run["seed"] < 0:
        raise ConfigError("run.seed: must be nonnegative")
    if run["mode"] == "fusion" and len(sensors_doc) < 2:
        raise ConfigError("run.mode: fusion needs at least two sensors")

    sensors = []
    for i, s in enumerate(sensors_doc):
        where = f"sensors[{i}]"
        try:
            pose = SensorPose(_vec(s["position"], 2, f"{where}.position"), math.radians(s["orientation_deg"]),
                              np.asarray(s["meas_cov"], dtype=float))
            sensors.append(SensorModel(pose, math.radians(s["opening_angle_deg"]),
                                       math.radians(s["angular_resolution_deg"]), float(s["max_range"]),
                                       float(s["clutter_rate"]), tuple(map(tuple, s["clutter_region"]))))
        except ConfigError:
            raise
        except (ValueError, TypeError) as err:
            raise ConfigError(f"{where}: {err}") from None
    targets = []
    for i, t in enumerate(targets_doc):
        where = f"targets[{i}]"
        try:
            targets.append(TruthTarget(_vec(t["center"], 2, f"{where}.center"), math.radians(t["heading_deg"]),
                                       _vec(t["velocity"], 2, f"{where}.velocity"), float(t["turn_rate"]),
                                       float(t["length"]), float(t["width"]), int(t["birth_step"]),
                                       int(t["death_step"])))
        except ConfigError:
            raise
        except (ValueError, TypeError) as err:
            raise ConfigError(f"{where}: {err}") from None

    try:
        hp = GpHyperParams.uniform(int(gp["support_points"]), sigma_f2=float(gp["sigma_f2"]),
                                   sigma_r2=float(gp["sigma_r2"]), l2=float(gp["l2"]))
    except ValueError as err:
        raise ConfigError(f"filter.gp: {err}") from None
    try:
        motion = MotionParams.constant_velocity(
            T=float(run["sample_time"]), q=tuple(_vec(filt["process_q"], 3, "filter.process_q")),
            beta=float(filt["extent_decay"]), eta=float(filt["rate_forgetting"]),
            p_survival=float(filt["p_survival"]))
    except ValueError as err:
        raise ConfigError(f"filter: {err}") from None
    (x0, x1), (y0, y1) = np.asarray(filt["clutter_region"], dtype=float)
    area = (x1 - x0) * (y1 - y0)
    if area <= 0:
        raise ConfigError("filter.clutter_region: must have positive area")
    try:
        model = FilterModel(
            birth=birth_intensity(birth, hp), motion=motion, gp=hp, p_detect=float(filt["p_detect"]),
            clutter_rate=float(filt["clutter_rate"]), clutter_density=1.0 / area,
            dbscan_eps=float(filt["dbscan_eps"]), dbscan_minpts=int(filt["dbscan_minpts"]),
            recycle_threshold=float(filt["recycle_threshold"]),
            existence_threshold=float(filt["existence_threshold"]),
            max_hypotheses=int(filt["max_hypotheses"]), ekf_iterations=int(filt["ekf_iterations"]))
    except ValueError as err:
        raise ConfigError(f"filter: {err}") from None
    n = len(sensors)
    w = tuple(float(x) for x in weights) if weights is not None else tuple([1.0 / n] * n)
    if len(w) != n:
        raise ConfigError(f"fusion.weights: expected {n} weights, got {len(w)}")
    try:
        fusion = FusionConfig(w, float(fus["recycle_threshold"]), float(fus["kld_gate"]),
                              float(fus["part_mass_cap"]))
        gospa_params = GospaParams(float(gos["c"]), float(gos["p"]), float(gos["alpha"]))
    except ValueError as err:
        raise ConfigError(f"fusion/gospa: {err}") from None

    filt_doc = dict(filt)
    filt_doc["gp"] = gp
    filt_doc["birth"] = birth
    fus_doc = dict(fus)
    if weights is not None:
        fus_doc["weights"] = list(w)
    source = {"run": run, "sensors": sensors_doc, "targets": targets_doc, "filter": filt_doc,
              "fusion": fus_doc, "gospa": gos}
    if "description" in doc:
        source["description"] = str(doc["description"])
    return ScenarioConfig(sensors, targets, model, fusion, run["mode"], int(run["fusion_interval"]),
                          int(run["steps"]), int(run["mc_runs"]), int(run["seed"]), gospa_params,
                          bool(run["truth_process_noise"]), int(run["workers"]), source)


def birth_intensity(b: Dict[str, Any], hp: GpHyperParams) -> PoissonIntensity:
    """Single-Gaussian birth intensity over the full state."""
    n = 6 + hp.n
    mean = np.zeros(n)
    mean[:2] = _vec(b["center"], 2, "filter.birth.center")
    mean[6:] = float(b["extent_mean"])
    cov = np.zeros((n, n))
    cov[:2, :2] = float(b["position_var"]) * np.eye(2)
    cov[2, 2] = float(b["heading_var"])
    cov[3:5, 3:5] = float(b["velocity_var"]) * np.eye(2)
    cov[5, 5] = float(b["turn_rate_var"])
    cov[6:, 6:] = float(b["extent_cov_scale"]) * hp.gram
    try:
        comp = PppComponent(float(b["rate"]), GaussianDensity(mean, cov),
                            GammaDensity(float(b["gamma_alpha"]), float(b["gamma_beta"])))
    except ValueError as err:
        raise ConfigError(f"filter.birth: {err}") from None
    return PoissonIntensity((comp,))


def load_config(path) -> ScenarioConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as err:
        raise ConfigError(f"{path}: cannot read ({err.strerror})") from None
    return loads_config(text, str(path))


def loads_config(text: str, name: str = "<string>") -> ScenarioConfig:
    try:
        doc = tomli.loads(text)
    except tomli.TOMLDecodeError as err:
        raise ConfigError(f"{name}: {err}") from None
    try:
        return _build(doc)
    except ConfigError as err:
        raise ConfigError(f"{name}: {err}") from None


def dumps_config(cfg: ScenarioConfig) -> str:
    return tomli_w.dumps(cfg.to_dict())


def dump_config(cfg: ScenarioConfig, path) -> None:
    Path(path).write_text(dumps_config(cfg))


def bundled_scenario(name: str) -> Path:
    """Path of a scenario file shipped with the package (``paper_scenario``, ``four_sensor``...)."""
    p = Path(__file__).with_name("scenarios") / (name if name.endswith(".toml") else name + ".toml")
    if not p.exists():
        raise ConfigError(f"no bundled scenario named {name!r}")
    return p


# --------------------------------------------------------------------------- experiment


@dataclass
class RunRecord:
    run: int
    step: int
    filter_id: str
    gospa: float
    iou_per_target: List[float]  # nan when the target is not alive
    rate_estimates: List[float]  # gamma mean of the estimate matched to each target, nan if none
    estimates: List[tuple]  # (track_id, x, y, heading, rate mean) per estimated target


@dataclass
class TruthRecord:
    run: int
    step: int
    target: int
    alive: bool
    x: float
    y: float
    heading: float
    counts: List[int]  # true target-generated detections per sensor this scan


@dataclass
class ExperimentResult:
    records: List[RunRecord]
    truth: List[TruthRecord]
    n_targets: int
    n_sensors: int

    def filter_ids(self) -> List[str]:
        seen: Dict[str, None] = {}
        for r in self.records:
            seen.setdefault(r.filter_id, None)
        return list(seen)

    def gospa(self, filter_id: str) -> np.ndarray:
        """GOSPA as an ``(mc_runs, steps)`` array."""
        rec = [r for r in self.records if r.filter_id == filter_id]
        runs = max(r.run for r in rec) + 1
        steps = max(r.step for r in rec) + 1
        out = np.full((runs, steps), np.nan)
        for r in rec:
            out[r.run, r.step] = r.gospa
        return out

    def iou(self, filter_id: str, target: int) -> np.ndarray:
        rec = [r for r in self.records if r.filter_id == filter_id]
        runs = max(r.run for r in rec) + 1
        steps = max(r.step for r in rec) + 1
        out = np.full((runs, steps), np.nan)
        for r in rec:
            out[r.run, r.step] = r.iou_per_target[target]
        return out

    def rate(self, filter_id: str, target: int) -> np.ndarray:
        rec = [r for r in self.records if r.filter_id == filter_id]
        runs = max(r.run for r in rec) + 1
        steps = max(r.step for r in rec) + 1
        out = np.full((runs, steps), np.nan)
        for r in rec:
            out[r.run, r.step] = r.rate_estimates[target]
        return out

    def true_counts(self, target: int, sensor: int) -> np.ndarray:
        t = [r for r in self.truth if r.target == target]
        runs = max(r.run for r in t) + 1
        steps = max(r.step for r in t) + 1
        out = np.full((runs, steps), np.nan)
        for r in t:
            if r.alive:
                out[r.run, r.step] = r.counts[sensor]
        return out


def stream(seed: int, run: int, sensor: int, step: int, purpose: int) -> np.random.Generator:
    """Independent random stream for one (run, sensor, step, purpose) tuple."""
    return np.random.default_rng([seed, run, sensor, step, purpose])


def filter_ids(cfg: ScenarioConfig) -> List[str]:
    n = len(cfg.sensors)
    if cfg.mode == "centralized":
        return ["centralized"]
    return [f"{cfg.mode}-{s + 1}" for s in range(n)]


def run_experiment(cfg: ScenarioConfig) -> ExperimentResult:
    """Run all Monte-Carlo runs of ``cfg`` and collect per-step metrics."""
    runs = range(cfg.mc_runs)
    if cfg.workers > 1 and cfg.mc_runs > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            parts = list(pool.map(_run_one, [cfg] * cfg.mc_runs, runs))
    else:
        parts = [_run_one(cfg, r) for r in runs]
    records = [r for p in parts for r in p[0]]
    truth = [t for p in parts for t in p[1]]
    return ExperimentResult(records, truth, len(cfg.targets), len(cfg.sensors))


def _run_one(cfg: ScenarioConfig, run: int):
    model = cfg.filter
    n_sens = len(cfg.sensors)
    T = model.motion.T
    ids = filter_ids(cfg)
    filters = [EtPmbFilter(model) for _ in ids]
    partition = partition_fov(cfg.sensors) if cfg.mode == "fusion" else None
    process_cov = model.motion.kinematic_W if cfg.truth_process_noise else None
    truths = list(cfg.targets)
    records: List[RunRecord] = []
    truth_rows: List[TruthRecord] = []

    for step in range(cfg.steps):
        alive_idx = [i for i, t in enumerate(truths) if t.alive(step)]
        alive = [truths[i] for i in alive_idx]
        scans = [scan(s, alive, stream(cfg.seed, run, k, step, NOISE), stream(cfg.seed, run, k, step, CLUTTER))
                 for k, s in enumerate(cfg.sensors)]

        if cfg.mode == "centralized":
            f = filters[0]
            f.predict()
            for k, s in enumerate(cfg.sensors):
                f.update(scans[k].detections, s)
        else:
            for k, f in enumerate(filters):
                f.predict()
                f.update(scans[k].detections, cfg.sensors[k])
            if cfg.mode == "fusion" and step % cfg.fusion_interval == cfg.fusion_interval - 1:
                fused = fuse_pmbs_per_sensor([f.pmb for f in filters], cfg.fusion, cfg.sensors, partition)
                for f, pmb in zip(filters, fused):
                    f.pmb = pmb

        for i, t in enumerate(truths):
            counts = [int(np.sum(sc.owners == alive_idx.index(i))) if i in alive_idx else 0 for sc in scans]
            truth_rows.append(TruthRecord(run, step, i, i in alive_idx, float(t.center[0]), float(t.center[1]),
                                          float(t.heading), counts))
        truth_centers = np.array([t.center for t in alive]).reshape(-1, 2)
        truth_polys = [Polygon(t.corners()) for t in alive]
        for fid, f in zip(ids, filters):
            est = f.estimates()
            centers = np.array([e.spatial.mean[:2] for _, e in est]).reshape(-1, 2)
            d = gospa(centers, truth_centers, cfg.gospa)
            match = associate(centers, truth_centers, cfg.gospa.c)
            ious = [math.nan] * len(truths)
            rates = [math.nan] * len(truths)
            for a, i in enumerate(alive_idx):
                if a in match:
                    e = est[match[a]][1]
                    ious[i] = iou(truth_polys[a], shape_polygon(e, model.gp))
                    rates[i] = e.rate.mean
                else:
                    ious[i] = 0.0
            summary = [(tid, float(e.spatial.mean[0]), float(e.spatial.mean[1]), float(e.spatial.mean[2]),
                        float(e.rate.mean)) for tid, e in est]
            records.append(RunRecord(run, step, fid, d, ious, rates, summary))

        rng = stream(cfg.seed, run, n_sens, step, TRUTH)
        truths = [step_truth(t, T, process_cov, rng) if t.alive(step) else t for t in truths]
    return records, truth_rows


# --------------------------------------------------------------------------- CSV


def _fmt(x: float) -> str:
    return format(float(x), ".9g")


def emit_csv(records: Sequence[RunRecord], path=None, n_targets: Optional[int] = None) -> str:
    """Write run records as CSV (floats at 9 significant digits); returns the text."""
    if n_targets is None:
        n_targets = max((len(r.iou_per_target) for r in records), default=0)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["run", "step", "filter_id", "gospa"]
               + [f"iou_{k}" for k in range(n_targets)]
               + [f"rate_{k}" for k in range(n_targets)]
               + ["n_estimates", "estimates"])
    for r in records:
        est = ";".join(f"{tid}:{_fmt(x)}:{_fmt(y)}:{_fmt(h)}:{_fmt(g)}" for tid, x, y, h, g in r.estimates)
        w.writerow([r.run, r.step, r.filter_id, _fmt(r.gospa)]
                   + [_fmt(v) for v in r.iou_per_target]
                   + [_fmt(v) for v in r.rate_estimates]
                   + [len(r.estimates), est])
    text = buf.getvalue()
    if path is not None:
        Path(path).write_text(text)
    return text


def emit_truth_csv(rows: Sequence[TruthRecord], path=None, n_sensors: Optional[int] = None) -> str:
    if n_sensors is None:
        n_sensors = max((len(r.counts) for r in rows), default=0)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["run", "step", "target", "alive", "x", "y", "heading"] + [f"count_{s}" for s in range(n_sensors)])
    for r in rows:
        w.writerow([r.run, r.step, r.target, int(r.alive), _fmt(r.x), _fmt(r.y), _fmt(r.heading)] + r.counts)
    text = buf.getvalue()
    if path is not None:
        Path(path).write_text(text)
    return text
