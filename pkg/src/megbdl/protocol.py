"""End-to-end simulation protocol: head model, trials, tallies and reports."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import os
import platform
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy
import yaml

from . import __version__, ias
from .classifier import ClassifierConfig, build_artifacts, classify
from .dictionary import build_dictionary
from .errors import (BDLError, ConfigurationError, DimensionError, PartialFailureAbort,
                     SilentSourceError)
from .evaluation import ConfusionSuite, identification_tree, region_labels, tally
from .head import GeometryConfig, build_sensor_array, build_source_space, measure, simulate_patch
from .io import (read_matrix_csv, save_compressed, save_dictionary, save_head,
                 write_matrix_csv, write_table_csv)

log = logging.getLogger(__name__)

OUTPUT_ROOT_ENV = "MEGBDL_OUTPUT_ROOT"
# fields that change how a run executes but not what it computes
EXECUTION_FIELDS = ("workers", "output_dir")


@dataclass(frozen=True)
class ProtocolConfig:
    n_dipoles: int = 1024
    n_channels: int = 64
    n_regions: int = 32
    conductor_radius: float = 0.09
    source_radius: float = 0.079
    sensor_radius: float = 0.12
    helmet_max_polar: float = 110.0
    gradiometers: bool = False
    gradiometer_baseline: float = 0.0168
    tau: float = 0.3
    eps: float = 1e-3
    delta_policy: str = "noise"      # "noise": noise_std / ||b||, floored; "fixed"
    delta: float = 1e-3              # fixed value, or floor under the "noise" policy
    noise_fraction: float = 0.005
    trials_per_region: int = 10
    patch_size: int = 6
    p: float = 0.005
    eta: float = 1e-3
    vartheta: float = 1e-2
    hybrid: bool = True
    max_iter_r1: int = 150
    max_iter_rhalf: int = 150
    phase2_max_iter: int = 150
    tol: float = 1e-4
    winner_rule: str = "max"
    master_seed: int = 0
    max_failure_fraction: float = 0.01
    workers: int = 1
    output_dir: str = "results"

    def validate(self):
        checks = [
            (self.n_regions >= 1, "n_regions must be >= 1"),
            (self.n_regions <= self.n_dipoles, "n_regions must not exceed n_dipoles"),
            (self.n_channels >= 1, "n_channels must be >= 1"),
            (0 < self.tau < 1, "tau must lie in (0, 1)"),
            (self.eps > 0, "eps must be positive"),
            (self.delta_policy in ("noise", "fixed"), "delta_policy must be 'noise' or 'fixed'"),
            (self.delta > 0, "delta must be positive"),
            (self.noise_fraction >= 0, "noise_fraction must be nonnegative"),
            (self.trials_per_region >= 1, "trials_per_region must be >= 1"),
            (self.patch_size >= 1, "patch_size must be >= 1"),
            (0 < self.p < 1, "p must lie in (0, 1)"),
            (self.eta > 0 and self.vartheta > 0, "eta and vartheta must be positive"),
            (self.max_iter_r1 >= 1 and self.max_iter_rhalf >= 0 and self.phase2_max_iter >= 1,
             "iteration limits must be positive"),
            (self.tol > 0, "tol must be positive"),
            (self.winner_rule in ("max", "sum"), "winner_rule must be 'max' or 'sum'"),
            (0 <= self.max_failure_fraction <= 1, "max_failure_fraction must lie in [0, 1]"),
            (self.workers >= 1, "workers must be >= 1"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ConfigurationError(msg)
        self.geometry().validate()
        return self

    def geometry(self):
        return GeometryConfig(self.conductor_radius, self.source_radius, self.sensor_radius,
                              self.helmet_max_polar, self.gradiometers,
                              self.gradiometer_baseline)

    def classifier(self):
        return ClassifierConfig(
            p=self.p, eta=self.eta, vartheta=self.vartheta, winner_rule=self.winner_rule,
            schedule=ias.Schedule(self.max_iter_r1, self.max_iter_rhalf, self.tol, self.hybrid),
            phase2_schedule=ias.Schedule(self.phase2_max_iter, 0, self.tol, hybrid=False))

    def trial_delta(self, noise_std, b_norm):
        if self.delta_policy == "fixed":
            return self.delta
        return max(noise_std / b_norm, self.delta)

    def to_dict(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d):
        names = {f.name: f for f in dataclasses.fields(cls)}
        unknown = set(d) - set(names)
        if unknown:
            raise ConfigurationError(f"unknown config keys: {sorted(unknown)}")
        kwargs = {}
        for k, v in d.items():
            try:
                kwargs[k] = _coerce(names[k].type, v)
            except (TypeError, ValueError) as exc:
                raise ConfigurationError(f"bad value for {k}: {v!r}") from exc
        return cls(**kwargs)

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)

    def content_hash(self):
        d = {k: v for k, v in self.to_dict().items() if k not in EXECUTION_FIELDS}
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()


def _coerce(type_name, v):
    if type_name == "bool":
        if isinstance(v, str):
            if v.lower() in ("1", "true", "yes", "on"):
                return True
            if v.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(v)
        return bool(v)
    return {"int": int, "float": float, "str": str}[type_name](v)


PRESETS = {
    "tiny": dict(n_dipoles=64, n_channels=32, n_regions=8, trials_per_region=25),
    "desk": dict(),
    "full": dict(n_dipoles=15002, n_channels=306, n_regions=148, trials_per_region=100,
                  gradiometers=True),
}


def preset(name, **overrides):
    if name not in PRESETS:
        raise ConfigurationError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    return ProtocolConfig(**{**PRESETS[name], **overrides}).validate()


def load_config(path, **overrides):
    try:
        doc = yaml.safe_load(Path(path).read_text()) or {}
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigurationError("config file must be a key-value mapping")
    base = PRESETS.get(doc.pop("preset", "desk"), {})
    return ProtocolConfig.from_dict({**base, **doc, **overrides}).validate()


def dump_config(config):
    return yaml.safe_dump(config.to_dict(), sort_keys=False)


# -- seeding ---------------------------------------------------------------

def seed_for(master_seed, *key):
    """Independent stream per (purpose, region, trial, attempt) key."""
    return np.random.SeedSequence(master_seed, spawn_key=tuple(int(k) for k in key))


HEAD_STREAM, PATCH_STREAM, NOISE_STREAM = 0, 1, 2


# -- model building --------------------------------------------------------

def build_head(config):
    space = build_source_space(config.n_dipoles, config.n_regions, config.geometry(),
                               seed_for(config.master_seed, HEAD_STREAM))
    sensors = build_sensor_array(config.n_channels, config.geometry())
    return space, sensors


def build_model(config, space=None, sensors=None):
    if space is None:
        space, sensors = build_head(config)
    dictionary = build_dictionary(space, sensors)
    artifacts = build_artifacts(dictionary, config.tau, config.eps, config.delta)
    return space, sensors, artifacts


# -- trials ----------------------------------------------------------------

def simulate_trial(config, space, sensors, region, trial):
    """Activation and measurement of one trial; a silent draw is redrawn once."""
    for attempt in range(2):
        act = simulate_patch(space, region, seed_for(config.master_seed, PATCH_STREAM,
                                                     region, trial, attempt),
                             config.patch_size)
        try:
            ms = measure(space, sensors, act, config.noise_fraction,
                         seed_for(config.master_seed, NOISE_STREAM, region, trial, attempt))
            return act, ms
        except SilentSourceError:
            if attempt == 1:
                raise


def run_trial(config, space, sensors, artifacts, region, trial):
    record = {"trial_id": f"{region}:{trial}", "true_region": int(region), "trial": int(trial)}
    t0 = time.perf_counter()
    try:
        act, ms = simulate_trial(config, space, sensors, region, trial)
        delta = config.trial_delta(ms.noise_std, np.linalg.norm(ms.b_noisy))
        outcome = classify(ms.y, artifacts, config.classifier(), delta)
    except BDLError as exc:
        record.update(status="failed", error=f"{type(exc).__name__}: {exc}")
        return record
    record.update(status="ok", **outcome.summary())
    record["patch"] = [int(k) for k in act.dipole_indices]
    record["timing_s"] = time.perf_counter() - t0
    return record


_WORKER = {}


def _init_worker(config, space, sensors, artifacts):
    _WORKER.update(config=config, space=space, sensors=sensors, artifacts=artifacts)


def _run_chunk(jobs):
    w = _WORKER
    return [run_trial(w["config"], w["space"], w["sensors"], w["artifacts"], r, t)
            for r, t in jobs]


def run_trials(config, space, sensors, artifacts, progress=None):
    jobs = [(r, t) for r in range(config.n_regions) for t in range(config.trials_per_region)]
    if config.workers == 1:
        records = []
        for i, (r, t) in enumerate(jobs):
            records.append(run_trial(config, space, sensors, artifacts, r, t))
            if progress:
                progress(i + 1, len(jobs))
        return records
    chunks = [jobs[i::config.workers * 4] for i in range(config.workers * 4)]
    with ProcessPoolExecutor(config.workers, initializer=_init_worker,
                             initargs=(config, space, sensors, artifacts)) as pool:
        records = [rec for chunk in pool.map(_run_chunk, chunks) for rec in chunk]
    records.sort(key=lambda rec: (rec["true_region"], rec["trial"]))
    return records


# -- outputs ---------------------------------------------------------------

METRIC_COLUMNS = ["region", "label", "trials", "identified1", "identified2",
                  "mcr1", "gini1", "entropy1", "recall1",
                  "mcr2", "gini2", "entropy2", "recall2"]


def metrics_rows(suite1, suite2, labels):
    rows = []
    for l in range(len(suite1.C)):
        rows.append({
            "region": l, "label": labels[l], "trials": int(suite1.trials_per_region[l]),
            "identified1": int(suite1.C[:, l].sum()), "identified2": int(suite2.C[:, l].sum()),
            "mcr1": suite1.impurities.mcr[l], "gini1": suite1.impurities.gini[l],
            "entropy1": suite1.impurities.entropy[l], "recall1": suite1.impurities.recall[l],
            "mcr2": suite2.impurities.mcr[l], "gini2": suite2.impurities.gini[l],
            "entropy2": suite2.impurities.entropy[l], "recall2": suite2.impurities.recall[l],
        })
    return rows


def _json_safe(v):
    if isinstance(v, float) and np.isnan(v):
        return None
    return v


def write_suite(out, phase, suite):
    write_matrix_csv(out / f"C{phase}.csv", suite.C, fmt=str)
    write_matrix_csv(out / f"P{phase}.csv", suite.P)
    write_matrix_csv(out / f"Q{phase}.csv", suite.Q)


def report(result_dir, prune=0.0):
    """Recompute tables and trees from ``C1.csv`` and ``C2.csv`` in ``result_dir``.

    Writes the metrics table (CSV and JSON), the recall ranking, the phase
    comparison scatter data and one DOT/JSON tree per region and phase.
    """
    out = Path(result_dir)
    try:
        C1 = read_matrix_csv(out / "C1.csv", dtype=int)
        C2 = read_matrix_csv(out / "C2.csv", dtype=int)
    except OSError as exc:
        raise ConfigurationError(f"missing result files in {out}: {exc}") from exc
    suite1, suite2 = ConfusionSuite.from_counts(C1), ConfusionSuite.from_counts(C2)
    labels = region_labels(len(C1))
    for phase, suite in ((1, suite1), (2, suite2)):
        write_suite(out, phase, suite)

    rows = metrics_rows(suite1, suite2, labels)
    write_table_csv(out / "metrics.csv", rows, METRIC_COLUMNS)
    (out / "metrics.json").write_text(json.dumps(
        [{k: _json_safe(v) for k, v in row.items()} for row in rows], indent=1) + "\n")

    # decreasing Phase II recall; never-identified regions last
    ranked = sorted(rows, key=lambda row: (np.isnan(row["recall2"]),
                                           -np.nan_to_num(row["recall2"]), row["region"]))
    write_table_csv(out / "recall_ranking.csv", ranked,
                    ["region", "label", "recall2", "recall1", "trials"])
    write_table_csv(out / "scatter_mcr.csv",
                    [{"region": r["region"], "phase1": r["mcr1"], "phase2": r["mcr2"]}
                     for r in rows], ["region", "phase1", "phase2"])
    write_table_csv(out / "scatter_gini.csv",
                    [{"region": r["region"], "phase1": r["gini1"], "phase2": r["gini2"]}
                     for r in rows], ["region", "phase1", "phase2"])

    for phase, suite in ((1, suite1), (2, suite2)):
        tdir = out / "trees" / f"phase{phase}"
        tdir.mkdir(parents=True, exist_ok=True)
        for l in range(len(C1)):
            if l in suite.never_identified:
                continue
            tree = identification_tree(suite.P, l, labels, prune)
            (tdir / f"{labels[l]}.dot").write_text(tree.to_dot())
            (tdir / f"{labels[l]}.json").write_text(tree.to_json() + "\n")
    return {"suite1": suite1, "suite2": suite2, "ranking": ranked}


def resolve_output_dir(path):
    path = Path(path)
    root = os.environ.get(OUTPUT_ROOT_ENV)
    return Path(root) / path if root and not path.is_absolute() else path


@dataclass
class ProtocolResult:
    suite1: ConfusionSuite
    suite2: ConfusionSuite
    records: list
    failures: list
    output_dir: Path | None


def run_protocol(config, write=True, progress=None):
    """Run every (region, trial) pair and tally both phases."""
    config.validate()
    start = time.time()
    space, sensors, artifacts = build_model(config)
    records = run_trials(config, space, sensors, artifacts, progress)
    ok = [r for r in records if r["status"] == "ok"]
    failures = [r for r in records if r["status"] != "ok"]

    suite1 = ConfusionSuite.from_counts(tally(ok, 1, config.n_regions))
    suite2 = ConfusionSuite.from_counts(tally(ok, 2, config.n_regions))
    out = None
    if write:
        out = resolve_output_dir(config.output_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "config.yaml").write_text(dump_config(config))
        save_head(out / "head_model.json", space, sensors, config.to_dict(), config.master_seed)
        save_dictionary(out / "model", artifacts.dictionary)
        save_compressed(out / "model", artifacts.compressed, artifacts.dce)
        with open(out / "trials.jsonl", "w") as fh:
            for rec in records:
                fh.write(json.dumps(rec) + "\n")
        for phase, suite in ((1, suite1), (2, suite2)):
            write_suite(out, phase, suite)
        report(out)
        manifest = {
            "config_hash": config.content_hash(),
            "config": config.to_dict(),
            "versions": {"megbdl": __version__, "numpy": np.__version__,
                         "scipy": scipy.__version__, "python": platform.python_version()},
            "trials": len(records), "succeeded": len(ok), "failed": len(failures),
            "wall_time_s": time.time() - start,
        }
        (out / "manifest.json").write_text(json.dumps(manifest, indent=1) + "\n")

    if len(failures) > config.max_failure_fraction * len(records):
        if out is not None:
            (out / "failures.json").write_text(json.dumps(failures, indent=1) + "\n")
        raise PartialFailureAbort(f"{len(failures)} of {len(records)} trials failed")
    return ProtocolResult(suite1, suite2, records, failures, out)


def classify_query(config, space, sensors, b, noise_std=None):
    """Classify external data ``b`` (any scale) against the head model."""
    b = np.asarray(b, dtype=float)
    if b.shape != (sensors.n_channels,):
        raise DimensionError(f"query has {b.shape} entries, head model has "
                             f"{sensors.n_channels} channels")
    norm = np.linalg.norm(b)
    if norm == 0:
        raise ConfigurationError("query vector is zero")
    _, _, artifacts = build_model(config, space, sensors)
    delta = config.trial_delta(noise_std, norm) if noise_std is not None else config.delta
    outcome = classify(b / norm, artifacts, config.classifier(), delta)
    return outcome
