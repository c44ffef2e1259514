"""File formats: head-model JSON, matrix containers, CSV tables."""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, DimensionError
from .head import SensorArray, SourceSpace


def head_to_dict(space, sensors, config=None, seed=None):
    return {
        "positions": space.positions.tolist(),
        "orientations": space.orientations.tolist(),
        "region_of": space.region_of.tolist(),
        "n_regions": int(space.n_regions),
        "sensor_positions": sensors.positions.tolist(),
        "sensor_axes": sensors.axes.tolist(),
        "sensor_kinds": list(sensors.kinds),
        "grad_directions": sensors.grad_directions.tolist(),
        "baseline": float(sensors.baseline),
        "config": config or {},
        "seed": seed,
    }


def head_from_dict(doc):
    try:
        space = SourceSpace(np.array(doc["positions"], dtype=float),
                            np.array(doc["orientations"], dtype=float),
                            np.array(doc["region_of"], dtype=int),
                            int(doc["n_regions"]))
        pos = np.array(doc["sensor_positions"], dtype=float)
        kinds = tuple(doc.get("sensor_kinds", ["magnetometer"] * len(pos)))
        grads = np.array(doc.get("grad_directions", np.zeros_like(pos)), dtype=float)
        sensors = SensorArray(pos, np.array(doc["sensor_axes"], dtype=float), kinds,
                              grads.reshape(pos.shape), float(doc.get("baseline", 0.0168)))
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigurationError(f"malformed head model: {exc}") from exc
    return space, sensors


def save_head(path, space, sensors, config=None, seed=None):
    # json writes floats with repr(), the shortest string that round-trips exactly
    Path(path).write_text(json.dumps(head_to_dict(space, sensors, config, seed)))


def load_head(path):
    return head_from_dict(json.loads(Path(path).read_text()))


def save_matrix(path, M):
    """Row-major float64 ``.npy`` container (magic bytes, shape header, raw data)."""
    np.save(path, np.ascontiguousarray(M, dtype=np.float64))


def load_matrix(path):
    return np.load(path, allow_pickle=False)


def write_matrix_csv(path, M, fmt=repr):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        for row in np.atleast_2d(M):
            writer.writerow([fmt(v.item()) for v in row])


def read_matrix_csv(path, dtype=float):
    with open(path, newline="") as fh:
        rows = [[dtype(v) for v in row] for row in csv.reader(fh) if row]
    return np.array(rows, dtype=dtype)


def write_table_csv(path, rows, columns):
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=columns, lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: _cell(row[k]) for k in columns})


def _cell(v):
    if isinstance(v, (float, np.floating)):
        return "nan" if np.isnan(v) else repr(float(v))
    return v


def save_dictionary(directory, dictionary):
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    save_matrix(directory / "dictionary.npy", dictionary.atoms)
    sidecar = {"offsets": dictionary.offsets.tolist(),
               "dipole_index": dictionary.dipole_index.tolist(),
               "silent": dictionary.silent.tolist()}
    (directory / "dictionary.json").write_text(json.dumps(sidecar, indent=1))


def load_dictionary(directory):
    from .dictionary import Dictionary

    directory = Path(directory)
    side = json.loads((directory / "dictionary.json").read_text())
    return Dictionary(load_matrix(directory / "dictionary.npy"), np.array(side["offsets"]),
                      np.array(side["dipole_index"]), np.array(side["silent"], dtype=int))


def save_compressed(directory, comp, dce):
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    save_matrix(directory / "features.npy", comp.W)
    for name, arr in (("dce_mean.npy", dce.mean), ("dce_cov.npy", dce.cov)):
        save_matrix(directory / name, arr)
    meta = {"tau": comp.tau, "ranks": comp.ranks.tolist(), "delta": dce.delta}
    (directory / "compression.json").write_text(json.dumps(meta, indent=1))


def read_vector(path, expected_length=None):
    """Read a query vector from ``.npy`` or whitespace/comma separated text."""
    path = Path(path)
    try:
        if path.suffix == ".npy":
            v = np.load(path, allow_pickle=False)
        else:
            text = path.read_text().replace(",", " ").split()
            v = np.array([float(t) for t in text])
    except (OSError, ValueError) as exc:
        raise DimensionError(f"cannot read vector from {path}: {exc}") from exc
    v = np.asarray(v, dtype=float)
    if v.ndim != 1 or (expected_length is not None and len(v) != expected_length):
        raise DimensionError(f"query has shape {v.shape}, expected ({expected_length},)")
    if not np.all(np.isfinite(v)):
        raise DimensionError("query contains non-finite values")
    return v
