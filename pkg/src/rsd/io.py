"""CSV ingestion, coordinate rescaling, feature helpers and artifact
persistence.

The data schema is a UTF-8 CSV with header
``id, lat, lon, rating_mean, rating_count, <feature columns...>``;
features are taken in file order. Floats are written with shortest
round-trip ``repr`` so artifacts are byte-identical across runs with the
same seed and read back exactly.
"""
from __future__ import annotations

import csv
import json
import logging
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .state import Dataset

logger = logging.getLogger(__name__)

REQUIRED_COLUMNS = ("id", "lat", "lon", "rating_mean", "rating_count")


def cspan(numcate: int, dbar: float) -> float:
    """Category-spanning score: 0 for a single category, otherwise the
    category count times the mean pairwise category distance."""
    if numcate < 1:
        raise ValueError("numcate must be >= 1")
    if not 0.0 <= dbar <= 1.0:
        raise ValueError("dbar must lie in [0, 1]")
    return 0.0 if numcate == 1 else float(numcate * dbar)


@dataclass(frozen=True)
class LocationTransform:
    """Affine map of raw (lon, lat) onto the unit square.

    Both axes are divided by the larger of the two ranges, so aspect
    ratio is preserved and one axis may not reach 1.
    """

    lon0: float
    lat0: float
    scale: float

    def apply(self, lon, lat) -> np.ndarray:
        x = (np.asarray(lon, dtype=float) - self.lon0) / self.scale
        y = (np.asarray(lat, dtype=float) - self.lat0) / self.scale
        return np.column_stack([x, y])

    def to_dict(self) -> dict:
        return {"lon0": self.lon0, "lat0": self.lat0, "scale": self.scale}

    @classmethod
    def from_dict(cls, d: dict) -> "LocationTransform":
        return cls(lon0=d["lon0"], lat0=d["lat0"], scale=d["scale"])


IDENTITY_TRANSFORM = LocationTransform(0.0, 0.0, 1.0)


def rescale_locations(lon, lat) -> tuple[np.ndarray, LocationTransform]:
    """Map raw coordinates onto [0,1]^2 by their bounding box."""
    lon = np.asarray(lon, dtype=float)
    lat = np.asarray(lat, dtype=float)
    if lon.size < 2:
        raise ValueError("need at least two points to rescale")
    ranges = (lon.max() - lon.min(), lat.max() - lat.min())
    scale = max(ranges)
    if scale <= 0:
        raise ValueError("zero spatial extent: all locations coincide")
    transform = LocationTransform(float(lon.min()), float(lat.min()), float(scale))
    return transform.apply(lon, lat), transform


@dataclass
class RawTable:
    """Parsed data file before model-facing assembly."""

    ids: list[str]
    lon: np.ndarray
    lat: np.ndarray
    y: np.ndarray
    counts: np.ndarray
    features: np.ndarray
    feature_names: list[str]

    @property
    def n(self) -> int:
        return len(self.ids)


def read_table(path) -> RawTable:
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{path}: empty file") from None
        header = [c.strip() for c in header]
        if tuple(header[:5]) != REQUIRED_COLUMNS:
            raise ValueError(
                f"{path}:1: header must start with {','.join(REQUIRED_COLUMNS)}, got {','.join(header[:5])}"
            )
        feature_names = header[5:]
        ids, rows = [], []
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise ValueError(f"{path}:{line_no}: expected {len(header)} fields, got {len(row)}")
            ids.append(row[0])
            try:
                rows.append([float(v) for v in row[1:]])
            except ValueError as exc:
                raise ValueError(f"{path}:{line_no}: {exc}") from None
    if not ids:
        raise ValueError(f"{path}: no data rows")
    data = np.asarray(rows)
    lat, lon, y, counts = data[:, 0], data[:, 1], data[:, 2], data[:, 3]
    if np.any(counts < 1):
        bad = int(np.flatnonzero(counts < 1)[0]) + 2
        raise ValueError(f"{path}:{bad}: rating_count must be >= 1")
    if np.any(counts != np.round(counts)):
        bad = int(np.flatnonzero(counts != np.round(counts))[0]) + 2
        raise ValueError(f"{path}:{bad}: rating_count must be an integer")
    if np.any((y < 1) | (y > 5)):
        logger.warning("%s: %d rating_mean value(s) outside [1, 5]", path, int(((y < 1) | (y > 5)).sum()))
    return RawTable(
        ids=ids, lon=lon, lat=lat, y=y, counts=counts,
        features=data[:, 4:], feature_names=feature_names,
    )


def make_dataset(
    table: RawTable,
    transform: LocationTransform | None = None,
    add_intercept: bool = True,
) -> tuple[Dataset, LocationTransform]:
    """Assemble a model-facing dataset; fits the rescaling transform
    unless an existing one is supplied (prediction-time reuse)."""
    fit_transform = transform is None
    if fit_transform:
        S, transform = rescale_locations(table.lon, table.lat)
    else:
        S = transform.apply(table.lon, table.lat)
        outside = np.any((S < 0) | (S > 1), axis=1)
        if outside.any():
            logger.warning(
                "%d location(s) fall outside the stored rescaling box; mapped by extrapolation",
                int(outside.sum()),
            )
    X = table.features
    names = list(table.feature_names)
    intercept_col = None
    if add_intercept:
        X = np.column_stack([np.ones(table.n), X])
        names = ["intercept"] + names
        intercept_col = 0
    ds = Dataset(
        y=table.y, X=X, S=S, counts=table.counts,
        intercept_col=intercept_col, feature_names=names,
    )
    ds.validate(unit_square=fit_transform)
    return ds, transform


def _fmt(value) -> str:
    if isinstance(value, (np.floating, float)):
        return repr(float(value))
    return str(value)


def write_csv(path, header: list[str], rows) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def write_json(path, payload: dict) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_json(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def write_data_csv(path, ids, lon, lat, y, counts, features, feature_names) -> None:
    header = list(REQUIRED_COLUMNS) + list(feature_names)
    rows = (
        [ids[i], lat[i], lon[i], y[i], int(counts[i])] + [features[i, j] for j in range(features.shape[1])]
        for i in range(len(ids))
    )
    write_csv(path, header, rows)


def write_labels_csv(path, ids, labels) -> None:
    write_csv(path, ["id", "segment"], ([i, int(l)] for i, l in zip(ids, labels)))


def read_labels_csv(path) -> tuple[list[str], np.ndarray]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header[:2] != ["id", "segment"]:
            raise ValueError(f"{path}: expected header id,segment")
        ids, labels = [], []
        for row in reader:
            if not row:
                continue
            ids.append(row[0])
            labels.append(int(row[1]))
    return ids, np.asarray(labels, dtype=int)


def write_scenario(outdir, scenario) -> None:
    """Persist one simulated cell: train/test CSVs in the data schema
    plus truth sidecars (labels and coefficient matrix)."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    factors = scenario.factors

    for split, ds, labels in (
        ("train", scenario.train, scenario.true_labels_train),
        ("test", scenario.test, scenario.true_labels_test),
    ):
        ids = [str(i + 1) for i in range(ds.n)]
        write_data_csv(
            outdir / f"{split}.csv", ids,
            lon=ds.S[:, 0], lat=ds.S[:, 1], y=ds.y, counts=ds.counts,
            features=ds.X, feature_names=ds.feature_names,
        )
        write_labels_csv(outdir / f"true_labels_{split}.csv", ids, labels)

    write_csv(
        outdir / "true_coefficients.csv",
        ["segment"] + list(scenario.train.feature_names),
        (
            [k + 1] + [scenario.true_Beta[k, j] for j in range(factors.p)]
            for k in range(factors.K_star)
        ),
    )
    write_json(outdir / "scenario.json", {
        "K_star": factors.K_star,
        "similarity": factors.similarity,
        "density": factors.density,
        "p": factors.p,
        "active_count": factors.active_count,
        "sigma0_sq": factors.sigma0_sq,
        "seed": factors.seed,
    })


def read_truth(scenario_dir) -> dict:
    """Load the truth sidecars of a simulated cell."""
    scenario_dir = Path(scenario_dir)
    with open(scenario_dir / "true_coefficients.csv", newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        feature_names = header[1:]
        rows = [row for row in reader if row]
    true_beta = np.array([[float(v) for v in row[1:]] for row in rows])
    _, labels_train = read_labels_csv(scenario_dir / "true_labels_train.csv")
    test_ids, labels_test = read_labels_csv(scenario_dir / "true_labels_test.csv")
    return {
        "feature_names": feature_names,
        "true_Beta": true_beta,
        "K_star": true_beta.shape[0],
        "true_labels_train": labels_train,
        "true_labels_test": labels_test,
        "test_ids": test_ids,
        "scenario": read_json(scenario_dir / "scenario.json"),
    }


def write_model(path, result, data, ids, transform: LocationTransform, prior: str, add_intercept: bool) -> None:
    """Persist everything prediction and evaluation need."""
    payload = {
        "prior": prior,
        "add_intercept": add_intercept,
        "feature_names": list(data.feature_names or []),
        "transform": transform.to_dict(),
        "K_hat": int(result.K_hat),
        "beta": result.Beta_hat.tolist(),
        "sigma_sq": result.sigma_hat_sq.tolist(),
        "intervals": None if result.intervals is None else result.intervals.tolist(),
        "labels": [int(v) for v in result.labels],
        "ids": list(ids),
        "train_locations": data.S.tolist(),
        "selected_iter": int(result.selected_iter),
        "lasso_fallback_segments": result.lasso_fallback_segments,
    }
    write_json(path, payload)


def versions() -> dict:
    import numpy
    import scipy

    from . import __version__

    return {
        "rsd": __version__,
        "numpy": numpy.__version__,
        "scipy": scipy.__version__,
        "python": sys.version.split()[0],
    }
